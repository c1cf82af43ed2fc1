//! Named, independent random streams.
//!
//! Each consumer (data generation, initialization, shuffling, augmentation)
//! draws from its own ChaCha stream keyed by `(seed, domain, index)`, so
//! runs that share some seeds reproduce those streams bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DATA_MEANS: u64 = 1;
pub const DATA_SAMPLES: u64 = 2;
pub const SHUFFLE: u64 = 3;
pub const AUGMENT: u64 = 4;
pub const TEACHER_SHUFFLE: u64 = 5;
pub const TEACHER_AUGMENT: u64 = 6;
pub const BAYES_PROBE: u64 = 7;

pub fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}
