//! `UKDC` network checkpoints.
//!
//! Layout (little-endian): magic `UKDC`, u32 version, u32 layer count, then
//! per layer `u32 in, u32 out, u8 activation`, then for each layer in order
//! the row-major weights followed by the bias, as f64.

use std::fs;
use std::path::Path;

use crate::data::ByteReader;
use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::nets::{Activation, Layer, LayerSpec, Network};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UKDC";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn to_bytes(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for l in net.layers() {
        out.extend_from_slice(&(l.spec.in_dim as u32).to_le_bytes());
        out.extend_from_slice(&(l.spec.out_dim as u32).to_le_bytes());
        out.push(l.spec.activation.code());
    }
    for p in net.params() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad magic, expected UKDC".into(),
        });
    }
    let at = r.offset();
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: at,
            msg: format!("unsupported version {version}"),
        });
    }
    let count = r.u32()? as usize;
    let mut specs = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let at = r.offset();
        let code = r.u8()?;
        let activation = Activation::from_code(code).ok_or_else(|| Error::Format {
            offset: at,
            msg: format!("unknown activation code {code}"),
        })?;
        specs.push(LayerSpec::new(in_dim, out_dim, activation));
    }
    let mut layers = Vec::with_capacity(specs.len());
    for spec in specs {
        let w = (0..spec.in_dim * spec.out_dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let b = (0..spec.out_dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        layers.push(Layer {
            spec,
            weight: Tensor::new(vec![spec.in_dim, spec.out_dim], w)?,
            bias: Tensor::vector(b),
        });
    }
    r.finish()?;
    Network::from_layers(layers).map_err(|e| Error::Format {
        offset: 12,
        msg: e.to_string(),
    })
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::mlp_spec;

    #[test]
    fn round_trip_is_byte_identical() {
        let net = Network::build(&mlp_spec(5, &[7, 3], 4), 3).unwrap();
        let bytes = to_bytes(&net);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back.spec(), net.spec());
        assert_eq!(back.checksum(), net.checksum());
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn header_layout() {
        let net = Network::build(&mlp_spec(2, &[], 3), 1).unwrap();
        let bytes = to_bytes(&net);
        assert_eq!(&bytes[..4], b"UKDC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 3);
        assert_eq!(bytes[20], 0);
        assert_eq!(bytes.len(), 21 + 8 * (6 + 3));
    }

    #[test]
    fn corruption_is_rejected_with_offsets() {
        let net = Network::build(&mlp_spec(3, &[4], 2), 1).unwrap();
        let bytes = to_bytes(&net);

        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Format { offset: 0, .. })));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(from_bytes(&bad), Err(Error::Format { offset: 4, .. })));

        let cut = &bytes[..bytes.len() - 5];
        match from_bytes(cut) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, bytes.len() - 8),
            other => panic!("{other:?}"),
        }

        let mut bad = bytes.clone();
        bad[20] = 7;
        assert!(matches!(from_bytes(&bad), Err(Error::Format { offset: 20, .. })));
    }
}
