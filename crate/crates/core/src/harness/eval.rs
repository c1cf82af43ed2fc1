use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::nets::Network;

/// Top-1 and top-k accuracy, `k = min(5, C)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub top1: f64,
    pub top5: f64,
}

/// Rank of `label` among the logits of one row: number of classes scoring
/// strictly higher, plus lower-indexed classes scoring equal.
pub fn label_rank(row: &[f64], label: usize) -> usize {
    let s = row[label];
    row.iter()
        .enumerate()
        .filter(|&(c, &v)| v > s || (v == s && c < label))
        .count()
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Top-1/top-k accuracy of precomputed logits.
pub fn accuracy_from_logits(logits: &Tensor, labels: &[usize]) -> Result<Accuracy> {
    if labels.is_empty() {
        return Err(Error::Data("cannot score an empty set".into()));
    }
    let c = logits.cols();
    let k = c.min(5);
    let (mut top1, mut topk) = (0usize, 0usize);
    for (i, &label) in labels.iter().enumerate() {
        let rank = label_rank(logits.row(i), label);
        top1 += usize::from(rank == 0);
        topk += usize::from(rank < k);
    }
    let n = labels.len() as f64;
    Ok(Accuracy {
        top1: top1 as f64 / n,
        top5: topk as f64 / n,
    })
}

pub fn evaluate(net: &Network, ds: &Dataset, split: Split) -> Result<Accuracy> {
    let idx = ds.indices(split);
    if idx.is_empty() {
        return Err(Error::Data(format!("{split:?} split is empty")));
    }
    let batch = ds.gather(idx);
    let logits = net.predict(&batch.features)?;
    accuracy_from_logits(&logits, &batch.labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictor() {
        let logits = Tensor::from_rows(&[vec![5.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let acc = accuracy_from_logits(&logits, &[0, 2]).unwrap();
        assert_eq!((acc.top1, acc.top5), (1.0, 1.0));
    }

    #[test]
    fn constant_logits_tie_break_by_index() {
        let rows = vec![vec![0.0; 10]; 100];
        let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let acc = accuracy_from_logits(&Tensor::from_rows(&rows).unwrap(), &labels).unwrap();
        assert_eq!(acc.top1, 0.1);
        assert_eq!(acc.top5, 0.5);
    }

    #[test]
    fn topk_uses_min_five_classes() {
        let logits = Tensor::from_rows(&[vec![3.0, 2.0, 1.0]]).unwrap();
        let acc = accuracy_from_logits(&logits, &[2]).unwrap();
        assert_eq!((acc.top1, acc.top5), (0.0, 1.0));
    }

    #[test]
    fn empty_is_an_error() {
        let logits = Tensor::zeros(&[0, 3]);
        assert!(accuracy_from_logits(&logits, &[]).is_err());
    }

    #[test]
    fn argmax_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
