use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

/// Pooled confusion counts over all instance-label pairs; +1 is positive.
pub fn confusion(predictions: &DMatrix<i8>, truth: &DMatrix<i8>) -> Result<Confusion> {
    if predictions.shape() != truth.shape() {
        return Err(Error::Dimension {
            expected: truth.len(),
            found: predictions.len(),
        });
    }
    let mut c = Confusion::default();
    for (&p, &t) in predictions.iter().zip(truth.iter()) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, -1) => c.fp += 1,
            (-1, 1) => c.fn_ += 1,
            (-1, -1) => c.tn += 1,
            _ => return Err(Error::Domain(format!("label entries must be -1 or +1, got ({p}, {t})"))),
        }
    }
    Ok(c)
}

/// `2 TP / (2 TP + FP + FN)`, or 0 when nothing is positive.
pub fn micro_f1(predictions: &DMatrix<i8>, truth: &DMatrix<i8>) -> Result<f64> {
    let c = confusion(predictions, truth)?;
    let denom = 2 * c.tp + c.fp + c.fn_;
    Ok(if denom == 0 {
        0.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    })
}
