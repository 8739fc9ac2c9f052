//! Root relative squared error and mean per-feature correlation.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Truth and predictions over the same `rows × n` block.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalBlock {
    pub truth: Tensor,
    pub pred: Tensor,
}

impl EvalBlock {
    pub fn new(truth: Tensor, pred: Tensor) -> Result<Self> {
        if truth.rank() != 2 || truth.shape() != pred.shape() || truth.numel() == 0 {
            return Err(Error::shape(
                "eval_block",
                format!("truth {:?} vs prediction {:?}", truth.shape(), pred.shape()),
            ));
        }
        Ok(EvalBlock { truth, pred })
    }

    /// Keeps one column.
    pub fn column(&self, col: usize) -> Result<EvalBlock> {
        let (_, n) = self.truth.dims2();
        if col >= n {
            return Err(Error::IndexOutOfRange { index: col, len: n });
        }
        let pick = |t: &Tensor| Tensor::vector(t.column(col)).reshape(&[t.shape()[0], 1]);
        EvalBlock::new(pick(&self.truth)?, pick(&self.pred)?)
    }
}

/// `sqrt(Σ(y − ŷ)²) / sqrt(Σ(y − ȳ)²)` over every cell, `ȳ` the mean of all
/// truth cells.
pub fn rse(block: &EvalBlock) -> Result<f64> {
    let y = block.truth.data();
    let mean = block.truth.mean();
    let num: f64 = y.iter().zip(block.pred.data()).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = y.iter().map(|a| (a - mean).powi(2)).sum();
    if den == 0.0 {
        return Err(Error::UndefinedRse);
    }
    Ok(num.sqrt() / den.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corr {
    pub value: f64,
    /// Features dropped because truth or prediction was constant.
    pub excluded: usize,
}

/// Mean Pearson correlation between truth and prediction columns.
pub fn corr(block: &EvalBlock) -> Result<Corr> {
    let (rows, n) = block.truth.dims2();
    if rows < 2 {
        return Err(Error::Invalid("CORR needs at least 2 rows".into()));
    }
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..n {
        let (y, p) = (block.truth.column(c), block.pred.column(c));
        let (my, mp) = (mean(&y), mean(&p));
        let mut cov = 0.0;
        let mut vy = 0.0;
        let mut vp = 0.0;
        for (a, b) in y.iter().zip(&p) {
            cov += (a - my) * (b - mp);
            vy += (a - my).powi(2);
            vp += (b - mp).powi(2);
        }
        if vy == 0.0 || vp == 0.0 {
            continue;
        }
        total += cov / (vy.sqrt() * vp.sqrt());
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedCorr);
    }
    Ok(Corr {
        value: total / used as f64,
        excluded: n - used,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(y: &[Vec<f64>], p: &[Vec<f64>]) -> EvalBlock {
        EvalBlock::new(Tensor::from_rows(y).unwrap(), Tensor::from_rows(p).unwrap()).unwrap()
    }

    #[test]
    fn rse_examples() {
        let b = block(&[vec![0.0], vec![2.0]], &[vec![1.0], vec![1.0]]);
        assert_eq!(rse(&b).unwrap(), 1.0);
        let same = block(&[vec![0.0, 1.0], vec![2.0, 5.0]], &[vec![0.0, 1.0], vec![2.0, 5.0]]);
        assert_eq!(rse(&same).unwrap(), 0.0);
    }

    #[test]
    fn constant_truth_is_undefined() {
        let b = block(&[vec![3.0], vec![3.0]], &[vec![1.0], vec![2.0]]);
        assert!(matches!(rse(&b), Err(Error::UndefinedRse)));
    }

    #[test]
    fn corr_examples() {
        let b = block(&[vec![1.0], vec![2.0], vec![3.0]], &[vec![2.0], vec![4.0], vec![6.0]]);
        assert!((corr(&b).unwrap().value - 1.0).abs() < 1e-15);
        let anti = block(&[vec![-1.0], vec![0.0], vec![1.0]], &[vec![1.0], vec![0.0], vec![-1.0]]);
        assert!((corr(&anti).unwrap().value + 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_columns_are_excluded() {
        let b = block(
            &[vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]],
            &[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]],
        );
        let c = corr(&b).unwrap();
        assert_eq!(c.excluded, 1);
        assert!((c.value - 1.0).abs() < 1e-15);

        let flat = block(&[vec![1.0], vec![2.0]], &[vec![0.5], vec![0.5]]);
        assert!(matches!(corr(&flat), Err(Error::UndefinedCorr)));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let y = Tensor::zeros(&[2, 2]);
        let p = Tensor::zeros(&[2, 3]);
        assert!(EvalBlock::new(y, p).is_err());
    }
}
