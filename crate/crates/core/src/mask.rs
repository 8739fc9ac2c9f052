//! The `w × D` perturbation mask, its application to a series image, and
//! its size and smoothness penalties.
//!
//! Mask values are `sigmoid(logits)`, so they stay strictly inside `(0, 1)`
//! while the logits are optimized unconstrained. A value of 1 replaces the
//! cell by the reference, 0 keeps the original.

use crate::autodiff::{sigmoid, Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub logits: Tensor,
}

impl Mask {
    pub fn new(window: usize, features: usize, init_logit: f64) -> Self {
        Mask {
            logits: Tensor::full(&[window, features], init_logit),
        }
    }

    pub fn from_logits(logits: Tensor) -> Result<Self> {
        if logits.rank() != 2 {
            return Err(Error::shape("mask", format!("logits shape {:?}", logits.shape())));
        }
        Ok(Mask { logits })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.logits.dims2()
    }

    pub fn values(&self) -> Tensor {
        self.logits.map(sigmoid)
    }

    pub fn size_penalty(&self, p0: u32, complement: bool) -> Result<f64> {
        let mut g = Graph::new();
        let m = g.constant(self.values());
        let p = size_penalty(&mut g, m, p0, complement)?;
        Ok(g.value(p).item())
    }

    pub fn smoothness_penalty(&self, include_feature_axis: bool) -> Result<f64> {
        let mut g = Graph::new();
        let m = g.constant(self.values());
        let p = smoothness_penalty(&mut g, m, include_feature_axis)?;
        Ok(g.value(p).item())
    }
}

/// A series image after `X̃ = M ⊙ X̂ + (1 − M) ⊙ X`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedImage {
    pub values: Tensor,
}

/// Blends `reference` into `image` cell by cell with the mask values.
pub fn apply_mask(image: &Tensor, reference: &Tensor, mask: &Mask) -> Result<PerturbedImage> {
    let mut g = Graph::new();
    let x = g.constant(image.clone());
    let r = g.constant(reference.clone());
    let m = g.constant(mask.values());
    let out = apply_mask_node(&mut g, x, r, m)?;
    Ok(PerturbedImage {
        values: g.value(out).clone(),
    })
}

/// Differentiable `M ⊙ X̂ + (1 − M) ⊙ X`; all three nodes share one shape.
pub fn apply_mask_node(g: &mut Graph, image: NodeId, reference: NodeId, mask: NodeId) -> Result<NodeId> {
    let keep = g.rsub_scalar(1.0, mask)?;
    let replaced = g.mul(mask, reference)?;
    let kept = g.mul(keep, image)?;
    g.add(replaced, kept)
}

/// `‖M‖_{p0}` over all entries, or `‖1 − M‖₁` when `complement` is set.
pub fn size_penalty(g: &mut Graph, mask: NodeId, p0: u32, complement: bool) -> Result<NodeId> {
    if complement {
        let c = g.rsub_scalar(1.0, mask)?;
        return g.sum(c);
    }
    if !(1..=3).contains(&p0) {
        return Err(Error::Config(format!("mask norm order p0 must be 1, 2 or 3, got {p0}")));
    }
    let p = f64::from(p0);
    let powered = g.pow(mask, p)?;
    let total = g.sum(powered)?;
    if p0 == 1 {
        Ok(total)
    } else {
        g.pow(total, 1.0 / p)
    }
}

/// Sum of squared differences between neighbouring cells along time, and
/// along the feature axis when `include_feature_axis` is set.
pub fn smoothness_penalty(g: &mut Graph, mask: NodeId, include_feature_axis: bool) -> Result<NodeId> {
    let shape = g.value(mask).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::shape("smoothness_penalty", format!("mask shape {shape:?}")));
    }
    let (w, d) = (shape[0], shape[1]);
    let mut terms = Vec::new();
    if w > 1 {
        terms.push(squared_neighbour_diffs(g, mask, 0, w)?);
    }
    if include_feature_axis && d > 1 {
        terms.push(squared_neighbour_diffs(g, mask, 1, d)?);
    }
    match terms.as_slice() {
        [] => Ok(g.constant(Tensor::scalar(0.0))),
        [t] => Ok(*t),
        [a, b] => g.add(*a, *b),
        _ => unreachable!(),
    }
}

fn squared_neighbour_diffs(g: &mut Graph, mask: NodeId, axis: usize, len: usize) -> Result<NodeId> {
    let head = g.slice(mask, axis, 0, len - 1)?;
    let tail = g.slice(mask, axis, 1, len - 1)?;
    let diff = g.sub(head, tail)?;
    let sq = g.mul(diff, diff)?;
    g.sum(sq)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::autodiff::grad_check;

    /// Logits that reproduce exact mask values (inverse sigmoid).
    fn mask_of(rows: &[Vec<f64>]) -> Mask {
        let m = Tensor::from_rows(rows).unwrap();
        Mask::from_logits(m.map(|v| (v / (1.0 - v)).ln())).unwrap()
    }

    fn frozen(values: Tensor) -> (Graph, NodeId) {
        let mut g = Graph::new();
        let id = g.constant(values);
        (g, id)
    }

    #[test]
    fn extreme_masks_select_image_or_reference() {
        let x = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let r = Tensor::from_rows(&[vec![0.0, 7.0], vec![-1.0, 0.25]]).unwrap();
        let keep = apply_mask(&x, &r, &Mask::new(2, 2, -40.0)).unwrap();
        let swap = apply_mask(&x, &r, &Mask::new(2, 2, 40.0)).unwrap();
        for i in 0..4 {
            assert!((keep.values.data()[i] - x.data()[i]).abs() < 1e-12);
            assert!((swap.values.data()[i] - r.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_mask_hand_value() {
        let x = Tensor::from_rows(&[vec![2.0]]).unwrap();
        let r = Tensor::from_rows(&[vec![0.0]]).unwrap();
        let out = apply_mask(&x, &r, &mask_of(&[vec![0.25]])).unwrap();
        assert!((out.values.item() - 1.5).abs() < 1e-12);
        assert!(apply_mask(&x, &Tensor::zeros(&[1, 2]), &Mask::new(1, 1, 0.0)).is_err());
    }

    #[test]
    fn size_penalty_examples() {
        let zero = Mask::new(3, 2, -40.0);
        for p0 in 1..=3 {
            assert!(zero.size_penalty(p0, false).unwrap() < 1e-12);
        }
        let half = Mask::new(2, 2, 0.0);
        assert!((half.size_penalty(2, false).unwrap() - 1.0).abs() < 1e-12);
        assert!(Mask::new(2, 2, 40.0).size_penalty(2, true).unwrap().abs() < 1e-12);
        assert!((half.size_penalty(1, true).unwrap() - 2.0).abs() < 1e-12);
        assert!(half.size_penalty(4, false).is_err());
    }

    #[test]
    fn smoothness_examples() {
        assert_eq!(Mask::new(4, 3, 0.7).smoothness_penalty(true).unwrap(), 0.0);
        // [[0, 1], [0, 1]] evaluated directly on values.
        let m = Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let (mut g, id) = frozen(m.clone());
        let with = smoothness_penalty(&mut g, id, true).unwrap();
        assert!((g.value(with).item() - 2.0).abs() < 1e-12);
        let (mut g, id) = frozen(m);
        let without = smoothness_penalty(&mut g, id, false).unwrap();
        assert!(g.value(without).item().abs() < 1e-12);
    }

    #[test]
    fn apply_mask_gradient_matches_finite_differences() {
        let logits = Tensor::from_rows(&[vec![-3.0, 0.4, 2.2], vec![1.1, -0.7, 3.0]]).unwrap();
        let x = Tensor::from_rows(&[vec![0.2, 0.9, -0.5], vec![1.3, 0.0, 0.4]]).unwrap();
        let r = Tensor::from_rows(&[vec![1.0, -0.3, 0.8], vec![0.1, 0.6, -1.2]]).unwrap();
        let weights = Tensor::from_rows(&[vec![0.5, -1.5, 2.0], vec![1.0, 0.3, -0.8]]).unwrap();
        let report = grad_check(&[logits], 1e-5, |g, p| {
            let m = g.sigmoid(p[0])?;
            let xi = g.constant(x.clone());
            let ri = g.constant(r.clone());
            let out = apply_mask_node(g, xi, ri, m)?;
            let w = g.constant(weights.clone());
            let y = g.mul(out, w)?;
            let y = g.mul(y, y)?;
            g.sum(y)
        })
        .unwrap();
        assert_eq!(report.checked, 6);
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn penalties_match_finite_differences() {
        let logits = Tensor::from_rows(&[vec![-1.0, 0.4], vec![2.0, -0.2], vec![0.3, 1.5]]).unwrap();
        for (p0, complement, feature_axis) in [(1, false, true), (2, false, false), (3, false, true), (1, true, true)] {
            let report = grad_check(std::slice::from_ref(&logits), 1e-5, |g, p| {
                let m = g.sigmoid(p[0])?;
                let a = size_penalty(g, m, p0, complement)?;
                let b = smoothness_penalty(g, m, feature_axis)?;
                g.add(a, b)
            })
            .unwrap();
            assert!(report.max_rel_err < 1e-6, "{p0} {complement}: {report:?}");
        }
    }

    proptest! {
        #[test]
        fn perturbed_cells_lie_between_image_and_reference(
            vals in proptest::collection::vec((-5f64..5.0, -5f64..5.0, -6f64..6.0), 6)
        ) {
            let x = Tensor::new(&[3, 2], vals.iter().map(|v| v.0).collect()).unwrap();
            let r = Tensor::new(&[3, 2], vals.iter().map(|v| v.1).collect()).unwrap();
            let m = Mask::from_logits(Tensor::new(&[3, 2], vals.iter().map(|v| v.2).collect()).unwrap()).unwrap();
            let out = apply_mask(&x, &r, &m).unwrap();
            for i in 0..6 {
                let (lo, hi) = (x.data()[i].min(r.data()[i]), x.data()[i].max(r.data()[i]));
                let v = out.values.data()[i];
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
            let values = m.values();
            prop_assert!(values.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }

        #[test]
        fn penalties_are_time_reversal_invariant(vals in proptest::collection::vec(-4f64..4.0, 12)) {
            let fwd = Tensor::new(&[4, 3], vals.clone()).unwrap();
            let mut rev_rows: Vec<Vec<f64>> = (0..4).map(|r| fwd.row(r).to_vec()).collect();
            rev_rows.reverse();
            let a = Mask::from_logits(fwd).unwrap();
            let b = Mask::from_logits(Tensor::from_rows(&rev_rows).unwrap()).unwrap();
            for p0 in 1..=3 {
                prop_assert!((a.size_penalty(p0, false).unwrap() - b.size_penalty(p0, false).unwrap()).abs() < 1e-12);
            }
            for axis in [true, false] {
                prop_assert!((a.smoothness_penalty(axis).unwrap() - b.smoothness_penalty(axis).unwrap()).abs() < 1e-12);
            }
        }

        #[test]
        fn time_only_smoothness_ignores_feature_order(
            vals in proptest::collection::vec(-4f64..4.0, 12),
            perm in Just(vec![2usize, 0, 1]).prop_shuffle(),
        ) {
            let m = Tensor::new(&[4, 3], vals).unwrap();
            let permuted: Vec<Vec<f64>> = (0..4).map(|r| perm.iter().map(|&c| m.get2(r, c)).collect()).collect();
            let a = Mask::from_logits(m).unwrap();
            let b = Mask::from_logits(Tensor::from_rows(&permuted).unwrap()).unwrap();
            prop_assert!((a.smoothness_penalty(false).unwrap() - b.smoothness_penalty(false).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_axis_smoothness_depends_on_feature_order() {
        let a = mask_of(&[vec![0.1, 0.9, 0.2], vec![0.1, 0.9, 0.2]]);
        let b = mask_of(&[vec![0.1, 0.2, 0.9], vec![0.1, 0.2, 0.9]]);
        let (pa, pb) = (a.smoothness_penalty(true).unwrap(), b.smoothness_penalty(true).unwrap());
        assert!((pa - pb).abs() > 0.1);
    }
}
