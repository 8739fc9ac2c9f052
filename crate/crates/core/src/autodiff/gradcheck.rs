use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates skipped because a ±h step crossed a relu kink.
    pub excluded: usize,
}

/// `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Compares the reverse-mode gradient of a scalar function against central
/// finite differences, coordinate by coordinate.
///
/// `build` receives the graph and one leaf per entry of `params` and must
/// return a scalar node. A coordinate is excluded when either finite
/// difference probe changes the relu activation pattern of the graph.
pub fn grad_check<F>(params: &[Tensor], h: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = build(&mut g, &ids)?;
    let base_signature = g.kink_signature();
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(params)
        .map(|(id, p)| {
            grads
                .get(*id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape()))
        })
        .collect();

    let probe = |shifted: &[Tensor]| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = shifted.iter().map(|p| g.constant(p.clone())).collect();
        let out = build(&mut g, &ids)?;
        let v = g.value(out);
        if v.numel() != 1 {
            return Err(Error::Graph("grad_check needs a scalar function".into()));
        }
        Ok((v.item(), g.kink_signature()))
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        excluded: 0,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for ci in 0..p.numel() {
            let orig = p.data()[ci];
            work[pi].data_mut()[ci] = orig + h;
            let (plus, sig_plus) = probe(&work)?;
            work[pi].data_mut()[ci] = orig - h;
            let (minus, sig_minus) = probe(&work)?;
            work[pi].data_mut()[ci] = orig;
            if sig_plus != base_signature || sig_minus != base_signature {
                report.excluded += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[pi].data()[ci], numeric);
            report.max_rel_err = report.max_rel_err.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}
