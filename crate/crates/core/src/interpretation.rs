//! Per-sample saliency masks on a frozen forecaster.
//!
//! Starting from `m = 0.5` everywhere, the mask logits are optimized so the
//! perturbed input degrades the forecast as much as possible while the mask
//! stays small and smooth. Only the logits move; model parameters enter the
//! graph as constants.

use std::fmt;

use rayon::prelude::*;

use crate::autodiff::{Graph, NodeId};
use crate::config::{parse, parse_bool, Section};
use crate::data::Window;
use crate::error::{Error, Result};
use crate::forecasters::{Binder, Forecaster};
use crate::mask::{apply_mask_node, size_penalty, smoothness_penalty, Mask};
use crate::optim::AdamW;
use crate::reference::{make_reference, ReferenceMode, ReferenceSpec};
use crate::tensor::Tensor;

/// What the forecast error is measured against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Target {
    /// The window's true target row.
    #[default]
    Truth,
    /// The model's own forecast on the unperturbed window.
    OwnPrediction,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Truth => "target",
            Target::OwnPrediction => "self",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterpretConfig {
    pub steps: usize,
    pub lr: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub p0: u32,
    pub feature_axis_smoothness: bool,
    /// Mode and widths of the reference; its seed is ignored in favour of
    /// [`InterpretConfig::seed`].
    pub reference: ReferenceSpec,
    pub seed: u64,
    pub against: Target,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        InterpretConfig {
            steps: 500,
            lr: 1e-2,
            lambda1: 1e-3,
            lambda2: 1e-3,
            p0: 2,
            feature_axis_smoothness: true,
            reference: ReferenceSpec {
                mode: ReferenceMode::Blur,
                ..ReferenceSpec::default()
            },
            seed: 0,
            against: Target::Truth,
        }
    }
}

impl InterpretConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("interpret.steps must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("interpret.lr must be > 0, got {}", self.lr)));
        }
        for (k, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("interpret.{k} must be >= 0, got {v}")));
            }
        }
        if !(1..=3).contains(&self.p0) {
            return Err(Error::Config(format!("interpret.p0 must be 1, 2 or 3, got {}", self.p0)));
        }
        self.reference.validate()
    }

    fn reference_spec(&self) -> ReferenceSpec {
        ReferenceSpec {
            seed: self.seed,
            ..self.reference.clone()
        }
    }
}

impl Section for InterpretConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "steps" => self.steps = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lambda1" => self.lambda1 = parse(key, value)?,
            "lambda2" => self.lambda2 = parse(key, value)?,
            "p0" => self.p0 = parse(key, value)?,
            "feature_axis_smoothness" => self.feature_axis_smoothness = parse_bool(key, value)?,
            "reference" => self.reference.mode = value.parse()?,
            "sigma1" => self.reference.sigma1 = parse(key, value)?,
            "sigma2" => self.reference.sigma2 = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "against" => self.against = value.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("steps", self.steps.to_string()),
            ("lr", self.lr.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("p0", self.p0.to_string()),
            ("feature_axis_smoothness", self.feature_axis_smoothness.to_string()),
            ("reference", self.reference.mode.to_string()),
            ("sigma1", self.reference.sigma1.to_string()),
            ("sigma2", self.reference.sigma2.to_string()),
            ("seed", self.seed.to_string()),
            ("against", self.against.to_string()),
        ]
    }
}

/// Side inputs shared by every explained sample.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InterpretContext {
    /// Per-feature training means, used by the constant reference.
    pub baseline: Vec<f64>,
    /// Measure the forecast error on one column only.
    pub target_col: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    /// `[w, D]`, every value in `(0, 1)`.
    pub mask_values: Tensor,
    pub sample_id: usize,
    pub horizon: usize,
    /// `L2` before each optimizer step.
    pub trace: Vec<f64>,
    /// Forecast error of the final perturbed input.
    pub final_lp: f64,
}

impl SaliencyMap {
    pub fn mean(&self) -> f64 {
        self.mask_values.mean()
    }

    /// Mask values as CSV, one row per time step, six decimals, no header.
    pub fn to_csv(&self) -> String {
        let (w, _) = self.mask_values.dims2();
        let mut out = String::new();
        for t in 0..w {
            let row: Vec<String> = self.mask_values.row(t).iter().map(|v| format!("{v:.6}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, v) in self.trace.iter().enumerate() {
            out.push_str(&format!("{i},{v}\n"));
        }
        out
    }
}

/// `−MSE(target, prediction) + λ1·‖M‖_{p0} + λ2·smoothness(M)`.
pub fn loss_l2(
    g: &mut Graph,
    target: NodeId,
    prediction: NodeId,
    mask: NodeId,
    cfg: &InterpretConfig,
) -> Result<NodeId> {
    let fit = g.mse(target, prediction)?;
    let fit = g.scale(fit, -1.0)?;
    let size = size_penalty(g, mask, cfg.p0, false)?;
    let smooth = smoothness_penalty(g, mask, cfg.feature_axis_smoothness)?;
    let size = g.scale(size, cfg.lambda1)?;
    let smooth = g.scale(smooth, cfg.lambda2)?;
    let total = g.add(fit, size)?;
    g.add(total, smooth)
}

struct Objective<'a> {
    forecaster: &'a Forecaster,
    cfg: &'a InterpretConfig,
    target_col: Option<usize>,
    g: Graph,
    binder: Binder,
    image: NodeId,
    reference: NodeId,
    target: NodeId,
    logits: NodeId,
    base: usize,
}

impl Objective<'_> {
    /// Rebuilds the tape for the current logits; returns `(ℓ_p, L2)` nodes.
    fn build(&mut self, logits: &Tensor) -> Result<(NodeId, NodeId)> {
        let g = &mut self.g;
        g.truncate(self.base);
        g.set_leaf(self.logits, logits.clone())?;
        let (w, d) = logits.dims2();
        let m = g.sigmoid(self.logits)?;
        let m3 = g.reshape(m, &[1, w, d])?;
        let perturbed = apply_mask_node(g, self.image, self.reference, m3)?;
        let mut pred = self.forecaster.forward(g, perturbed, &mut self.binder)?;
        let mut target = self.target;
        if let Some(c) = self.target_col {
            pred = g.slice(pred, 1, c, 1)?;
            target = g.slice(target, 1, c, 1)?;
        }
        let lp = g.mse(target, pred)?;
        let loss = loss_l2(g, target, pred, m, self.cfg)?;
        Ok((lp, loss))
    }
}

/// Optimizes one mask for `window`. The reference is drawn once from the
/// stream `(cfg.seed, sample_id)`.
pub fn interpret(
    forecaster: &Forecaster,
    window: &Window,
    sample_id: usize,
    cfg: &InterpretConfig,
    ctx: &InterpretContext,
) -> Result<SaliencyMap> {
    cfg.validate()?;
    let (w, d) = (window.image.window(), window.image.features());
    if (w, d) != (forecaster.window, forecaster.features) {
        return Err(Error::shape(
            "interpret",
            format!("window {w}x{d} for a {}x{} model", forecaster.window, forecaster.features),
        ));
    }
    if let Some(c) = ctx.target_col {
        if c >= d {
            return Err(Error::IndexOutOfRange { index: c, len: d });
        }
    }
    let image = window.image.values.clone().reshape(&[1, w, d])?;
    let reference = make_reference(&image, &cfg.reference_spec(), &ctx.baseline, sample_id as u64)?;
    let target = match cfg.against {
        Target::Truth => Tensor::new(&[1, d], window.target.clone())?,
        Target::OwnPrediction => forecaster.predict(&image)?,
    };

    let mut g = Graph::new();
    let image = g.constant(image);
    let reference = g.constant(reference);
    let target = g.constant(target);
    let mut binder = Binder::frozen();
    forecaster.bind_all(&mut g, &mut binder);
    let mut mask = Mask::new(w, d, 0.0);
    let logits = g.param(mask.logits.clone());
    let base = g.len();
    let mut obj = Objective {
        forecaster,
        cfg,
        target_col: ctx.target_col,
        g,
        binder,
        image,
        reference,
        target,
        logits,
        base,
    };

    let mut opt = AdamW::new(cfg.lr, 0.0);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (_, loss) = obj.build(&mask.logits)?;
        let value = obj.g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFiniteInterpretationLoss { step });
        }
        trace.push(value);
        let mut grads = obj.g.backward(loss)?;
        let grad = grads
            .take(obj.logits)
            .unwrap_or_else(|| Tensor::zeros(&[w, d]));
        opt.step(&mut [(&mut mask.logits, false)], &[&grad]);
    }
    let (lp, _) = obj.build(&mask.logits)?;
    let final_lp = obj.g.value(lp).item();
    Ok(SaliencyMap {
        mask_values: mask.values(),
        sample_id,
        horizon: window.image.horizon,
        trace,
        final_lp,
    })
}

/// Runs [`interpret`] for every `(sample_id, window)` on up to `jobs`
/// threads. Results keep the input order; a failed sample does not stop the
/// others.
pub fn interpret_batch(
    forecaster: &Forecaster,
    samples: &[(usize, &Window)],
    cfg: &InterpretConfig,
    ctx: &InterpretContext,
    jobs: usize,
) -> Result<Vec<Result<SaliencyMap>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        samples
            .par_iter()
            .map(|&(id, window)| {
                interpret(forecaster, window, id, cfg, ctx).map_err(|e| Error::Sample {
                    id,
                    source: Box::new(e),
                })
            })
            .collect()
    }))
}
