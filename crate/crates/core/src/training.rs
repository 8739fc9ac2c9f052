//! Joint training of a forecaster and one shared augmentation mask.
//!
//! Every minibatch draws a fresh reference, blends it into the inputs
//! through the shared mask, and updates the model parameters and the mask
//! logits together with AdamW. Validation always uses clean inputs.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::autodiff::{Graph, NodeId};
use crate::config::{parse, parse_bool, Section};
use crate::data::{invert_scaler, stack_batch, Scaler, Window};
use crate::error::{Error, Result};
use crate::forecasters::{Binder, Forecaster};
use crate::mask::{apply_mask_node, size_penalty, smoothness_penalty, Mask};
use crate::metrics::{corr, rse, EvalBlock};
use crate::optim::AdamW;
use crate::reference::{reference_with_rng, ReferenceSpec};
use crate::rng::stream_rng;
use crate::tensor::Tensor;

const SHUFFLE_STREAM: u64 = 10;
const NOISE_STREAM: u64 = 11;
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossKind {
    #[default]
    Mse,
    /// Reserved; rejected by config validation.
    Mae,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "mae" => Ok(LossKind::Mae),
            _ => Err(Error::Config(format!("unknown loss kind {s:?} (mse)"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub p0: u32,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub seed: u64,
    pub mask_enabled: bool,
    /// Keep the mask logits fixed at their initial value.
    pub mask_frozen: bool,
    pub size_penalty_complement: bool,
    pub feature_axis_smoothness: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 1e-3,
            lambda1: 1e-3,
            lambda2: 1e-3,
            p0: 2,
            batch_size: 32,
            epochs: 100,
            patience: 10,
            seed: 0,
            mask_enabled: true,
            mask_frozen: false,
            size_penalty_complement: true,
            feature_axis_smoothness: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr must be > 0, got {}", self.lr)));
        }
        for (k, v) in [
            ("weight_decay", self.weight_decay),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("train.{k} must be >= 0, got {v}")));
            }
        }
        if !(1..=3).contains(&self.p0) {
            return Err(Error::Config(format!("train.p0 must be 1, 2 or 3, got {}", self.p0)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("train.batch_size and train.epochs must be >= 1".into()));
        }
        Ok(())
    }
}

impl Section for TrainConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "lambda1" => self.lambda1 = parse(key, value)?,
            "lambda2" => self.lambda2 = parse(key, value)?,
            "p0" => self.p0 = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "mask_enabled" => self.mask_enabled = parse_bool(key, value)?,
            "mask_frozen" => self.mask_frozen = parse_bool(key, value)?,
            "size_penalty_complement" => self.size_penalty_complement = parse_bool(key, value)?,
            "feature_axis_smoothness" => self.feature_axis_smoothness = parse_bool(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lr", self.lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("p0", self.p0.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("mask_enabled", self.mask_enabled.to_string()),
            ("mask_frozen", self.mask_frozen.to_string()),
            ("size_penalty_complement", self.size_penalty_complement.to_string()),
            ("feature_axis_smoothness", self.feature_axis_smoothness.to_string()),
        ]
    }
}

/// `MSE(target, prediction) + λ1·size(M) + λ2·smoothness(M)`.
pub fn loss_l1(
    g: &mut Graph,
    target: NodeId,
    prediction: NodeId,
    mask: NodeId,
    cfg: &TrainConfig,
) -> Result<NodeId> {
    let fit = g.mse(target, prediction)?;
    let size = size_penalty(g, mask, cfg.p0, cfg.size_penalty_complement)?;
    let smooth = smoothness_penalty(g, mask, cfg.feature_axis_smoothness)?;
    let size = g.scale(size, cfg.lambda1)?;
    let smooth = g.scale(smooth, cfg.lambda2)?;
    let total = g.add(fit, size)?;
    g.add(total, smooth)
}

/// Windows and side inputs for [`train`].
pub struct TrainData<'a> {
    pub train: &'a [Window],
    pub val: &'a [Window],
    pub reference: ReferenceSpec,
    /// Per-feature training means, used by the constant reference.
    pub baseline: Vec<f64>,
    /// Restrict the loss to one output column.
    pub target_col: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN when the validation set is empty or the metric is undefined.
    pub val_rse: f64,
    pub val_corr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl LossHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_rse,val_corr\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_rse, r.val_corr));
        }
        out
    }
}

fn column_node(g: &mut Graph, x: NodeId, col: Option<usize>) -> Result<NodeId> {
    match col {
        Some(c) => g.slice(x, 1, c, 1),
        None => Ok(x),
    }
}

/// Runs the training loop in place. With validation windows present, the
/// parameters with the lowest validation RSE are restored at the end.
pub fn train(
    forecaster: &mut Forecaster,
    mask: &mut Mask,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
) -> Result<LossHistory> {
    cfg.validate()?;
    data.reference.validate()?;
    if data.train.is_empty() {
        return Err(Error::Invalid("training set has no windows".into()));
    }
    if mask.shape() != (forecaster.window, forecaster.features) {
        return Err(Error::shape(
            "train",
            format!("mask {:?} for a {}x{} model", mask.shape(), forecaster.window, forecaster.features),
        ));
    }
    if let Some(c) = data.target_col {
        if c >= forecaster.features {
            return Err(Error::IndexOutOfRange {
                index: c,
                len: forecaster.features,
            });
        }
    }
    let mut shuffle_rng = stream_rng(cfg.seed, SHUFFLE_STREAM);
    let mut noise_rng = stream_rng(cfg.seed, NOISE_STREAM);
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut history = LossHistory::default();
    let mut best: Option<(f64, Forecaster, Mask)> = None;
    let mut stale = 0;
    let mut iteration = 0;
    let learn_mask = cfg.mask_enabled && !cfg.mask_frozen;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            iteration += 1;
            let (images, targets) = stack_batch(chunk.iter().map(|&i| &data.train[i]))?;
            let batch = chunk.len();
            let mut g = Graph::new();
            let x = g.constant(images.clone());
            let y = g.constant(targets);
            let mut binder = Binder::trainable();
            forecaster.bind_all(&mut g, &mut binder);
            let mask_node = if cfg.mask_enabled {
                let logits = if learn_mask {
                    g.param(mask.logits.clone())
                } else {
                    g.constant(mask.logits.clone())
                };
                let reference = reference_with_rng(&images, &data.reference, &data.baseline, &mut noise_rng)?;
                let r = g.constant(reference);
                let m = g.sigmoid(logits)?;
                let tiled = g.tile(m, batch)?;
                Some((logits, m, apply_mask_node(&mut g, x, r, tiled)?))
            } else {
                None
            };
            let input = mask_node.map_or(x, |(_, _, xt)| xt);
            let pred = forecaster.forward(&mut g, input, &mut binder)?;
            let pred = column_node(&mut g, pred, data.target_col)?;
            let truth = column_node(&mut g, y, data.target_col)?;
            let loss = match mask_node {
                Some((_, m, _)) => loss_l1(&mut g, truth, pred, m, cfg)?,
                None => g.mse(truth, pred)?,
            };
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteTrainingLoss { iteration, lr: cfg.lr });
            }
            total += value;
            batches += 1;

            let grads = g.backward(loss)?;
            let nodes: Vec<(NodeId, bool)> = forecaster
                .params()
                .iter()
                .map(|p| {
                    let b = binder
                        .bound()
                        .iter()
                        .find(|b| b.name == p.name)
                        .expect("every parameter is bound");
                    (b.node, p.decay)
                })
                .collect();
            let zero_like = |id: NodeId, g: &Graph| Tensor::zeros(g.value(id).shape());
            let mut grad_tensors: Vec<Tensor> = nodes
                .iter()
                .map(|(id, _)| grads.get(*id).cloned().unwrap_or_else(|| zero_like(*id, &g)))
                .collect();
            let mut params: Vec<(&mut Tensor, bool)> = forecaster
                .params_mut()
                .into_iter()
                .zip(&nodes)
                .map(|(p, (_, decay))| (p.tensor, *decay))
                .collect();
            if let (true, Some((logits, _, _))) = (learn_mask, mask_node) {
                grad_tensors.push(grads.get(logits).cloned().unwrap_or_else(|| zero_like(logits, &g)));
                params.push((&mut mask.logits, false));
            }
            let grad_refs: Vec<&Tensor> = grad_tensors.iter().collect();
            opt.step(&mut params, &grad_refs);
        }

        let train_loss = total / batches as f64;
        let (val_rse, val_corr) = if data.val.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let preds = predict_windows(forecaster, data.val)?;
            let (_, truth) = stack_batch(data.val)?;
            let block = restrict(EvalBlock::new(truth, preds)?, data.target_col)?;
            (
                rse(&block).unwrap_or(f64::NAN),
                corr(&block).map(|c| c.value).unwrap_or(f64::NAN),
            )
        };
        log::debug!("epoch {epoch}: train_loss={train_loss:.6} val_rse={val_rse:.6}");
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_rse,
            val_corr,
        });

        if val_rse.is_finite() {
            if best.as_ref().is_none_or(|(b, _, _)| val_rse < *b) {
                best = Some((val_rse, forecaster.clone(), mask.clone()));
                history.best_epoch = epoch;
                stale = 0;
            } else {
                stale += 1;
                if cfg.patience > 0 && stale >= cfg.patience {
                    log::info!("early stop at epoch {epoch}");
                    break;
                }
            }
        } else {
            history.best_epoch = epoch;
        }
    }
    if let Some((_, f, m)) = best {
        *forecaster = f;
        *mask = m;
    }
    Ok(history)
}

/// Clean-input forecasts for every window, `[N, D]`.
pub fn predict_windows(forecaster: &Forecaster, windows: &[Window]) -> Result<Tensor> {
    let d = forecaster.features;
    let mut out = Vec::with_capacity(windows.len() * d);
    for chunk in windows.chunks(EVAL_CHUNK) {
        let (images, _) = stack_batch(chunk)?;
        out.extend(forecaster.predict(&images)?.into_data());
    }
    Tensor::new(&[windows.len(), d], out)
}

fn restrict(block: EvalBlock, col: Option<usize>) -> Result<EvalBlock> {
    match col {
        Some(c) => block.column(c),
        None => Ok(block),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub rse: f64,
    pub corr: f64,
    pub excluded_features: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// In the scaled space the model was trained in.
    pub scaled: Metrics,
    /// After inverting the scaler.
    pub unscaled: Metrics,
    pub predictions: Tensor,
}

fn metrics(block: &EvalBlock) -> Result<Metrics> {
    let c = corr(block)?;
    Ok(Metrics {
        rse: rse(block)?,
        corr: c.value,
        excluded_features: c.excluded,
    })
}

/// RSE and CORR of clean-input forecasts on `windows`.
pub fn evaluate(
    forecaster: &Forecaster,
    windows: &[Window],
    scaler: &Scaler,
    target_col: Option<usize>,
) -> Result<Evaluation> {
    if windows.is_empty() {
        return Err(Error::Invalid("evaluation set has no windows".into()));
    }
    let predictions = predict_windows(forecaster, windows)?;
    let (_, truth) = stack_batch(windows)?;
    let scaled = EvalBlock::new(truth.clone(), predictions.clone())?;
    let unscaled = EvalBlock::new(invert_scaler(&truth, scaler)?, invert_scaler(&predictions, scaler)?)?;
    Ok(Evaluation {
        scaled: metrics(&restrict(scaled, target_col)?)?,
        unscaled: metrics(&restrict(unscaled, target_col)?)?,
        predictions,
    })
}
