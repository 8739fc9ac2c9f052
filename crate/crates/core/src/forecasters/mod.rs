//! Hybrid forecasters: a per-feature autoregressive highway plus one
//! pluggable neural component, summed into the final forecast.

mod ar;
mod attention;
mod checkpoint;
mod cnn;
mod gru;
mod mlp;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use ar::{ar_forecast, ArModel};
pub use attention::{positional_encoding, SelfAttention};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use cnn::TemporalCnn;
pub use gru::Gru;
pub use mlp::{Activation, Mlp};

use crate::autodiff::{Graph, NodeId};
use crate::config::{join, parse, parse_list, Section};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::Tensor;

/// Records which graph node holds each named parameter.
///
/// A trainable binder registers parameters as gradient leaves; a frozen one
/// registers them as constants. Binding the same name twice on one graph
/// returns the cached node.
pub struct Binder {
    trainable: bool,
    bound: Vec<Bound>,
    index: HashMap<String, usize>,
}

#[derive(Clone, Debug)]
pub struct Bound {
    pub name: String,
    pub node: NodeId,
    /// Whether weight decay applies to this parameter.
    pub decay: bool,
}

impl Binder {
    pub fn trainable() -> Self {
        Binder {
            trainable: true,
            bound: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn frozen() -> Self {
        Binder {
            trainable: false,
            ..Binder::trainable()
        }
    }

    pub fn bind(&mut self, g: &mut Graph, name: &str, value: &Tensor, decay: bool) -> NodeId {
        if let Some(&i) = self.index.get(name) {
            return self.bound[i].node;
        }
        let node = if self.trainable {
            g.param(value.clone())
        } else {
            g.constant(value.clone())
        };
        self.insert(name, node, decay);
        node
    }

    /// Registers an existing node under `name`; later binds of that name
    /// return it.
    pub fn insert(&mut self, name: &str, node: NodeId, decay: bool) {
        self.index.insert(name.to_string(), self.bound.len());
        self.bound.push(Bound {
            name: name.to_string(),
            node,
            decay,
        });
    }

    pub fn bound(&self) -> &[Bound] {
        &self.bound
    }
}

/// A named parameter tensor; `decay` marks weights (not biases).
pub struct ParamRef<'a> {
    pub name: String,
    pub tensor: &'a Tensor,
    pub decay: bool,
}

pub struct ParamMut<'a> {
    pub name: String,
    pub tensor: &'a mut Tensor,
}

/// Uniform `(-a, a)` with `a = 1/sqrt(fan_in)`.
pub(crate) fn init_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let a = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-a..a)).collect()).expect("shape product")
}

/// `x [N, in] · w [in, out] + b [out]`.
pub(crate) fn linear(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let n = g.value(x).shape()[0];
    let y = g.matmul(x, w)?;
    let bt = g.tile(b, n)?;
    g.add(y, bt)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NeuralKind {
    None,
    Mlp,
    TemporalCnn,
    Gru,
    SelfAttention,
}

impl FromStr for NeuralKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NeuralKind::None),
            "mlp" => Ok(NeuralKind::Mlp),
            "cnn" => Ok(NeuralKind::TemporalCnn),
            "gru" => Ok(NeuralKind::Gru),
            "attention" => Ok(NeuralKind::SelfAttention),
            _ => Err(Error::Config(format!(
                "unknown neural component {s:?} (none, mlp, cnn, gru, attention)"
            ))),
        }
    }
}

impl fmt::Display for NeuralKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NeuralKind::None => "none",
            NeuralKind::Mlp => "mlp",
            NeuralKind::TemporalCnn => "cnn",
            NeuralKind::Gru => "gru",
            NeuralKind::SelfAttention => "attention",
        })
    }
}

/// Architecture of a [`Forecaster`]. Window and feature count come from the
/// data.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub neural: NeuralKind,
    pub ar: bool,
    /// AR order `p`; the highway reads the last `p + 1` rows.
    pub ar_order: usize,
    pub mlp_hidden: Vec<usize>,
    pub mlp_activation: Activation,
    pub cnn_channels: usize,
    pub cnn_layers: usize,
    pub cnn_kernel: usize,
    pub gru_hidden: usize,
    pub attn_dim: usize,
    pub attn_ff: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            neural: NeuralKind::Mlp,
            ar: true,
            ar_order: 7,
            mlp_hidden: vec![64],
            mlp_activation: Activation::Relu,
            cnn_channels: 16,
            cnn_layers: 2,
            cnn_kernel: 3,
            gru_hidden: 32,
            attn_dim: 32,
            attn_ff: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self, window: usize) -> Result<()> {
        if !self.ar && self.neural == NeuralKind::None {
            return Err(Error::Config("model needs an AR component, a neural component, or both".into()));
        }
        if self.ar && self.ar_order + 1 > window {
            return Err(Error::Config(format!(
                "model.ar_order + 1 = {} exceeds the window {window}",
                self.ar_order + 1
            )));
        }
        let sizes = [
            ("cnn_channels", self.cnn_channels),
            ("cnn_layers", self.cnn_layers),
            ("cnn_kernel", self.cnn_kernel),
            ("gru_hidden", self.gru_hidden),
            ("attn_dim", self.attn_dim),
            ("attn_ff", self.attn_ff),
        ];
        if let Some((k, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{k} must be >= 1")));
        }
        if self.mlp_hidden.contains(&0) {
            return Err(Error::Config("model.mlp_hidden widths must be >= 1".into()));
        }
        Ok(())
    }
}

impl Section for ModelConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "neural" => self.neural = value.parse()?,
            "ar" => self.ar = crate::config::parse_bool(key, value)?,
            "ar_order" => self.ar_order = parse(key, value)?,
            "mlp_hidden" => self.mlp_hidden = parse_list(key, value)?,
            "mlp_activation" => self.mlp_activation = value.parse()?,
            "cnn_channels" => self.cnn_channels = parse(key, value)?,
            "cnn_layers" => self.cnn_layers = parse(key, value)?,
            "cnn_kernel" => self.cnn_kernel = parse(key, value)?,
            "gru_hidden" => self.gru_hidden = parse(key, value)?,
            "attn_dim" => self.attn_dim = parse(key, value)?,
            "attn_ff" => self.attn_ff = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("neural", self.neural.to_string()),
            ("ar", self.ar.to_string()),
            ("ar_order", self.ar_order.to_string()),
            ("mlp_hidden", join(&self.mlp_hidden)),
            ("mlp_activation", self.mlp_activation.to_string()),
            ("cnn_channels", self.cnn_channels.to_string()),
            ("cnn_layers", self.cnn_layers.to_string()),
            ("cnn_kernel", self.cnn_kernel.to_string()),
            ("gru_hidden", self.gru_hidden.to_string()),
            ("attn_dim", self.attn_dim.to_string()),
            ("attn_ff", self.attn_ff.to_string()),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NeuralForecaster {
    Mlp(Mlp),
    TemporalCnn(TemporalCnn),
    Gru(Gru),
    SelfAttention(SelfAttention),
}

impl NeuralForecaster {
    /// Maps a `[B, w, D]` node to a `[B, D]` forecast.
    pub fn forward(&self, g: &mut Graph, x: NodeId, binder: &mut Binder) -> Result<NodeId> {
        match self {
            NeuralForecaster::Mlp(m) => m.forward(g, x, binder),
            NeuralForecaster::TemporalCnn(m) => m.forward(g, x, binder),
            NeuralForecaster::Gru(m) => m.forward(g, x, binder),
            NeuralForecaster::SelfAttention(m) => m.forward(g, x, binder),
        }
    }

    pub fn params(&self) -> Vec<ParamRef<'_>> {
        match self {
            NeuralForecaster::Mlp(m) => m.params(),
            NeuralForecaster::TemporalCnn(m) => m.params(),
            NeuralForecaster::Gru(m) => m.params(),
            NeuralForecaster::SelfAttention(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        match self {
            NeuralForecaster::Mlp(m) => m.params_mut(),
            NeuralForecaster::TemporalCnn(m) => m.params_mut(),
            NeuralForecaster::Gru(m) => m.params_mut(),
            NeuralForecaster::SelfAttention(m) => m.params_mut(),
        }
    }
}

/// `ŷ = y^r + y^o`.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecaster {
    pub config: ModelConfig,
    pub window: usize,
    pub features: usize,
    pub ar: Option<ArModel>,
    pub neural: Option<NeuralForecaster>,
}

impl Forecaster {
    /// Builds a freshly initialized model; every component draws from its
    /// own stream of `seed`.
    pub fn new(config: &ModelConfig, window: usize, features: usize, seed: u64) -> Result<Self> {
        config.validate(window)?;
        if features == 0 {
            return Err(Error::Config("forecaster needs at least one feature".into()));
        }
        let ar = config
            .ar
            .then(|| ArModel::new(features, config.ar_order, &mut stream_rng(seed, 1)));
        let mut rng = stream_rng(seed, 2);
        let neural = match config.neural {
            NeuralKind::None => None,
            NeuralKind::Mlp => Some(NeuralForecaster::Mlp(Mlp::new(
                window,
                features,
                &config.mlp_hidden,
                config.mlp_activation,
                &mut rng,
            ))),
            NeuralKind::TemporalCnn => Some(NeuralForecaster::TemporalCnn(TemporalCnn::new(
                window,
                features,
                config.cnn_channels,
                config.cnn_layers,
                config.cnn_kernel,
                &mut rng,
            ))),
            NeuralKind::Gru => Some(NeuralForecaster::Gru(Gru::new(features, config.gru_hidden, &mut rng))),
            NeuralKind::SelfAttention => Some(NeuralForecaster::SelfAttention(SelfAttention::new(
                window,
                features,
                config.attn_dim,
                config.attn_ff,
                &mut rng,
            ))),
        };
        Ok(Forecaster {
            config: config.clone(),
            window,
            features,
            ar,
            neural,
        })
    }

    /// Adds the forecast for a `[B, w, D]` node to the graph, returning `[B, D]`.
    pub fn forward(&self, g: &mut Graph, x: NodeId, binder: &mut Binder) -> Result<NodeId> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 3 || shape[1] != self.window || shape[2] != self.features {
            return Err(Error::shape(
                "forecaster",
                format!("input {shape:?}, model expects [B, {}, {}]", self.window, self.features),
            ));
        }
        let linear = self.ar.as_ref().map(|ar| ar.forward(g, x, binder)).transpose()?;
        let nonlinear = self.neural.as_ref().map(|n| n.forward(g, x, binder)).transpose()?;
        match (linear, nonlinear) {
            (Some(r), Some(o)) => g.add(r, o),
            (Some(r), None) => Ok(r),
            (None, Some(o)) => Ok(o),
            (None, None) => Err(Error::Config("forecaster has no components".into())),
        }
    }

    /// Registers every parameter on the graph up front.
    pub fn bind_all(&self, g: &mut Graph, binder: &mut Binder) {
        for p in self.params() {
            binder.bind(g, &p.name, p.tensor, p.decay);
        }
    }

    /// Forecasts for a `[B, w, D]` batch with frozen parameters.
    pub fn predict(&self, images: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let y = self.forward(&mut g, x, &mut Binder::frozen())?;
        Ok(g.value(y).clone())
    }

    pub fn params(&self) -> Vec<ParamRef<'_>> {
        let mut out = self.ar.as_ref().map(ArModel::params).unwrap_or_default();
        if let Some(n) = &self.neural {
            out.extend(n.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = self.ar.as_mut().map(ArModel::params_mut).unwrap_or_default();
        if let Some(n) = &mut self.neural {
            out.extend(n.params_mut());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.tensor.numel()).sum()
    }
}

/// Element-wise sum of the linear and non-linear forecasts.
pub fn combine(y_r: &[f64], y_o: &[f64]) -> Result<Vec<f64>> {
    if y_r.len() != y_o.len() {
        return Err(Error::shape("combine", format!("{} vs {}", y_r.len(), y_o.len())));
    }
    Ok(y_r.iter().zip(y_o).map(|(a, b)| a + b).collect())
}

#[cfg(test)]
mod tests;
