use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;

use super::{init_uniform, linear, Binder, ParamMut, ParamRef};
use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(Error::Config(format!("unknown activation {s:?} (relu, tanh)"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

/// Fully connected network over the flattened `w · D` image.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    /// `(weight [in, out], bias [out])` per layer; the last layer has no activation.
    pub layers: Vec<(Tensor, Tensor)>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(
        window: usize,
        features: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut widths = vec![window * features];
        widths.extend_from_slice(hidden);
        widths.push(features);
        let layers = widths
            .windows(2)
            .map(|io| {
                let (fan_in, out) = (io[0], io[1]);
                (
                    init_uniform(&[fan_in, out], fan_in, rng),
                    init_uniform(&[out], fan_in, rng),
                )
            })
            .collect();
        Mlp { layers, activation }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId, binder: &mut Binder) -> Result<NodeId> {
        let shape = g.value(x).shape().to_vec();
        let mut h = g.reshape(x, &[shape[0], shape[1] * shape[2]])?;
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let wn = binder.bind(g, &format!("neural.mlp.w{i}"), w, true);
            let bn = binder.bind(g, &format!("neural.mlp.b{i}"), b, false);
            h = linear(g, h, wn, bn)?;
            if i < last {
                h = match self.activation {
                    Activation::Relu => g.relu(h)?,
                    Activation::Tanh => g.tanh(h)?,
                };
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<ParamRef<'_>> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, (w, b))| {
                [
                    ParamRef {
                        name: format!("neural.mlp.w{i}"),
                        tensor: w,
                        decay: true,
                    },
                    ParamRef {
                        name: format!("neural.mlp.b{i}"),
                        tensor: b,
                        decay: false,
                    },
                ]
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, (w, b))| {
                [
                    ParamMut {
                        name: format!("neural.mlp.w{i}"),
                        tensor: w,
                    },
                    ParamMut {
                        name: format!("neural.mlp.b{i}"),
                        tensor: b,
                    },
                ]
            })
            .collect()
    }
}
