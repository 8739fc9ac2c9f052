use rand_chacha::ChaCha8Rng;

use super::{init_uniform, linear, Binder, ParamMut, ParamRef};
use crate::autodiff::{Graph, NodeId};
use crate::error::Result;
use crate::tensor::Tensor;

/// Stack of causal convolutions over time (features as input channels),
/// followed by a linear head over the flattened final feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalCnn {
    /// `(kernel [K, C_in, C_out], bias [C_out])` per layer.
    pub convs: Vec<(Tensor, Tensor)>,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl TemporalCnn {
    pub fn new(
        window: usize,
        features: usize,
        channels: usize,
        layers: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut cin = features;
        let mut convs = Vec::with_capacity(layers);
        for _ in 0..layers {
            let fan_in = kernel * cin;
            convs.push((
                init_uniform(&[kernel, cin, channels], fan_in, rng),
                init_uniform(&[channels], fan_in, rng),
            ));
            cin = channels;
        }
        let fan_in = window * cin;
        TemporalCnn {
            convs,
            head_w: init_uniform(&[fan_in, features], fan_in, rng),
            head_b: init_uniform(&[features], fan_in, rng),
        }
    }

    /// Output of every convolution layer, each `[B, w, C]`.
    pub fn feature_maps(&self, g: &mut Graph, x: NodeId, binder: &mut Binder) -> Result<Vec<NodeId>> {
        let (batch, steps) = {
            let s = g.value(x).shape();
            (s[0], s[1])
        };
        let mut h = x;
        let mut maps = Vec::with_capacity(self.convs.len());
        for (i, (k, b)) in self.convs.iter().enumerate() {
            let kn = binder.bind(g, &format!("neural.cnn.conv{i}.kernel"), k, true);
            let bn = binder.bind(g, &format!("neural.cnn.conv{i}.bias"), b, false);
            let y = g.conv1d_causal(h, kn)?;
            let bt = g.tile(bn, steps)?;
            let bt = g.tile(bt, batch)?;
            let y = g.add(y, bt)?;
            h = g.relu(y)?;
            maps.push(h);
        }
        Ok(maps)
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId, binder: &mut Binder) -> Result<NodeId> {
        let h = match self.feature_maps(g, x, binder)?.last() {
            Some(&h) => h,
            None => x,
        };
        let s = g.value(h).shape().to_vec();
        let flat = g.reshape(h, &[s[0], s[1] * s[2]])?;
        let w = binder.bind(g, "neural.cnn.head.w", &self.head_w, true);
        let b = binder.bind(g, "neural.cnn.head.b", &self.head_b, false);
        linear(g, flat, w, b)
    }

    pub fn params(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        for (i, (k, b)) in self.convs.iter().enumerate() {
            out.push(ParamRef {
                name: format!("neural.cnn.conv{i}.kernel"),
                tensor: k,
                decay: true,
            });
            out.push(ParamRef {
                name: format!("neural.cnn.conv{i}.bias"),
                tensor: b,
                decay: false,
            });
        }
        out.push(ParamRef {
            name: "neural.cnn.head.w".into(),
            tensor: &self.head_w,
            decay: true,
        });
        out.push(ParamRef {
            name: "neural.cnn.head.b".into(),
            tensor: &self.head_b,
            decay: false,
        });
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        for (i, (k, b)) in self.convs.iter_mut().enumerate() {
            out.push(ParamMut {
                name: format!("neural.cnn.conv{i}.kernel"),
                tensor: k,
            });
            out.push(ParamMut {
                name: format!("neural.cnn.conv{i}.bias"),
                tensor: b,
            });
        }
        out.push(ParamMut {
            name: "neural.cnn.head.w".into(),
            tensor: &mut self.head_w,
        });
        out.push(ParamMut {
            name: "neural.cnn.head.b".into(),
            tensor: &mut self.head_b,
        });
        out
    }
}
