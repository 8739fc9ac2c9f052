use rand_chacha::ChaCha8Rng;

use super::{init_uniform, linear, Binder, ParamMut, ParamRef};
use crate::autodiff::{Graph, NodeId};
use crate::error::Result;
use crate::tensor::Tensor;

const GATES: [&str; 3] = ["z", "r", "n"];

/// Single-layer GRU over the window rows (oldest first); the final hidden
/// state goes through a linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct Gru {
    /// Input projections `[D, H]` for the update, reset and candidate gates.
    pub input: [Tensor; 3],
    /// Recurrent projections `[H, H]`.
    pub recurrent: [Tensor; 3],
    pub bias: [Tensor; 3],
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl Gru {
    pub fn new(features: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut gate = |shape: &[usize]| init_uniform(shape, hidden, rng);
        let input = [gate(&[features, hidden]), gate(&[features, hidden]), gate(&[features, hidden])];
        let recurrent = [gate(&[hidden, hidden]), gate(&[hidden, hidden]), gate(&[hidden, hidden])];
        let bias = [gate(&[hidden]), gate(&[hidden]), gate(&[hidden])];
        Gru {
            input,
            recurrent,
            bias,
            head_w: init_uniform(&[hidden, features], hidden, rng),
            head_b: init_uniform(&[features], hidden, rng),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.recurrent[0].shape()[0]
    }

    /// Hidden state after every row, each `[B, H]`.
    pub fn hidden_states(&self, g: &mut Graph, x: NodeId, binder: &mut Binder) -> Result<Vec<NodeId>> {
        let (batch, steps, d) = {
            let s = g.value(x).shape();
            (s[0], s[1], s[2])
        };
        let hidden = self.hidden_size();
        let flat = g.reshape(x, &[batch * steps, d])?;
        let mut projected = Vec::with_capacity(3);
        let mut recurrent = Vec::with_capacity(3);
        for (i, name) in GATES.iter().enumerate() {
            let wx = binder.bind(g, &format!("neural.gru.w{name}"), &self.input[i], true);
            let wh = binder.bind(g, &format!("neural.gru.u{name}"), &self.recurrent[i], true);
            let b = binder.bind(g, &format!("neural.gru.b{name}"), &self.bias[i], false);
            let px = linear(g, flat, wx, b)?;
            projected.push(g.reshape(px, &[batch, steps, hidden])?);
            recurrent.push(wh);
        }
        let mut h = g.constant(Tensor::zeros(&[batch, hidden]));
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut xs = [h; 3];
            for (slot, p) in xs.iter_mut().zip(&projected) {
                let s = g.slice(*p, 1, t, 1)?;
                *slot = g.reshape(s, &[batch, hidden])?;
            }
            let hz = g.matmul(h, recurrent[0])?;
            let z = g.add(xs[0], hz)?;
            let z = g.sigmoid(z)?;
            let hr = g.matmul(h, recurrent[1])?;
            let r = g.add(xs[1], hr)?;
            let r = g.sigmoid(r)?;
            let rh = g.mul(r, h)?;
            let hn = g.matmul(rh, recurrent[2])?;
            let n = g.add(xs[2], hn)?;
            let n = g.tanh(n)?;
            // h' = (1 - z) ⊙ n + z ⊙ h = n + z ⊙ (h - n)
            let diff = g.sub(h, n)?;
            let zd = g.mul(z, diff)?;
            h = g.add(n, zd)?;
            states.push(h);
        }
        Ok(states)
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId, binder: &mut Binder) -> Result<NodeId> {
        let states = self.hidden_states(g, x, binder)?;
        let last = *states.last().expect("window has at least one row");
        let w = binder.bind(g, "neural.gru.head.w", &self.head_w, true);
        let b = binder.bind(g, "neural.gru.head.b", &self.head_b, false);
        linear(g, last, w, b)
    }

    pub fn params(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        for (i, name) in GATES.iter().enumerate() {
            out.push(ParamRef {
                name: format!("neural.gru.w{name}"),
                tensor: &self.input[i],
                decay: true,
            });
            out.push(ParamRef {
                name: format!("neural.gru.u{name}"),
                tensor: &self.recurrent[i],
                decay: true,
            });
            out.push(ParamRef {
                name: format!("neural.gru.b{name}"),
                tensor: &self.bias[i],
                decay: false,
            });
        }
        out.push(ParamRef {
            name: "neural.gru.head.w".into(),
            tensor: &self.head_w,
            decay: true,
        });
        out.push(ParamRef {
            name: "neural.gru.head.b".into(),
            tensor: &self.head_b,
            decay: false,
        });
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        let Gru {
            input,
            recurrent,
            bias,
            head_w,
            head_b,
        } = self;
        for (((name, wx), wh), b) in GATES.iter().zip(input).zip(recurrent).zip(bias) {
            out.push(ParamMut {
                name: format!("neural.gru.w{name}"),
                tensor: wx,
            });
            out.push(ParamMut {
                name: format!("neural.gru.u{name}"),
                tensor: wh,
            });
            out.push(ParamMut {
                name: format!("neural.gru.b{name}"),
                tensor: b,
            });
        }
        out.push(ParamMut {
            name: "neural.gru.head.w".into(),
            tensor: head_w,
        });
        out.push(ParamMut {
            name: "neural.gru.head.b".into(),
            tensor: head_b,
        });
        out
    }
}
