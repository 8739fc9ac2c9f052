use rand_chacha::ChaCha8Rng;

use super::{init_uniform, linear, Binder, ParamMut, ParamRef};
use crate::autodiff::{Graph, NodeId};
use crate::error::Result;
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-5;

/// Sinusoidal position encodings, `[w, dm]`.
pub fn positional_encoding(window: usize, dim: usize) -> Tensor {
    let mut out = Vec::with_capacity(window * dim);
    for t in 0..window {
        for j in 0..dim {
            let rate = 10000f64.powf((2 * (j / 2)) as f64 / dim as f64);
            let angle = t as f64 / rate;
            out.push(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(&[window, dim], out).expect("window x dim")
}

/// One pre-norm encoder block (single-head attention then position-wise
/// feed-forward, both residual) over the window rows, mean-pooled into a
/// linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfAttention {
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ff1_w: Tensor,
    pub ff1_b: Tensor,
    pub ff2_w: Tensor,
    pub ff2_b: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
    pub positions: Tensor,
}

impl SelfAttention {
    pub fn new(window: usize, features: usize, dim: usize, ff: usize, rng: &mut ChaCha8Rng) -> Self {
        SelfAttention {
            embed_w: init_uniform(&[features, dim], features, rng),
            embed_b: init_uniform(&[dim], features, rng),
            wq: init_uniform(&[dim, dim], dim, rng),
            wk: init_uniform(&[dim, dim], dim, rng),
            wv: init_uniform(&[dim, dim], dim, rng),
            wo: init_uniform(&[dim, dim], dim, rng),
            ff1_w: init_uniform(&[dim, ff], dim, rng),
            ff1_b: init_uniform(&[ff], dim, rng),
            ff2_w: init_uniform(&[ff, dim], ff, rng),
            ff2_b: init_uniform(&[dim], ff, rng),
            head_w: init_uniform(&[dim, features], dim, rng),
            head_b: init_uniform(&[features], dim, rng),
            positions: positional_encoding(window, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.shape()[0]
    }

    fn named(&self) -> [(&'static str, &Tensor, bool); 12] {
        [
            ("neural.attention.embed.w", &self.embed_w, true),
            ("neural.attention.embed.b", &self.embed_b, false),
            ("neural.attention.wq", &self.wq, true),
            ("neural.attention.wk", &self.wk, true),
            ("neural.attention.wv", &self.wv, true),
            ("neural.attention.wo", &self.wo, true),
            ("neural.attention.ff1.w", &self.ff1_w, true),
            ("neural.attention.ff1.b", &self.ff1_b, false),
            ("neural.attention.ff2.w", &self.ff2_w, true),
            ("neural.attention.ff2.b", &self.ff2_b, false),
            ("neural.attention.head.w", &self.head_w, true),
            ("neural.attention.head.b", &self.head_b, false),
        ]
    }

    /// Pooled encoder output, `[B, dm]`.
    pub fn pooled(&self, g: &mut Graph, x: NodeId, binder: &mut Binder) -> Result<NodeId> {
        let (batch, steps, d) = {
            let s = g.value(x).shape();
            (s[0], s[1], s[2])
        };
        let dm = self.dim();
        let [embed_w, embed_b, wq, wk, wv, wo, ff1_w, ff1_b, ff2_w, ff2_b, ..] =
            self.named().map(|(name, t, decay)| binder.bind(g, name, t, decay));

        let flat = g.reshape(x, &[batch * steps, d])?;
        let e = linear(g, flat, embed_w, embed_b)?;
        let e = g.reshape(e, &[batch, steps, dm])?;
        let pos = g.constant(self.positions.clone());
        let pos = g.tile(pos, batch)?;
        let h = g.add(e, pos)?;

        let n1 = g.layer_norm(h, LN_EPS)?;
        let n1 = g.reshape(n1, &[batch * steps, dm])?;
        let project = |g: &mut Graph, w: NodeId| -> Result<NodeId> {
            let y = g.matmul(n1, w)?;
            g.reshape(y, &[batch, steps, dm])
        };
        let q = project(g, wq)?;
        let k = project(g, wk)?;
        let v = project(g, wv)?;
        let kt = g.transpose(k)?;
        let scores = g.batch_matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (dm as f64).sqrt())?;
        let weights = g.softmax(scores, 2)?;
        let ctx = g.batch_matmul(weights, v)?;
        let ctx = g.reshape(ctx, &[batch * steps, dm])?;
        let att = g.matmul(ctx, wo)?;
        let att = g.reshape(att, &[batch, steps, dm])?;
        let h = g.add(h, att)?;

        let n2 = g.layer_norm(h, LN_EPS)?;
        let n2 = g.reshape(n2, &[batch * steps, dm])?;
        let f = linear(g, n2, ff1_w, ff1_b)?;
        let f = g.relu(f)?;
        let f = linear(g, f, ff2_w, ff2_b)?;
        let f = g.reshape(f, &[batch, steps, dm])?;
        let h = g.add(h, f)?;
        g.mean_axis(h, 1)
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId, binder: &mut Binder) -> Result<NodeId> {
        let pooled = self.pooled(g, x, binder)?;
        let w = binder.bind(g, "neural.attention.head.w", &self.head_w, true);
        let b = binder.bind(g, "neural.attention.head.b", &self.head_b, false);
        linear(g, pooled, w, b)
    }

    pub fn params(&self) -> Vec<ParamRef<'_>> {
        self.named()
            .into_iter()
            .map(|(name, tensor, decay)| ParamRef {
                name: name.into(),
                tensor,
                decay,
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let names = self.named().map(|(name, _, _)| name);
        let SelfAttention {
            embed_w,
            embed_b,
            wq,
            wk,
            wv,
            wo,
            ff1_w,
            ff1_b,
            ff2_w,
            ff2_b,
            head_w,
            head_b,
            positions: _,
        } = self;
        names
            .into_iter()
            .zip([embed_w, embed_b, wq, wk, wv, wo, ff1_w, ff1_b, ff2_w, ff2_b, head_w, head_b])
            .map(|(name, tensor)| ParamMut {
                name: name.into(),
                tensor,
            })
            .collect()
    }
}
