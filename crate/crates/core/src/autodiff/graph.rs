use crate::error::{Error, Result};
use crate::tensor::{axis_strides, Tensor};

/// Handle to a node of one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    MatMul(NodeId, NodeId),
    BatchMatMul(NodeId, NodeId),
    Transpose(NodeId),
    Conv1dCausal(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softmax(NodeId, usize),
    Sum(NodeId),
    Mean(NodeId),
    MeanAxis(NodeId, usize),
    Mse(NodeId, NodeId),
    Pow(NodeId, f64),
    Sqrt(NodeId),
    Concat(Vec<NodeId>, usize),
    Slice {
        input: NodeId,
        axis: usize,
        start: usize,
    },
    Reshape(NodeId),
    Tile(NodeId, usize),
    LagLinear(NodeId, NodeId),
    LayerNorm(NodeId, f64),
}

impl Op {
    fn parents(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) | BatchMatMul(a, b) | Mse(a, b)
            | Conv1dCausal(a, b) | LagLinear(a, b) => vec![*a, *b],
            Scale(a, _) | AddScalar(a) | Transpose(a) | Sigmoid(a) | Tanh(a) | Relu(a)
            | Softmax(a, _) | Sum(a) | Mean(a) | MeanAxis(a, _) | Pow(a, _) | Sqrt(a)
            | Reshape(a) | Tile(a, _) | LayerNorm(a, _) => vec![*a],
            Slice { input, .. } => vec![*input],
            Concat(xs, _) => xs.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Activation pattern of one relu node, used to detect kinks during
/// finite-difference checks.
struct KinkRecord {
    node: usize,
    signature: u64,
    margin: f64,
}

/// A tape of dense tensor operations supporting reverse-mode differentiation.
///
/// Nodes can only reference nodes created before them, so the tape is always
/// in topological order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    kinks: Vec<KinkRecord>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `id`, if `id` requires one.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node created at or after position `len`.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.kinks.retain(|k| k.node < len);
    }

    /// A trainable leaf: gradients flow into it.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf: no gradient is computed for it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Replaces the value of a leaf. Nodes computed from the old value are
    /// stale and must be truncated and rebuilt by the caller.
    pub fn set_leaf(&mut self, id: NodeId, value: Tensor) -> Result<()> {
        let node = self.node(id)?;
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::Graph(format!("node {} is not a leaf", id.0)));
        }
        if node.value.shape() != value.shape() {
            return Err(Error::shape(
                "set_leaf",
                format!("{:?} vs {:?}", node.value.shape(), value.shape()),
            ));
        }
        self.nodes[id.0].value = value;
        Ok(())
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Fingerprint of every relu activation pattern on the tape.
    pub fn kink_signature(&self) -> u64 {
        let mut h = FNV_OFFSET;
        for k in &self.kinks {
            h = (h ^ k.signature).wrapping_mul(FNV_PRIME);
        }
        h
    }

    /// Smallest |pre-activation| seen by any relu on the tape.
    pub fn min_kink_margin(&self) -> f64 {
        self.kinks.iter().map(|k| k.margin).fold(f64::INFINITY, f64::min)
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| Error::Graph(format!("unknown node {}", id.0)))
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op) -> Result<NodeId> {
        let mut requires_grad = false;
        for p in op.parents() {
            requires_grad |= self.node(p)?.requires_grad;
        }
        Ok(self.push(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.node(a)?.value.shape(), self.node(b)?.value.shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push_op(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push_op(v, Op::Sub(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push_op(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let v = self.node(a)?.value.map(|x| c * x);
        self.push_op(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let v = self.node(a)?.value.map(|x| x + c);
        self.push_op(v, Op::AddScalar(a))
    }

    /// `c - a`, element-wise.
    pub fn rsub_scalar(&mut self, c: f64, a: NodeId) -> Result<NodeId> {
        let neg = self.scale(a, -1.0)?;
        self.add_scalar(neg, c)
    }

    /// `[m, k] × [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.node(a)?.value, &self.node(b)?.value);
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (m, k) = ta.dims2();
        let n = tb.shape()[1];
        let mut out = vec![0.0; m * n];
        matmul_into(ta.data(), tb.data(), &mut out, m, k, n);
        let v = Tensor::new(&[m, n], out)?;
        self.push_op(v, Op::MatMul(a, b))
    }

    /// `[B, m, k] × [B, k, n] -> [B, m, n]`.
    pub fn batch_matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.node(a)?.value, &self.node(b)?.value);
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::shape("batch_matmul", format!("{sa:?} x {sb:?}")));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            matmul_into(
                &ta.data()[bi * m * k..(bi + 1) * m * k],
                &tb.data()[bi * k * n..(bi + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let v = Tensor::new(&[batch, m, n], out)?;
        self.push_op(v, Op::BatchMatMul(a, b))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let t = &self.node(a)?.value;
        let v = transpose_last2(t).ok_or_else(|| {
            Error::shape("transpose", format!("rank {} not in 2..=3", t.rank()))
        })?;
        self.push_op(v, Op::Transpose(a))
    }

    /// Causal 1-D convolution over time: input `[B, T, C_in]`, kernel
    /// `[K, C_in, C_out]`, output `[B, T, C_out]`. Output at time `t` only
    /// sees inputs at times `t-K+1 ..= t`; earlier positions are zero-padded.
    pub fn conv1d_causal(&mut self, input: NodeId, kernel: NodeId) -> Result<NodeId> {
        let (x, k) = (&self.node(input)?.value, &self.node(kernel)?.value);
        let (sx, sk) = (x.shape(), k.shape());
        if sx.len() != 3 || sk.len() != 3 || sx[2] != sk[1] {
            return Err(Error::shape("conv1d_causal", format!("{sx:?} * {sk:?}")));
        }
        let (batch, steps, cin) = (sx[0], sx[1], sx[2]);
        let (taps, cout) = (sk[0], sk[2]);
        let mut out = vec![0.0; batch * steps * cout];
        for b in 0..batch {
            for t in 0..steps {
                let o = &mut out[(b * steps + t) * cout..(b * steps + t + 1) * cout];
                for j in 0..taps {
                    let Some(src) = (t + j).checked_sub(taps - 1) else {
                        continue;
                    };
                    let xrow = &x.data()[(b * steps + src) * cin..(b * steps + src + 1) * cin];
                    for (c, &xv) in xrow.iter().enumerate() {
                        let krow = &k.data()[(j * cin + c) * cout..(j * cin + c + 1) * cout];
                        for (ov, &kv) in o.iter_mut().zip(krow) {
                            *ov += kv * xv;
                        }
                    }
                }
            }
        }
        let v = Tensor::new(&[batch, steps, cout], out)?;
        self.push_op(v, Op::Conv1dCausal(input, kernel))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.node(a)?.value.map(sigmoid);
        self.push_op(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.node(a)?.value.map(f64::tanh);
        self.push_op(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let x = &self.node(a)?.value;
        let mut signature = FNV_OFFSET;
        let mut margin = f64::INFINITY;
        for &xv in x.data() {
            signature = (signature ^ u64::from(xv > 0.0)).wrapping_mul(FNV_PRIME);
            margin = margin.min(xv.abs());
        }
        let v = x.map(|xv| xv.max(0.0));
        let id = self.push_op(v, Op::Relu(a))?;
        self.kinks.push(KinkRecord {
            node: id.0,
            signature,
            margin,
        });
        Ok(id)
    }

    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let x = &self.node(a)?.value;
        if axis >= x.rank() {
            return Err(Error::shape("softmax", format!("axis {axis} for {:?}", x.shape())));
        }
        let (outer, n, inner) = axis_strides(x.shape(), axis);
        let mut out = x.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| out[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..n {
                    let e = (out[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    out[idx(j)] /= total;
                }
            }
        }
        let v = Tensor::new(x.shape(), out)?;
        self.push_op(v, Op::Softmax(a, axis))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.node(a)?.value.sum());
        self.push_op(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.node(a)?.value.mean());
        self.push_op(v, Op::Mean(a))
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let x = &self.node(a)?.value;
        if axis >= x.rank() {
            return Err(Error::shape("mean_axis", format!("axis {axis} for {:?}", x.shape())));
        }
        let (outer, n, inner) = axis_strides(x.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += x.data()[(o * n + j) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        let v = Tensor::new(&shape, out)?;
        self.push_op(v, Op::MeanAxis(a, axis))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mse", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let total: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let v = Tensor::scalar(total / ta.numel() as f64);
        self.push_op(v, Op::Mse(a, b))
    }

    pub fn pow(&mut self, a: NodeId, p: f64) -> Result<NodeId> {
        let v = self.node(a)?.value.map(|x| x.powf(p));
        self.push_op(v, Op::Pow(a, p))
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.node(a)?.value.map(f64::sqrt);
        self.push_op(v, Op::Sqrt(a))
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.node(*first)?.value.shape().to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for &id in inputs {
            let s = self.node(id)?.value.shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", format!("{base:?} vs {s:?}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_strides(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &id in inputs {
                let t = self.value(id);
                let len = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let v = Tensor::new(&shape, out)?;
        self.push_op(v, Op::Concat(inputs.to_vec(), axis))
    }

    /// `len` consecutive entries along `axis`, starting at `start`.
    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let x = &self.node(a)?.value;
        if axis >= x.rank() || start + len > x.shape()[axis] {
            return Err(Error::shape(
                "slice",
                format!("axis {axis} [{start}, {}) of {:?}", start + len, x.shape()),
            ));
        }
        let (outer, n, inner) = axis_strides(x.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * n + start) * inner;
            out.extend_from_slice(&x.data()[from..from + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let v = Tensor::new(&shape, out)?;
        self.push_op(v, Op::Slice { input: a, axis, start })
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.node(a)?.value.clone().reshape(shape)?;
        self.push_op(v, Op::Reshape(a))
    }

    /// Stacks `n` copies of `a` along a new leading axis.
    pub fn tile(&mut self, a: NodeId, n: usize) -> Result<NodeId> {
        let x = &self.node(a)?.value;
        if x.rank() >= 3 {
            return Err(Error::shape("tile", format!("rank {} input", x.rank())));
        }
        let mut shape = vec![n];
        shape.extend_from_slice(x.shape());
        let v = Tensor::new(&shape, x.data().repeat(n))?;
        self.push_op(v, Op::Tile(a, n))
    }

    /// Per-feature lag regression: input `[B, w, D]`, weights `[D, L]`,
    /// output `[B, D]` with `out[b, d] = Σ_k weights[d, k] · input[b, w-1-k, d]`.
    pub fn lag_linear(&mut self, input: NodeId, weights: NodeId) -> Result<NodeId> {
        let (x, wt) = (&self.node(input)?.value, &self.node(weights)?.value);
        let (sx, sw) = (x.shape(), wt.shape());
        if sx.len() != 3 || sw.len() != 2 || sw[0] != sx[2] || sw[1] > sx[1] {
            return Err(Error::shape("lag_linear", format!("{sx:?} with weights {sw:?}")));
        }
        let (batch, w, d) = (sx[0], sx[1], sx[2]);
        let lags = sw[1];
        let mut out = vec![0.0; batch * d];
        for b in 0..batch {
            for k in 0..lags {
                let row = &x.data()[(b * w + w - 1 - k) * d..(b * w + w - k) * d];
                for (f, &xv) in row.iter().enumerate() {
                    out[b * d + f] += wt.data()[f * lags + k] * xv;
                }
            }
        }
        let v = Tensor::new(&[batch, d], out)?;
        self.push_op(v, Op::LagLinear(input, weights))
    }

    /// Normalizes the last axis to zero mean and unit variance.
    pub fn layer_norm(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        let x = &self.node(a)?.value;
        if x.rank() == 0 {
            return Err(Error::shape("layer_norm", "scalar input"));
        }
        let n = *x.shape().last().unwrap_or(&1);
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(n) {
            let (mean, inv_std) = moments(row, eps);
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv_std);
        }
        let v = Tensor::new(x.shape(), out)?;
        self.push_op(v, Op::LayerNorm(a, eps))
    }

    /// Back-propagates from the scalar `loss` through every node that
    /// requires a gradient.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let root = self.node(loss)?;
        if root.value.numel() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            for p in node.op.parents() {
                if p.0 >= idx {
                    return Err(Error::Graph(format!(
                        "node {idx} depends on later node {}; the tape is not a DAG",
                        p.0
                    )));
                }
            }
            self.propagate(idx, &gout, &mut grads)?;
            // Keep gradients of leaves and of the root; interior ones were consumed.
            grads[idx] = None;
        }
        grads[loss.0].get_or_insert_with(|| Tensor::full(root.value.shape(), 1.0));
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut acc = |id: NodeId, delta: Tensor| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => existing
                    .data_mut()
                    .iter_mut()
                    .zip(delta.data())
                    .for_each(|(e, d)| *e += d),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |gv, bv| gv * bv)?);
                acc(*b, g.zip_map(self.value(*a), |gv, av| gv * av)?);
            }
            Op::Scale(a, c) => acc(*a, g.map(|x| c * x)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2();
                let n = tb.shape()[1];
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; m * k];
                    matmul_nt_into(g.data(), tb.data(), &mut da, m, n, k);
                    acc(*a, Tensor::new(&[m, k], da)?);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; k * n];
                    matmul_tn_into(ta.data(), g.data(), &mut db, m, k, n);
                    acc(*b, Tensor::new(&[k, n], db)?);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (batch, m, k, n) = (ta.shape()[0], ta.shape()[1], ta.shape()[2], tb.shape()[2]);
                let mut da = vec![0.0; batch * m * k];
                let mut db = vec![0.0; batch * k * n];
                for bi in 0..batch {
                    let gs = &g.data()[bi * m * n..(bi + 1) * m * n];
                    matmul_nt_into(
                        gs,
                        &tb.data()[bi * k * n..(bi + 1) * k * n],
                        &mut da[bi * m * k..(bi + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                    matmul_tn_into(
                        &ta.data()[bi * m * k..(bi + 1) * m * k],
                        gs,
                        &mut db[bi * k * n..(bi + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
                acc(*a, Tensor::new(ta.shape(), da)?);
                acc(*b, Tensor::new(tb.shape(), db)?);
            }
            Op::Transpose(a) => {
                let back = transpose_last2(g).expect("rank checked at construction");
                acc(*a, back);
            }
            Op::Conv1dCausal(input, kernel) => {
                let (x, k) = (self.value(*input), self.value(*kernel));
                let (batch, steps, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (taps, cout) = (k.shape()[0], k.shape()[2]);
                let mut dx = vec![0.0; x.numel()];
                let mut dk = vec![0.0; k.numel()];
                for b in 0..batch {
                    for t in 0..steps {
                        let go = &g.data()[(b * steps + t) * cout..(b * steps + t + 1) * cout];
                        for j in 0..taps {
                            let Some(src) = (t + j).checked_sub(taps - 1) else {
                                continue;
                            };
                            let base = (b * steps + src) * cin;
                            for c in 0..cin {
                                let kidx = (j * cin + c) * cout;
                                let krow = &k.data()[kidx..kidx + cout];
                                let xv = x.data()[base + c];
                                let mut s = 0.0;
                                for o in 0..cout {
                                    s += krow[o] * go[o];
                                    dk[kidx + o] += xv * go[o];
                                }
                                dx[base + c] += s;
                            }
                        }
                    }
                }
                acc(*input, Tensor::new(x.shape(), dx)?);
                acc(*kernel, Tensor::new(k.shape(), dk)?);
            }
            Op::Sigmoid(a) => acc(*a, g.zip_map(out, |gv, y| gv * y * (1.0 - y))?),
            Op::Tanh(a) => acc(*a, g.zip_map(out, |gv, y| gv * (1.0 - y * y))?),
            Op::Relu(a) => acc(
                *a,
                g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })?,
            ),
            Op::Softmax(a, axis) => {
                let (outer, n, inner) = axis_strides(out.shape(), *axis);
                let mut dx = vec![0.0; out.numel()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let dot: f64 = (0..n).map(|j| g.data()[idx(j)] * out.data()[idx(j)]).sum();
                        for j in 0..n {
                            dx[idx(j)] = out.data()[idx(j)] * (g.data()[idx(j)] - dot);
                        }
                    }
                }
                acc(*a, Tensor::new(out.shape(), dx)?);
            }
            Op::Sum(a) => {
                let gv = g.item();
                acc(*a, Tensor::full(self.value(*a).shape(), gv));
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                acc(*a, Tensor::full(x.shape(), g.item() / x.numel() as f64));
            }
            Op::MeanAxis(a, axis) => {
                let x = self.value(*a);
                let (outer, n, inner) = axis_strides(x.shape(), *axis);
                let mut dx = vec![0.0; x.numel()];
                for o in 0..outer {
                    for j in 0..n {
                        for i in 0..inner {
                            dx[(o * n + j) * inner + i] = g.data()[o * inner + i] / n as f64;
                        }
                    }
                }
                acc(*a, Tensor::new(x.shape(), dx)?);
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let c = 2.0 * g.item() / ta.numel() as f64;
                let da = ta.zip_map(tb, |x, y| c * (x - y))?;
                acc(*b, da.map(|x| -x));
                acc(*a, da);
            }
            Op::Pow(a, p) => {
                let d = g.zip_map(self.value(*a), |gv, x| gv * p * x.powf(p - 1.0))?;
                acc(*a, d);
            }
            Op::Sqrt(a) => acc(*a, g.zip_map(out, |gv, y| gv * 0.5 / y)?),
            Op::Concat(inputs, axis) => {
                let (outer, total, inner) = axis_strides(out.shape(), *axis);
                let mut offset = 0;
                for id in inputs {
                    let t = self.value(*id);
                    let len = t.shape()[*axis];
                    let mut d = Vec::with_capacity(t.numel());
                    for o in 0..outer {
                        let from = (o * total + offset) * inner;
                        d.extend_from_slice(&g.data()[from..from + len * inner]);
                    }
                    acc(*id, Tensor::new(t.shape(), d)?);
                    offset += len;
                }
            }
            Op::Slice { input, axis, start } => {
                let x = self.value(*input);
                let (outer, n, inner) = axis_strides(x.shape(), *axis);
                let len = out.shape()[*axis];
                let mut dx = vec![0.0; x.numel()];
                for o in 0..outer {
                    let to = (o * n + start) * inner;
                    let from = o * len * inner;
                    dx[to..to + len * inner].copy_from_slice(&g.data()[from..from + len * inner]);
                }
                acc(*input, Tensor::new(x.shape(), dx)?);
            }
            Op::Reshape(a) => acc(*a, g.clone().reshape(self.value(*a).shape())?),
            Op::Tile(a, n) => {
                let x = self.value(*a);
                let size = x.numel();
                let mut dx = vec![0.0; size];
                for copy in 0..*n {
                    for (d, gv) in dx.iter_mut().zip(&g.data()[copy * size..(copy + 1) * size]) {
                        *d += gv;
                    }
                }
                acc(*a, Tensor::new(x.shape(), dx)?);
            }
            Op::LagLinear(input, weights) => {
                let (x, wt) = (self.value(*input), self.value(*weights));
                let (batch, w, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let lags = wt.shape()[1];
                let mut dx = vec![0.0; x.numel()];
                let mut dw = vec![0.0; wt.numel()];
                for b in 0..batch {
                    for k in 0..lags {
                        let base = (b * w + w - 1 - k) * d;
                        for f in 0..d {
                            let gv = g.data()[b * d + f];
                            dx[base + f] += wt.data()[f * lags + k] * gv;
                            dw[f * lags + k] += x.data()[base + f] * gv;
                        }
                    }
                }
                acc(*input, Tensor::new(x.shape(), dx)?);
                acc(*weights, Tensor::new(wt.shape(), dw)?);
            }
            Op::LayerNorm(a, eps) => {
                let x = self.value(*a);
                let n = *x.shape().last().unwrap_or(&1);
                let mut dx = vec![0.0; x.numel()];
                for ((xr, gr), dr) in x
                    .data()
                    .chunks(n)
                    .zip(g.data().chunks(n))
                    .zip(dx.chunks_mut(n))
                {
                    let (mean, inv_std) = moments(xr, *eps);
                    let g_mean = gr.iter().sum::<f64>() / n as f64;
                    let gx_mean = xr
                        .iter()
                        .zip(gr)
                        .map(|(xv, gv)| (xv - mean) * inv_std * gv)
                        .sum::<f64>()
                        / n as f64;
                    for ((d, xv), gv) in dr.iter_mut().zip(xr).zip(gr) {
                        let xhat = (xv - mean) * inv_std;
                        *d = inv_std * (gv - g_mean - xhat * gx_mean);
                    }
                }
                acc(*a, Tensor::new(x.shape(), dx)?);
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

fn transpose_last2(t: &Tensor) -> Option<Tensor> {
    let (batch, r, c) = match t.shape() {
        [r, c] => (1, *r, *c),
        [b, r, c] => (*b, *r, *c),
        _ => return None,
    };
    let mut out = vec![0.0; t.numel()];
    for b in 0..batch {
        for i in 0..r {
            for j in 0..c {
                out[b * r * c + j * r + i] = t.data()[b * r * c + i * c + j];
            }
        }
    }
    let shape = if t.rank() == 2 { vec![c, r] } else { vec![batch, c, r] };
    Tensor::new(&shape, out).ok()
}

/// `out[m×n] += a[m×k] · b[k×n]`.
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×k] += g[m×n] · bᵀ` where `b` is `k×n`.
fn matmul_nt_into(g: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k×n] += aᵀ · g` where `a` is `m×k` and `g` is `m×n`.
fn matmul_tn_into(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, gv) in out[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}
