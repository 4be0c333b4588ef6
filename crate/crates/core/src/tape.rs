//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Tape`] records every primitive applied during a forward pass together
//! with the produced value. [`Tape::backward`] walks the record in reverse and
//! accumulates gradients into the [`ParamStore`]. A tape and its store are
//! confined to one thread for the duration of a step; separate model instances
//! may run on separate threads.

use crate::error::TensorError;
use crate::tensor::{self, Tensor};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// A trainable tensor with an accumulated gradient and a stable name.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Arena of all parameters of one model instance.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }
}

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    /// Leaf holding a snapshot of a dense parameter's value.
    Param { pid: ParamId },
    /// Sum-pooled row gather from an embedding-table parameter. Only the
    /// touched rows receive gradient.
    Lookup { pid: ParamId, ids: Vec<Vec<usize>> },
    MatMul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    AddBias { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    MulVec { a: NodeId, b: NodeId },
    ScaleScalar { x: NodeId, s: NodeId },
    Transpose { x: NodeId },
    Concat { xs: Vec<NodeId>, axis: usize },
    Slice { x: NodeId, axis: usize, start: usize, len: usize },
    Reshape { x: NodeId },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    Softmax { x: NodeId, axis: usize },
    LayerNorm { x: NodeId, axis: usize, epsilon: f64, inv_std: Vec<f64> },
    MeanAxis { x: NodeId, axis: usize },
    SumAll { x: NodeId },
    Conv2dSame { x: NodeId, filters: NodeId },
    TriuFlatten { x: NodeId },
    /// Mean binary cross-entropy of probabilities against constant labels,
    /// with probabilities clamped to [1e-12, 1-1e-12] before the logs.
    BceMean { probs: NodeId, labels: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Probability clamp applied inside the cross-entropy primitive.
pub const PROB_CLAMP: f64 = 1e-12;

/// Ordered record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value produced at `id` during the forward pass.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Const)
    }

    /// Record a dense parameter as a leaf (its current value is snapshotted).
    pub fn param(&mut self, store: &ParamStore, pid: ParamId) -> NodeId {
        self.push(store.get(pid).value.clone(), Op::Param { pid })
    }

    /// Gather rows of an embedding-table parameter, sum-pooling multi-hot id
    /// lists per sample. `ids[b]` holds the ids of sample `b`; the result is
    /// `[B, dim]`.
    pub fn lookup(
        &mut self,
        store: &ParamStore,
        pid: ParamId,
        ids: &[Vec<usize>],
    ) -> Result<NodeId, TensorError> {
        let param = store.get(pid);
        let (rows, dim) = (param.value.shape()[0], param.value.shape()[1]);
        let mut data = vec![0.0; ids.len() * dim];
        for (b, sample) in ids.iter().enumerate() {
            for &id in sample {
                if id >= rows {
                    return Err(TensorError::IndexOutOfRange {
                        table: param.name.clone(),
                        id,
                        rows,
                    });
                }
                for j in 0..dim {
                    data[b * dim + j] += param.value.data()[id * dim + j];
                }
            }
        }
        let value = Tensor::new(vec![ids.len(), dim], data)?;
        Ok(self.push(value, Op::Lookup { pid, ids: ids.to_vec() }))
    }

    // ── Primitives ──────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::MatMul { a, b }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let value = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    /// `a + b` with `b` broadcast over `a`'s leading axes.
    pub fn add_bias(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let value = tensor::add_bias(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::AddBias { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let value = tensor::mul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::Mul { a, b }))
    }

    /// `a * b` elementwise with `b` broadcast over `a`'s leading axes.
    pub fn mul_vec(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let value = tensor::mul_vec(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::MulVec { a, b }))
    }

    /// Multiply every element of `x` by the one-element tensor at `s`.
    pub fn scale_scalar(&mut self, x: NodeId, s: NodeId) -> Result<NodeId, TensorError> {
        if !self.value(s).is_scalar() {
            return Err(TensorError::InvalidArgument {
                op: "scale-scalar",
                reason: format!("scale has shape {:?}", self.shape(s)),
            });
        }
        let factor = self.value(s).item();
        let scaled: Vec<f64> = self.value(x).data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(self.shape(x).to_vec(), scaled)?;
        Ok(self.push(value, Op::ScaleScalar { x, s }))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let value = tensor::transpose(self.value(x))?;
        Ok(self.push(value, Op::Transpose { x }))
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId, TensorError> {
        let tensors: Vec<&Tensor> = xs.iter().map(|&id| self.value(id)).collect();
        let value = tensor::concat(&tensors, axis)?;
        Ok(self.push(value, Op::Concat { xs: xs.to_vec(), axis }))
    }

    pub fn slice(
        &mut self,
        x: NodeId,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<NodeId, TensorError> {
        let value = tensor::slice(self.value(x), axis, start, len)?;
        Ok(self.push(value, Op::Slice { x, axis, start, len }))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, TensorError> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        self.push(value, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| tensor::sigmoid_scalar(v))
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        self.push(value, Op::Sigmoid { x })
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId, TensorError> {
        let value = tensor::softmax_axis(self.value(x), axis)?;
        Ok(self.push(value, Op::Softmax { x, axis }))
    }

    /// Normalize lanes along `axis` to zero mean, unit variance (no affine).
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        axis: usize,
        epsilon: f64,
    ) -> Result<NodeId, TensorError> {
        let (value, inv_std) = tensor::layer_norm_axis(self.value(x), axis, epsilon)?;
        Ok(self.push(value, Op::LayerNorm { x, axis, epsilon, inv_std }))
    }

    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId, TensorError> {
        let value = tensor::mean_axis(self.value(x), axis)?;
        Ok(self.push(value, Op::MeanAxis { x, axis }))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::SumAll { x })
    }

    pub fn conv2d_same(&mut self, x: NodeId, filters: NodeId) -> Result<NodeId, TensorError> {
        let value = tensor::conv2d_same(self.value(x), self.value(filters))?;
        Ok(self.push(value, Op::Conv2dSame { x, filters }))
    }

    pub fn triu_flatten(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let value = tensor::triu_flatten(self.value(x))?;
        Ok(self.push(value, Op::TriuFlatten { x }))
    }

    /// Mean binary cross-entropy of `probs` (`[B]`) against 0/1 labels.
    pub fn bce_mean(&mut self, probs: NodeId, labels: &[f64]) -> Result<NodeId, TensorError> {
        let p = self.value(probs);
        if p.rank() != 1 || p.numel() != labels.len() {
            return Err(TensorError::InvalidArgument {
                op: "bce-mean",
                reason: format!("probs {:?} vs {} labels", p.shape(), labels.len()),
            });
        }
        let mut total = 0.0;
        for (&pi, &yi) in p.data().iter().zip(labels) {
            let pc = pi.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            total -= yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln();
        }
        let value = Tensor::scalar(total / labels.len() as f64);
        Ok(self.push(value, Op::BceMean { probs, labels: labels.to_vec() }))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Accumulate `d loss / d param` into the store for every parameter
    /// reachable from `loss`. Parameters that do not feed the loss keep
    /// whatever gradient they already hold; repeated calls add up.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<(), TensorError> {
        if loss.0 >= self.nodes.len() {
            return Err(TensorError::UnknownNode {
                id: loss.0,
                len: self.nodes.len(),
            });
        }
        if !self.value(loss).is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(self.shape(loss).to_vec(), vec![1.0]).expect("scalar"));

        for idx in (0..self.nodes.len()).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Const => {}
                Op::Param { pid } => {
                    let g = store.get_mut(*pid);
                    debug_assert_eq!(g.grad.shape(), grad.shape());
                    for (acc, v) in g.grad.data_mut().iter_mut().zip(grad.data()) {
                        *acc += v;
                    }
                }
                Op::Lookup { pid, ids } => {
                    let dim = grad.shape()[1];
                    let table = store.get_mut(*pid);
                    for (b, sample) in ids.iter().enumerate() {
                        for &id in sample {
                            for j in 0..dim {
                                table.grad.data_mut()[id * dim + j] += grad.data()[b * dim + j];
                            }
                        }
                    }
                }
                Op::MatMul { a, b } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (da, db) = matmul_adjoint(va, vb, &grad)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, grad.clone());
                    accumulate(&mut grads, *b, grad);
                }
                Op::AddBias { a, b } => {
                    let db = reduce_to_suffix(&grad, self.shape(*b));
                    accumulate(&mut grads, *a, grad);
                    accumulate(&mut grads, *b, db);
                }
                Op::Mul { a, b } => {
                    let da = tensor::mul(&grad, self.value(*b))?;
                    let db = tensor::mul(&grad, self.value(*a))?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MulVec { a, b } => {
                    let da = tensor::mul_vec(&grad, self.value(*b))?;
                    let prod = tensor::mul(&grad, self.value(*a))?;
                    let db = reduce_to_suffix(&prod, self.shape(*b));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::ScaleScalar { x, s } => {
                    let factor = self.value(*s).item();
                    let dx_data: Vec<f64> = grad.data().iter().map(|g| g * factor).collect();
                    let dx = Tensor::new(grad.shape().to_vec(), dx_data)?;
                    let ds_val: f64 = grad
                        .data()
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(g, xv)| g * xv)
                        .sum();
                    let ds = Tensor::new(self.shape(*s).to_vec(), vec![ds_val])?;
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *s, ds);
                }
                Op::Transpose { x } => {
                    accumulate(&mut grads, *x, tensor::transpose(&grad)?);
                }
                Op::Concat { xs, axis } => {
                    let mut offset = 0;
                    for &part in xs {
                        let len = self.shape(part)[*axis];
                        let dpart = tensor::slice(&grad, *axis, offset, len)?;
                        accumulate(&mut grads, part, dpart);
                        offset += len;
                    }
                }
                Op::Slice { x, axis, start, len } => {
                    let dx = scatter_slice(self.shape(*x), &grad, *axis, *start, *len);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Reshape { x } => {
                    accumulate(&mut grads, *x, grad.reshape(self.shape(*x))?);
                }
                Op::Relu { x } => {
                    let data: Vec<f64> = grad
                        .data()
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(g, &xv)| if xv > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(grad.shape().to_vec(), data)?);
                }
                Op::Sigmoid { x } => {
                    let out = &self.nodes[idx].value;
                    let data: Vec<f64> = grad
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(g, &s)| g * s * (1.0 - s))
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(grad.shape().to_vec(), data)?);
                }
                Op::Softmax { x, axis } => {
                    let out = &self.nodes[idx].value;
                    let dx = softmax_adjoint(out, &grad, *axis)?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::LayerNorm { x, axis, inv_std, .. } => {
                    let xhat = &self.nodes[idx].value;
                    let dx = layer_norm_adjoint(xhat, &grad, *axis, inv_std)?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::MeanAxis { x, axis } => {
                    let dx = mean_axis_adjoint(self.shape(*x), &grad, *axis)?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::SumAll { x } => {
                    let g = grad.item();
                    accumulate(&mut grads, *x, Tensor::filled(self.shape(*x), g));
                }
                Op::Conv2dSame { x, filters } => {
                    let (dx, df) = conv2d_adjoint(self.value(*x), self.value(*filters), &grad);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *filters, df);
                }
                Op::TriuFlatten { x } => {
                    let dx = triu_adjoint(self.shape(*x), &grad);
                    accumulate(&mut grads, *x, dx);
                }
                Op::BceMean { probs, labels } => {
                    let g = grad.item();
                    let inv_b = 1.0 / labels.len() as f64;
                    let data: Vec<f64> = self
                        .value(*probs)
                        .data()
                        .iter()
                        .zip(labels)
                        .map(|(&p, &y)| {
                            let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                            g * inv_b * (pc - y) / (pc * (1.0 - pc))
                        })
                        .collect();
                    accumulate(&mut grads, *probs, Tensor::new(vec![labels.len()], data)?);
                }
            }
        }
        Ok(())
    }

    /// Recompute every node from the recorded ops and current store contents.
    /// With an unchanged store this reproduces the forward values bit for bit.
    pub fn replay(&self, store: &ParamStore) -> Result<Vec<Tensor>, TensorError> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = |id: &NodeId| &values[id.0];
            let value = match &node.op {
                Op::Const => node.value.clone(),
                Op::Param { pid } => store.get(*pid).value.clone(),
                Op::Lookup { pid, ids } => {
                    let param = store.get(*pid);
                    let dim = param.value.shape()[1];
                    let mut data = vec![0.0; ids.len() * dim];
                    for (b, sample) in ids.iter().enumerate() {
                        for &id in sample {
                            for j in 0..dim {
                                data[b * dim + j] += param.value.data()[id * dim + j];
                            }
                        }
                    }
                    Tensor::new(vec![ids.len(), dim], data)?
                }
                Op::MatMul { a, b } => tensor::matmul(v(a), v(b))?,
                Op::Add { a, b } => tensor::add(v(a), v(b))?,
                Op::AddBias { a, b } => tensor::add_bias(v(a), v(b))?,
                Op::Mul { a, b } => tensor::mul(v(a), v(b))?,
                Op::MulVec { a, b } => tensor::mul_vec(v(a), v(b))?,
                Op::ScaleScalar { x, s } => {
                    let factor = v(s).item();
                    let data = v(x).data().iter().map(|t| t * factor).collect();
                    Tensor::new(v(x).shape().to_vec(), data)?
                }
                Op::Transpose { x } => tensor::transpose(v(x))?,
                Op::Concat { xs, axis } => {
                    let parts: Vec<&Tensor> = xs.iter().map(|id| &values[id.0]).collect();
                    tensor::concat(&parts, *axis)?
                }
                Op::Slice { x, axis, start, len } => tensor::slice(v(x), *axis, *start, *len)?,
                Op::Reshape { x } => v(x).reshape(node.value.shape())?,
                Op::Relu { x } => {
                    let data = v(x).data().iter().map(|&t| t.max(0.0)).collect();
                    Tensor::new(v(x).shape().to_vec(), data)?
                }
                Op::Sigmoid { x } => {
                    let data = v(x).data().iter().map(|&t| tensor::sigmoid_scalar(t)).collect();
                    Tensor::new(v(x).shape().to_vec(), data)?
                }
                Op::Softmax { x, axis } => tensor::softmax_axis(v(x), *axis)?,
                Op::LayerNorm { x, axis, epsilon, .. } => {
                    tensor::layer_norm_axis(v(x), *axis, *epsilon)?.0
                }
                Op::MeanAxis { x, axis } => tensor::mean_axis(v(x), *axis)?,
                Op::SumAll { x } => Tensor::scalar(v(x).data().iter().sum()),
                Op::Conv2dSame { x, filters } => tensor::conv2d_same(v(x), v(filters))?,
                Op::TriuFlatten { x } => tensor::triu_flatten(v(x))?,
                Op::BceMean { probs, labels } => {
                    let mut total = 0.0;
                    for (&pi, &yi) in v(probs).data().iter().zip(labels) {
                        let pc = pi.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                        total -= yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln();
                    }
                    Tensor::scalar(total / labels.len() as f64)
                }
            };
            values.push(value);
        }
        Ok(values)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, contribution: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (acc, v) in existing.data_mut().iter_mut().zip(contribution.data()) {
                *acc += v;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

fn matmul_adjoint(a: &Tensor, b: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor), TensorError> {
    match (a.rank(), b.rank()) {
        (2, 2) | (3, 3) => {
            let da = tensor::matmul(grad, &tensor::transpose(b)?)?;
            let db = tensor::matmul(&tensor::transpose(a)?, grad)?;
            Ok((da, db))
        }
        (3, 2) => {
            // Broadcast right operand: dB sums the per-sample contributions.
            let da = tensor::matmul(grad, &tensor::transpose(b)?)?;
            let (bs, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
            let n = b.shape()[1];
            let mut db = Tensor::zeros(b.shape());
            for i in 0..bs {
                for p in 0..k {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for r in 0..m {
                            acc += a.data()[i * m * k + r * k + p] * grad.data()[i * m * n + r * n + j];
                        }
                        db.data_mut()[p * n + j] += acc;
                    }
                }
            }
            Ok((da, db))
        }
        _ => unreachable!("validated at record time"),
    }
}

fn reduce_to_suffix(grad: &Tensor, suffix_shape: &[usize]) -> Tensor {
    let block: usize = suffix_shape.iter().product();
    let reps = grad.numel() / block;
    let mut out = Tensor::zeros(suffix_shape);
    for r in 0..reps {
        for i in 0..block {
            out.data_mut()[i] += grad.data()[r * block + i];
        }
    }
    out
}

fn scatter_slice(into_shape: &[usize], grad: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    let outer: usize = into_shape[..axis].iter().product();
    let inner: usize = into_shape[axis + 1..].iter().product();
    let extent = into_shape[axis];
    let mut out = Tensor::zeros(into_shape);
    for o in 0..outer {
        let dst_start = (o * extent + start) * inner;
        let src_start = o * len * inner;
        out.data_mut()[dst_start..dst_start + len * inner]
            .copy_from_slice(&grad.data()[src_start..src_start + len * inner]);
    }
    out
}

fn softmax_adjoint(out: &Tensor, grad: &Tensor, axis: usize) -> Result<Tensor, TensorError> {
    let lanes = tensor::AxisLanes::new("softmax", out.shape(), axis)?;
    let mut dx = vec![0.0; out.numel()];
    for (start, stride) in lanes.iter() {
        let mut dot = 0.0;
        for i in 0..lanes.extent {
            dot += grad.data()[start + i * stride] * out.data()[start + i * stride];
        }
        for i in 0..lanes.extent {
            let pos = start + i * stride;
            dx[pos] = out.data()[pos] * (grad.data()[pos] - dot);
        }
    }
    Tensor::new(out.shape().to_vec(), dx)
}

fn layer_norm_adjoint(
    xhat: &Tensor,
    grad: &Tensor,
    axis: usize,
    inv_std: &[f64],
) -> Result<Tensor, TensorError> {
    let lanes = tensor::AxisLanes::new("layer-norm", xhat.shape(), axis)?;
    let n = lanes.extent as f64;
    let mut dx = vec![0.0; xhat.numel()];
    for (lane, (start, stride)) in lanes.iter().enumerate() {
        let mut g_mean = 0.0;
        let mut gx_mean = 0.0;
        for i in 0..lanes.extent {
            let pos = start + i * stride;
            g_mean += grad.data()[pos];
            gx_mean += grad.data()[pos] * xhat.data()[pos];
        }
        g_mean /= n;
        gx_mean /= n;
        let is = inv_std[lane];
        for i in 0..lanes.extent {
            let pos = start + i * stride;
            dx[pos] = is * (grad.data()[pos] - g_mean - xhat.data()[pos] * gx_mean);
        }
    }
    Tensor::new(xhat.shape().to_vec(), dx)
}

fn mean_axis_adjoint(into_shape: &[usize], grad: &Tensor, axis: usize) -> Result<Tensor, TensorError> {
    let lanes = tensor::AxisLanes::new("mean", into_shape, axis)?;
    let inv_n = 1.0 / lanes.extent as f64;
    let mut dx = vec![0.0; into_shape.iter().product()];
    for (lane, (start, stride)) in lanes.iter().enumerate() {
        let g = grad.data()[lane] * inv_n;
        for i in 0..lanes.extent {
            dx[start + i * stride] = g;
        }
    }
    Tensor::new(into_shape.to_vec(), dx)
}

fn conv2d_adjoint(x: &Tensor, filters: &Tensor, grad: &Tensor) -> (Tensor, Tensor) {
    let (bs, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c, kh, kw) = (filters.shape()[0], filters.shape()[1], filters.shape()[2]);
    let (ph, pw) = (kh / 2, kw / 2);
    let mut dx = Tensor::zeros(x.shape());
    let mut df = Tensor::zeros(filters.shape());
    for b in 0..bs {
        for f in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let g = grad.data()[((b * c + f) * h + i) * w + j];
                    if g == 0.0 {
                        continue;
                    }
                    for u in 0..kh {
                        for v in 0..kw {
                            let ii = i + u;
                            let jj = j + v;
                            if ii < ph || jj < pw || ii - ph >= h || jj - pw >= w {
                                continue;
                            }
                            let xi = b * h * w + (ii - ph) * w + (jj - pw);
                            let fi = f * kh * kw + u * kw + v;
                            dx.data_mut()[xi] += g * filters.data()[fi];
                            df.data_mut()[fi] += g * x.data()[xi];
                        }
                    }
                }
            }
        }
    }
    (dx, df)
}

fn triu_adjoint(into_shape: &[usize], grad: &Tensor) -> Tensor {
    let (bs, m) = (into_shape[0], into_shape[1]);
    let mut dx = Tensor::zeros(into_shape);
    for b in 0..bs {
        let mut k = 0;
        for i in 0..m {
            for j in i + 1..m {
                dx.data_mut()[b * m * m + i * m + j] = grad.data()[b * (m * (m - 1) / 2) + k];
                k += 1;
            }
        }
    }
    dx
}
