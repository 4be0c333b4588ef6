//! Dense row-major `f64` tensors and the raw kernels behind the tape ops.
//!
//! Everything here is forward-only value math; gradients live in [`crate::tape`].

use std::cell::Cell;

use crate::error::TensorError;

thread_local! {
    static MULTIPLY_COUNT: Cell<u64> = const { Cell::new(0) };
}

/// Reset this thread's contraction-multiply counter.
///
/// The counter is incremented by the matmul and convolution kernels with the
/// number of scalar multiplies they actually execute, so it can serve as an
/// independent check on analytical flop accounting.
pub fn reset_multiply_count() {
    MULTIPLY_COUNT.with(|c| c.set(0));
}

/// Read this thread's contraction-multiply counter.
pub fn multiply_count() -> u64 {
    MULTIPLY_COUNT.with(|c| c.get())
}

fn count_multiplies(n: u64) {
    MULTIPLY_COUNT.with(|c| c.set(c.get() + n));
}

/// A dense tensor: a shape and a row-major `f64` buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, checking that the buffer length matches the shape.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::InvalidArgument {
                op: "tensor",
                reason: format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            });
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(TensorError::InvalidArgument {
                op: "tensor",
                reason: format!("zero extent in shape {shape:?}"),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// A rank-0 tensor holding a single value.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    /// 2-D convenience constructor from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(TensorError::InvalidArgument {
                op: "tensor",
                reason: "ragged rows".into(),
            });
        }
        Self::new(vec![r, c], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterpret the buffer under a new shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(TensorError::InvalidArgument {
                op: "reshape",
                reason: format!("{:?} -> {shape:?} changes element count", self.shape),
            });
        }
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    /// Largest absolute difference against another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Iteration over the 1-D lanes of `shape` along `axis`.
///
/// Yields `(start, stride)` pairs; each lane is `extent` elements apart by
/// `stride` starting at `start`.
pub(crate) struct AxisLanes {
    pub extent: usize,
    inner: usize,
    outer: usize,
}

impl AxisLanes {
    pub fn new(op: &'static str, shape: &[usize], axis: usize) -> Result<Self, TensorError> {
        if axis >= shape.len() {
            return Err(TensorError::AxisOutOfRange {
                op,
                axis,
                rank: shape.len(),
            });
        }
        Ok(Self {
            extent: shape[axis],
            inner: shape[axis + 1..].iter().product(),
            outer: shape[..axis].iter().product(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let inner = self.inner;
        let extent = self.extent;
        (0..self.outer).flat_map(move |o| (0..inner).map(move |i| (o * extent * inner + i, inner)))
    }

    pub fn lane_count(&self) -> usize {
        self.outer * self.inner
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn mm2(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    count_multiplies((m * k * n) as u64);
}

/// Matrix product. Accepts `[m,k]x[k,n]`, batched `[B,m,k]x[B,k,n]`, and a
/// 2-D right operand broadcast over the batch: `[B,m,k]x[k,n]`.
pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    match (a.rank(), b.rank()) {
        (2, 2) => {
            let (m, k) = (a.shape[0], a.shape[1]);
            let (k2, n) = (b.shape[0], b.shape[1]);
            if k != k2 {
                return Err(shape_err("matmul", &a.shape, &b.shape));
            }
            let mut out = vec![0.0; m * n];
            mm2(&a.data, &b.data, m, k, n, &mut out);
            Tensor::new(vec![m, n], out)
        }
        (3, 3) => {
            let (bs, m, k) = (a.shape[0], a.shape[1], a.shape[2]);
            let (bs2, k2, n) = (b.shape[0], b.shape[1], b.shape[2]);
            if bs != bs2 || k != k2 {
                return Err(shape_err("matmul", &a.shape, &b.shape));
            }
            let mut out = vec![0.0; bs * m * n];
            for i in 0..bs {
                mm2(
                    &a.data[i * m * k..(i + 1) * m * k],
                    &b.data[i * k * n..(i + 1) * k * n],
                    m,
                    k,
                    n,
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
            Tensor::new(vec![bs, m, n], out)
        }
        (3, 2) => {
            let (bs, m, k) = (a.shape[0], a.shape[1], a.shape[2]);
            let (k2, n) = (b.shape[0], b.shape[1]);
            if k != k2 {
                return Err(shape_err("matmul", &a.shape, &b.shape));
            }
            let mut out = vec![0.0; bs * m * n];
            for i in 0..bs {
                mm2(
                    &a.data[i * m * k..(i + 1) * m * k],
                    &b.data,
                    m,
                    k,
                    n,
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
            Tensor::new(vec![bs, m, n], out)
        }
        _ => Err(shape_err("matmul", &a.shape, &b.shape)),
    }
}

/// Swap the last two axes of a rank-2 or rank-3 tensor.
pub(crate) fn transpose(x: &Tensor) -> Result<Tensor, TensorError> {
    match x.rank() {
        2 => {
            let (m, n) = (x.shape[0], x.shape[1]);
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = x.data[i * n + j];
                }
            }
            Tensor::new(vec![n, m], out)
        }
        3 => {
            let (bs, m, n) = (x.shape[0], x.shape[1], x.shape[2]);
            let mut out = vec![0.0; bs * m * n];
            for b in 0..bs {
                for i in 0..m {
                    for j in 0..n {
                        out[b * m * n + j * m + i] = x.data[b * m * n + i * n + j];
                    }
                }
            }
            Tensor::new(vec![bs, n, m], out)
        }
        r => Err(TensorError::InvalidArgument {
            op: "transpose",
            reason: format!("expected rank 2 or 3 input, got rank {r}"),
        }),
    }
}

pub(crate) fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape != b.shape {
        return Err(shape_err("add", &a.shape, &b.shape));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape.clone(), data)
}

/// Check that `b` matches a trailing suffix of `a`'s shape; returns the
/// number of broadcast repetitions.
fn suffix_reps(op: &'static str, a: &Tensor, b: &Tensor) -> Result<usize, TensorError> {
    if b.rank() >= a.rank() || b.rank() == 0 {
        return Err(shape_err(op, &a.shape, &b.shape));
    }
    let split = a.rank() - b.rank();
    if a.shape[split..] != b.shape[..] {
        return Err(shape_err(op, &a.shape, &b.shape));
    }
    Ok(a.shape[..split].iter().product())
}

/// Add `b` to `a`, broadcasting `b` over `a`'s leading axes (`b`'s shape must
/// equal a trailing suffix of `a`'s shape).
pub(crate) fn add_bias(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let reps = suffix_reps("add-bias", a, b)?;
    let block = b.numel();
    let mut data = a.data.clone();
    for r in 0..reps {
        for i in 0..block {
            data[r * block + i] += b.data[i];
        }
    }
    Tensor::new(a.shape.clone(), data)
}

pub(crate) fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape != b.shape {
        return Err(shape_err("mul", &a.shape, &b.shape));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape.clone(), data)
}

/// Multiply `a` elementwise by `b` broadcast over `a`'s leading axes.
pub(crate) fn mul_vec(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let reps = suffix_reps("mul-vec", a, b)?;
    let block = b.numel();
    let mut data = a.data.clone();
    for r in 0..reps {
        for i in 0..block {
            data[r * block + i] *= b.data[i];
        }
    }
    Tensor::new(a.shape.clone(), data)
}

pub(crate) fn concat(xs: &[&Tensor], axis: usize) -> Result<Tensor, TensorError> {
    let first = xs.first().ok_or_else(|| TensorError::InvalidArgument {
        op: "concat",
        reason: "empty input list".into(),
    })?;
    if axis >= first.rank() {
        return Err(TensorError::AxisOutOfRange {
            op: "concat",
            axis,
            rank: first.rank(),
        });
    }
    let mut out_extent = 0;
    for x in xs {
        if x.rank() != first.rank() {
            return Err(shape_err("concat", &first.shape, &x.shape));
        }
        for (ax, (&e, &f)) in x.shape.iter().zip(&first.shape).enumerate() {
            if ax != axis && e != f {
                return Err(shape_err("concat", &first.shape, &x.shape));
            }
        }
        out_extent += x.shape[axis];
    }
    let mut shape = first.shape.clone();
    shape[axis] = out_extent;
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut data = vec![0.0; outer * out_extent * inner];
    let mut offset = 0;
    for x in xs {
        let e = x.shape[axis];
        for o in 0..outer {
            let src = &x.data[o * e * inner..(o + 1) * e * inner];
            let dst_start = (o * out_extent + offset) * inner;
            data[dst_start..dst_start + e * inner].copy_from_slice(src);
        }
        offset += e;
    }
    Tensor::new(shape, data)
}

pub(crate) fn slice(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor, TensorError> {
    if axis >= x.rank() {
        return Err(TensorError::AxisOutOfRange {
            op: "slice",
            axis,
            rank: x.rank(),
        });
    }
    if len == 0 || start + len > x.shape[axis] {
        return Err(TensorError::InvalidArgument {
            op: "slice",
            reason: format!(
                "range {start}..{} out of bounds for extent {}",
                start + len,
                x.shape[axis]
            ),
        });
    }
    let outer: usize = x.shape[..axis].iter().product();
    let inner: usize = x.shape[axis + 1..].iter().product();
    let extent = x.shape[axis];
    let mut shape = x.shape.clone();
    shape[axis] = len;
    let mut data = vec![0.0; outer * len * inner];
    for o in 0..outer {
        let src_start = (o * extent + start) * inner;
        let dst_start = o * len * inner;
        data[dst_start..dst_start + len * inner]
            .copy_from_slice(&x.data[src_start..src_start + len * inner]);
    }
    Tensor::new(shape, data)
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_axis(x: &Tensor, axis: usize) -> Result<Tensor, TensorError> {
    let lanes = AxisLanes::new("softmax", &x.shape, axis)?;
    let mut data = x.data.clone();
    for (start, stride) in lanes.iter() {
        let mut max = f64::NEG_INFINITY;
        for i in 0..lanes.extent {
            max = max.max(data[start + i * stride]);
        }
        let mut sum = 0.0;
        for i in 0..lanes.extent {
            let e = (data[start + i * stride] - max).exp();
            data[start + i * stride] = e;
            sum += e;
        }
        for i in 0..lanes.extent {
            data[start + i * stride] /= sum;
        }
    }
    Tensor::new(x.shape.clone(), data)
}

/// Normalize each lane along `axis` to zero mean and unit variance.
///
/// Returns `(normalized, inv_std)` where `inv_std` holds one value per lane
/// in lane-iteration order (saved for the backward pass).
pub(crate) fn layer_norm_axis(
    x: &Tensor,
    axis: usize,
    epsilon: f64,
) -> Result<(Tensor, Vec<f64>), TensorError> {
    let lanes = AxisLanes::new("layer-norm", &x.shape, axis)?;
    let n = lanes.extent as f64;
    let mut data = x.data.clone();
    let mut inv_stds = Vec::with_capacity(lanes.lane_count());
    for (start, stride) in lanes.iter() {
        let mut mean = 0.0;
        for i in 0..lanes.extent {
            mean += data[start + i * stride];
        }
        mean /= n;
        let mut var = 0.0;
        for i in 0..lanes.extent {
            let d = data[start + i * stride] - mean;
            var += d * d;
        }
        var /= n;
        let inv_std = 1.0 / (var + epsilon).sqrt();
        for i in 0..lanes.extent {
            data[start + i * stride] = (data[start + i * stride] - mean) * inv_std;
        }
        inv_stds.push(inv_std);
    }
    Ok((Tensor::new(x.shape.clone(), data)?, inv_stds))
}

pub(crate) fn mean_axis(x: &Tensor, axis: usize) -> Result<Tensor, TensorError> {
    let lanes = AxisLanes::new("mean", &x.shape, axis)?;
    let mut shape = x.shape.clone();
    shape.remove(axis);
    let mut data = Vec::with_capacity(lanes.lane_count());
    for (start, stride) in lanes.iter() {
        let mut acc = 0.0;
        for i in 0..lanes.extent {
            acc += x.data[start + i * stride];
        }
        data.push(acc / lanes.extent as f64);
    }
    Tensor::new(shape, data)
}

/// 2-D cross-correlation of each sample image with each filter, same padding.
/// `x: [B, H, W]`, `filters: [C, kh, kw]` (odd extents) -> `[B, C, H, W]`.
pub(crate) fn conv2d_same(x: &Tensor, filters: &Tensor) -> Result<Tensor, TensorError> {
    if x.rank() != 3 || filters.rank() != 3 {
        return Err(shape_err("conv2d", &x.shape, &filters.shape));
    }
    let (bs, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let (c, kh, kw) = (filters.shape[0], filters.shape[1], filters.shape[2]);
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(TensorError::InvalidArgument {
            op: "conv2d",
            reason: format!("kernel extents must be odd, got {kh}x{kw}"),
        });
    }
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = vec![0.0; bs * c * h * w];
    let mut mults: u64 = 0;
    for b in 0..bs {
        for f in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for u in 0..kh {
                        for v in 0..kw {
                            let ii = i + u;
                            let jj = j + v;
                            if ii < ph || jj < pw || ii - ph >= h || jj - pw >= w {
                                continue;
                            }
                            acc += x.data[b * h * w + (ii - ph) * w + (jj - pw)]
                                * filters.data[f * kh * kw + u * kw + v];
                            mults += 1;
                        }
                    }
                    out[((b * c + f) * h + i) * w + j] = acc;
                }
            }
        }
    }
    count_multiplies(mults);
    Tensor::new(vec![bs, c, h, w], out)
}

/// Flatten the strictly-upper-triangular entries of each `[m, m]` slice of a
/// `[B, m, m]` tensor, row-major, into `[B, m(m-1)/2]`.
pub(crate) fn triu_flatten(x: &Tensor) -> Result<Tensor, TensorError> {
    if x.rank() != 3 || x.shape[1] != x.shape[2] {
        return Err(TensorError::InvalidArgument {
            op: "triu-flatten",
            reason: format!("expected [B, m, m], got {:?}", x.shape),
        });
    }
    let (bs, m) = (x.shape[0], x.shape[1]);
    let h = m * (m - 1) / 2;
    if h == 0 {
        return Err(TensorError::InvalidArgument {
            op: "triu-flatten",
            reason: "m < 2 leaves no strictly-upper entries".into(),
        });
    }
    let mut data = Vec::with_capacity(bs * h);
    for b in 0..bs {
        for i in 0..m {
            for j in i + 1..m {
                data.push(x.data[b * m * m + i * m + j]);
            }
        }
    }
    Tensor::new(vec![bs, h], data)
}
