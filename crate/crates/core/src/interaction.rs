//! The five heterogeneous interaction modules. Each consumes an embedding
//! list `[B, m, d]` and emits `[B, l, d]` for its configured output count `l`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, TensorError};
use crate::features::init_linear;
use crate::tape::{NodeId, ParamId, ParamStore, Tape};
use crate::tensor::Tensor;
use crate::LAYER_NORM_EPSILON;

fn default_heads() -> usize {
    2
}

fn default_channels() -> usize {
    4
}

fn default_kernel() -> usize {
    3
}

/// Declarative description of one interaction module.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModuleSpec {
    /// Pairwise dot products of the `m` embeddings, mapped back to `l`
    /// embeddings through a learned `[m(m-1)/2, d*l]` matrix.
    DotInteraction { l: usize },
    /// One transformer encoder layer over the `m` tokens (post-norm), then a
    /// `[m, l]` projection on the token axis.
    SelfAttention {
        l: usize,
        #[serde(default = "default_heads")]
        heads: usize,
        /// Position-wise FFN width; defaults to `4 * d`.
        #[serde(default)]
        ffn_width: Option<usize>,
    },
    /// `C` same-padded `k x k` filters over each sample's `d x m` map,
    /// channel-averaged, then a `[m, l]` token projection.
    Convolution {
        l: usize,
        #[serde(default = "default_channels")]
        channels: usize,
        #[serde(default = "default_kernel")]
        kernel: usize,
    },
    /// Plain `[m, l]` mixing of the token axis.
    Linear { l: usize },
    /// Per-sample Gram matrix `[d, d]` over the tokens, mapped through
    /// learned `[d, l]` weight and bias.
    CrossNet { l: usize },
}

impl ModuleSpec {
    pub fn output_count(&self) -> usize {
        match self {
            ModuleSpec::DotInteraction { l }
            | ModuleSpec::SelfAttention { l, .. }
            | ModuleSpec::Convolution { l, .. }
            | ModuleSpec::Linear { l }
            | ModuleSpec::CrossNet { l } => *l,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ModuleSpec::DotInteraction { .. } => "dot-interaction",
            ModuleSpec::SelfAttention { .. } => "self-attention",
            ModuleSpec::Convolution { .. } => "convolution",
            ModuleSpec::Linear { .. } => "linear",
            ModuleSpec::CrossNet { .. } => "cross-net",
        }
    }

    pub fn validate(&self, m: usize, d: usize) -> Result<(), ModelError> {
        if self.output_count() == 0 {
            return Err(ModelError::BadSpec(format!(
                "{} module needs l >= 1",
                self.kind_name()
            )));
        }
        match *self {
            ModuleSpec::DotInteraction { .. } if m < 2 => Err(ModelError::BadSpec(format!(
                "dot-interaction needs m >= 2 tokens, got {m}"
            ))),
            ModuleSpec::SelfAttention { heads, .. } => {
                if heads == 0 || d % heads != 0 {
                    Err(ModelError::BadSpec(format!(
                        "self-attention: d = {d} not divisible by heads = {heads}"
                    )))
                } else {
                    Ok(())
                }
            }
            ModuleSpec::Convolution { channels, kernel, .. } => {
                if channels == 0 {
                    Err(ModelError::BadSpec("convolution needs channels >= 1".into()))
                } else if kernel % 2 == 0 {
                    Err(ModelError::BadSpec(format!(
                        "convolution kernel extent must be odd, got {kernel}"
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Per-sample forward flops (2x the contraction multiply-adds executed by
    /// the matmul and convolution kernels) for input token count `m`.
    pub fn flops(&self, m: usize, d: usize) -> u64 {
        let (m64, d64) = (m as u64, d as u64);
        match *self {
            ModuleSpec::DotInteraction { l } => {
                let h = m64 * (m64 - 1) / 2;
                2 * (m64 * m64 * d64 + h * d64 * l as u64)
            }
            ModuleSpec::SelfAttention { l, ffn_width, .. } => {
                let f = ffn_width.unwrap_or(4 * d) as u64;
                let qkv_and_out = 4 * m64 * d64 * d64;
                let scores_and_ctx = 2 * m64 * m64 * d64;
                let ffn = 2 * m64 * d64 * f;
                let proj = d64 * m64 * l as u64;
                2 * (qkv_and_out + scores_and_ctx + ffn + proj)
            }
            ModuleSpec::Convolution { l, channels, kernel } => {
                let conv = channels as u64 * valid_taps(d, kernel) * valid_taps(m, kernel);
                2 * (conv + d64 * m64 * l as u64)
            }
            ModuleSpec::Linear { l } => 2 * d64 * m64 * l as u64,
            ModuleSpec::CrossNet { l } => 2 * (d64 * d64 * m64 + d64 * d64 * l as u64),
        }
    }

    /// Estimated live activation elements per sample while this module runs
    /// (inputs excluded); feeds the simulator's memory model.
    pub fn activation_elements(&self, m: usize, d: usize) -> u64 {
        let (m64, d64) = (m as u64, d as u64);
        match *self {
            ModuleSpec::DotInteraction { l } => {
                m64 * m64 + m64 * (m64 - 1) / 2 + d64 * l as u64
            }
            ModuleSpec::SelfAttention { l, heads, ffn_width } => {
                let f = ffn_width.unwrap_or(4 * d) as u64;
                let qkv = 3 * m64 * d64;
                let scores = heads as u64 * m64 * m64;
                let blocks = 5 * m64 * d64; // ctx, attn out, two norms, ffn out
                qkv + scores + blocks + m64 * f + d64 * l as u64
            }
            ModuleSpec::Convolution { l, channels, .. } => {
                channels as u64 * d64 * m64 + d64 * m64 + d64 * l as u64
            }
            ModuleSpec::Linear { l } => d64 * l as u64,
            ModuleSpec::CrossNet { l } => d64 * d64 + 2 * d64 * l as u64,
        }
    }

    /// Trainable scalar count for input token count `m`.
    pub fn param_count(&self, m: usize, d: usize) -> u64 {
        let (m64, d64) = (m as u64, d as u64);
        match *self {
            ModuleSpec::DotInteraction { l } => m64 * (m64 - 1) / 2 * d64 * l as u64,
            ModuleSpec::SelfAttention { l, ffn_width, .. } => {
                let f = ffn_width.unwrap_or(4 * d) as u64;
                let qkvo = 4 * (d64 * d64 + d64);
                let ffn = d64 * f + f + f * d64 + d64;
                let norms = 2 * 2 * d64;
                qkvo + ffn + norms + m64 * l as u64
            }
            ModuleSpec::Convolution { l, channels, kernel } => {
                channels as u64 * (kernel * kernel) as u64 + m64 * l as u64
            }
            ModuleSpec::Linear { l } => m64 * l as u64,
            ModuleSpec::CrossNet { l } => 2 * d64 * l as u64,
        }
    }
}

/// Multiplies executed per sample by one same-padded 1-D pass of extent `n`
/// with kernel extent `k` (border taps outside the map are skipped).
fn valid_taps(n: usize, k: usize) -> u64 {
    let pad = k / 2;
    (0..n)
        .map(|i| {
            let lo = pad.saturating_sub(i);
            let hi = k.min(n + pad - i);
            (hi - lo) as u64
        })
        .sum()
}

fn init_matrix<R: Rng>(
    store: &mut ParamStore,
    rng: &mut R,
    name: String,
    fan_in: usize,
    rows: usize,
    cols: usize,
) -> ParamId {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    store.add(name, Tensor::new(vec![rows, cols], data).expect("sized"))
}

/// `[B, m, d] -> [B, l, d]` by right-multiplying the token axis with `w`.
fn project_tokens(
    tape: &mut Tape,
    store: &ParamStore,
    x: NodeId,
    w: ParamId,
) -> Result<NodeId, TensorError> {
    let t = tape.transpose(x)?; // [B, d, m]
    let wn = tape.param(store, w);
    let u = tape.matmul(t, wn)?; // [B, d, l]
    tape.transpose(u)
}

#[derive(Debug, Clone)]
pub struct DotInteraction {
    pub l: usize,
    w_map: ParamId,
}

impl DotInteraction {
    fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, m: usize, d: usize, l: usize) -> Self {
        let h = m * (m - 1) / 2;
        let w_map = init_matrix(store, rng, format!("{name}.w_map"), h, h, d * l);
        Self { l, w_map }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId, TensorError> {
        let (b, d) = {
            let s = tape.shape(x);
            (s[0], s[2])
        };
        let xt = tape.transpose(x)?; // [B, d, m]
        let gram = tape.matmul(x, xt)?; // [B, m, m]
        let pairs = tape.triu_flatten(gram)?; // [B, h]
        let wn = tape.param(store, self.w_map);
        let flat = tape.matmul(pairs, wn)?; // [B, d*l]
        tape.reshape(flat, &[b, self.l, d])
    }
}

#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub l: usize,
    pub heads: usize,
    wq: (ParamId, ParamId),
    wk: (ParamId, ParamId),
    wv: (ParamId, ParamId),
    wo: (ParamId, ParamId),
    norm1: (ParamId, ParamId),
    norm2: (ParamId, ParamId),
    ffn1: (ParamId, ParamId),
    ffn2: (ParamId, ParamId),
    pub(crate) w_proj: ParamId,
}

impl SelfAttention {
    #[allow(clippy::too_many_arguments)]
    fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        m: usize,
        d: usize,
        l: usize,
        heads: usize,
        ffn_width: Option<usize>,
    ) -> Self {
        let f = ffn_width.unwrap_or(4 * d);
        let wq = init_linear(store, rng, &format!("{name}.wq"), d, d);
        let wk = init_linear(store, rng, &format!("{name}.wk"), d, d);
        let wv = init_linear(store, rng, &format!("{name}.wv"), d, d);
        let wo = init_linear(store, rng, &format!("{name}.wo"), d, d);
        let norm1 = (
            store.add(format!("{name}.norm1.g"), Tensor::filled(&[d], 1.0)),
            store.add(format!("{name}.norm1.b"), Tensor::zeros(&[d])),
        );
        let norm2 = (
            store.add(format!("{name}.norm2.g"), Tensor::filled(&[d], 1.0)),
            store.add(format!("{name}.norm2.b"), Tensor::zeros(&[d])),
        );
        let ffn1 = init_linear(store, rng, &format!("{name}.ffn1"), d, f);
        let ffn2 = init_linear(store, rng, &format!("{name}.ffn2"), f, d);
        let w_proj = init_matrix(store, rng, format!("{name}.w_proj"), m, m, l);
        Self {
            l,
            heads,
            wq,
            wk,
            wv,
            wo,
            norm1,
            norm2,
            ffn1,
            ffn2,
            w_proj,
        }
    }

    fn linear3(
        tape: &mut Tape,
        store: &ParamStore,
        x: NodeId,
        (w, b): (ParamId, ParamId),
    ) -> Result<NodeId, TensorError> {
        let wn = tape.param(store, w);
        let bn = tape.param(store, b);
        let y = tape.matmul(x, wn)?;
        tape.add_bias(y, bn)
    }

    fn affine_norm(
        tape: &mut Tape,
        store: &ParamStore,
        x: NodeId,
        (gamma, beta): (ParamId, ParamId),
    ) -> Result<NodeId, TensorError> {
        let axis = tape.shape(x).len() - 1;
        let normed = tape.layer_norm(x, axis, LAYER_NORM_EPSILON)?;
        let g = tape.param(store, gamma);
        let b = tape.param(store, beta);
        let scaled = tape.mul_vec(normed, g)?;
        tape.add_bias(scaled, b)
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId, TensorError> {
        let d = tape.shape(x)[2];
        let dh = d / self.heads;
        let q = Self::linear3(tape, store, x, self.wq)?;
        let k = Self::linear3(tape, store, x, self.wk)?;
        let v = Self::linear3(tape, store, x, self.wv)?;

        let scale = tape.constant(Tensor::scalar(1.0 / (dh as f64).sqrt()));
        let mut head_outputs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice(q, 2, h * dh, dh)?;
            let kh = tape.slice(k, 2, h * dh, dh)?;
            let vh = tape.slice(v, 2, h * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale_scalar(scores, scale)?;
            let attn = tape.softmax(scores, 2)?;
            head_outputs.push(tape.matmul(attn, vh)?);
        }
        let ctx = tape.concat(&head_outputs, 2)?;
        let attn_out = Self::linear3(tape, store, ctx, self.wo)?;

        let res1 = tape.add(x, attn_out)?;
        let norm1 = Self::affine_norm(tape, store, res1, self.norm1)?;

        let hidden = Self::linear3(tape, store, norm1, self.ffn1)?;
        let hidden = tape.relu(hidden);
        let ffn_out = Self::linear3(tape, store, hidden, self.ffn2)?;

        let res2 = tape.add(norm1, ffn_out)?;
        let norm2 = Self::affine_norm(tape, store, res2, self.norm2)?;

        project_tokens(tape, store, norm2, self.w_proj)
    }
}

#[derive(Debug, Clone)]
pub struct Convolution {
    pub l: usize,
    pub(crate) filters: ParamId,
    pub(crate) w_proj: ParamId,
}

impl Convolution {
    #[allow(clippy::too_many_arguments)]
    fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        m: usize,
        l: usize,
        channels: usize,
        kernel: usize,
    ) -> Self {
        let filters = {
            let bound = 1.0 / ((kernel * kernel) as f64).sqrt();
            let data: Vec<f64> = (0..channels * kernel * kernel)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            store.add(
                format!("{name}.filters"),
                Tensor::new(vec![channels, kernel, kernel], data).expect("sized"),
            )
        };
        let w_proj = init_matrix(store, rng, format!("{name}.w_proj"), m, m, l);
        Self { l, filters, w_proj }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId, TensorError> {
        let image = tape.transpose(x)?; // [B, d, m]
        let filters = tape.param(store, self.filters);
        let channels = tape.conv2d_same(image, filters)?; // [B, C, d, m]
        let mixed = tape.mean_axis(channels, 1)?; // [B, d, m]
        let wn = tape.param(store, self.w_proj);
        let u = tape.matmul(mixed, wn)?; // [B, d, l]
        tape.transpose(u)
    }
}

#[derive(Debug, Clone)]
pub struct LinearMix {
    pub l: usize,
    pub(crate) w: ParamId,
}

impl LinearMix {
    fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, m: usize, l: usize) -> Self {
        let w = init_matrix(store, rng, format!("{name}.w"), m, m, l);
        Self { l, w }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId, TensorError> {
        project_tokens(tape, store, x, self.w)
    }
}

#[derive(Debug, Clone)]
pub struct CrossNet {
    pub l: usize,
    pub(crate) w: ParamId,
    pub(crate) b: ParamId,
}

impl CrossNet {
    fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, d: usize, l: usize) -> Self {
        let w = init_matrix(store, rng, format!("{name}.w"), d, d, l);
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[d, l]));
        Self { l, w, b }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId, TensorError> {
        let xt = tape.transpose(x)?; // [B, d, m]
        let gram = tape.matmul(xt, x)?; // [B, d, d]
        let wn = tape.param(store, self.w);
        let u = tape.matmul(gram, wn)?; // [B, d, l]
        let bn = tape.param(store, self.b);
        let u = tape.add_bias(u, bn)?;
        tape.transpose(u) // [B, l, d]
    }
}

/// A materialized interaction module of any kind.
#[derive(Debug, Clone)]
pub enum InteractionModule {
    Dot(DotInteraction),
    Attention(SelfAttention),
    Conv(Convolution),
    Linear(LinearMix),
    Cross(CrossNet),
}

impl InteractionModule {
    /// Allocate parameters for `spec` acting on `[B, m, d]` input.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        spec: &ModuleSpec,
        m: usize,
        d: usize,
    ) -> Result<Self, ModelError> {
        spec.validate(m, d)?;
        Ok(match *spec {
            ModuleSpec::DotInteraction { l } => {
                Self::Dot(DotInteraction::init(store, rng, name, m, d, l))
            }
            ModuleSpec::SelfAttention { l, heads, ffn_width } => Self::Attention(
                SelfAttention::init(store, rng, name, m, d, l, heads, ffn_width),
            ),
            ModuleSpec::Convolution { l, channels, kernel } => {
                Self::Conv(Convolution::init(store, rng, name, m, l, channels, kernel))
            }
            ModuleSpec::Linear { l } => Self::Linear(LinearMix::init(store, rng, name, m, l)),
            ModuleSpec::CrossNet { l } => Self::Cross(CrossNet::init(store, rng, name, d, l)),
        })
    }

    pub fn output_count(&self) -> usize {
        match self {
            Self::Dot(m) => m.l,
            Self::Attention(m) => m.l,
            Self::Conv(m) => m.l,
            Self::Linear(m) => m.l,
            Self::Cross(m) => m.l,
        }
    }

    /// `[B, m, d] -> [B, l, d]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: NodeId,
    ) -> Result<NodeId, TensorError> {
        match self {
            Self::Dot(m) => m.forward(tape, store, x),
            Self::Attention(m) => m.forward(tape, store, x),
            Self::Conv(m) => m.forward(tape, store, x),
            Self::Linear(m) => m.forward(tape, store, x),
            Self::Cross(m) => m.forward(tape, store, x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bundle(tokens: &[&[f64]]) -> Tensor {
        let m = tokens.len();
        let d = tokens[0].len();
        Tensor::new(vec![1, m, d], tokens.concat()).unwrap()
    }

    fn run(module: &InteractionModule, store: &ParamStore, x: Tensor) -> Tensor {
        let mut tape = Tape::new();
        let xn = tape.constant(x);
        let out = module.forward(&mut tape, store, xn).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn dot_orthogonal_tokens_vanish_under_any_map() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = ModuleSpec::DotInteraction { l: 2 };
        let module = InteractionModule::init(&mut store, &mut rng, "dot", &spec, 2, 2).unwrap();
        if let InteractionModule::Dot(d) = &module {
            let shape = store.get(d.w_map).value.shape().to_vec();
            store.get_mut(d.w_map).value = Tensor::filled(&shape, 1.0);
        }
        let out = run(&module, &store, bundle(&[&[1.0, 0.0], &[0.0, 1.0]]));
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.data(), &[0.0; 4]);
    }

    #[test]
    fn dot_equal_tokens_give_their_squared_norm() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = ModuleSpec::DotInteraction { l: 1 };
        let module = InteractionModule::init(&mut store, &mut rng, "dot", &spec, 2, 2).unwrap();
        if let InteractionModule::Dot(d) = &module {
            let shape = store.get(d.w_map).value.shape().to_vec();
            store.get_mut(d.w_map).value = Tensor::filled(&shape, 1.0);
        }
        // Dot vector is [e1 . e2] = [2]; the all-ones map spreads it everywhere.
        let out = run(&module, &store, bundle(&[&[1.0, 1.0], &[1.0, 1.0]]));
        assert_eq!(out.data(), &[2.0, 2.0]);
    }

    #[test]
    fn dot_pair_count_for_four_tokens() {
        assert_eq!(ModuleSpec::DotInteraction { l: 1 }.param_count(4, 3), 6 * 3);
    }

    #[test]
    fn dot_rejects_single_token() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = ModuleSpec::DotInteraction { l: 1 };
        assert!(InteractionModule::init(&mut store, &mut rng, "dot", &spec, 1, 4).is_err());
    }

    #[test]
    fn attention_rejects_indivisible_heads() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = ModuleSpec::SelfAttention { l: 2, heads: 3, ffn_width: None };
        assert!(InteractionModule::init(&mut store, &mut rng, "attn", &spec, 4, 4).is_err());
    }

    #[test]
    fn attention_single_token_is_well_defined() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = ModuleSpec::SelfAttention { l: 1, heads: 2, ffn_width: None };
        let module = InteractionModule::init(&mut store, &mut rng, "attn", &spec, 1, 4).unwrap();
        let out = run(&module, &store, bundle(&[&[0.5, -0.3, 0.2, 0.9]]));
        assert_eq!(out.shape(), &[1, 1, 4]);
        assert!(out.is_finite());
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = ModuleSpec::SelfAttention { l: 3, heads: 2, ffn_width: None };
        let module = InteractionModule::init(&mut store, &mut rng, "attn", &spec, 3, 4).unwrap();

        let t0: Vec<f64> = (0..4).map(|i| 0.1 * i as f64).collect();
        let t1: Vec<f64> = (0..4).map(|i| 0.3 - 0.2 * i as f64).collect();
        let t2: Vec<f64> = (0..4).map(|i| (i as f64).sin()).collect();
        let base = run(&module, &store, bundle(&[&t0, &t1, &t2]));

        // Swap tokens 0 and 2 along with the matching projection rows.
        let InteractionModule::Attention(attn) = &module else {
            unreachable!()
        };
        let w = store.get(attn.w_proj).value.clone();
        let mut swapped = w.clone();
        for j in 0..3 {
            swapped.data_mut()[j] = w.data()[2 * 3 + j];
            swapped.data_mut()[2 * 3 + j] = w.data()[j];
        }
        store.get_mut(attn.w_proj).value = swapped;
        let permuted = run(&module, &store, bundle(&[&t2, &t1, &t0]));

        assert!(base.max_abs_diff(&permuted) < 1e-12);
    }

    #[test]
    fn conv_delta_kernel_with_identity_projection_is_identity() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = ModuleSpec::Convolution { l: 3, channels: 1, kernel: 3 };
        let module = InteractionModule::init(&mut store, &mut rng, "conv", &spec, 3, 2).unwrap();
        let InteractionModule::Conv(conv) = &module else {
            unreachable!()
        };
        let mut delta = Tensor::zeros(&[1, 3, 3]);
        delta.data_mut()[4] = 1.0;
        store.get_mut(conv.filters).value = delta;
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        store.get_mut(conv.w_proj).value = eye;

        let x = bundle(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let out = run(&module, &store, x.clone());
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn conv_zero_filters_zero_output() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = ModuleSpec::Convolution { l: 2, channels: 4, kernel: 3 };
        let module = InteractionModule::init(&mut store, &mut rng, "conv", &spec, 3, 2).unwrap();
        let InteractionModule::Conv(conv) = &module else {
            unreachable!()
        };
        store.get_mut(conv.filters).value = Tensor::zeros(&[4, 3, 3]);
        let out = run(&module, &store, bundle(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
        assert_eq!(out.data(), &[0.0; 4]);
    }

    #[test]
    fn conv_rejects_even_kernel() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = ModuleSpec::Convolution { l: 2, channels: 1, kernel: 4 };
        assert!(InteractionModule::init(&mut store, &mut rng, "conv", &spec, 3, 2).is_err());
    }

    #[test]
    fn linear_sums_tokens_under_ones_weight() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ModuleSpec::Linear { l: 1 };
        let module = InteractionModule::init(&mut store, &mut rng, "lin", &spec, 2, 2).unwrap();
        let InteractionModule::Linear(lin) = &module else {
            unreachable!()
        };
        store.get_mut(lin.w).value = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let out = run(&module, &store, bundle(&[&[1.0, 3.0], &[2.0, 4.0]]));
        assert_eq!(out.shape(), &[1, 1, 2]);
        assert_eq!(out.data(), &[3.0, 7.0]);
    }

    #[test]
    fn linear_identity_weight_is_passthrough() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ModuleSpec::Linear { l: 2 };
        let module = InteractionModule::init(&mut store, &mut rng, "lin", &spec, 2, 3).unwrap();
        let InteractionModule::Linear(lin) = &module else {
            unreachable!()
        };
        store.get_mut(lin.w).value = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = bundle(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let out = run(&module, &store, x.clone());
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn linear_flops_formula() {
        assert_eq!(ModuleSpec::Linear { l: 4 }.flops(6, 8), 384);
    }

    #[test]
    fn cross_net_identity_tokens_give_weight_plus_bias() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = ModuleSpec::CrossNet { l: 2 };
        let module = InteractionModule::init(&mut store, &mut rng, "cross", &spec, 2, 2).unwrap();
        let InteractionModule::Cross(cross) = &module else {
            unreachable!()
        };
        store.get_mut(cross.b).value =
            Tensor::new(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let w = store.get(cross.w).value.clone();
        let b = store.get(cross.b).value.clone();

        let out = run(&module, &store, bundle(&[&[1.0, 0.0], &[0.0, 1.0]]));
        // Output token j, dim i is W[i, j] + b[i, j].
        for i in 0..2 {
            for j in 0..2 {
                let expect = w.data()[i * 2 + j] + b.data()[i * 2 + j];
                assert_eq!(out.data()[j * 2 + i], expect);
            }
        }
    }

    #[test]
    fn cross_net_zero_input_yields_bias() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = ModuleSpec::CrossNet { l: 1 };
        let module = InteractionModule::init(&mut store, &mut rng, "cross", &spec, 3, 2).unwrap();
        let InteractionModule::Cross(cross) = &module else {
            unreachable!()
        };
        store.get_mut(cross.b).value = Tensor::new(vec![2, 1], vec![0.7, -0.4]).unwrap();
        let out = run(&module, &store, Tensor::zeros(&[1, 3, 2]));
        assert_eq!(out.data(), &[0.7, -0.4]);
    }

    #[test]
    fn cross_net_flops_formula() {
        assert_eq!(ModuleSpec::CrossNet { l: 4 }.flops(6, 8), 1280);
    }

    #[test]
    fn every_kind_honors_the_shape_contract() {
        let specs = [
            ModuleSpec::DotInteraction { l: 5 },
            ModuleSpec::SelfAttention { l: 5, heads: 2, ffn_width: None },
            ModuleSpec::Convolution { l: 5, channels: 4, kernel: 3 },
            ModuleSpec::Linear { l: 5 },
            ModuleSpec::CrossNet { l: 5 },
        ];
        for spec in specs {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let module = InteractionModule::init(&mut store, &mut rng, "m", &spec, 4, 6).unwrap();
            let data: Vec<f64> = (0..3 * 4 * 6).map(|i| (i as f64 * 0.13).sin()).collect();
            let x = Tensor::new(vec![3, 4, 6], data).unwrap();
            let out = run(&module, &store, x);
            assert_eq!(out.shape(), &[3, 5, 6], "kind {}", spec.kind_name());
        }
    }
}
