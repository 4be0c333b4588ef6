//! The hierarchical ensemble layer and the stacked network built from it.
//!
//! Each layer runs `k` interaction modules on the incoming embedding list,
//! combines their outputs (concat / sum / weighted sum), adds a shortcut that
//! doubles as a dimension matcher, and layer-normalizes every embedding. The
//! prediction head pools the final list and maps it to a CTR probability.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, TensorError};
use crate::features::{DenseArch, FeatureBatch, FeatureConfig, FeatureProcessor, init_linear};
use crate::interaction::{InteractionModule, ModuleSpec};
use crate::tape::{NodeId, ParamId, ParamStore, Tape};
use crate::tensor::Tensor;
use crate::LAYER_NORM_EPSILON;

/// How one layer combines its module outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleMethod {
    #[default]
    Concat,
    Sum,
    /// Sum with one learned scalar per module, initialized to `1/k`.
    WeightedSum,
}

/// Declarative description of one stacked layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerSpec {
    pub modules: Vec<ModuleSpec>,
    #[serde(default)]
    pub ensemble: EnsembleMethod,
    /// When set, a projection of the raw dense features is appended to the
    /// embedding list before the modules run (the shortcut still sees the
    /// original list).
    #[serde(default)]
    pub dense_token: bool,
}

impl LayerSpec {
    /// Token count this layer emits.
    pub fn output_count(&self) -> Result<usize, ModelError> {
        if self.modules.is_empty() {
            return Err(ModelError::BadSpec("layer needs at least one module".into()));
        }
        match self.ensemble {
            EnsembleMethod::Concat => Ok(self.modules.iter().map(ModuleSpec::output_count).sum()),
            EnsembleMethod::Sum | EnsembleMethod::WeightedSum => {
                let l = self.modules[0].output_count();
                if self.modules.iter().any(|m| m.output_count() != l) {
                    Err(ModelError::BadSpec(
                        "sum ensembles need every module to share the same l".into(),
                    ))
                } else {
                    Ok(l)
                }
            }
        }
    }

    /// Token count the modules see (input tokens plus the optional dense one).
    fn module_input_count(&self, m_in: usize) -> usize {
        m_in + usize::from(self.dense_token)
    }
}

/// Pooling MLP that turns the final embedding list into a probability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadSpec {
    /// Hidden widths between the pooled embedding and the single logit.
    #[serde(default = "default_head_hidden")]
    pub hidden: Vec<usize>,
    /// Ignore the input entirely and learn a single logit; the model can then
    /// only fit the base rate.
    #[serde(default)]
    pub bias_only: bool,
}

fn default_head_hidden() -> Vec<usize> {
    vec![64]
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self {
            hidden: default_head_hidden(),
            bias_only: false,
        }
    }
}

/// The full network description: features, stacked layers, head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub features: FeatureConfig,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub head: HeadSpec,
}

/// Per-sample forward flop totals by component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopsBreakdown {
    pub features: u64,
    pub layers: Vec<u64>,
    pub head: u64,
}

impl FlopsBreakdown {
    pub fn total(&self) -> u64 {
        self.features + self.layers.iter().sum::<u64>() + self.head
    }
}

fn mlp_flops(widths: &[usize]) -> u64 {
    widths.windows(2).map(|w| 2 * (w[0] * w[1]) as u64).sum()
}

fn mlp_params(widths: &[usize]) -> u64 {
    widths.windows(2).map(|w| (w[0] * w[1] + w[1]) as u64).sum()
}

impl NetworkSpec {
    /// Token counts `[m_0, m_1, ..., m_N]` through the stack.
    pub fn token_counts(&self) -> Result<Vec<usize>, ModelError> {
        if self.layers.is_empty() {
            return Err(ModelError::BadSpec("network needs at least one layer".into()));
        }
        let mut counts = vec![self.features.token_count()];
        for layer in &self.layers {
            counts.push(layer.output_count()?);
        }
        Ok(counts)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.features.validate()?;
        let d = self.features.embedding_dim;
        let counts = self.token_counts()?;
        for (layer, &m_in) in self.layers.iter().zip(&counts) {
            let m_mod = layer.module_input_count(m_in);
            for module in &layer.modules {
                module.validate(m_mod, d)?;
            }
        }
        if !self.head.bias_only && self.head.hidden.iter().any(|&w| w == 0) {
            return Err(ModelError::BadSpec("head hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// Per-sample forward flops, counted as 2x the contraction multiply-adds
    /// of every matmul and convolution (lookups, normalizations, and
    /// activations contribute none).
    pub fn flops_breakdown(&self) -> Result<FlopsBreakdown, ModelError> {
        let d = self.features.embedding_dim;
        let counts = self.token_counts()?;

        let mut dense_widths = vec![self.features.dense_width];
        dense_widths.extend_from_slice(&self.features.dense_hidden);
        dense_widths.push(d);
        let features = mlp_flops(&dense_widths);

        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (m_in, m_out) = (counts[i], counts[i + 1]);
            let m_mod = layer.module_input_count(m_in);
            let mut f: u64 = layer.modules.iter().map(|m| m.flops(m_mod, d)).sum();
            if layer.dense_token {
                f += 2 * (self.features.dense_width * d) as u64;
            }
            if m_in != m_out {
                f += 2 * (d * m_in * m_out) as u64;
            }
            layers.push(f);
        }

        let head = if self.head.bias_only {
            0
        } else {
            let mut widths = vec![d];
            widths.extend_from_slice(&self.head.hidden);
            widths.push(1);
            mlp_flops(&widths)
        };

        Ok(FlopsBreakdown { features, layers, head })
    }

    /// Per-sample forward flop total.
    pub fn count_flops(&self) -> Result<u64, ModelError> {
        Ok(self.flops_breakdown()?.total())
    }

    /// Estimated live activation elements per sample: one total for the
    /// feature processing, one per layer, one for the head. Feeds the
    /// simulator's memory model.
    pub fn activation_elements(&self) -> Result<(u64, Vec<u64>, u64), ModelError> {
        let d = self.features.embedding_dim;
        let counts = self.token_counts()?;

        let mut features = (self.features.token_count() * d) as u64; // X_0
        features += self.features.dense_hidden.iter().map(|&w| w as u64).sum::<u64>() + d as u64;

        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (m_in, m_out) = (counts[i], counts[i + 1]);
            let m_mod = layer.module_input_count(m_in);
            let mut elems: u64 = layer
                .modules
                .iter()
                .map(|m| m.activation_elements(m_mod, d))
                .sum();
            elems += (m_mod * d) as u64; // module input
            elems += 3 * (m_out * d) as u64; // ensemble, shortcut sum, norm
            layers.push(elems);
        }

        let head = if self.head.bias_only {
            1
        } else {
            (d + self.head.hidden.iter().sum::<usize>() + 1) as u64
        };
        Ok((features, layers, head))
    }

    /// Trainable scalars per layer, excluding embedding tables and features.
    pub fn layer_param_counts(&self) -> Result<Vec<u64>, ModelError> {
        let d = self.features.embedding_dim;
        let counts = self.token_counts()?;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (m_in, m_out) = (counts[i], counts[i + 1]);
            let m_mod = layer.module_input_count(m_in);
            let mut p: u64 = layer.modules.iter().map(|m| m.param_count(m_mod, d)).sum();
            if layer.dense_token {
                p += (self.features.dense_width * d + d) as u64;
            }
            if layer.ensemble == EnsembleMethod::WeightedSum {
                p += layer.modules.len() as u64;
            }
            if m_in != m_out {
                p += (m_in * m_out) as u64;
            }
            p += 2 * d as u64; // outer norm scale and bias
            out.push(p);
        }
        Ok(out)
    }

    /// Trainable scalars in the dense arch of the feature processing layer.
    pub fn feature_param_count(&self) -> u64 {
        let mut widths = vec![self.features.dense_width];
        widths.extend_from_slice(&self.features.dense_hidden);
        widths.push(self.features.embedding_dim);
        mlp_params(&widths)
    }

    /// Trainable scalars in the prediction head.
    pub fn head_param_count(&self) -> u64 {
        if self.head.bias_only {
            1
        } else {
            let mut widths = vec![self.features.embedding_dim];
            widths.extend_from_slice(&self.head.hidden);
            widths.push(1);
            mlp_params(&widths)
        }
    }

    /// Trainable scalars outside the embedding tables (dense arch, layers,
    /// head) — the replicated, densely-synchronized part of the model.
    pub fn dense_param_count(&self) -> Result<u64, ModelError> {
        Ok(self.feature_param_count()
            + self.layer_param_counts()?.iter().sum::<u64>()
            + self.head_param_count())
    }

    /// Trainable scalars inside the embedding tables.
    pub fn embedding_param_count(&self) -> u64 {
        let d = self.features.embedding_dim as u64;
        self.features.sparse.iter().map(|f| f.cardinality as u64 * d).sum()
    }
}

/// One materialized stacked layer.
#[derive(Debug, Clone)]
pub struct EnsembleLayer {
    pub m_in: usize,
    pub m_out: usize,
    ensemble: EnsembleMethod,
    modules: Vec<InteractionModule>,
    ensemble_weights: Vec<ParamId>,
    dense_proj: Option<(ParamId, ParamId)>,
    /// `None` means the shortcut is the identity (token counts match).
    shortcut: Option<ParamId>,
    norm_scale: ParamId,
    norm_bias: ParamId,
}

impl EnsembleLayer {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        spec: &LayerSpec,
        features: &FeatureConfig,
        m_in: usize,
    ) -> Result<Self, ModelError> {
        let d = features.embedding_dim;
        let m_out = spec.output_count()?;
        let m_mod = spec.module_input_count(m_in);

        let dense_proj = spec.dense_token.then(|| {
            init_linear(store, rng, &format!("{name}.dense_token"), features.dense_width, d)
        });

        let modules = spec
            .modules
            .iter()
            .enumerate()
            .map(|(i, m)| InteractionModule::init(store, rng, &format!("{name}.mod{i}"), m, m_mod, d))
            .collect::<Result<Vec<_>, _>>()?;

        let ensemble_weights = if spec.ensemble == EnsembleMethod::WeightedSum {
            let k = spec.modules.len();
            (0..k)
                .map(|i| {
                    store.add(
                        format!("{name}.ensemble_w{i}"),
                        Tensor::new(vec![1], vec![1.0 / k as f64]).expect("scalar"),
                    )
                })
                .collect()
        } else {
            Vec::new()
        };

        let shortcut = if m_in == m_out {
            None
        } else {
            let bound = 1.0 / (m_in as f64).sqrt();
            let data: Vec<f64> = (0..m_in * m_out).map(|_| rng.gen_range(-bound..bound)).collect();
            Some(store.add(
                format!("{name}.shortcut"),
                Tensor::new(vec![m_in, m_out], data).expect("sized"),
            ))
        };

        let norm_scale = store.add(format!("{name}.norm.g"), Tensor::filled(&[d], 1.0));
        let norm_bias = store.add(format!("{name}.norm.b"), Tensor::zeros(&[d]));

        Ok(Self {
            m_in,
            m_out,
            ensemble: spec.ensemble,
            modules,
            ensemble_weights,
            dense_proj,
            shortcut,
            norm_scale,
            norm_bias,
        })
    }

    pub fn has_identity_shortcut(&self) -> bool {
        self.shortcut.is_none()
    }

    /// `[B, m_in, d] -> [B, m_out, d]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: NodeId,
        dense_ctx: Option<NodeId>,
    ) -> Result<NodeId, TensorError> {
        let (b, d) = {
            let s = tape.shape(x);
            (s[0], s[2])
        };

        let module_input = if let Some((w, bias)) = self.dense_proj {
            let dense = dense_ctx.ok_or_else(|| TensorError::InvalidArgument {
                op: "layer-forward",
                reason: "layer expects dense features but none were supplied".into(),
            })?;
            let wn = tape.param(store, w);
            let bn = tape.param(store, bias);
            let projected = tape.matmul(dense, wn)?;
            let projected = tape.add_bias(projected, bn)?;
            let token = tape.reshape(projected, &[b, 1, d])?;
            tape.concat(&[x, token], 1)?
        } else {
            x
        };

        let outputs = self
            .modules
            .iter()
            .map(|m| m.forward(tape, store, module_input))
            .collect::<Result<Vec<_>, _>>()?;

        let combined = match self.ensemble {
            EnsembleMethod::Concat => tape.concat(&outputs, 1)?,
            EnsembleMethod::Sum => {
                let mut acc = outputs[0];
                for &o in &outputs[1..] {
                    acc = tape.add(acc, o)?;
                }
                acc
            }
            EnsembleMethod::WeightedSum => {
                let mut acc = None;
                for (&o, &w) in outputs.iter().zip(&self.ensemble_weights) {
                    let wn = tape.param(store, w);
                    let term = tape.scale_scalar(o, wn)?;
                    acc = Some(match acc {
                        None => term,
                        Some(a) => tape.add(a, term)?,
                    });
                }
                acc.expect("at least one module")
            }
        };

        let shortcut = match self.shortcut {
            None => x,
            Some(w) => {
                let t = tape.transpose(x)?;
                let wn = tape.param(store, w);
                let p = tape.matmul(t, wn)?;
                tape.transpose(p)?
            }
        };

        let summed = tape.add(combined, shortcut)?;
        let normed = tape.layer_norm(summed, 2, LAYER_NORM_EPSILON)?;
        let g = tape.param(store, self.norm_scale);
        let bn = tape.param(store, self.norm_bias);
        let scaled = tape.mul_vec(normed, g)?;
        tape.add_bias(scaled, bn)
    }
}

/// The pooling prediction head.
#[derive(Debug, Clone)]
pub enum PredictionHead {
    BiasOnly(ParamId),
    Mlp(DenseArch),
}

impl PredictionHead {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        spec: &HeadSpec,
        d: usize,
    ) -> Self {
        if spec.bias_only {
            Self::BiasOnly(store.add("head.bias", Tensor::zeros(&[1])))
        } else {
            Self::Mlp(DenseArch::init(store, rng, "head", d, &spec.hidden, 1))
        }
    }

    /// `[B, m, d] -> [B]` of probabilities in (0, 1).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: NodeId,
    ) -> Result<NodeId, TensorError> {
        let b = tape.shape(x)[0];
        let logits = match self {
            Self::BiasOnly(bias) => {
                let zeros = tape.constant(Tensor::zeros(&[b, 1]));
                let bn = tape.param(store, *bias);
                tape.add_bias(zeros, bn)?
            }
            Self::Mlp(mlp) => {
                let pooled = tape.mean_axis(x, 1)?;
                mlp.forward(tape, store, pooled)?
            }
        };
        let probs = tape.sigmoid(logits);
        tape.reshape(probs, &[b])
    }
}

/// A fully materialized model: spec, parameters, and wiring.
#[derive(Debug)]
pub struct DhenModel {
    pub spec: NetworkSpec,
    pub store: ParamStore,
    features: FeatureProcessor,
    layers: Vec<EnsembleLayer>,
    head: PredictionHead,
}

impl DhenModel {
    /// Materialize parameters for `spec`, deterministically from `seed`.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self, ModelError> {
        use rand::SeedableRng;
        spec.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let features = FeatureProcessor::init(&mut store, &mut rng, &spec.features);
        let counts = spec.token_counts()?;
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                EnsembleLayer::init(&mut store, &mut rng, &format!("layer{i}"), layer, &spec.features, counts[i])
            })
            .collect::<Result<Vec<_>, _>>()?;
        let head = PredictionHead::init(&mut store, &mut rng, &spec.head, spec.features.embedding_dim);
        Ok(Self {
            spec: spec.clone(),
            store,
            features,
            layers,
            head,
        })
    }

    pub fn layers(&self) -> &[EnsembleLayer] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.store.num_values()
    }

    /// Forward pass to CTR probabilities `[B]`.
    pub fn forward(&self, tape: &mut Tape, batch: &FeatureBatch) -> Result<NodeId, ModelError> {
        self.forward_in(&self.store, tape, batch)
    }

    /// Forward pass reading parameters from an external store laid out like
    /// this model's own (same init order).
    pub fn forward_in(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        batch: &FeatureBatch,
    ) -> Result<NodeId, ModelError> {
        batch.validate(&self.spec.features)?;
        let mut x = self.features.forward(tape, store, batch)?;
        let needs_dense = self.layers.iter().any(|l| l.dense_proj.is_some());
        let dense_ctx = needs_dense.then(|| tape.constant(batch.dense.clone()));
        for layer in &self.layers {
            x = layer.forward(tape, store, x, dense_ctx)?;
        }
        Ok(self.head.forward(tape, store, x)?)
    }
}
