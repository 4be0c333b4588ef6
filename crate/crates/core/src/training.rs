//! Normalized-entropy metric, synthetic CTR data with planted interactions,
//! the Adam optimizer, and the training loop.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ensemble::DhenModel;
use crate::error::TrainError;
use crate::features::FeatureBatch;
use crate::tape::{ParamStore, Tape, PROB_CLAMP};
use crate::tensor::Tensor;

/// Normalized entropy: mean log-loss of `probs` against `labels`, divided by
/// the log-loss of always predicting the batch's empirical CTR. 1.0 means no
/// better than the background rate; lower is better.
pub fn ne_metric(probs: &[f64], labels: &[f64]) -> Result<f64, TrainError> {
    assert_eq!(probs.len(), labels.len(), "probs and labels must align");
    assert!(!probs.is_empty(), "empty batch");
    let n = labels.len() as f64;
    let ctr = labels.iter().sum::<f64>() / n;
    if ctr <= 0.0 || ctr >= 1.0 {
        return Err(TrainError::DegenerateLabels { ctr });
    }
    let mut numerator = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        numerator -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
    }
    numerator /= n;
    let denominator = -(ctr * ctr.ln() + (1.0 - ctr) * (1.0 - ctr).ln());
    Ok(numerator / denominator)
}

/// One planted interaction: the product of the involved fields' per-id latent
/// signs, scaled by `coefficient`, is added to the label logit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedTerm {
    /// Indices into the sparse field list; the term's order is `fields.len()`.
    pub fields: Vec<usize>,
    pub coefficient: f64,
}

/// Generator description for synthetic CTR data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub cardinalities: Vec<usize>,
    pub dense_width: usize,
    #[serde(default)]
    pub terms: Vec<PlantedTerm>,
    /// Weight of the linear term over the dense features.
    #[serde(default)]
    pub dense_coefficient: f64,
    /// Label noise: labels are Bernoulli(sigmoid(logit / temperature)).
    pub temperature: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.temperature > 0.0) {
            return Err(TrainError::BadSpec(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        for (i, term) in self.terms.iter().enumerate() {
            if term.fields.is_empty() {
                return Err(TrainError::BadSpec(format!("term {i} is empty (order 0)")));
            }
            for &f in &term.fields {
                if f >= self.cardinalities.len() {
                    return Err(TrainError::BadSpec(format!(
                        "term {i} references field {f}, only {} exist",
                        self.cardinalities.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Features plus binary labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: FeatureBatch,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn slice(&self, start: usize, len: usize) -> Dataset {
        Dataset {
            features: self.features.slice(start, len),
            labels: self.labels[start..start + len].to_vec(),
        }
    }

    /// Empirical CTR.
    pub fn base_rate(&self) -> f64 {
        self.labels.iter().sum::<f64>() / self.labels.len() as f64
    }
}

/// Draw `n` samples. Ids are uniform per field; each sample's logit is the sum
/// over planted terms of `coefficient * prod(latent sign of the involved id)`
/// plus a fixed linear map of the dense features; the label is
/// Bernoulli(sigmoid(logit / temperature)). Fully reproducible from the seed.
pub fn generate_synthetic(spec: &SyntheticSpec, n: usize) -> Result<Dataset, TrainError> {
    spec.validate()?;
    if n == 0 {
        return Err(TrainError::BadSpec("asked for zero samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Per-id latent signs, drawn before any sample so the stream is stable.
    let latents: Vec<Vec<f64>> = spec
        .cardinalities
        .iter()
        .map(|&c| (0..c).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect())
        .collect();
    let dense_weights: Vec<f64> = (0..spec.dense_width).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let fields = spec.cardinalities.len();
    let mut sparse_ids: Vec<Vec<Vec<usize>>> = vec![Vec::with_capacity(n); fields];
    let mut dense = Vec::with_capacity(n * spec.dense_width);
    let mut labels = Vec::with_capacity(n);

    for _ in 0..n {
        let ids: Vec<usize> = spec.cardinalities.iter().map(|&c| rng.gen_range(0..c)).collect();
        let sample_dense: Vec<f64> = (0..spec.dense_width)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();

        let mut logit = 0.0;
        for term in &spec.terms {
            let product: f64 = term.fields.iter().map(|&f| latents[f][ids[f]]).product();
            logit += term.coefficient * product;
        }
        logit += spec.dense_coefficient
            * dense_weights.iter().zip(&sample_dense).map(|(w, x)| w * x).sum::<f64>();

        let p = crate::tensor::sigmoid_scalar(logit / spec.temperature);
        labels.push(f64::from(rng.gen::<f64>() < p));

        for (f, &id) in ids.iter().enumerate() {
            sparse_ids[f].push(vec![id]);
        }
        dense.extend_from_slice(&sample_dense);
    }

    Ok(Dataset {
        features: FeatureBatch {
            sparse_ids,
            dense: Tensor::new(vec![n, spec.dense_width], dense).expect("sized"),
        },
        labels,
    })
}

/// Draw one stream and split it into train and eval partitions that share the
/// latent signs.
pub fn generate_split(
    spec: &SyntheticSpec,
    n_train: usize,
    n_eval: usize,
) -> Result<(Dataset, Dataset), TrainError> {
    let all = generate_synthetic(spec, n_train + n_eval)?;
    Ok((all.slice(0, n_train), all.slice(n_train, n_eval)))
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

/// Training-loop hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub epsilon: f64,
    /// Steps between metric rows.
    pub eval_cadence: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.steps == 0 || self.eval_cadence == 0 {
            return Err(TrainError::BadSpec(
                "batch_size, steps, and eval_cadence must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) || !(self.epsilon > 0.0) {
            return Err(TrainError::BadSpec("bad optimizer constants".into()));
        }
        if !(self.beta1 >= 0.0 && self.beta1 < 1.0 && self.beta2 >= 0.0 && self.beta2 < 1.0) {
            return Err(TrainError::BadSpec("betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction, one (m, v) pair per parameter.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: &TrainConfig) -> Self {
        let m = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        let v = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            t: 0,
            m,
            v,
        }
    }

    /// Apply one update from the gradients currently held in the store.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (slot, pid) in store.ids().enumerate() {
            let param = store.get_mut(pid);
            let m = self.m[slot].data_mut();
            let v = self.v[slot].data_mut();
            for ((value, &grad), (mi, vi)) in param
                .value
                .data_mut()
                .iter_mut()
                .zip(param.grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * grad;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * grad * grad;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *value -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// One metrics row; `wall_ms` is measured, everything else is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub train_ne: f64,
    pub eval_ne: f64,
    pub wall_ms: f64,
}

/// Ordered training metrics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricLog {
    pub rows: Vec<MetricRow>,
}

impl MetricLog {
    pub fn final_eval_ne(&self) -> Option<f64> {
        self.rows.last().map(|r| r.eval_ne)
    }

    /// The fixed-header CSV emission of the log.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,train_ne,eval_ne,wall_ms")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.step, r.train_ne, r.eval_ne, r.wall_ms)?;
        }
        Ok(())
    }
}

/// NE of `model` over `data`, evaluated in chunks of `chunk` samples.
pub fn evaluate(model: &DhenModel, data: &Dataset, chunk: usize) -> Result<f64, TrainError> {
    let mut probs = Vec::with_capacity(data.len());
    let mut start = 0;
    while start < data.len() {
        let len = chunk.min(data.len() - start);
        let part = data.slice(start, len);
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &part.features)?;
        probs.extend_from_slice(tape.value(out).data());
        start += len;
    }
    ne_metric(&probs, &data.labels)
}

/// Adam steps on the mean log-loss (the NE numerator); NE is what the log
/// reports. Batches walk the training set in order, restarting when fewer
/// than `batch_size` samples remain.
pub fn train(
    model: &mut DhenModel,
    train_data: &Dataset,
    eval_data: &Dataset,
    cfg: &TrainConfig,
) -> Result<MetricLog, TrainError> {
    cfg.validate()?;
    train_data.features.validate(&model.spec.features)?;
    eval_data.features.validate(&model.spec.features)?;
    if train_data.len() < cfg.batch_size {
        return Err(TrainError::BadSpec(format!(
            "training set of {} is smaller than one batch of {}",
            train_data.len(),
            cfg.batch_size
        )));
    }

    let started = Instant::now();
    let mut adam = Adam::new(&model.store, cfg);
    let mut log = MetricLog::default();
    let mut cursor = 0usize;

    for step in 0..cfg.steps {
        if cursor + cfg.batch_size > train_data.len() {
            cursor = 0;
        }
        let batch = train_data.slice(cursor, cfg.batch_size);
        cursor += cfg.batch_size;

        let mut tape = Tape::new();
        let probs = model.forward(&mut tape, &batch.features)?;
        let loss = tape.bce_mean(probs, &batch.labels)?;
        let loss_value = tape.value(loss).item();
        if !loss_value.is_finite() {
            return Err(TrainError::NonFiniteLoss { step });
        }

        model.store.zero_grad();
        tape.backward(loss, &mut model.store)?;
        adam.step(&mut model.store);

        if (step + 1) % cfg.eval_cadence == 0 || step + 1 == cfg.steps {
            // Batch NE from the step's own forward pass; eval NE after the
            // update, so the final row is the trained model's score.
            let train_ne = ne_metric(tape.value(probs).data(), &batch.labels).unwrap_or(f64::NAN);
            let eval_ne = evaluate(model, eval_data, cfg.batch_size)?;
            log.rows.push(MetricRow {
                step: step + 1,
                train_ne,
                eval_ne,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            });
        }
    }
    Ok(log)
}
