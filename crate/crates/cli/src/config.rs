//! The experiment config file: one TOML document per run, schema-validated
//! with unknown keys rejected, mapped onto the core types.

use serde::Deserialize;

use dhen_core::ensemble::{EnsembleMethod, HeadSpec, LayerSpec, NetworkSpec};
use dhen_core::features::{FeatureConfig, SparseFieldSpec};
use dhen_core::interaction::ModuleSpec;
use dhen_core::sharding::TableSpec;
use dhen_core::sim::{ClusterSpec, ParadigmKind, ParadigmSpec};
use dhen_core::training::{PlantedTerm, SyntheticSpec, TrainConfig};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub features: Option<FeaturesSection>,
    pub network: Option<NetworkSection>,
    pub train: Option<TrainSection>,
    pub synthetic: Option<SyntheticSection>,
    pub cluster: Option<ClusterSection>,
    pub paradigm: Option<ParadigmSection>,
    #[serde(default)]
    pub tables: Vec<TableSection>,
}

impl ExperimentConfig {
    pub fn from_path(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn features(&self) -> Result<&FeaturesSection, CliError> {
        self.features
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [features] section".into()))
    }

    pub fn network_spec(&self) -> Result<NetworkSpec, CliError> {
        let features = self.features()?.to_core();
        let network = self
            .network
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [network] section".into()))?;
        let spec = NetworkSpec {
            features,
            layers: network
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.to_core(i))
                .collect::<Result<_, _>>()?,
            head: network.head.clone().unwrap_or_default().to_core(),
        };
        spec.validate()
            .map_err(|e| CliError::Config(format!("network: {e}")))?;
        Ok(spec)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let t = self
            .train
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [train] section".into()))?;
        let cfg = TrainConfig {
            batch_size: t.batch_size,
            steps: t.steps,
            learning_rate: t.learning_rate,
            beta1: t.beta1.unwrap_or(0.9),
            beta2: t.beta2.unwrap_or(0.999),
            epsilon: t.epsilon.unwrap_or(1e-8),
            eval_cadence: t.eval_cadence,
            seed: self.seed,
        };
        cfg.validate()
            .map_err(|e| CliError::Config(format!("train: {e}")))?;
        Ok(cfg)
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticSpec, CliError> {
        let features = self.features()?;
        let synth = self
            .synthetic
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [synthetic] section".into()))?;
        let field_index = |name: &str| -> Result<usize, CliError> {
            features
                .sparse
                .iter()
                .position(|f| f.name == name)
                .ok_or_else(|| {
                    CliError::Config(format!("synthetic term references unknown field '{name}'"))
                })
        };
        let terms = synth
            .terms
            .iter()
            .map(|t| {
                Ok(PlantedTerm {
                    fields: t.fields.iter().map(|f| field_index(f)).collect::<Result<_, _>>()?,
                    coefficient: t.coefficient,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let spec = SyntheticSpec {
            cardinalities: features.sparse.iter().map(|f| f.cardinality).collect(),
            dense_width: features.dense_width,
            terms,
            dense_coefficient: synth.dense_coefficient.unwrap_or(0.0),
            temperature: synth.temperature,
            seed: self.seed,
        };
        spec.validate()
            .map_err(|e| CliError::Config(format!("synthetic: {e}")))?;
        Ok(spec)
    }

    pub fn synthetic_sizes(&self) -> Result<(usize, usize), CliError> {
        let synth = self
            .synthetic
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [synthetic] section".into()))?;
        Ok((synth.n_train, synth.n_eval))
    }

    pub fn cluster_spec(&self) -> Result<ClusterSpec, CliError> {
        let c = self
            .cluster
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [cluster] section".into()))?;
        let spec = c.to_core();
        spec.validate()
            .map_err(|e| CliError::Config(format!("cluster: {e}")))?;
        Ok(spec)
    }

    pub fn paradigm_spec(&self, kind_override: Option<ParadigmKind>) -> Result<ParadigmSpec, CliError> {
        let p = self
            .paradigm
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [paradigm] section".into()))?;
        let kind = kind_override
            .or(p.kind)
            .ok_or_else(|| CliError::Config("paradigm.kind missing and no --paradigm given".into()))?;
        let spec = ParadigmSpec {
            kind,
            activation_checkpointing: p.activation_checkpointing.unwrap_or(false),
            cpu_offload: p.cpu_offload.unwrap_or(false),
            collective_bytes: p.collective_bytes.unwrap_or(4.0),
            embedding_bytes: p.embedding_bytes.unwrap_or(4.0),
            prefetch: p.prefetch.unwrap_or(false),
        };
        spec.validate()
            .map_err(|e| CliError::Config(format!("paradigm: {e}")))?;
        Ok(spec)
    }

    pub fn global_batch(&self) -> f64 {
        self.paradigm
            .as_ref()
            .and_then(|p| p.global_batch)
            .unwrap_or(1.0)
    }

    pub fn table_specs(&self) -> Result<Vec<TableSpec>, CliError> {
        Ok(self.tables.iter().map(TableSection::to_core).collect())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesSection {
    pub embedding_dim: usize,
    #[serde(default)]
    pub sparse: Vec<SparseFieldSection>,
    pub dense_width: usize,
    #[serde(default)]
    pub dense_hidden: Vec<usize>,
}

impl FeaturesSection {
    pub fn to_core(&self) -> FeatureConfig {
        FeatureConfig {
            embedding_dim: self.embedding_dim,
            sparse: self
                .sparse
                .iter()
                .map(|f| SparseFieldSpec { name: f.name.clone(), cardinality: f.cardinality })
                .collect(),
            dense_width: self.dense_width,
            dense_hidden: self.dense_hidden.clone(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseFieldSection {
    pub name: String,
    pub cardinality: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub layers: Vec<LayerSection>,
    pub head: Option<HeadSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSection {
    pub modules: Vec<ModuleSection>,
    pub ensemble: Option<String>,
    pub dense_token: Option<bool>,
}

impl LayerSection {
    fn to_core(&self, index: usize) -> Result<LayerSpec, CliError> {
        let ensemble = match self.ensemble.as_deref() {
            None | Some("concat") => EnsembleMethod::Concat,
            Some("sum") => EnsembleMethod::Sum,
            Some("weighted-sum") => EnsembleMethod::WeightedSum,
            Some(other) => {
                return Err(CliError::Config(format!(
                    "network.layers[{index}].ensemble: unknown method '{other}'"
                )))
            }
        };
        Ok(LayerSpec {
            modules: self
                .modules
                .iter()
                .enumerate()
                .map(|(m, s)| s.to_core(index, m))
                .collect::<Result<_, _>>()?,
            ensemble,
            dense_token: self.dense_token.unwrap_or(false),
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleSection {
    pub kind: String,
    pub l: usize,
    pub heads: Option<usize>,
    pub ffn_width: Option<usize>,
    pub channels: Option<usize>,
    pub kernel: Option<usize>,
}

impl ModuleSection {
    fn to_core(&self, layer: usize, index: usize) -> Result<ModuleSpec, CliError> {
        let at = format!("network.layers[{layer}].modules[{index}]");
        let reject = |field: &str, set: bool| -> Result<(), CliError> {
            if set {
                Err(CliError::Config(format!(
                    "{at}: field '{field}' does not apply to kind '{}'",
                    self.kind
                )))
            } else {
                Ok(())
            }
        };
        let spec = match self.kind.as_str() {
            "dot-interaction" => {
                reject("heads", self.heads.is_some())?;
                reject("ffn_width", self.ffn_width.is_some())?;
                reject("channels", self.channels.is_some())?;
                reject("kernel", self.kernel.is_some())?;
                ModuleSpec::DotInteraction { l: self.l }
            }
            "self-attention" => {
                reject("channels", self.channels.is_some())?;
                reject("kernel", self.kernel.is_some())?;
                ModuleSpec::SelfAttention {
                    l: self.l,
                    heads: self.heads.unwrap_or(2),
                    ffn_width: self.ffn_width,
                }
            }
            "convolution" => {
                reject("heads", self.heads.is_some())?;
                reject("ffn_width", self.ffn_width.is_some())?;
                ModuleSpec::Convolution {
                    l: self.l,
                    channels: self.channels.unwrap_or(4),
                    kernel: self.kernel.unwrap_or(3),
                }
            }
            "linear" => {
                reject("heads", self.heads.is_some())?;
                reject("ffn_width", self.ffn_width.is_some())?;
                reject("channels", self.channels.is_some())?;
                reject("kernel", self.kernel.is_some())?;
                ModuleSpec::Linear { l: self.l }
            }
            "cross-net" => {
                reject("heads", self.heads.is_some())?;
                reject("ffn_width", self.ffn_width.is_some())?;
                reject("channels", self.channels.is_some())?;
                reject("kernel", self.kernel.is_some())?;
                ModuleSpec::CrossNet { l: self.l }
            }
            other => {
                return Err(CliError::Config(format!("{at}: unknown module kind '{other}'")))
            }
        };
        Ok(spec)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSection {
    pub hidden: Option<Vec<usize>>,
    pub bias_only: Option<bool>,
}

impl HeadSection {
    fn to_core(&self) -> HeadSpec {
        HeadSpec {
            hidden: self.hidden.clone().unwrap_or_else(|| vec![64]),
            bias_only: self.bias_only.unwrap_or(false),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub eval_cadence: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub n_train: usize,
    pub n_eval: usize,
    pub temperature: f64,
    pub dense_coefficient: Option<f64>,
    #[serde(default)]
    pub terms: Vec<TermSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSection {
    /// Sparse field names, by declaration name.
    pub fields: Vec<String>,
    pub coefficient: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    pub hosts: Option<usize>,
    pub gpus_per_host: Option<usize>,
    pub hbm_bytes: Option<f64>,
    pub gpu_peak_flops: Option<f64>,
    pub efficiency: Option<f64>,
    pub intra_host_bandwidth: Option<f64>,
    pub intra_host_latency: Option<f64>,
    pub cross_host_bandwidth: Option<f64>,
    pub cross_host_latency: Option<f64>,
}

impl ClusterSection {
    fn to_core(&self) -> ClusterSpec {
        let d = ClusterSpec::default();
        ClusterSpec {
            hosts: self.hosts.unwrap_or(d.hosts),
            gpus_per_host: self.gpus_per_host.unwrap_or(d.gpus_per_host),
            hbm_bytes: self.hbm_bytes.unwrap_or(d.hbm_bytes),
            gpu_peak_flops: self.gpu_peak_flops.unwrap_or(d.gpu_peak_flops),
            efficiency: self.efficiency.unwrap_or(d.efficiency),
            intra_host_bandwidth: self.intra_host_bandwidth.unwrap_or(d.intra_host_bandwidth),
            intra_host_latency: self.intra_host_latency.unwrap_or(d.intra_host_latency),
            cross_host_bandwidth: self.cross_host_bandwidth.unwrap_or(d.cross_host_bandwidth),
            cross_host_latency: self.cross_host_latency.unwrap_or(d.cross_host_latency),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParadigmSection {
    pub kind: Option<ParadigmKind>,
    pub activation_checkpointing: Option<bool>,
    pub cpu_offload: Option<bool>,
    pub collective_bytes: Option<f64>,
    pub embedding_bytes: Option<f64>,
    pub prefetch: Option<bool>,
    pub global_batch: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSection {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub dtype_bytes: Option<usize>,
    pub pooled_lookups: Option<f64>,
}

impl TableSection {
    fn to_core(&self) -> TableSpec {
        TableSpec {
            name: self.name.clone(),
            rows: self.rows,
            cols: self.cols,
            dtype_bytes: self.dtype_bytes.unwrap_or(4),
            pooled_lookups: self.pooled_lookups.unwrap_or(1.0),
        }
    }
}
