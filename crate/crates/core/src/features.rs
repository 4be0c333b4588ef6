//! Feature processing: sparse lookup tables for categorical fields, a dense
//! MLP arch for numerical features, and their assembly into the initial
//! embedding list `X_0` of shape `[B, m, d]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, TensorError};
use crate::tape::{NodeId, ParamId, ParamStore, Tape};
use crate::tensor::Tensor;

/// One categorical field and the size of its id space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparseFieldSpec {
    pub name: String,
    pub cardinality: usize,
}

/// Declarative description of the feature processing layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Shared embedding dimension `d`.
    pub embedding_dim: usize,
    pub sparse: Vec<SparseFieldSpec>,
    /// Width of the raw numerical feature vector.
    pub dense_width: usize,
    /// Hidden widths of the dense arch; the output width is always `d`.
    #[serde(default)]
    pub dense_hidden: Vec<usize>,
}

impl FeatureConfig {
    /// Token count of `X_0`: one embedding per sparse field plus one for the
    /// dense arch output.
    pub fn token_count(&self) -> usize {
        self.sparse.len() + 1
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embedding_dim == 0 {
            return Err(ModelError::BadSpec("embedding_dim must be positive".into()));
        }
        if self.dense_width == 0 {
            return Err(ModelError::BadSpec("dense_width must be positive".into()));
        }
        for f in &self.sparse {
            if f.cardinality == 0 {
                return Err(ModelError::BadSpec(format!(
                    "sparse field '{}' has zero cardinality",
                    f.name
                )));
            }
        }
        Ok(())
    }
}

/// A trainable lookup table mapping categorical ids to `d`-vectors.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub name: String,
    pub rows: usize,
    pub dim: usize,
    pub values: ParamId,
}

impl EmbeddingTable {
    /// Rows initialized uniformly in `[-1/sqrt(d), 1/sqrt(d)]`.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        rows: usize,
        dim: usize,
    ) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let data: Vec<f64> = (0..rows * dim).map(|_| rng.gen_range(-bound..bound)).collect();
        let values = store.add(name, Tensor::new(vec![rows, dim], data).expect("sized"));
        Self {
            name: name.to_string(),
            rows,
            dim,
            values,
        }
    }

    /// Sum-pooled lookup of per-sample id lists; `[B, d]` output.
    pub fn lookup(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ids: &[Vec<usize>],
    ) -> Result<NodeId, TensorError> {
        tape.lookup(store, self.values, ids)
    }
}

/// MLP over the raw numerical features, relu between hidden layers, linear
/// output of width `d`.
#[derive(Debug, Clone)]
pub struct DenseArch {
    pub input_width: usize,
    pub output_width: usize,
    layers: Vec<(ParamId, ParamId)>,
}

/// Initialize an MLP weight `[fan_in, fan_out]` uniformly in
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` with a zero bias.
pub(crate) fn init_linear<R: Rng>(
    store: &mut ParamStore,
    rng: &mut R,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) -> (ParamId, ParamId) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
    let w = store.add(
        format!("{name}.w"),
        Tensor::new(vec![fan_in, fan_out], data).expect("sized"),
    );
    let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
    (w, b)
}

impl DenseArch {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input_width: usize,
        hidden: &[usize],
        output_width: usize,
    ) -> Self {
        let mut layers = Vec::new();
        let mut fan_in = input_width;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(init_linear(store, rng, &format!("{name}.h{i}"), fan_in, h));
            fan_in = h;
        }
        layers.push(init_linear(store, rng, &format!("{name}.out"), fan_in, output_width));
        Self {
            input_width,
            output_width,
            layers,
        }
    }

    /// `[B, input_width] -> [B, output_width]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        dense: NodeId,
    ) -> Result<NodeId, TensorError> {
        if tape.shape(dense) != [tape.shape(dense)[0], self.input_width] {
            return Err(TensorError::ShapeMismatch {
                op: "dense-arch",
                lhs: tape.shape(dense).to_vec(),
                rhs: vec![tape.shape(dense)[0], self.input_width],
            });
        }
        let mut x = dense;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wn = tape.param(store, w);
            let bn = tape.param(store, b);
            let lin = tape.matmul(x, wn)?;
            let lin = tape.add_bias(lin, bn)?;
            x = if i < last { tape.relu(lin) } else { lin };
        }
        Ok(x)
    }
}

/// One batch of raw features: per-field categorical id lists and a dense
/// vector per sample.
#[derive(Debug, Clone)]
pub struct FeatureBatch {
    /// `sparse_ids[field][sample]` is that sample's (possibly multi-hot) ids.
    pub sparse_ids: Vec<Vec<Vec<usize>>>,
    /// `[B, dense_width]`.
    pub dense: Tensor,
}

impl FeatureBatch {
    pub fn len(&self) -> usize {
        self.dense.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self, config: &FeatureConfig) -> Result<(), ModelError> {
        let b = self.len();
        if self.sparse_ids.len() != config.sparse.len() {
            return Err(ModelError::BadSpec(format!(
                "batch has {} sparse fields, config declares {}",
                self.sparse_ids.len(),
                config.sparse.len()
            )));
        }
        if self.dense.shape()[1] != config.dense_width {
            return Err(ModelError::BadSpec(format!(
                "dense width {} does not match config {}",
                self.dense.shape()[1],
                config.dense_width
            )));
        }
        for (field, ids) in self.sparse_ids.iter().enumerate() {
            if ids.len() != b {
                return Err(ModelError::BadSpec(format!(
                    "field {field} has {} samples, dense has {b}",
                    ids.len()
                )));
            }
            let rows = config.sparse[field].cardinality;
            for sample in ids {
                if let Some(&bad) = sample.iter().find(|&&id| id >= rows) {
                    return Err(ModelError::Tensor(TensorError::IndexOutOfRange {
                        table: config.sparse[field].name.clone(),
                        id: bad,
                        rows,
                    }));
                }
            }
        }
        Ok(())
    }

    /// The sub-batch `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> FeatureBatch {
        let sparse_ids = self
            .sparse_ids
            .iter()
            .map(|field| field[start..start + len].to_vec())
            .collect();
        let f = self.dense.shape()[1];
        let dense = Tensor::new(
            vec![len, f],
            self.dense.data()[start * f..(start + len) * f].to_vec(),
        )
        .expect("sized");
        FeatureBatch { sparse_ids, dense }
    }
}

/// An ordered list of `m` embeddings of dimension `d` per sample, the value
/// flowing between stacked layers.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBundle {
    pub count: usize,
    pub dim: usize,
    tensor: Tensor,
}

impl EmbeddingBundle {
    pub fn from_tensor(tensor: Tensor) -> Result<Self, TensorError> {
        if tensor.rank() != 3 {
            return Err(TensorError::InvalidArgument {
                op: "embedding-bundle",
                reason: format!("expected [B, m, d], got {:?}", tensor.shape()),
            });
        }
        Ok(Self {
            count: tensor.shape()[1],
            dim: tensor.shape()[2],
            tensor,
        })
    }

    pub fn batch(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    /// Embedding `token` of sample `sample`.
    pub fn embedding(&self, sample: usize, token: usize) -> &[f64] {
        let (m, d) = (self.count, self.dim);
        &self.tensor.data()[(sample * m + token) * d..(sample * m + token) * d + d]
    }
}

/// Stack per-field `[B, d]` outputs (sparse fields in declaration order, the
/// dense output last) into `[B, m, d]`.
pub fn assemble_x0(
    tape: &mut Tape,
    sparse_outputs: &[NodeId],
    dense_output: NodeId,
) -> Result<NodeId, TensorError> {
    let (b, d) = {
        let s = tape.shape(dense_output);
        (s[0], s[1])
    };
    let mut parts = Vec::with_capacity(sparse_outputs.len() + 1);
    for &node in sparse_outputs.iter().chain(std::iter::once(&dense_output)) {
        let s = tape.shape(node);
        if s != [b, d] {
            return Err(TensorError::ShapeMismatch {
                op: "assemble-x0",
                lhs: s.to_vec(),
                rhs: vec![b, d],
            });
        }
        parts.push(tape.reshape(node, &[b, 1, d])?);
    }
    tape.concat(&parts, 1)
}

/// The materialized feature processing layer of one model instance.
#[derive(Debug, Clone)]
pub struct FeatureProcessor {
    pub tables: Vec<EmbeddingTable>,
    pub dense: DenseArch,
    pub dim: usize,
}

impl FeatureProcessor {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, config: &FeatureConfig) -> Self {
        let d = config.embedding_dim;
        let tables = config
            .sparse
            .iter()
            .map(|f| EmbeddingTable::init(store, rng, &f.name, f.cardinality, d))
            .collect();
        let dense = DenseArch::init(store, rng, "dense_arch", config.dense_width, &config.dense_hidden, d);
        Self {
            tables,
            dense,
            dim: d,
        }
    }

    pub fn token_count(&self) -> usize {
        self.tables.len() + 1
    }

    /// `X_0` for a batch: `[B, m, d]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &FeatureBatch,
    ) -> Result<NodeId, TensorError> {
        let mut sparse_outputs = Vec::with_capacity(self.tables.len());
        for (table, ids) in self.tables.iter().zip(&batch.sparse_ids) {
            sparse_outputs.push(table.lookup(tape, store, ids)?);
        }
        let dense_in = tape.constant(batch.dense.clone());
        let dense_out = self.dense.forward(tape, store, dense_in)?;
        assemble_x0(tape, &sparse_outputs, dense_out)
    }
}
