//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by tensor construction and tape operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("lookup into table '{table}': id {id} out of range (rows = {rows})")]
    IndexOutOfRange {
        table: String,
        id: usize,
        rows: usize,
    },

    #[error("backward: loss node has shape {shape:?}, expected a scalar")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("node id {id} is not on the tape (len = {len})")]
    UnknownNode { id: usize, len: usize },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },
}

/// Errors raised while building or running a model.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    BadSpec(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Errors raised by the training loop and metrics.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("normalized entropy undefined: empirical CTR is {ctr} (all labels equal)")]
    DegenerateLabels { ctr: f64 },

    #[error("invalid synthetic-data spec: {0}")]
    BadSpec(String),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Errors raised by the sharding planner.
#[derive(Debug, Error)]
pub enum PlanError {
    #[error("table '{table}' has {cols} columns, cannot split into {shards} shards")]
    UnsplittableTable {
        table: String,
        cols: usize,
        shards: usize,
    },

    #[error("exhaustive search refused: {devices}^{shards} assignments exceed guard of {guard}")]
    InstanceTooLarge {
        devices: usize,
        shards: usize,
        guard: u64,
    },

    #[error("invalid planner input: {0}")]
    BadInput(String),
}

/// Errors raised by the distributed-training simulator.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("placement does not cover table '{table}'")]
    PlanMismatch { table: String },

    #[error("reports are not comparable: {0}")]
    ConfigMismatch(String),

    #[error("invalid simulator input: {0}")]
    BadInput(String),
}
