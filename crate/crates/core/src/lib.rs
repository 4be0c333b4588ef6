//! DHEN: a stacked hierarchical ensemble of heterogeneous feature-interaction
//! modules for CTR prediction, together with an analytical planner and
//! simulator for its distributed training (embedding sharding, DP / FSDP /
//! HSDP paradigms with byte, time, and memory models).
//!
//! All model math runs in 64-bit floats on a tape-based reverse-mode autodiff
//! substrate; reduced precision appears only as stochastic-rounding emulation
//! and as byte widths inside the simulator.

pub mod collective;
pub mod ensemble;
pub mod error;
pub mod fdiff;
pub mod features;
pub mod interaction;
pub mod rounding;
pub mod sharding;
pub mod sim;
pub mod tape;
pub mod tensor;
pub mod training;

/// Epsilon added to the variance in every layer normalization.
pub const LAYER_NORM_EPSILON: f64 = 1e-5;

pub use error::{ModelError, PlanError, SimError, TensorError, TrainError};
pub use tape::{NodeId, Param, ParamId, ParamStore, Tape};
pub use tensor::Tensor;
