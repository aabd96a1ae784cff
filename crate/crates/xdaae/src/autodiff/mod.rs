//! Reverse-mode autodiff core: graph, layer primitives, optimizer and the
//! finite-difference checker.

mod conv;
pub mod gradcheck;
mod graph;
pub mod linalg;
mod optim;
mod params;

pub use gradcheck::gradient_check;
pub use graph::{BatchStats, Graph, Scalar, TensorRef};
pub use optim::{Adam, AdamConfig, AdamSlot};
pub use params::{apply_bn_updates, BnMode, BnUpdate, Entry, Fwd, ParamStore};

/// Clipping applied to every log argument in the losses.
pub const LOG_EPS: f64 = 1e-7;
/// Batch-norm variance epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics momentum for batch norm.
pub const BN_MOMENTUM: f32 = 0.9;
