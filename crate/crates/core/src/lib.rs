//! Magnitude-based pruning laboratory for a 1D convolutional heartbeat
//! classifier: a small deterministic training engine, the baseline network,
//! three pruning strategies, metrics and FLOPs accounting.

pub mod dataset;
pub mod error;
pub mod flops;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod pruning;
pub mod report;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use mask::PruneMask;
pub use model::{Gradients, LayerKind, LayerParams, LayerSpec, Model, Trace, BEAT_LEN, NUM_CLASSES};
pub use optim::{OptimizerState, UpdateRule};
pub use pruning::Strategy;
pub use tensor::Tensor;
