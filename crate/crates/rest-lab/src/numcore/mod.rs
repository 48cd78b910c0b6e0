//! Minimal dense-tensor numerical core: f32 tensors, a fixed primitive
//! vocabulary with reverse-mode differentiation, SGD/Adam updates and a
//! binary checkpoint format.

mod optim;
mod tape;
mod tensor;

pub mod checkpoint;

pub use optim::{Optimizer, OptimizerKind};
pub use tape::{Tape, TensorRef};
pub use tensor::{ParamSet, Parameter, Tensor};

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: String, detail: String },
    #[error("loss must be scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("tape already consumed by a backward pass")]
    TapeConsumed,
    #[error("backward has not been run on this tape")]
    BackwardNotRun,
    #[error("missing gradient for parameter '{name}'")]
    MissingGrad { name: String },
    #[error("non-finite values in {context}")]
    NonFinite { context: String },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad checkpoint {path}: {detail}")]
    Checkpoint { path: String, detail: String },
}

/// Kaiming-style uniform init: values in [-sqrt(6/fan_in), sqrt(6/fan_in)].
pub fn kaiming_uniform(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / fan_in.max(1) as f32).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("consistent shape")
}
