//! Neural pathway: a symmetric-initialised ReLU network, its gradient
//! feature map, the NTK gram matrix and neural arm elimination.

mod eliminate;
mod network;
mod ntk;

use thiserror::Error;

pub use eliminate::{
    gradient_features, neural_eliminate, prepare_inputs, GradientFeatures, NeuralConfig,
    NeuralSchedule, TheorySchedule, EPS_BAR_GRID,
};
pub use network::{
    forward, forward_batch, grad_param, gradient_gram, init_params, param_count,
    regularized_loss, train_gradient_descent, NetworkParams, TrainingRun, TrainingSet,
    DIVERGENCE_FACTOR, INIT_STREAM,
};
pub use ntk::{neural_effective_dimension, ntk_entry, ntk_gram, tail_dimension, NtkEntry, NtkGram};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("network width {0} must be even and positive")]
    OddWidth(usize),
    #[error("input dimension {0} must be even and positive")]
    OddDim(usize),
    #[error("depth {0} must be at least 2")]
    InvalidDepth(usize),
    #[error("arm {arm} has norm {norm}, expected 1")]
    NotUnitNorm { arm: usize, norm: f64 },
    #[error("arm {0} has zero features")]
    ZeroArm(usize),
    #[error("gram matrix is not PSD: min eigenvalue {min:e}, max {max:e}")]
    NotPsd { min: f64, max: f64 },
    #[error("gradient descent diverged at step {step}: loss {loss:e} from {initial:e}")]
    Diverged { step: usize, loss: f64, initial: f64 },
    #[error("invalid neural configuration: {0}")]
    InvalidConfig(String),
}
