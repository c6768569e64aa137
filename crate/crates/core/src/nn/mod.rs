//! Tensors, tape-based reverse-mode differentiation, layers, initializers,
//! losses and the SGD/ASGD optimizer.

pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod loss;
mod math;
pub mod param;
mod recurrent;
pub mod tape;
pub mod tensor;

pub use init::{seeded_rng, Initializer};
pub use layers::{
    dense_forward, gru_sequence, gru_states, gru_step, Activation, DenseParams, GruParams,
};
pub use loss::{
    l2_activation_penalty, loss_mae, loss_quadratic, loss_smape, loss_ssmape, LossKind,
};
pub use param::{ParamId, ParamSet, Parameter};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad shape {0:?}: expected [in, out]")]
    BadShape(Vec<usize>),
    #[error("tensor entries must be finite")]
    NonFinite,
    #[error("loss node must be scalar, got shape {0:?}")]
    NotScalarLoss(Vec<usize>),
    #[error("SMAPE term {0} has |F| + |A| = 0")]
    DivisionByZeroTerm(usize),
    #[error("optimizer step without a preceding backward pass")]
    StaleGradient,
    #[error("parameter {0} has no running average yet")]
    NoAverageAvailable(String),
    #[error("unknown initializer {0:?}")]
    UnknownInitializer(String),
    #[error("unknown activation {0:?}")]
    UnknownActivation(String),
    #[error("unknown loss {0:?}")]
    UnknownLoss(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
}
