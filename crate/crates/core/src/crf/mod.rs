//! Linear-chain conditional random fields.
//!
//! Scores are `Σ_t [start/transition(y_{t-1}, y_t) + Σ_{f ∈ x_t} w(f, y_t)] + end(y_T)`.
//! Inference runs in log space. Allowed transitions are given by a
//! [`TransitionMask`]; masked paths have probability exactly zero.

mod alphabet;
mod inference;
mod model;
mod objective;
mod train;

#[cfg(test)]
pub(crate) mod brute;

pub use alphabet::Alphabet;
pub use inference::{
    constrained_forward_backward, forward_backward, path_score, viterbi, Marginals,
};
pub use model::{CrfModel, LabelConstraint, ObservationSequence, TransitionMask};
pub use objective::{loglik_grad_marginal, loglik_grad_observed};
pub use train::{train, CrfConfig, MaskKind, TrainMode, TrainReport, TrainingSequence};
