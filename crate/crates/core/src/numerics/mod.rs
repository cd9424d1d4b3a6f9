//! Dense 64-bit linear algebra with a reverse-mode tape, the GRU cell, the
//! Adadelta optimizer and a finite-difference gradient checker.

mod adadelta;
mod gradcheck;
mod gru;
mod matrix;
mod params;
mod tape;

pub use adadelta::{adadelta_update, DEFAULT_EPS, DEFAULT_RHO};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, REL_ERR_FLOOR};
pub use gru::{gru_step, GruParams, GruVars};
pub use matrix::Matrix;
pub use params::{Param, ParamId, ParamStore};
pub use tape::{
    kl_divergence, linear, log_softmax, sigmoid, sigmoid_vec, softmax, tanh_vec, Tape, Var,
    PROB_FLOOR,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),
    #[error("parameter {0} already exists")]
    DuplicateParam(String),
    #[error("parameter {0} not found")]
    MissingParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
