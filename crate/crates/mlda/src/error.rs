//! Error taxonomy: configuration errors (bad setup), numerical errors
//! (factorization/solver failures), and forward-evaluation errors that carry
//! the offending parameter vector for post-mortem.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MldaError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("numerical failure in {context}: {message}")]
    Numerical { context: &'static str, message: String },

    #[error("forward evaluation failed at level {level}: {message} (theta = {theta:?})")]
    Evaluation {
        level: usize,
        message: String,
        theta: Vec<f64>,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl MldaError {
    pub fn config(msg: impl Into<String>) -> Self {
        MldaError::Config(msg.into())
    }

    pub fn numerical(context: &'static str, msg: impl Into<String>) -> Self {
        MldaError::Numerical {
            context,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, MldaError>;
