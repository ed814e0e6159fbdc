// SPDX-License-Identifier: Apache-2.0 OR MIT

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("iteration diverged: {0}")]
    Divergence(String),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("outside admissible regime: {0}")]
    Regime(String),
    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("norm blow-up: {0}")]
    Blowup(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
