//! Training, evaluation, planning and benchmarking on top of the world models
//! and the gridworld datasets, plus the `pswm` command line.

pub mod bench;
pub mod config;
pub mod data;
pub mod eval;
pub mod image;
pub mod model;
pub mod mpc;
pub mod train;

pub use config::{Family, RunConfig, Schedule, TrainConfig};
pub use data::EpisodeSet;
pub use model::AnyModel;

/// Errors, grouped by the process exit code they map to.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl HarnessError {
    /// 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 1,
            HarnessError::Data(_) => 2,
            HarnessError::Numeric(_) => 3,
        }
    }
}

impl From<pswm_envs::EnvError> for HarnessError {
    fn from(e: pswm_envs::EnvError) -> Self {
        match e {
            pswm_envs::EnvError::InvalidParam(m) => HarnessError::Usage(m),
            other => HarnessError::Data(other.to_string()),
        }
    }
}

impl From<pswm_core::Error> for HarnessError {
    fn from(e: pswm_core::Error) -> Self {
        use pswm_core::Error as E;
        match e {
            E::NonFiniteGradient(_) | E::NonFiniteLr(_) | E::NonFiniteLoss { .. } | E::Singular(_) => {
                HarnessError::Numeric(e.to_string())
            }
            E::Io(_) | E::Checkpoint(_) => HarnessError::Data(e.to_string()),
            _ => HarnessError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Data(e.to_string())
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
