//! Policy-gradient and asynchronous actor-critic agents for a pixel Pong
//! clone, with the neural-network code, analysis tools and command-line
//! plumbing they need.

pub mod a3c;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod eval;
pub mod introspect;
pub mod nn;
pub mod pg;
pub mod scores;
pub mod seed;
pub mod task;

use thiserror::Error;

/// Any failure surfaced by the command-line tool.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Env(#[from] env::EnvError),
    #[error(transparent)]
    Nn(#[from] nn::NnError),
    #[error(transparent)]
    Pg(#[from] pg::PgError),
    #[error(transparent)]
    A3c(#[from] a3c::A3cError),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error(transparent)]
    Introspect(#[from] introspect::IntrospectError),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("{0}")]
    Runtime(String),
}

impl Error {
    /// 2 for configuration problems, 3 for everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Pg(pg::PgError::Hyper { .. } | pg::PgError::Mismatch(_)) => 2,
            Error::A3c(a3c::A3cError::Config(_)) => 2,
            Error::Checkpoint(checkpoint::CheckpointError::ArchitectureMismatch { .. }) => 2,
            _ => 3,
        }
    }
}
