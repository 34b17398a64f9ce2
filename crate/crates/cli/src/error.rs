use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("state file {}: {reason}", path.display())]
    StateFile { path: PathBuf, reason: String },

    #[error("not converged: {0}")]
    NotConverged(String),

    #[error("invariant failure: {0}")]
    Invariant(String),

    #[error(transparent)]
    Core(#[from] rgpe_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use rgpe_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Io { .. } | CliError::StateFile { .. } => EXIT_CONFIG,
            CliError::NotConverged(_) => EXIT_CONVERGENCE,
            CliError::Invariant(_) => EXIT_INVARIANT,
            CliError::Core(e) => match e {
                E::InvalidMesh(_)
                | E::InvalidParams(_)
                | E::Admissibility { .. }
                | E::Policy(_)
                | E::Dimension { .. }
                | E::Interpolation { .. } => EXIT_CONFIG,
                E::Convergence { .. } | E::EigenConvergence { .. } | E::DegenerateIterate(_) => EXIT_CONVERGENCE,
                E::Constraint(_) | E::Dissipation { .. } | E::PhaseDegenerate(_) => EXIT_INVARIANT,
            },
        }
    }
}
