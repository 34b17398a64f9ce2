use thiserror::Error;

/// Errors raised by the finite element, linear algebra and solver layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("interpolation produced a non-finite value at node {node} ({x}, {y})")]
    Interpolation { node: usize, x: f64, y: f64 },

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("trapping condition violated: min_x [V(x) - (1+K)/4 Omega^2 |x|^2] = {margin:.6e} < 0 (K = {k})")]
    Admissibility { margin: f64, k: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("linear solve did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    Convergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("eigensolver did not converge: {converged} of {requested} pairs below tolerance (worst residual {worst_residual:.3e})")]
    EigenConvergence {
        requested: usize,
        converged: usize,
        worst_residual: f64,
        partial: Vec<(f64, Vec<f64>)>,
    },

    #[error("degenerate constraint set: {0}")]
    Constraint(String),

    #[error("degenerate iterate: (u, A^-1 u) = {0:.3e} is not positive")]
    DegenerateIterate(f64),

    #[error("step policy rejected: {0}")]
    Policy(String),

    #[error("energy increased by {increase:.3e} at iteration {iteration} with admissible step {tau}")]
    Dissipation {
        iteration: usize,
        tau: f64,
        increase: f64,
    },

    #[error("phase undefined: |theta| = {0:.3e}")]
    PhaseDegenerate(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
