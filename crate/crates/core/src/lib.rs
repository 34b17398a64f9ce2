//! Finite element discretization and energy-adaptive Riemannian gradient
//! solver for ground states of rotating Bose-Einstein condensates.
//!
//! Layout of the crate, bottom up:
//!
//! * [`mesh`]: structured P1 triangulation and quadrature.
//! * [`state`]: complex P1 functions in interleaved real coefficient form.
//! * [`sparse`], [`linalg`]: CSR matrices, conjugate gradients and a
//!   constrained symmetric eigensolver.
//! * [`forms`]: energy, mass and quartic-weight matrices.
//! * [`solver`]: the gradient method, its exact line search, the H1-metric
//!   comparison method and the phase-locked auxiliary iteration.
//! * [`spectral`]: linearized-operator and Hessian spectra, the weighted
//!   eigenproblem and contraction constants.
//! * [`checks`]: measured defects of the exact identities and symmetries.

pub mod checks;
pub mod error;
pub mod forms;
pub mod linalg;
pub mod mesh;
pub mod solver;
pub mod sparse;
pub mod spectral;
pub mod state;

pub use error::{Error, Result};
pub use forms::{assemble_base, FormSet, LineCoeffs, ModelParams, Potential};
pub use mesh::{build_mesh, interpolate, Mesh, Quadrature};
pub use state::State;
