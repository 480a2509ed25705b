//! Finite element solver for fully nonlinear Hamilton-Jacobi-Bellman-Isaacs
//! (HJBI) equations on the periodic unit cell, with discontinuous Galerkin
//! and C0 interior penalty discretizations.
//!
//! The discrete nonlinear systems are solved by Howard-type policy iteration
//! over finite control grids. On top of the periodic solver sits a
//! numerical-homogenization driver that approximates effective Hamiltonians
//! of ergodic HJBI operators through cell problems with vanishing
//! zeroth-order regularization.
//!
//! Modules, roughly bottom-up:
//!
//! - [`mesh`]: uniform triangulations of the unit cell with periodically
//!   paired boundary faces.
//! - [`quad`]: Gauss quadrature on the reference triangle and edge.
//! - [`space`]: degree-`p` Lagrange spaces, discontinuous or C0-periodic,
//!   with evaluation up to second derivatives and face traces.
//! - [`problem`]: HJBI coefficient data, the Cordes condition, the
//!   renormalization `gamma`, and pointwise inf-sup evaluation.
//! - [`assembly`]: residuals, stabilization and jump-penalty forms, and the
//!   policy-linearized sparse systems.
//! - [`solver`]: Howard iteration and the sparse linear solver.
//! - [`analysis`]: broken H2-type norms, jump seminorms, the a posteriori
//!   estimator, and convergence tables.
//! - [`homogenization`]: cell problems and effective-Hamiltonian sweeps.
//! - [`run`]: the experiment front end used by the `hjbi` binary.

pub mod algebra;
pub mod analysis;
pub mod assembly;
pub mod circulant;
pub mod homogenization;
pub mod mesh;
pub mod problem;
pub mod quad;
pub mod run;
pub mod solver;
pub mod space;

pub use algebra::SymMat2;
pub use assembly::{AssembledSystem, CsrMatrix, SchemeParams};
pub use mesh::{Face, FaceKind, PeriodicMesh};
pub use problem::{ControlGrid, CordesReport, HJBIProblem, PointEval};
pub use quad::QuadratureRule;
pub use solver::SolveReport;
pub use space::{Continuity, DiscreteFunction, FESpace};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown problem: {0}")]
    UnknownProblem(String),
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
    #[error("nonlinear solve failed: {0}")]
    NonConvergence(String),
    #[error("Cordes condition violated: {0}")]
    CordesViolation(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
