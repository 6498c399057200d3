//! Intrusive spectral projection (stochastic Galerkin) uncertainty propagation
//! for two-module coupled PDE systems, in both its standard form and a reduced
//! form that compresses the stochastic input data exchanged between modules.
//!
//! The crate is organised around the propagation pipeline:
//!
//! * [`orthopoly`] — univariate orthonormal polynomials and Gauss rules,
//! * [`basis`] — total-degree multi-index sets, the global/modular basis split
//!   and the sparse coupling matrices built from it,
//! * [`quadrature`] — tensor-product rules and pivoted-QR weight compression,
//! * [`randfield`] — truncated Karhunen-Loeve expansions of the uncertain
//!   model coefficients,
//! * [`dimreduce`] / [`ordreduce`] — dimension and order reduction of the
//!   per-module input data,
//! * [`galerkin`] — the block Gauss-Seidel drivers for the standard and
//!   reduced propagation loops,
//! * [`models`] — the thermal-neutronics and Boussinesq benchmark systems,
//! * [`analysis`] — moments, sensitivity indices, surrogate sampling and the
//!   Monte-Carlo reference oracle.

pub mod analysis;
pub mod basis;
pub mod dimreduce;
pub mod galerkin;
pub mod linalg;
pub mod models;
pub mod ordreduce;
pub mod orthopoly;
pub mod quadrature;
pub mod randfield;

pub use basis::{BasisSplit, MultiIndexSet, PiMatrix};
pub use dimreduce::{ReducedExpansion, StackedInput};
pub use galerkin::{CoupledModel, ErrorLedger, Gramian, ModuleOperator, PropagationResult};
pub use ordreduce::{ReducedBasis, ReducedCoeffMatrix};
pub use orthopoly::{GaussRule1D, PolyFamily};
pub use quadrature::{SparseRule, TensorRule};
pub use randfield::KlField;

/// Version tag for the canonical basis ordering used in file outputs.
///
/// Bump only if the graded/reverse-lexicographic column contract changes.
pub const BASIS_ORDERING_VERSION: &str = "graded-revlex-v1";

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("polynomial degree {degree} exceeds family max degree {max_degree}")]
    DegreeOutOfRange { degree: usize, max_degree: usize },
    #[error("tensor rule too large: {size} nodes exceeds cap {cap}")]
    RuleTooLarge { size: usize, cap: usize },
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("samples do not match sparse-rule support (node {node})")]
    SupportMismatch { node: usize },
    #[error("linear solve failed: {context}")]
    SingularSystem { context: String },
    #[error("iterative solve did not converge: {context} (residual {residual:.3e})")]
    SolveNotConverged { context: String, residual: f64 },
    #[error("module {module} solve failed at node {node}: {source}")]
    ModuleSolve {
        module: usize,
        node: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
