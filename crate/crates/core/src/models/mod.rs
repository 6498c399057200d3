//! The benchmark coupled systems: a thermal-neutronics pair discretized with
//! bilinear finite elements, a Boussinesq natural-convection pair discretized
//! with a collocated finite-volume scheme, their manufactured-solution
//! variants, and a small synthetic linear model used by consistency tests.

pub mod boussinesq;
pub mod fem;
pub mod mms;
pub mod synthetic;
pub mod thermal_neutronics;

pub use boussinesq::{Boussinesq, BoussinesqParams};
pub use synthetic::{SyntheticLinear, SyntheticParams};
pub use thermal_neutronics::{ThermalNeutronics, TnParams};

use nalgebra::DVector;

/// Converged output of a deterministic modular solve at one realization.
#[derive(Debug, Clone)]
pub struct DetSolution {
    pub u1: DVector<f64>,
    pub u2: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Deterministic per-realization solver interface, used by the Monte-Carlo
/// oracle and the manufactured-solution studies.
pub trait DeterministicModel: Sync {
    /// (s1, s2)
    fn input_dims(&self) -> (usize, usize);
    /// (n1, n2)
    fn state_dims(&self) -> (usize, usize);
    fn solve_deterministic(
        &self,
        xi1: &[f64],
        xi2: &[f64],
        eps: f64,
        max_iter: usize,
    ) -> crate::Result<DetSolution>;
}
