//! Steady thermal-neutronics benchmark: temperature and neutron flux on the
//! unit square with homogeneous Neumann conditions, coupled through a
//! fission term and a temperature-dependent diffusivity, discretized with
//! bilinear finite elements.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::basis::total_degree_set;
use crate::galerkin::{solve_modular_galerkin, CoupledModel, Gramian, ModuleOperator};
use crate::linalg::{Banded, BandedLu, Csr};
use crate::models::fem::FemGrid;
use crate::models::mms;
use crate::models::{DetSolution, DeterministicModel};
use crate::orthopoly::{build_family, Distribution};
use crate::quadrature::tensor_rule;
use crate::randfield::{build_field, KlField};
use crate::{Error, Result};

/// Clamp floor for the T + 1 argument of the square-root nonlinearities.
const TEMP_SHIFT_FLOOR: f64 = 1e-8;

#[inline]
fn sqrt_shift(t: f64) -> f64 {
    (t + 1.0).max(TEMP_SHIFT_FLOOR).sqrt()
}

/// Deterministic parameters of the thermal-neutronics problem.
#[derive(Debug, Clone)]
pub struct TnParams {
    pub m: usize,
    pub s1: usize,
    pub s2: usize,
    pub h_mean: f64,
    pub e_t: f64,
    pub sigma_mean: f64,
    pub s_phi: f64,
    pub delta_h: f64,
    pub delta_sigma: f64,
    pub l_h: f64,
    pub l_sigma: f64,
    pub mms: bool,
    pub identity_gramian: bool,
}

impl Default for TnParams {
    fn default() -> Self {
        TnParams {
            m: 21,
            s1: 3,
            s2: 3,
            h_mean: 17.0,
            e_t: 5.8,
            sigma_mean: 13.6,
            s_phi: 22.7,
            delta_h: 9.0,
            delta_sigma: 9.0,
            l_h: 0.15,
            l_sigma: 0.5,
            mms: false,
            identity_gramian: false,
        }
    }
}

/// Assembled thermal-neutronics model.
pub struct ThermalNeutronics {
    pub params: TnParams,
    pub grid: FemGrid,
    pub h_field: KlField,
    pub sigma_field: KlField,
    /// gauss-point coordinates in assembly order
    gp: Vec<[f64; 2]>,
    /// sqrt(3) * delta * gamma_k at gauss points, per transmittance mode
    h_gamma_gp: Vec<Vec<f64>>,
    /// same for the cross-section field
    sigma_gamma_gp: Vec<Vec<f64>>,
    /// temperature diffusion stiffness (coefficient one)
    pub k_t: Banded,
    /// transmittance mass operators: index 0 is the mean, then one per mode
    h_mass: Vec<Banded>,
    /// neutron source load vector
    s_phi_load: DVector<f64>,
}

impl ThermalNeutronics {
    pub fn new(params: TnParams) -> Self {
        let grid = FemGrid::new(params.m);
        let h_field = build_field(2, params.h_mean, params.delta_h, params.l_h, params.s1);
        let sigma_field = build_field(
            2,
            params.sigma_mean,
            params.delta_sigma,
            params.l_sigma,
            params.s2,
        );
        let gp = grid.gauss_points();
        let scale = 3f64.sqrt();
        let h_gamma_gp: Vec<Vec<f64>> = (0..params.s1)
            .map(|k| {
                gp.iter()
                    .map(|x| scale * params.delta_h * h_field.eval_coeff(k, x))
                    .collect()
            })
            .collect();
        let sigma_gamma_gp: Vec<Vec<f64>> = (0..params.s2)
            .map(|k| {
                gp.iter()
                    .map(|x| scale * params.delta_sigma * sigma_field.eval_coeff(k, x))
                    .collect()
            })
            .collect();
        let k_t = grid.stiffness(|_| 1.0);
        let mut h_mass = Vec::with_capacity(params.s1 + 1);
        h_mass.push(grid.mass(|_| params.h_mean));
        for k in 0..params.s1 {
            h_mass.push(grid.mass(|g| h_gamma_gp[k][g]));
        }
        let s_phi_load = if params.mms {
            DVector::zeros(grid.node_count())
        } else {
            grid.load(|_| params.s_phi)
        };
        ThermalNeutronics {
            params,
            grid,
            h_field,
            sigma_field,
            gp,
            h_gamma_gp,
            sigma_gamma_gp,
            k_t,
            h_mass,
            s_phi_load,
        }
    }

    pub fn node_count(&self) -> usize {
        self.grid.node_count()
    }

    /// H_T(x, xi_1) at gauss point `g`.
    fn h_coeff_gp(&self, g: usize, xi1: &[f64]) -> f64 {
        let mut v = self.params.h_mean;
        for (k, &x) in xi1.iter().enumerate() {
            v += self.h_gamma_gp[k][g] * x;
        }
        v
    }

    fn sigma_coeff_gp(&self, g: usize, xi2: &[f64]) -> f64 {
        let mut v = self.params.sigma_mean;
        for (k, &x) in xi2.iter().enumerate() {
            v += self.sigma_gamma_gp[k][g] * x;
        }
        v
    }

    /// K_T + H_T(xi_1), the temperature-module operator.
    pub fn module1_matrix(&self, xi1: &[f64]) -> Banded {
        let mut a = self.k_t.clone();
        a.axpy(1.0, &self.h_mass[0]);
        for (k, &x) in xi1.iter().enumerate() {
            a.axpy(x, &self.h_mass[k + 1]);
        }
        a
    }

    /// K_phi(T) + Sigma_phi(T, xi_2), the flux-module operator with the
    /// temperature interpolated at gauss points.
    pub fn module2_matrix(&self, t_gp: &[f64], xi2: &[f64]) -> Banded {
        let mut a = self.grid.stiffness(|g| sqrt_shift(t_gp[g]));
        let mass = self
            .grid
            .mass(|g| self.sigma_coeff_gp(g, xi2) / sqrt_shift(t_gp[g]));
        a.axpy(1.0, &mass);
        a
    }

    /// Fission-term action E_T(u1) u2 with T interpolated at gauss points.
    pub fn fission_action(&self, t_gp: &[f64], u2: &DVector<f64>) -> DVector<f64> {
        self.grid
            .mass_action(|g| self.params.e_t / sqrt_shift(t_gp[g]), u2)
    }

    fn mms_t_load(&self, xi1: &[f64]) -> DVector<f64> {
        self.grid.load(|g| {
            let x = &self.gp[g];
            mms::tn_f_t_star(x, self.h_coeff_gp(g, xi1), self.params.e_t)
        })
    }

    fn mms_phi_load(&self, xi2: &[f64]) -> DVector<f64> {
        self.grid
            .load(|g| mms::tn_f_phi_star(&self.gp[g], self.sigma_coeff_gp(g, xi2)))
    }

    fn module1_rhs(&self, u1: &DVector<f64>, u2: &DVector<f64>, xi1: &[f64]) -> DVector<f64> {
        let t_gp = self.grid.interpolate_at_gauss(u1);
        let mut rhs = self.fission_action(&t_gp, u2);
        if self.params.mms {
            rhs += self.mms_t_load(xi1);
        }
        rhs
    }

    fn module2_rhs(&self, xi2: &[f64]) -> DVector<f64> {
        if self.params.mms {
            self.s_phi_load.clone() + self.mms_phi_load(xi2)
        } else {
            self.s_phi_load.clone()
        }
    }

    /// Residual norms of the coupled algebraic system at a state pair.
    pub fn residuals(
        &self,
        u1: &DVector<f64>,
        u2: &DVector<f64>,
        xi1: &[f64],
        xi2: &[f64],
    ) -> (f64, f64) {
        let n = self.node_count();
        let a1 = self.module1_matrix(xi1);
        let mut a1u = vec![0.0; n];
        a1.matvec(u1.as_slice(), &mut a1u);
        let rhs1 = self.module1_rhs(u1, u2, xi1);
        let f1: f64 = a1u
            .iter()
            .zip(rhs1.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale1 = crate::linalg::norm2(&a1u).max(rhs1.norm()).max(1e-300);
        let t_gp = self.grid.interpolate_at_gauss(u1);
        let a2 = self.module2_matrix(&t_gp, xi2);
        let mut a2u = vec![0.0; n];
        a2.matvec(u2.as_slice(), &mut a2u);
        let rhs2 = self.module2_rhs(xi2);
        let f2: f64 = a2u
            .iter()
            .zip(rhs2.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale2 = crate::linalg::norm2(&a2u).max(rhs2.norm()).max(1e-300);
        (f1 / scale1, f2 / scale2)
    }

    /// Relative L2 error of a computed pair against the manufactured fields.
    pub fn mms_error(&self, u1: &DVector<f64>, u2: &DVector<f64>) -> f64 {
        let t_gp = self.grid.interpolate_at_gauss(u1);
        let phi_gp = self.grid.interpolate_at_gauss(u2);
        let w = self.grid.gauss_weight();
        let mut num = 0.0;
        let mut den = 0.0;
        for (g, x) in self.gp.iter().enumerate() {
            let ts = mms::tn_t_star(x);
            let ps = mms::tn_phi_star(x);
            num += w * ((ts - t_gp[g]).powi(2) + (ps - phi_gp[g]).powi(2));
            den += w * (ts * ts + ps * ps);
        }
        (num / den).sqrt()
    }

    /// FEM mass matrix as a dense Gramian (or identity when switched off).
    pub fn gramian(&self) -> Gramian {
        if self.params.identity_gramian {
            Gramian::identity(self.node_count())
        } else {
            let mass = self.grid.mass(|_| 1.0);
            Gramian::dense(mass.to_csr().to_dense())
        }
    }

    /// Builds the stochastic-Galerkin module operators and the coupled model.
    pub fn coupled_model(self: &Arc<Self>, p: usize, q: usize) -> Result<CoupledModel> {
        let family = build_family(Distribution::UniformSymmetric, p.max(1));
        let mod1 = total_degree_set(self.params.s1, p);
        let mod2 = total_degree_set(self.params.s2, p);
        let rule1 = tensor_rule(&family, self.params.s1, q)?;
        let rule2 = tensor_rule(&family, self.params.s2, q)?;
        let psi1: Vec<DVector<f64>> = rule1
            .iter_nodes()
            .map(|x| DVector::from_vec(mod1.eval_all(&family, x)))
            .collect();
        let psi2: Vec<DVector<f64>> = rule2
            .iter_nodes()
            .map(|x| DVector::from_vec(mod2.eval_all(&family, x)))
            .collect();
        // module-1 operator matrices are input independent: cache and factor
        let mut mats1 = Vec::with_capacity(rule1.len());
        let mut mean1 = Banded::zeros(self.node_count(), self.grid.bandwidth(), self.grid.bandwidth());
        for (node, &w) in rule1.iter_nodes().zip(rule1.weights.iter()) {
            let a = self.module1_matrix(node);
            mean1.axpy(w, &a);
            mats1.push(a.to_csr());
        }
        let mean1_lu = mean1.factor()?;
        let nodes1: Vec<Vec<f64>> = rule1.iter_nodes().map(|x| x.to_vec()).collect();
        let nodes2: Vec<Vec<f64>> = rule2.iter_nodes().map(|x| x.to_vec()).collect();
        let mean_det = self.solve_deterministic(
            &vec![0.0; self.params.s1],
            &vec![0.0; self.params.s2],
            1e-12,
            200,
        )?;
        let g = self.gramian();
        Ok(CoupledModel {
            op1: Box::new(TnModule1Op {
                model: Arc::clone(self),
                weights: rule1.weights.clone(),
                psi: psi1,
                nodes: nodes1,
                mats: mats1,
                mean_lu: mean1_lu,
            }),
            op2: Box::new(TnModule2Op {
                model: Arc::clone(self),
                weights: rule2.weights.clone(),
                psi: psi2,
                nodes: nodes2,
            }),
            g1: g.clone(),
            g2: g,
            s1: self.params.s1,
            s2: self.params.s2,
            mean_state1: mean_det.u1,
            mean_state2: mean_det.u2,
        })
    }
}

impl DeterministicModel for ThermalNeutronics {
    fn input_dims(&self) -> (usize, usize) {
        (self.params.s1, self.params.s2)
    }

    fn state_dims(&self) -> (usize, usize) {
        (self.node_count(), self.node_count())
    }

    /// Lagged-coefficient block Gauss-Seidel sweep over the two modules.
    fn solve_deterministic(
        &self,
        xi1: &[f64],
        xi2: &[f64],
        eps: f64,
        max_iter: usize,
    ) -> Result<DetSolution> {
        let n = self.node_count();
        let mut u1 = DVector::zeros(n);
        let mut u2 = DVector::zeros(n);
        let a1 = self.module1_matrix(xi1).factor()?;
        let mut iterations = 0;
        let mut converged = false;
        while iterations < max_iter {
            iterations += 1;
            let rhs1 = self.module1_rhs(&u1, &u2, xi1);
            u1 = DVector::from_vec(a1.solve(rhs1.as_slice()));
            let t_gp = self.grid.interpolate_at_gauss(&u1);
            let a2 = self.module2_matrix(&t_gp, xi2).factor()?;
            let rhs2 = self.module2_rhs(xi2);
            u2 = DVector::from_vec(a2.solve(rhs2.as_slice()));
            let (r1, r2) = self.residuals(&u1, &u2, xi1, xi2);
            if r1.max(r2) <= eps {
                converged = true;
                break;
            }
        }
        Ok(DetSolution {
            u1,
            u2,
            iterations,
            converged,
        })
    }
}

/// Temperature module: fixed affine operator in its own inputs, fission
/// right-hand side lagged on the own-state guess.
struct TnModule1Op {
    model: Arc<ThermalNeutronics>,
    weights: Vec<f64>,
    psi: Vec<DVector<f64>>,
    nodes: Vec<Vec<f64>>,
    mats: Vec<Csr>,
    mean_lu: BandedLu,
}

impl ModuleOperator for TnModule1Op {
    fn module(&self) -> usize {
        1
    }

    fn state_dim(&self) -> usize {
        self.model.node_count()
    }

    fn coupled_dim(&self) -> usize {
        self.model.node_count()
    }

    fn modular_len(&self) -> usize {
        self.psi[0].len()
    }

    fn solve(&self, own: &DMatrix<f64>, coupled: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.state_dim();
        let pb = self.modular_len();
        if own.nrows() != n || own.ncols() != pb {
            return Err(Error::ShapeMismatch {
                context: "tn module 1 own coefficients",
                expected: format!("{n}x{pb}"),
                got: format!("{}x{}", own.nrows(), own.ncols()),
            });
        }
        let mut rhs = DMatrix::zeros(n, pb);
        for ((psi, &w), node) in self.psi.iter().zip(&self.weights).zip(&self.nodes) {
            let t = own * psi;
            let u2 = coupled * psi;
            let t_gp = self.model.grid.interpolate_at_gauss(&t);
            let mut r = self.model.fission_action(&t_gp, &u2);
            if self.model.params.mms {
                r += self.model.mms_t_load(node);
            }
            // rhs += w * r * psi^T
            for k in 0..pb {
                let c = w * psi[k];
                if c != 0.0 {
                    rhs.column_mut(k).axpy(c, &r, 1.0);
                }
            }
        }
        solve_modular_galerkin(
            &self.mats,
            &self.weights,
            &self.psi,
            &rhs,
            &self.mean_lu,
            own,
            "tn module 1",
        )
    }
}

/// Flux module: linear in its own state, operator rebuilt per invocation from
/// the coupled temperature input.
struct TnModule2Op {
    model: Arc<ThermalNeutronics>,
    weights: Vec<f64>,
    psi: Vec<DVector<f64>>,
    nodes: Vec<Vec<f64>>,
}

impl ModuleOperator for TnModule2Op {
    fn module(&self) -> usize {
        2
    }

    fn state_dim(&self) -> usize {
        self.model.node_count()
    }

    fn coupled_dim(&self) -> usize {
        self.model.node_count()
    }

    fn modular_len(&self) -> usize {
        self.psi[0].len()
    }

    fn solve(&self, own: &DMatrix<f64>, coupled: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.state_dim();
        let pb = self.modular_len();
        let grid = &self.model.grid;
        let mut mats = Vec::with_capacity(self.weights.len());
        let mut mean = Banded::zeros(n, grid.bandwidth(), grid.bandwidth());
        let mut rhs = DMatrix::zeros(n, pb);
        for ((psi, &w), node) in self.psi.iter().zip(&self.weights).zip(&self.nodes) {
            let t = coupled * psi;
            let t_gp = grid.interpolate_at_gauss(&t);
            let a = self.model.module2_matrix(&t_gp, node);
            mean.axpy(w, &a);
            mats.push(a.to_csr());
            let r = self.model.module2_rhs(node);
            for k in 0..pb {
                let c = w * psi[k];
                if c != 0.0 {
                    rhs.column_mut(k).axpy(c, &r, 1.0);
                }
            }
        }
        let mean_lu = mean.factor()?;
        solve_modular_galerkin(
            &mats,
            &self.weights,
            &self.psi,
            &rhs,
            &mean_lu,
            own,
            "tn module 2",
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_params() -> TnParams {
        TnParams {
            m: 9,
            s1: 2,
            s2: 2,
            ..TnParams::default()
        }
    }

    #[test]
    fn neumann_diffusion_annihilates_constants() {
        let model = ThermalNeutronics::new(small_params());
        let ones = vec![1.0; model.node_count()];
        let mut out = vec![0.0; model.node_count()];
        model.k_t.matvec(&ones, &mut out);
        for v in out {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn operators_are_symmetric() {
        let model = ThermalNeutronics::new(small_params());
        for mat in std::iter::once(&model.k_t).chain(model.h_mass.iter()) {
            let d = mat.to_csr().to_dense();
            for i in 0..d.nrows() {
                for j in 0..d.ncols() {
                    assert_abs_diff_eq!(d[(i, j)], d[(j, i)], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_fission_and_source_gives_zero_solution() {
        let mut params = small_params();
        params.e_t = 0.0;
        params.s_phi = 0.0;
        let model = ThermalNeutronics::new(params);
        let sol = model
            .solve_deterministic(&[0.2, -0.4], &[0.1, 0.6], 1e-10, 50)
            .unwrap();
        assert!(sol.converged);
        assert_abs_diff_eq!(sol.u1.norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.u2.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn deterministic_solution_satisfies_residuals() {
        let model = ThermalNeutronics::new(small_params());
        let sol = model
            .solve_deterministic(&[0.3, -0.2], &[-0.5, 0.1], 1e-10, 100)
            .unwrap();
        assert!(sol.converged);
        let (r1, r2) = model.residuals(&sol.u1, &sol.u2, &[0.3, -0.2], &[-0.5, 0.1]);
        assert!(r1 <= 1e-8 && r2 <= 1e-8, "r1={r1} r2={r2}");
    }

    #[test]
    fn fields_are_affine_in_inputs() {
        let model = ThermalNeutronics::new(small_params());
        let g = 7;
        let xi = [0.4, -0.7];
        let base = model.h_coeff_gp(g, &[0.0, 0.0]);
        let v1 = model.h_coeff_gp(g, &xi);
        let xi2: Vec<f64> = xi.iter().map(|v| 3.0 * v).collect();
        let v3 = model.h_coeff_gp(g, &xi2);
        assert_abs_diff_eq!(v3 - base, 3.0 * (v1 - base), epsilon = 1e-12);
    }

    #[test]
    fn module2_operator_is_linear_in_own_state() {
        let model = Arc::new(ThermalNeutronics::new(small_params()));
        let cm = model.coupled_model(1, 1).unwrap();
        let pb = cm.op2.modular_len();
        let n = model.node_count();
        let coupled = DMatrix::from_fn(n, pb, |i, j| {
            0.5 + 0.01 * (i as f64).sin() + if j == 0 { 0.0 } else { 0.001 }
        });
        let own_a = DMatrix::zeros(n, pb);
        let own_b = DMatrix::from_element(n, pb, 0.35);
        let sol_a = cm.op2.solve(&own_a, &coupled).unwrap();
        let sol_b = cm.op2.solve(&own_b, &coupled).unwrap();
        assert_abs_diff_eq!((&sol_a - &sol_b).norm(), 0.0, epsilon = 1e-8);
    }

    #[test]
    fn module1_with_zero_coupled_input_returns_zero() {
        let model = Arc::new(ThermalNeutronics::new(small_params()));
        let cm = model.coupled_model(1, 1).unwrap();
        let pb = cm.op1.modular_len();
        let n = model.node_count();
        let own = DMatrix::zeros(n, pb);
        let coupled = DMatrix::zeros(n, pb);
        let sol = cm.op1.solve(&own, &coupled).unwrap();
        assert_abs_diff_eq!(sol.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn p0_operator_matches_deterministic_component() {
        // at order zero the Galerkin subproblem is the deterministic solve
        // component at the mean of the module's own parameters
        let model = Arc::new(ThermalNeutronics::new(small_params()));
        let cm = model.coupled_model(0, 0).unwrap();
        let n = model.node_count();
        // one lagged sweep from a converged pair must reproduce itself
        let sol = model
            .solve_deterministic(&[0.0, 0.0], &[0.0, 0.0], 1e-13, 200)
            .unwrap();
        let own = DMatrix::from_column_slice(n, 1, sol.u1.as_slice());
        let coupled = DMatrix::from_column_slice(n, 1, sol.u2.as_slice());
        let out = cm.op1.solve(&own, &coupled).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(out[(i, 0)], sol.u1[i], epsilon = 1e-8 * (1.0 + sol.u1[i].abs()));
        }
    }
}
