//! Boussinesq natural-convection benchmark: collocated finite volumes with
//! linear central differencing on an m x m cell grid, a pressure Poisson
//! closure, Newton steps inside the momentum module and a linear energy
//! module, coupled through buoyancy and convection.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::basis::total_degree_set;
use crate::galerkin::{solve_modular_galerkin, CoupledModel, Gramian, ModuleOperator};
use crate::linalg::{Banded, Csr};
use crate::models::mms;
use crate::models::{DetSolution, DeterministicModel};
use crate::orthopoly::{build_family, Distribution};
use crate::quadrature::tensor_rule;
use crate::randfield::{build_field, KlField};
use crate::{Error, Result};

use std::f64::consts::PI;

/// Deterministic parameters of the Boussinesq flow problem.
#[derive(Debug, Clone)]
pub struct BoussinesqParams {
    pub m: usize,
    pub s1: usize,
    pub s2: usize,
    pub prandtl: f64,
    pub rayleigh_mean: f64,
    pub hot_wall_mean: f64,
    pub delta_ra: f64,
    pub delta_h: f64,
    pub l_ra: f64,
    pub l_h: f64,
    pub mms: bool,
    pub identity_gramian: bool,
}

impl Default for BoussinesqParams {
    fn default() -> Self {
        BoussinesqParams {
            m: 25,
            s1: 3,
            s2: 3,
            prandtl: 0.71,
            rayleigh_mean: 1000.0,
            hot_wall_mean: 1.0,
            delta_ra: 200.0,
            delta_h: 0.5,
            l_ra: 0.5,
            l_h: 0.5,
            mms: false,
            identity_gramian: false,
        }
    }
}

type StencilRows = Vec<Vec<(usize, f64)>>;

/// Boundary treatment of the matrix part of a stencil; Dirichlet data only
/// shifts the right-hand side and is assembled separately.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Dirichlet,
    Neumann,
}

/// Assembled Boussinesq model with cached stencils and random-field tables.
pub struct Boussinesq {
    pub params: BoussinesqParams,
    pub m: usize,
    pub h: f64,
    pub ra_field: KlField,
    pub h_field: KlField,
    /// sqrt(3) * delta_Ra * gamma_k at cell centers
    ra_gamma: Vec<Vec<f64>>,
    /// sqrt(3) * delta_h * gamma_k at hot-wall cell ordinates
    hw_gamma: Vec<Vec<f64>>,
    /// negative laplacian with velocity (Dirichlet) walls
    klap_v: StencilRows,
    /// negative laplacian with temperature walls (Dirichlet in x, Neumann in y)
    klap_t: StencilRows,
    /// negative laplacian with pressure (Neumann) walls
    klap_p: StencilRows,
    dx_v: StencilRows,
    dy_v: StencilRows,
    dx_t: StencilRows,
    dy_t: StencilRows,
    dx_p: StencilRows,
    dy_p: StencilRows,
    /// one-sided-at-walls first derivatives for the Poisson divergence terms
    dx_os: StencilRows,
    dy_os: StencilRows,
    /// coefficient of the velocity-divergence term in the Poisson row; keeps
    /// the discrete divergence pinned instead of harmonically free
    div_penalty: f64,
    /// odd-even pressure smoothing: compact-minus-wide laplacian difference
    klap_p_wide: StencilRows,
    press_smooth: f64,
}

impl Boussinesq {
    pub fn new(params: BoussinesqParams) -> Self {
        assert!(params.m >= 3, "one-sided divergence stencils need m >= 3");
        let m = params.m;
        let h = 1.0 / m as f64;
        let ra_field = build_field(
            2,
            params.rayleigh_mean,
            params.delta_ra,
            params.l_ra,
            params.s1,
        );
        let h_field = build_field(1, 0.0, params.delta_h, params.l_h, params.s2);
        let scale = 3f64.sqrt();
        let centers: Vec<[f64; 2]> = (0..m * m)
            .map(|c| {
                let cx = c % m;
                let cy = c / m;
                [(cx as f64 + 0.5) * h, (cy as f64 + 0.5) * h]
            })
            .collect();
        let ra_gamma = (0..params.s1)
            .map(|k| {
                centers
                    .iter()
                    .map(|x| scale * params.delta_ra * ra_field.eval_coeff(k, x))
                    .collect()
            })
            .collect();
        let hw_gamma = (0..params.s2)
            .map(|k| {
                (0..m)
                    .map(|cy| {
                        let y = (cy as f64 + 0.5) * h;
                        scale * params.delta_h * h_field.eval_coeff(k, &[y])
                    })
                    .collect()
            })
            .collect();
        let dir = (Side::Dirichlet, Side::Dirichlet);
        let neu = (Side::Neumann, Side::Neumann);
        let klap_v = neg_laplacian(m, h, dir, dir);
        let klap_t = neg_laplacian(m, h, dir, neu);
        let klap_p = neg_laplacian(m, h, neu, neu);
        let dx_v = derivative(m, h, 0, dir);
        let dy_v = derivative(m, h, 1, dir);
        let dx_t = derivative(m, h, 0, dir);
        let dy_t = derivative(m, h, 1, neu);
        let dx_p = derivative(m, h, 0, neu);
        let dy_p = derivative(m, h, 1, neu);
        let dx_os = one_sided_derivative(m, h, 0);
        let dy_os = one_sided_derivative(m, h, 1);
        let stab = 16.0;
        let div_penalty = stab * 4.0 * params.prandtl / (h * h);
        let press_smooth = 4.0 * stab;
        let klap_p_wide = neg_wide_laplacian(m, h);
        Boussinesq {
            params,
            m,
            h,
            ra_field,
            h_field,
            ra_gamma,
            hw_gamma,
            klap_v,
            klap_t,
            klap_p,
            dx_v,
            dy_v,
            dx_t,
            dy_t,
            dx_p,
            dy_p,
            dx_os,
            dy_os,
            div_penalty,
            klap_p_wide,
            press_smooth,
        }
    }

    pub fn cells(&self) -> usize {
        self.m * self.m
    }

    pub fn state_dim(&self) -> usize {
        3 * self.cells()
    }

    pub fn cell_center(&self, c: usize) -> [f64; 2] {
        let cx = c % self.m;
        let cy = c / self.m;
        [(cx as f64 + 0.5) * self.h, (cy as f64 + 0.5) * self.h]
    }

    /// Pr * Ra(x, xi_1) per cell.
    pub fn buoyancy_cells(&self, xi1: &[f64]) -> Vec<f64> {
        (0..self.cells())
            .map(|c| {
                let mut ra = self.params.rayleigh_mean;
                for (k, &x) in xi1.iter().enumerate() {
                    ra += self.ra_gamma[k][c] * x;
                }
                self.params.prandtl * ra
            })
            .collect()
    }

    /// Hot-wall temperature profile at wall row `cy`.
    pub fn hot_wall_value(&self, cy: usize, xi2: &[f64]) -> f64 {
        let y = (cy as f64 + 0.5) * self.h;
        let mut pert = 0.0;
        for (k, &x) in xi2.iter().enumerate() {
            pert += self.hw_gamma[k][cy] * x;
        }
        self.params.hot_wall_mean + pert * (PI * y).sin().powi(2)
    }

    fn apply_rows(rows: &StencilRows, field: &[f64]) -> Vec<f64> {
        rows.iter()
            .map(|row| row.iter().map(|&(j, w)| w * field[j]).sum())
            .collect()
    }

    /// Temperature boundary data vector: diffusion and convection carry the
    /// hot-wall value into the right-hand side.
    fn temperature_data(&self, a: &[f64], xi2: &[f64]) -> DVector<f64> {
        let m = self.m;
        let h = self.h;
        let mut out = DVector::zeros(self.cells());
        for cy in 0..m {
            let c = cy * m; // hot-wall cell (cx = 0)
            let th = self.hot_wall_value(cy, xi2);
            out[c] += 2.0 * th / (h * h) + a[c] * th / h;
        }
        out
    }

    fn mms_pin_value(&self) -> f64 {
        if self.params.mms {
            mms::bq_p_star(&self.cell_center(0))
        } else {
            0.0
        }
    }

    /// Manufactured momentum sources at the cells, plus the divergence term
    /// fed into the pressure equation.
    fn mms_momentum_sources(&self, xi1: &[f64], xi2: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let pr = self.params.prandtl;
        let cells = self.cells();
        let mut fx = vec![0.0; cells];
        let mut fy = vec![0.0; cells];
        for c in 0..cells {
            let x = self.cell_center(c);
            let ra = self.buoyancy_cells(xi1)[c] / pr;
            let th = self.hot_wall_profile_at(x[1], xi2);
            let f = mms::bq_f_u_star(&x, pr, ra, th);
            fx[c] = f[0];
            fy[c] = f[1];
        }
        let div: Vec<f64> = {
            let dxf = Self::apply_rows(&self.dx_os, &fx);
            let dyf = Self::apply_rows(&self.dy_os, &fy);
            dxf.iter().zip(dyf.iter()).map(|(a, b)| a + b).collect()
        };
        (fx, fy, div)
    }

    /// T_h at arbitrary ordinate (manufactured-solution evaluations).
    fn hot_wall_profile_at(&self, y: f64, xi2: &[f64]) -> f64 {
        let mut pert = 0.0;
        for (k, &x) in xi2.iter().enumerate() {
            pert += 3f64.sqrt() * self.params.delta_h * self.h_field.eval_coeff(k, &[y]) * x;
        }
        self.params.hot_wall_mean + pert * (PI * y).sin().powi(2)
    }

    fn hot_wall_derivatives_at(&self, y: f64, xi2: &[f64]) -> (f64, f64, f64) {
        // analytic profile is smooth; central differences at 1e-6 keep the
        // source consistent to well below the discretization error
        let eps = 1e-6;
        let f0 = self.hot_wall_profile_at(y, xi2);
        let fp = self.hot_wall_profile_at(y + eps, xi2);
        let fm = self.hot_wall_profile_at(y - eps, xi2);
        ((fp - fm) / (2.0 * eps), (fp - 2.0 * f0 + fm) / (eps * eps), f0)
    }

    fn mms_temperature_source(&self, xi2: &[f64]) -> Vec<f64> {
        (0..self.cells())
            .map(|c| {
                let x = self.cell_center(c);
                let (dth, ddth, th) = self.hot_wall_derivatives_at(x[1], xi2);
                mms::bq_f_t_star(&x, th, dth, ddth)
            })
            .collect()
    }

    /// Momentum-module residual at an interleaved state, given the coupled
    /// temperature cells and the per-cell buoyancy coefficient.
    pub fn module1_residual(
        &self,
        state: &[f64],
        t: &[f64],
        buoy: &[f64],
        mms_src: Option<&(Vec<f64>, Vec<f64>, Vec<f64>)>,
    ) -> DVector<f64> {
        let cells = self.cells();
        let pr = self.params.prandtl;
        let (a, b, p) = split_state(state, cells);
        let dxu1 = Self::apply_rows(&self.dx_v, &a);
        let dyu1 = Self::apply_rows(&self.dy_v, &a);
        let dxu2 = Self::apply_rows(&self.dx_v, &b);
        let dyu2 = Self::apply_rows(&self.dy_v, &b);
        let lap_a = Self::apply_rows(&self.klap_v, &a);
        let lap_b = Self::apply_rows(&self.klap_v, &b);
        let dxp = Self::apply_rows(&self.dx_p, &p);
        let dyp = Self::apply_rows(&self.dy_p, &p);
        let lap_p = Self::apply_rows(&self.klap_p, &p);
        let lap_pw = Self::apply_rows(&self.klap_p_wide, &p);
        let convx: Vec<f64> = (0..cells).map(|c| a[c] * dxu1[c] + b[c] * dyu1[c]).collect();
        let convy: Vec<f64> = (0..cells).map(|c| a[c] * dxu2[c] + b[c] * dyu2[c]).collect();
        let div_convx = Self::apply_rows(&self.dx_os, &convx);
        let div_convy = Self::apply_rows(&self.dy_os, &convy);
        let buoy_t: Vec<f64> = (0..cells).map(|c| buoy[c] * t[c]).collect();
        let dy_buoy = Self::apply_rows(&self.dy_os, &buoy_t);
        let divu: Vec<f64> = (0..cells).map(|c| dxu1[c] + dyu2[c]).collect();
        let mut res = DVector::zeros(3 * cells);
        for c in 0..cells {
            let mut rx = pr * lap_a[c] + convx[c] + dxp[c];
            let mut ry = pr * lap_b[c] + convy[c] + dyp[c] - buoy_t[c];
            let mut rp = lap_p[c] - div_convx[c] - div_convy[c] + dy_buoy[c]
                + self.div_penalty * divu[c]
                + self.press_smooth * (lap_p[c] - lap_pw[c]);
            if let Some((fx, fy, divf)) = mms_src {
                rx += fx[c];
                ry += fy[c];
                rp -= divf[c];
            }
            res[3 * c] = rx;
            res[3 * c + 1] = ry;
            res[3 * c + 2] = rp;
        }
        // pressure pin replaces the cell-0 Poisson row
        res[2] = p[0] - self.mms_pin_value();
        res
    }

    /// Analytic Newton Jacobian of the momentum-module residual, interleaved
    /// ordering, as triplets.
    pub fn module1_jacobian_triplets(&self, state: &[f64]) -> Vec<(usize, usize, f64)> {
        let cells = self.cells();
        let pr = self.params.prandtl;
        let (a, b, _) = split_state(state, cells);
        let dxu1 = Self::apply_rows(&self.dx_v, &a);
        let dyu1 = Self::apply_rows(&self.dy_v, &a);
        let dxu2 = Self::apply_rows(&self.dx_v, &b);
        let dyu2 = Self::apply_rows(&self.dy_v, &b);
        let mut triplets = Vec::with_capacity(cells * 72);
        // convection rows A(c) = a_c Dx(c) + b_c Dy(c)
        let conv_row = |c: usize| -> Vec<(usize, f64)> {
            let mut row = Vec::with_capacity(8);
            for &(j, w) in &self.dx_v[c] {
                row.push((j, a[c] * w));
            }
            for &(j, w) in &self.dy_v[c] {
                row.push((j, b[c] * w));
            }
            row
        };
        for c in 0..cells {
            // momentum-x row
            for &(j, w) in &self.klap_v[c] {
                triplets.push((3 * c, 3 * j, pr * w));
            }
            for (j, w) in conv_row(c) {
                triplets.push((3 * c, 3 * j, w));
            }
            triplets.push((3 * c, 3 * c, dxu1[c]));
            triplets.push((3 * c, 3 * c + 1, dyu1[c]));
            for &(j, w) in &self.dx_p[c] {
                triplets.push((3 * c, 3 * j + 2, w));
            }
            // momentum-y row
            for &(j, w) in &self.klap_v[c] {
                triplets.push((3 * c + 1, 3 * j + 1, pr * w));
            }
            for (j, w) in conv_row(c) {
                triplets.push((3 * c + 1, 3 * j + 1, w));
            }
            triplets.push((3 * c + 1, 3 * c, dxu2[c]));
            triplets.push((3 * c + 1, 3 * c + 1, dyu2[c]));
            for &(j, w) in &self.dy_p[c] {
                triplets.push((3 * c + 1, 3 * j + 2, w));
            }
            // pressure row: pin at cell 0, Poisson elsewhere
            if c == 0 {
                triplets.push((2, 2, 1.0));
                continue;
            }
            for &(j, w) in &self.klap_p[c] {
                triplets.push((3 * c + 2, 3 * j + 2, w));
            }
            // d/du of the divergence-of-convection terms
            for &(i, wos) in &self.dx_os[c] {
                for (j, w) in conv_row(i) {
                    triplets.push((3 * c + 2, 3 * j, -wos * w));
                }
                triplets.push((3 * c + 2, 3 * i, -wos * dxu1[i]));
                triplets.push((3 * c + 2, 3 * i + 1, -wos * dyu1[i]));
            }
            for &(i, wos) in &self.dy_os[c] {
                for (j, w) in conv_row(i) {
                    triplets.push((3 * c + 2, 3 * j + 1, -wos * w));
                }
                triplets.push((3 * c + 2, 3 * i, -wos * dxu2[i]));
                triplets.push((3 * c + 2, 3 * i + 1, -wos * dyu2[i]));
            }
            for &(j, w) in &self.dx_v[c] {
                triplets.push((3 * c + 2, 3 * j, self.div_penalty * w));
            }
            for &(j, w) in &self.dy_v[c] {
                triplets.push((3 * c + 2, 3 * j + 1, self.div_penalty * w));
            }
            for &(j, w) in &self.klap_p[c] {
                triplets.push((3 * c + 2, 3 * j + 2, self.press_smooth * w));
            }
            for &(j, w) in &self.klap_p_wide[c] {
                triplets.push((3 * c + 2, 3 * j + 2, -self.press_smooth * w));
            }
        }
        triplets
    }

    /// Energy-module matrix K_T + A(u) on the temperature cells.
    pub fn module2_matrix_triplets(&self, a: &[f64], b: &[f64]) -> Vec<(usize, usize, f64)> {
        let cells = self.cells();
        let mut triplets = Vec::with_capacity(cells * 10);
        for c in 0..cells {
            for &(j, w) in &self.klap_t[c] {
                triplets.push((c, j, w));
            }
            for &(j, w) in &self.dx_t[c] {
                triplets.push((c, j, a[c] * w));
            }
            for &(j, w) in &self.dy_t[c] {
                triplets.push((c, j, b[c] * w));
            }
        }
        triplets
    }

    /// Energy-module right-hand side (hot-wall data minus any manufactured
    /// source).
    pub fn module2_rhs(&self, a: &[f64], xi2: &[f64]) -> DVector<f64> {
        let mut rhs = self.temperature_data(a, xi2);
        if self.params.mms {
            let src = self.mms_temperature_source(xi2);
            for c in 0..self.cells() {
                rhs[c] -= src[c];
            }
        }
        rhs
    }

    /// Bandwidth of the interleaved momentum Jacobian: the one-sided
    /// divergence composed with convection reaches three cells in y.
    fn jacobian_bandwidth(&self) -> usize {
        9 * self.m + 3
    }

    fn banded_from_triplets(&self, n: usize, bw: usize, triplets: &[(usize, usize, f64)]) -> Banded {
        let mut b = Banded::zeros(n, bw, bw);
        for &(i, j, v) in triplets {
            b.add(i, j, v);
        }
        b
    }

    /// Relative residual norms of both modules at a state pair.
    pub fn residuals(
        &self,
        state: &[f64],
        t: &[f64],
        xi1: &[f64],
        xi2: &[f64],
    ) -> (f64, f64) {
        let cells = self.cells();
        let buoy = self.buoyancy_cells(xi1);
        let mms_src = if self.params.mms {
            Some(self.mms_momentum_sources(xi1, xi2))
        } else {
            None
        };
        let res1 = self.module1_residual(state, t, &buoy, mms_src.as_ref());
        let (a, b, _) = split_state(state, cells);
        let tri = self.module2_matrix_triplets(&a, &b);
        let a2 = Csr::from_triplets(cells, cells, &tri);
        let mut a2t = vec![0.0; cells];
        a2.matvec(t, &mut a2t);
        let rhs2 = self.module2_rhs(&a, xi2);
        let res2: f64 = a2t
            .iter()
            .zip(rhs2.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let scale1 = {
            let jt = self.module1_jacobian_triplets(state);
            let j = Csr::from_triplets(3 * cells, 3 * cells, &jt);
            let mut ju = vec![0.0; 3 * cells];
            j.matvec(state, &mut ju);
            let buoy_norm: f64 = (0..cells)
                .map(|c| (buoy[c] * t[c]).powi(2))
                .sum::<f64>()
                .sqrt();
            let mms_norm = mms_src
                .as_ref()
                .map(|(fx, fy, _)| {
                    (fx.iter().map(|v| v * v).sum::<f64>() + fy.iter().map(|v| v * v).sum::<f64>())
                        .sqrt()
                })
                .unwrap_or(0.0);
            crate::linalg::norm2(&ju).max(buoy_norm).max(mms_norm).max(1e-300)
        };
        let scale2 = crate::linalg::norm2(&a2t).max(rhs2.norm()).max(1e-300);
        (res1.norm() / scale1, res2 / scale2)
    }

    /// Kinetic and thermal energy functionals by midpoint quadrature.
    pub fn energies(&self, state: &[f64], t: &[f64]) -> (f64, f64) {
        let cells = self.cells();
        let (a, b, _) = split_state(state, cells);
        let vol = self.h * self.h;
        let kinetic = 0.5
            * vol
            * (a.iter().map(|v| v * v).sum::<f64>() + b.iter().map(|v| v * v).sum::<f64>());
        let thermal = vol * t.iter().sum::<f64>();
        (kinetic, thermal)
    }

    /// Relative L2 error against the manufactured fields (midpoint rule).
    pub fn mms_error(&self, state: &[f64], t: &[f64], xi2: &[f64]) -> f64 {
        let cells = self.cells();
        let (a, b, p) = split_state(state, cells);
        let mut num = 0.0;
        let mut den = 0.0;
        for c in 0..cells {
            let x = self.cell_center(c);
            let th = self.hot_wall_profile_at(x[1], xi2);
            let exact = [
                mms::bq_u1_star(&x),
                mms::bq_u2_star(&x),
                mms::bq_p_star(&x),
                mms::bq_t_star(&x, th),
            ];
            let got = [a[c], b[c], p[c], t[c]];
            for k in 0..4 {
                num += (exact[k] - got[k]).powi(2);
                den += exact[k] * exact[k];
            }
        }
        (num / den).sqrt()
    }

    /// Cell-volume diagonal Gramians (or identity when switched off).
    pub fn gramians(&self) -> (Gramian, Gramian) {
        if self.params.identity_gramian {
            (
                Gramian::identity(self.state_dim()),
                Gramian::identity(self.cells()),
            )
        } else {
            let vol = self.h * self.h;
            (
                Gramian::diagonal(DVector::from_element(self.state_dim(), vol)),
                Gramian::diagonal(DVector::from_element(self.cells(), vol)),
            )
        }
    }

    /// Builds the stochastic-Galerkin module operators and the coupled model.
    pub fn coupled_model(self: &Arc<Self>, p: usize, q: usize) -> Result<CoupledModel> {
        assert!(
            !self.params.mms,
            "manufactured-solution variants run through the deterministic solver only"
        );
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
        let buoy1: Vec<Vec<f64>> = rule1.iter_nodes().map(|x| self.buoyancy_cells(x)).collect();
        let nodes2: Vec<Vec<f64>> = rule2.iter_nodes().map(|x| x.to_vec()).collect();
        let mean_det = self.solve_deterministic(
            &vec![0.0; self.params.s1],
            &vec![0.0; self.params.s2],
            1e-12,
            200,
        )?;
        let (g1, g2) = self.gramians();
        Ok(CoupledModel {
            op1: Box::new(BqModule1Op {
                model: Arc::clone(self),
                weights: rule1.weights.clone(),
                psi: psi1,
                buoy: buoy1,
            }),
            op2: Box::new(BqModule2Op {
                model: Arc::clone(self),
                weights: rule2.weights.clone(),
                psi: psi2,
                nodes: nodes2,
            }),
            g1,
            g2,
            s1: self.params.s1,
            s2: self.params.s2,
            mean_state1: mean_det.u1,
            mean_state2: mean_det.u2,
        })
    }
}

fn split_state(state: &[f64], cells: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut a = vec![0.0; cells];
    let mut b = vec![0.0; cells];
    let mut p = vec![0.0; cells];
    for c in 0..cells {
        a[c] = state[3 * c];
        b[c] = state[3 * c + 1];
        p[c] = state[3 * c + 2];
    }
    (a, b, p)
}

/// Negative laplacian rows on the cell grid. Per side: an interior neighbor
/// contributes (diag +1, neighbor -1)/h^2, a mirror Dirichlet ghost +2/h^2 on
/// the diagonal (data goes to the right-hand side), a Neumann ghost nothing.
fn neg_laplacian(m: usize, h: f64, bcx: (Side, Side), bcy: (Side, Side)) -> StencilRows {
    let inv = 1.0 / (h * h);
    let side_diag = |bc: Side| match bc {
        Side::Dirichlet => 2.0 * inv,
        Side::Neumann => 0.0,
    };
    let mut rows = vec![Vec::with_capacity(5); m * m];
    for (c, row) in rows.iter_mut().enumerate() {
        let cx = c % m;
        let cy = c / m;
        let mut diag = 0.0;
        for (pos, stride, bc) in [(cx, 1usize, bcx), (cy, m, bcy)] {
            if pos > 0 {
                row.push((c - stride, -inv));
                diag += inv;
            } else {
                diag += side_diag(bc.0);
            }
            if pos + 1 < m {
                row.push((c + stride, -inv));
                diag += inv;
            } else {
                diag += side_diag(bc.1);
            }
        }
        row.push((c, diag));
    }
    rows
}

/// Mirror-ghost central first derivative along `axis` (0 = x, 1 = y).
fn derivative(m: usize, h: f64, axis: usize, bc: (Side, Side)) -> StencilRows {
    let inv2 = 1.0 / (2.0 * h);
    let stride = if axis == 0 { 1 } else { m };
    let mut rows = vec![Vec::with_capacity(2); m * m];
    for (c, row) in rows.iter_mut().enumerate() {
        let pos = if axis == 0 { c % m } else { c / m };
        let has_low = pos > 0;
        let has_high = pos + 1 < m;
        if has_low && has_high {
            row.push((c - stride, -inv2));
            row.push((c + stride, inv2));
        } else if !has_low {
            // ghost = 2w - v_c (Dirichlet) or v_c (Neumann)
            match bc.0 {
                Side::Dirichlet => {
                    row.push((c, inv2));
                    row.push((c + stride, inv2));
                }
                Side::Neumann => {
                    row.push((c, -inv2));
                    row.push((c + stride, inv2));
                }
            }
        } else {
            match bc.1 {
                Side::Dirichlet => {
                    row.push((c - stride, -inv2));
                    row.push((c, -inv2));
                }
                Side::Neumann => {
                    row.push((c - stride, -inv2));
                    row.push((c, inv2));
                }
            }
        }
    }
    rows
}

/// Wide negative laplacian at doubled spacing with even mirror closures,
/// used only in the odd-even pressure smoothing difference.
fn neg_wide_laplacian(m: usize, h: f64) -> StencilRows {
    let inv = 1.0 / (4.0 * h * h);
    // even reflection: ghost cell at position -1-k maps to cell k
    let mirror = |pos: isize| -> usize {
        let q = if pos < 0 {
            (-pos - 1) as usize
        } else if pos as usize >= m {
            2 * m - 1 - pos as usize
        } else {
            pos as usize
        };
        q
    };
    let mut rows = vec![Vec::with_capacity(5); m * m];
    for (c, row) in rows.iter_mut().enumerate() {
        let cx = (c % m) as isize;
        let cy = (c / m) as isize;
        let mut push = |cellx: usize, celly: usize, w: f64| {
            row.push((celly * m + cellx, w));
        };
        push(mirror(cx - 2), cy as usize, -inv);
        push(mirror(cx + 2), cy as usize, -inv);
        push(cx as usize, mirror(cy - 2), -inv);
        push(cx as usize, mirror(cy + 2), -inv);
        push(cx as usize, cy as usize, 4.0 * inv);
    }
    rows
}

/// Central first derivative with second-order one-sided closures at walls;
/// acts on interior fields without ghost values.
fn one_sided_derivative(m: usize, h: f64, axis: usize) -> StencilRows {
    let inv2 = 1.0 / (2.0 * h);
    let stride = if axis == 0 { 1 } else { m };
    let mut rows = vec![Vec::with_capacity(3); m * m];
    for (c, row) in rows.iter_mut().enumerate() {
        let pos = if axis == 0 { c % m } else { c / m };
        if pos == 0 {
            row.push((c, -3.0 * inv2));
            row.push((c + stride, 4.0 * inv2));
            row.push((c + 2 * stride, -inv2));
        } else if pos + 1 == m {
            row.push((c, 3.0 * inv2));
            row.push((c - stride, -4.0 * inv2));
            row.push((c - 2 * stride, inv2));
        } else {
            row.push((c - stride, -inv2));
            row.push((c + stride, inv2));
        }
    }
    rows
}

impl DeterministicModel for Boussinesq {
    fn input_dims(&self) -> (usize, usize) {
        (self.params.s1, self.params.s2)
    }

    fn state_dims(&self) -> (usize, usize) {
        (self.state_dim(), self.cells())
    }

    /// Newton-within-module block Gauss-Seidel sweep.
    fn solve_deterministic(
        &self,
        xi1: &[f64],
        xi2: &[f64],
        eps: f64,
        max_iter: usize,
    ) -> Result<DetSolution> {
        let cells = self.cells();
        let n1 = self.state_dim();
        let mut state = vec![0.0; n1];
        let mut t = vec![0.0; cells];
        let buoy = self.buoyancy_cells(xi1);
        let mms_src = if self.params.mms {
            Some(self.mms_momentum_sources(xi1, xi2))
        } else {
            None
        };
        let bw = self.jacobian_bandwidth();
        let mut iterations = 0;
        let mut converged = false;
        while iterations < max_iter {
            iterations += 1;
            let res = self.module1_residual(&state, &t, &buoy, mms_src.as_ref());
            let tri = self.module1_jacobian_triplets(&state);
            let jac = self.banded_from_triplets(n1, bw, &tri).factor()?;
            let delta = jac.solve(res.as_slice());
            for i in 0..n1 {
                state[i] -= delta[i];
            }
            let (a, b, _) = split_state(&state, cells);
            let tri2 = self.module2_matrix_triplets(&a, &b);
            let a2 = self
                .banded_from_triplets(cells, self.m + 1, &tri2)
                .factor()?;
            let rhs2 = self.module2_rhs(&a, xi2);
            t = a2.solve(rhs2.as_slice());
            let (r1, r2) = self.residuals(&state, &t, xi1, xi2);
            if r1.max(r2) <= eps {
                converged = true;
                break;
            }
        }
        Ok(DetSolution {
            u1: DVector::from_vec(state),
            u2: DVector::from_vec(t),
            iterations,
            converged,
        })
    }
}

/// Momentum module: one Newton step of the modular Galerkin residual around
/// the supplied own-state coefficients.
struct BqModule1Op {
    model: Arc<Boussinesq>,
    weights: Vec<f64>,
    psi: Vec<DVector<f64>>,
    /// Pr * Ra cells per own quadrature node
    buoy: Vec<Vec<f64>>,
}

impl ModuleOperator for BqModule1Op {
    fn module(&self) -> usize {
        1
    }

    fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    fn coupled_dim(&self) -> usize {
        self.model.cells()
    }

    fn modular_len(&self) -> usize {
        self.psi[0].len()
    }

    fn solve(&self, own: &DMatrix<f64>, coupled: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.state_dim();
        let pb = self.modular_len();
        if own.nrows() != n || own.ncols() != pb {
            return Err(Error::ShapeMismatch {
                context: "boussinesq module 1 own coefficients",
                expected: format!("{n}x{pb}"),
                got: format!("{}x{}", own.nrows(), own.ncols()),
            });
        }
        let bw = self.model.jacobian_bandwidth();
        let mut mats = Vec::with_capacity(self.weights.len());
        let mut mean = Banded::zeros(n, bw, bw);
        let mut rhs = DMatrix::zeros(n, pb);
        for ((psi, &w), buoy) in self.psi.iter().zip(&self.weights).zip(&self.buoy) {
            let state = (own * psi).as_slice().to_vec();
            let t = (coupled * psi).as_slice().to_vec();
            let res = self.model.module1_residual(&state, &t, buoy, None);
            let tri = self.model.module1_jacobian_triplets(&state);
            let banded = self.model.banded_from_triplets(n, bw, &tri);
            mean.axpy(w, &banded);
            mats.push(banded.to_csr());
            for k in 0..pb {
                let c = -w * psi[k];
                if c != 0.0 {
                    rhs.column_mut(k).axpy(c, &res, 1.0);
                }
            }
        }
        let mean_lu = mean.factor()?;
        let zero = DMatrix::zeros(n, pb);
        let delta = solve_modular_galerkin(
            &mats,
            &self.weights,
            &self.psi,
            &rhs,
            &mean_lu,
            &zero,
            "boussinesq module 1",
        )?;
        Ok(own + delta)
    }
}

/// Energy module: linear in temperature, convection rebuilt from the coupled
/// velocity input.
struct BqModule2Op {
    model: Arc<Boussinesq>,
    weights: Vec<f64>,
    psi: Vec<DVector<f64>>,
    nodes: Vec<Vec<f64>>,
}

impl ModuleOperator for BqModule2Op {
    fn module(&self) -> usize {
        2
    }

    fn state_dim(&self) -> usize {
        self.model.cells()
    }

    fn coupled_dim(&self) -> usize {
        self.model.state_dim()
    }

    fn modular_len(&self) -> usize {
        self.psi[0].len()
    }

    fn solve(&self, own: &DMatrix<f64>, coupled: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let cells = self.model.cells();
        let pb = self.modular_len();
        let mut mats = Vec::with_capacity(self.weights.len());
        let mut mean = Banded::zeros(cells, self.model.m + 1, self.model.m + 1);
        let mut rhs = DMatrix::zeros(cells, pb);
        for ((psi, &w), node) in self.psi.iter().zip(&self.weights).zip(&self.nodes) {
            let u1 = coupled * psi;
            let (a, b, _) = split_state(u1.as_slice(), cells);
            let tri = self.model.module2_matrix_triplets(&a, &b);
            let banded = self.model.banded_from_triplets(cells, self.model.m + 1, &tri);
            mean.axpy(w, &banded);
            mats.push(banded.to_csr());
            let r = self.model.module2_rhs(&a, node);
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
            "boussinesq module 2",
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_params() -> BoussinesqParams {
        BoussinesqParams {
            m: 8,
            s1: 2,
            s2: 2,
            ..BoussinesqParams::default()
        }
    }

    #[test]
    fn pressure_poisson_rows_sum_to_zero() {
        let model = Boussinesq::new(small_params());
        for row in &model.klap_p {
            let sum: f64 = row.iter().map(|&(_, w)| w).sum();
            assert_abs_diff_eq!(sum, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn neumann_laplacian_is_symmetric_psd() {
        let model = Boussinesq::new(small_params());
        let n = model.cells();
        let mut triplets = Vec::new();
        for (i, row) in model.klap_p.iter().enumerate() {
            for &(j, w) in row {
                triplets.push((i, j, w));
            }
        }
        let dense = Csr::from_triplets(n, n, &triplets).to_dense();
        for i in 0..n {
            for j in 0..n {
                assert_abs_diff_eq!(dense[(i, j)], dense[(j, i)], epsilon = 1e-12);
            }
        }
        let eig = nalgebra::SymmetricEigen::new(dense);
        for &lam in eig.eigenvalues.iter() {
            assert!(lam >= -1e-8);
        }
    }

    #[test]
    fn no_forcing_gives_zero_fields() {
        let mut params = small_params();
        params.hot_wall_mean = 0.0;
        params.delta_h = 0.0;
        params.delta_ra = 0.0;
        let model = Boussinesq::new(params);
        let sol = model
            .solve_deterministic(&[0.3, -0.1], &[0.2, 0.4], 1e-10, 50)
            .unwrap();
        assert!(sol.converged);
        assert_abs_diff_eq!(sol.u1.norm(), 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(sol.u2.norm(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn hot_wall_profile_matches_formula() {
        let model = Boussinesq::new(small_params());
        let xi2 = [0.4, -0.3];
        for cy in 0..model.m {
            let y = (cy as f64 + 0.5) * model.h;
            let want = model.hot_wall_profile_at(y, &xi2);
            assert_abs_diff_eq!(model.hot_wall_value(cy, &xi2), want, epsilon = 1e-12);
        }
    }

    #[test]
    fn deterministic_solve_converges_and_is_reproducible() {
        let model = Boussinesq::new(small_params());
        let sol1 = model
            .solve_deterministic(&[0.5, -0.5], &[0.3, 0.7], 1e-8, 60)
            .unwrap();
        assert!(sol1.converged, "iterations {}", sol1.iterations);
        let sol2 = model
            .solve_deterministic(&[0.5, -0.5], &[0.3, 0.7], 1e-8, 60)
            .unwrap();
        assert_eq!(sol1.u1.as_slice(), sol2.u1.as_slice());
        assert_eq!(sol1.u2.as_slice(), sol2.u2.as_slice());
        let (k, e) = model.energies(sol1.u1.as_slice(), sol1.u2.as_slice());
        assert!(k.is_finite() && e.is_finite());
        let (r1, r2) = model.residuals(
            sol1.u1.as_slice(),
            sol1.u2.as_slice(),
            &[0.5, -0.5],
            &[0.3, 0.7],
        );
        assert!(r1 <= 1e-8 && r2 <= 1e-8);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let model = Boussinesq::new(small_params());
        let n = model.state_dim();
        let cells = model.cells();
        let mut state = vec![0.0; n];
        let mut seed = 7u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for v in state.iter_mut() {
            *v = 0.4 * next();
        }
        let t: Vec<f64> = (0..cells).map(|_| next()).collect();
        let buoy = model.buoyancy_cells(&[0.2, -0.6]);
        let base = model.module1_residual(&state, &t, &buoy, None);
        let tri = model.module1_jacobian_triplets(&state);
        let jac = Csr::from_triplets(n, n, &tri);
        let eps = 1e-6;
        for col in [0usize, 1, 2, 3 * (cells / 2), n - 3, n - 1] {
            let mut pert = state.clone();
            pert[col] += eps;
            let plus = model.module1_residual(&pert, &t, &buoy, None);
            for i in 0..n {
                let fd = (plus[i] - base[i]) / eps;
                let mut ji = 0.0;
                for k in jac.row_ptr[i]..jac.row_ptr[i + 1] {
                    if jac.col_idx[k] == col {
                        ji += jac.vals[k];
                    }
                }
                assert!(
                    (fd - ji).abs() <= 1e-4 * (1.0 + ji.abs()),
                    "row {i} col {col}: fd={fd} j={ji}"
                );
            }
        }
    }

    #[test]
    fn module2_operator_independent_of_own_guess() {
        let model = Arc::new(Boussinesq::new(small_params()));
        let cm = model.coupled_model(1, 1).unwrap();
        let pb = cm.op2.modular_len();
        let coupled = DMatrix::from_fn(model.state_dim(), pb, |i, j| {
            0.01 * ((i + j) as f64).sin()
        });
        let a = cm.op2.solve(&DMatrix::zeros(model.cells(), pb), &coupled).unwrap();
        let b = cm
            .op2
            .solve(&DMatrix::from_element(model.cells(), pb, 0.5), &coupled)
            .unwrap();
        assert!((&a - &b).norm() <= 1e-8 * (1.0 + a.norm()));
    }
}
