//! A small dense linear two-module system with affine parameter dependence,
//! used to exercise the propagation drivers against each other and against
//! brute-force projections.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::basis::total_degree_set;
use crate::galerkin::{solve_modular_galerkin, CoupledModel, Gramian, ModuleOperator};
use crate::linalg::Banded;
use crate::models::{DetSolution, DeterministicModel};
use crate::orthopoly::{build_family, Distribution};
use crate::quadrature::tensor_rule;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SyntheticParams {
    pub n1: usize,
    pub n2: usize,
    pub s1: usize,
    pub s2: usize,
    /// scale of the affine parameter perturbation of the own operators
    pub operator_spread: f64,
    /// scale of the cross coupling (kept below one for BGS contraction)
    pub coupling: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            n1: 5,
            n2: 5,
            s1: 2,
            s2: 2,
            operator_spread: 0.25,
            coupling: 0.4,
            seed: 7,
        }
    }
}

/// f_i(u_i; u_c, xi_i) = A_i(xi_i) u_i - B_i u_c - c_i(xi_i), with
/// A_i(xi) = A_i0 + sum_k xi_k A_ik diagonally dominant.
pub struct SyntheticLinear {
    pub params: SyntheticParams,
    a10: DMatrix<f64>,
    a1k: Vec<DMatrix<f64>>,
    b1: DMatrix<f64>,
    c10: DVector<f64>,
    c1k: Vec<DVector<f64>>,
    a20: DMatrix<f64>,
    a2k: Vec<DMatrix<f64>>,
    b2: DMatrix<f64>,
    c20: DVector<f64>,
    c2k: Vec<DVector<f64>>,
}

fn lcg(state: &mut u64) -> f64 {
    *state = state
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    2.0 * ((*state >> 11) as f64 / (1u64 << 53) as f64) - 1.0
}

impl SyntheticLinear {
    pub fn new(params: SyntheticParams) -> Self {
        let mut state = params.seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        let mut rand_mat = |r: usize, c: usize, scale: f64| {
            DMatrix::from_fn(r, c, |_, _| scale * lcg(&mut state))
        };
        let mk_own = |rand_mat: &mut dyn FnMut(usize, usize, f64) -> DMatrix<f64>, n: usize| {
            let mut a = rand_mat(n, n, 0.3);
            for i in 0..n {
                a[(i, i)] += 2.0;
            }
            a
        };
        let a10 = mk_own(&mut rand_mat, params.n1);
        let a20 = mk_own(&mut rand_mat, params.n2);
        let a1k = (0..params.s1)
            .map(|_| rand_mat(params.n1, params.n1, params.operator_spread))
            .collect();
        let a2k = (0..params.s2)
            .map(|_| rand_mat(params.n2, params.n2, params.operator_spread))
            .collect();
        let b1 = rand_mat(params.n1, params.n2, params.coupling);
        let b2 = rand_mat(params.n2, params.n1, params.coupling);
        let mut rand_vec = |n: usize, scale: f64| DVector::from_fn(n, |_, _| scale * lcg(&mut state));
        let c10 = rand_vec(params.n1, 1.0);
        let c1k = (0..params.s1).map(|_| rand_vec(params.n1, 0.5)).collect();
        let c20 = rand_vec(params.n2, 1.0);
        let c2k = (0..params.s2).map(|_| rand_vec(params.n2, 0.5)).collect();
        SyntheticLinear {
            params,
            a10,
            a1k,
            b1,
            c10,
            c1k,
            a20,
            a2k,
            b2,
            c20,
            c2k,
        }
    }

    pub fn operator_matrix(&self, module: usize, xi: &[f64]) -> DMatrix<f64> {
        let (a0, ak) = if module == 1 {
            (&self.a10, &self.a1k)
        } else {
            (&self.a20, &self.a2k)
        };
        let mut a = a0.clone();
        for (k, &x) in xi.iter().enumerate() {
            a += x * &ak[k];
        }
        a
    }

    pub fn forcing(&self, module: usize, xi: &[f64]) -> DVector<f64> {
        let (c0, ck) = if module == 1 {
            (&self.c10, &self.c1k)
        } else {
            (&self.c20, &self.c2k)
        };
        let mut c = c0.clone();
        for (k, &x) in xi.iter().enumerate() {
            c += x * &ck[k];
        }
        c
    }

    pub fn coupling_matrix(&self, module: usize) -> &DMatrix<f64> {
        if module == 1 {
            &self.b1
        } else {
            &self.b2
        }
    }

    pub fn coupled_model(self: &Arc<Self>, p: usize, q: usize) -> Result<CoupledModel> {
        let mean = self.solve_deterministic(
            &vec![0.0; self.params.s1],
            &vec![0.0; self.params.s2],
            1e-13,
            500,
        )?;
        Ok(CoupledModel {
            op1: Box::new(SyntheticModuleOp::new(Arc::clone(self), 1, p, q)?),
            op2: Box::new(SyntheticModuleOp::new(Arc::clone(self), 2, p, q)?),
            g1: Gramian::identity(self.params.n1),
            g2: Gramian::identity(self.params.n2),
            s1: self.params.s1,
            s2: self.params.s2,
            mean_state1: mean.u1,
            mean_state2: mean.u2,
        })
    }
}

impl DeterministicModel for SyntheticLinear {
    fn input_dims(&self) -> (usize, usize) {
        (self.params.s1, self.params.s2)
    }

    fn state_dims(&self) -> (usize, usize) {
        (self.params.n1, self.params.n2)
    }

    fn solve_deterministic(
        &self,
        xi1: &[f64],
        xi2: &[f64],
        eps: f64,
        max_iter: usize,
    ) -> Result<DetSolution> {
        let a1 = self
            .operator_matrix(1, xi1)
            .lu();
        let a2 = self.operator_matrix(2, xi2).lu();
        let f1 = self.forcing(1, xi1);
        let f2 = self.forcing(2, xi2);
        let mut u1 = DVector::zeros(self.params.n1);
        let mut u2 = DVector::zeros(self.params.n2);
        let mut iterations = 0;
        let mut converged = false;
        while iterations < max_iter {
            iterations += 1;
            let rhs1 = &self.b1 * &u2 + &f1;
            u1 = a1.solve(&rhs1).ok_or_else(|| Error::SingularSystem {
                context: "synthetic module 1".into(),
            })?;
            let rhs2 = &self.b2 * &u1 + &f2;
            u2 = a2.solve(&rhs2).ok_or_else(|| Error::SingularSystem {
                context: "synthetic module 2".into(),
            })?;
            let r1 = (self.operator_matrix(1, xi1) * &u1 - &self.b1 * &u2 - &f1).norm();
            let r2 = (self.operator_matrix(2, xi2) * &u2 - &self.b2 * &u1 - &f2).norm();
            let s1 = (self.operator_matrix(1, xi1) * &u1).norm().max(1e-300);
            let s2 = (self.operator_matrix(2, xi2) * &u2).norm().max(1e-300);
            if (r1 / s1).max(r2 / s2) <= eps {
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

struct SyntheticModuleOp {
    model: Arc<SyntheticLinear>,
    module: usize,
    weights: Vec<f64>,
    psi: Vec<DVector<f64>>,
    mats: Vec<crate::linalg::Csr>,
    mean_lu: crate::linalg::BandedLu,
    forcings: Vec<DVector<f64>>,
}

impl SyntheticModuleOp {
    fn new(model: Arc<SyntheticLinear>, module: usize, p: usize, q: usize) -> Result<Self> {
        let s = if module == 1 {
            model.params.s1
        } else {
            model.params.s2
        };
        let n = if module == 1 {
            model.params.n1
        } else {
            model.params.n2
        };
        let family = build_family(Distribution::UniformSymmetric, p.max(1));
        let set = total_degree_set(s, p);
        let rule = tensor_rule(&family, s, q)?;
        let psi: Vec<DVector<f64>> = rule
            .iter_nodes()
            .map(|x| DVector::from_vec(set.eval_all(&family, x)))
            .collect();
        let mut mats = Vec::with_capacity(rule.len());
        let mut forcings = Vec::with_capacity(rule.len());
        let mut mean = Banded::zeros(n, n.saturating_sub(1), n.saturating_sub(1));
        for (node, &w) in rule.iter_nodes().zip(rule.weights.iter()) {
            let a = model.operator_matrix(module, node);
            for i in 0..n {
                for j in 0..n {
                    if a[(i, j)] != 0.0 {
                        mean.add(i, j, w * a[(i, j)]);
                    }
                }
            }
            let mut triplets = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if a[(i, j)] != 0.0 {
                        triplets.push((i, j, a[(i, j)]));
                    }
                }
            }
            mats.push(crate::linalg::Csr::from_triplets(n, n, &triplets));
            forcings.push(model.forcing(module, node));
        }
        Ok(SyntheticModuleOp {
            model,
            module,
            weights: rule.weights.clone(),
            psi,
            mats,
            mean_lu: mean.factor()?,
            forcings,
        })
    }
}

impl ModuleOperator for SyntheticModuleOp {
    fn module(&self) -> usize {
        self.module
    }

    fn state_dim(&self) -> usize {
        if self.module == 1 {
            self.model.params.n1
        } else {
            self.model.params.n2
        }
    }

    fn coupled_dim(&self) -> usize {
        if self.module == 1 {
            self.model.params.n2
        } else {
            self.model.params.n1
        }
    }

    fn modular_len(&self) -> usize {
        self.psi[0].len()
    }

    fn solve(&self, own: &DMatrix<f64>, coupled: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.state_dim();
        let pb = self.modular_len();
        let b = self.model.coupling_matrix(self.module);
        let mut rhs = DMatrix::zeros(n, pb);
        for ((psi, &w), f) in self.psi.iter().zip(&self.weights).zip(&self.forcings) {
            let uc = coupled * psi;
            let r = b * uc + f;
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
            "synthetic module",
        )
    }
}
