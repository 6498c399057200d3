//! Block Gauss-Seidel orchestration of the uncertainty propagation: the
//! standard intrusive loop realized through the modular quadrature form, the
//! reduced loop with per-iteration dimension/order reduction, and the error
//! ledger that splits the observed error into its contributing terms.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::basis::{eval_pi, split_basis, BasisSplit, PiMatrix};
use crate::dimreduce::{self, StackedInput};
use crate::linalg::{gmres, BandedLu, Csr, LinOp, Precond};
use crate::ordreduce;
use crate::orthopoly::{build_family, Distribution};
use crate::quadrature::{compress_rule, tensor_rule, TensorRule};
use crate::{Error, Result};

/// Systems at or below this vectorized size are solved by dense LU; larger
/// ones go through mean-preconditioned GMRES.
const DENSE_SOLVE_LIMIT: usize = 1100;

const GMRES_TOL: f64 = 1e-12;
const GMRES_RESTART: usize = 120;
const GMRES_MAX_ITER: usize = 6000;

/// Symmetric positive-definite weighting matrix defining the norms used for
/// convergence checks, reductions and error reporting.
#[derive(Debug, Clone)]
pub enum Gramian {
    Identity(usize),
    Diagonal(DVector<f64>),
    Dense {
        mat: DMatrix<f64>,
        sqrt: DMatrix<f64>,
        inv_sqrt: DMatrix<f64>,
    },
    Block(Box<Gramian>, Box<Gramian>),
}

impl Gramian {
    pub fn identity(n: usize) -> Self {
        Gramian::Identity(n)
    }

    pub fn diagonal(d: DVector<f64>) -> Self {
        assert!(d.iter().all(|&v| v > 0.0));
        Gramian::Diagonal(d)
    }

    pub fn dense(mat: DMatrix<f64>) -> Self {
        let f = crate::linalg::symmetric_sqrt(&mat, 1e-14);
        Gramian::Dense {
            mat,
            sqrt: f.sqrt,
            inv_sqrt: f.inv_sqrt,
        }
    }

    pub fn block(top: Gramian, bottom: Gramian) -> Self {
        Gramian::Block(Box::new(top), Box::new(bottom))
    }

    pub fn dim(&self) -> usize {
        match self {
            Gramian::Identity(n) => *n,
            Gramian::Diagonal(d) => d.len(),
            Gramian::Dense { mat, .. } => mat.nrows(),
            Gramian::Block(a, b) => a.dim() + b.dim(),
        }
    }

    /// G x for a single vector.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Gramian::Identity(_) => x.clone(),
            Gramian::Diagonal(d) => x.component_mul(d),
            Gramian::Dense { mat, .. } => mat * x,
            Gramian::Block(a, b) => {
                let na = a.dim();
                let top = a.apply(&x.rows(0, na).into_owned());
                let bottom = b.apply(&x.rows(na, x.len() - na).into_owned());
                let mut out = DVector::zeros(x.len());
                out.rows_mut(0, na).copy_from(&top);
                out.rows_mut(na, x.len() - na).copy_from(&bottom);
                out
            }
        }
    }

    fn apply_matrix_with(
        &self,
        m: &DMatrix<f64>,
        f: &dyn Fn(&Gramian, &DMatrix<f64>) -> DMatrix<f64>,
    ) -> DMatrix<f64> {
        match self {
            Gramian::Block(a, b) => {
                let na = a.dim();
                let top = f(a, &m.rows(0, na).into_owned());
                let bottom = f(b, &m.rows(na, m.nrows() - na).into_owned());
                let mut out = DMatrix::zeros(m.nrows(), m.ncols());
                out.rows_mut(0, na).copy_from(&top);
                out.rows_mut(na, m.nrows() - na).copy_from(&bottom);
                out
            }
            _ => f(self, m),
        }
    }

    /// G^{1/2} M applied row-block-wise.
    pub fn sqrt_apply_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.apply_matrix_with(m, &|g, m| match g {
            Gramian::Identity(_) => m.clone(),
            Gramian::Diagonal(d) => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row *= d[i].sqrt();
                }
                out
            }
            Gramian::Dense { sqrt, .. } => sqrt * m,
            Gramian::Block(..) => unreachable!(),
        })
    }

    /// G^{-1/2} M applied row-block-wise.
    pub fn inv_sqrt_apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.apply_matrix_with(m, &|g, m| match g {
            Gramian::Identity(_) => m.clone(),
            Gramian::Diagonal(d) => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row /= d[i].sqrt();
                }
                out
            }
            Gramian::Dense { inv_sqrt, .. } => inv_sqrt * m,
            Gramian::Block(..) => unreachable!(),
        })
    }

    /// G-weighted Frobenius norm sqrt(trace(M^T G M)).
    pub fn weighted_frobenius(&self, m: &DMatrix<f64>) -> f64 {
        match self {
            Gramian::Identity(_) => m.norm(),
            Gramian::Diagonal(d) => {
                let mut acc = 0.0;
                for j in 0..m.ncols() {
                    let col = m.column(j);
                    for i in 0..m.nrows() {
                        acc += d[i] * col[i] * col[i];
                    }
                }
                acc.sqrt()
            }
            Gramian::Dense { mat, .. } => {
                let mut acc = 0.0;
                for j in 0..m.ncols() {
                    let col = m.column(j).into_owned();
                    acc += col.dot(&(mat * &col));
                }
                acc.sqrt()
            }
            Gramian::Block(a, b) => {
                let na = a.dim();
                let top = a.weighted_frobenius(&m.rows(0, na).into_owned());
                let bottom = b.weighted_frobenius(&m.rows(na, m.nrows() - na).into_owned());
                (top * top + bottom * bottom).sqrt()
            }
        }
    }
}

/// Solver contract for one module: given the current own-state modular
/// coefficients and the coupled-input modular coefficients at a pinned
/// realization of the complementary (or reduced) variables, return the
/// updated own-state coefficients of the module's Galerkin subproblem.
pub trait ModuleOperator: Sync {
    fn module(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn coupled_dim(&self) -> usize;
    /// number of own modular basis functions P_i + 1
    fn modular_len(&self) -> usize;
    fn solve(&self, own: &DMatrix<f64>, coupled: &DMatrix<f64>) -> Result<DMatrix<f64>>;
    /// Optional interface (coupling) post-map on global coefficients;
    /// identity for directly coupled states.
    fn interface_map(&self, own_global: &DMatrix<f64>) -> DMatrix<f64> {
        own_global.clone()
    }
}

/// A fully assembled two-module propagation problem.
pub struct CoupledModel {
    pub op1: Box<dyn ModuleOperator>,
    pub op2: Box<dyn ModuleOperator>,
    pub g1: Gramian,
    pub g2: Gramian,
    pub s1: usize,
    pub s2: usize,
    /// deterministic mean-parameter solution, used for the initial column
    pub mean_state1: DVector<f64>,
    pub mean_state2: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RunMode {
    Standard,
    Reduced,
}

#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub iteration: usize,
    pub module: usize,
    pub increment: f64,
    pub reduced_dim: Option<usize>,
    pub reduced_order: Option<usize>,
    pub support: Option<usize>,
    pub solve_count: usize,
    pub solve_seconds: f64,
    pub order_residual: Option<f64>,
    pub sigmas: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PropagationResult {
    pub mode: RunMode,
    pub order: usize,
    pub level: usize,
    pub u1: DMatrix<f64>,
    pub u2: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub records: Vec<IterationRecord>,
    pub final_increments: [f64; 2],
    pub module_solve_seconds: [f64; 2],
    pub module_solve_counts: [usize; 2],
    pub overhead_seconds: f64,
    /// reduced runs: Theorem-1 tails at the final iteration
    pub final_dim_tails: [f64; 2],
    /// reduced runs: whitened data norms matching the tails
    pub final_data_norms: [f64; 2],
    /// reduced runs: final order-selection ratios
    pub final_order_residuals: [f64; 2],
    /// reduced runs: final (d, p~, support) per module
    pub final_reduction: [(usize, usize, usize); 2],
}

/// Error budget of a reduced run against a reference solution.
#[derive(Clone, Debug)]
pub struct ErrorLedger {
    pub bgs: f64,
    pub gpc: f64,
    pub dim: f64,
    pub ord: f64,
    pub total: f64,
}

struct NodeSumOp<'a> {
    mats: &'a [Csr],
    weights: &'a [f64],
    psi: &'a [DVector<f64>],
    n: usize,
    pb: usize,
}

impl LinOp for NodeSumOp<'_> {
    fn dim(&self) -> usize {
        self.n * self.pb
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        let n = self.n;
        let mut v = vec![0.0; n];
        let mut av = vec![0.0; n];
        for ((mat, &w), psi) in self.mats.iter().zip(self.weights).zip(self.psi) {
            // v = X psi
            v.iter_mut().for_each(|t| *t = 0.0);
            for k in 0..self.pb {
                let pk = psi[k];
                if pk != 0.0 {
                    let base = k * n;
                    for i in 0..n {
                        v[i] += pk * x[base + i];
                    }
                }
            }
            mat.matvec(&v, &mut av);
            for k in 0..self.pb {
                let c = w * psi[k];
                if c != 0.0 {
                    let base = k * n;
                    for i in 0..n {
                        y[base + i] += c * av[i];
                    }
                }
            }
        }
    }
}

struct BlockDiagPrecond<'a> {
    lu: &'a BandedLu,
    pb: usize,
}

impl Precond for BlockDiagPrecond<'_> {
    fn apply(&self, x: &mut [f64]) {
        let n = self.lu.n();
        for k in 0..self.pb {
            self.lu.solve_in_place(&mut x[k * n..(k + 1) * n]);
        }
    }
}

/// Solves one module's Galerkin subproblem in its quadrature (node-sum)
/// representation sum_m w_m A_m X psi_m psi_m^T = RHS: dense LU at small
/// sizes, otherwise mean-preconditioned GMRES warm-started from `x0`.
pub fn solve_modular_galerkin(
    mats: &[Csr],
    weights: &[f64],
    psi: &[DVector<f64>],
    rhs: &DMatrix<f64>,
    mean_factor: &BandedLu,
    x0: &DMatrix<f64>,
    context: &str,
) -> Result<DMatrix<f64>> {
    let n = rhs.nrows();
    let pb = rhs.ncols();
    let total = n * pb;
    if total <= DENSE_SOLVE_LIMIT {
        // dense assembly of sum_m w (psi psi^T) (x) A_m
        let mut dense = DMatrix::zeros(total, total);
        for ((mat, &w), psi) in mats.iter().zip(weights).zip(psi) {
            let a = mat.to_dense();
            for k in 0..pb {
                for kp in 0..pb {
                    let c = w * psi[k] * psi[kp];
                    if c != 0.0 {
                        for i in 0..n {
                            for ip in 0..n {
                                dense[(k * n + i, kp * n + ip)] += c * a[(i, ip)];
                            }
                        }
                    }
                }
            }
        }
        let rhs_vec = DVector::from_column_slice(rhs.as_slice());
        let lu = dense.lu();
        let sol = lu.solve(&rhs_vec).ok_or_else(|| Error::SingularSystem {
            context: context.to_string(),
        })?;
        return Ok(DMatrix::from_column_slice(n, pb, sol.as_slice()));
    }
    let op = NodeSumOp {
        mats,
        weights,
        psi,
        n,
        pb,
    };
    let precond = BlockDiagPrecond {
        lu: mean_factor,
        pb,
    };
    let mut x = x0.as_slice().to_vec();
    gmres(
        &op,
        &precond,
        rhs.as_slice(),
        &mut x,
        GMRES_TOL,
        GMRES_RESTART,
        GMRES_MAX_ITER,
        context,
    )?;
    Ok(DMatrix::from_column_slice(n, pb, &x))
}

/// One modular-Galerkin BGS update of module `which` over the complementary
/// rule: project each pinned-realization solve back to the global basis.
pub fn modular_galerkin_update(
    op: &dyn ModuleOperator,
    own_global: &DMatrix<f64>,
    coupled_global: &DMatrix<f64>,
    pis: &[PiMatrix],
    weights: &[f64],
) -> Result<DMatrix<f64>> {
    let results: Vec<Result<DMatrix<f64>>> = pis
        .par_iter()
        .enumerate()
        .map(|(j, pi)| {
            let own = pi.restrict(own_global);
            let coupled = pi.restrict(coupled_global);
            op.solve(&own, &coupled).map_err(|e| Error::ModuleSolve {
                module: op.module(),
                node: j,
                source: Box::new(e),
            })
        })
        .collect();
    let mut out = DMatrix::zeros(own_global.nrows(), own_global.ncols());
    for ((res, pi), &w) in results.into_iter().zip(pis.iter()).zip(weights.iter()) {
        let modular = res?;
        pi.accumulate_prolong(&modular, w, &mut out);
    }
    Ok(out)
}

fn initial_coeffs(mean: &DVector<f64>, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(mean.len(), cols);
    m.set_column(0, mean);
    m
}

fn relative_increment(new: &DMatrix<f64>, old: &DMatrix<f64>, g: &Gramian) -> f64 {
    let diff = new - old;
    let scale = g.weighted_frobenius(new).max(f64::MIN_POSITIVE);
    g.weighted_frobenius(&diff) / scale
}

/// Shared precomputed geometry of a propagation run.
struct RunContext {
    split: BasisSplit,
    /// complementary rule and couplings for module 1 (over the block-2 box)
    rule2: TensorRule,
    pis1: Vec<PiMatrix>,
    psi2_at_nodes: Vec<Vec<f64>>,
    /// complementary rule and couplings for module 2 (over the block-1 box)
    rule1: TensorRule,
    pis2: Vec<PiMatrix>,
    psi1_at_nodes: Vec<Vec<f64>>,
}

fn build_context(model: &CoupledModel, p: usize, q: usize) -> Result<RunContext> {
    assert!(q >= p, "quadrature level must be at least the order");
    let family = build_family(Distribution::UniformSymmetric, p.max(1));
    let split = split_basis(model.s1, model.s2, p);
    if model.op1.modular_len() != split.mod1.len() || model.op2.modular_len() != split.mod2.len() {
        return Err(Error::ShapeMismatch {
            context: "module operators built for a different order",
            expected: format!("{}/{}", split.mod1.len(), split.mod2.len()),
            got: format!("{}/{}", model.op1.modular_len(), model.op2.modular_len()),
        });
    }
    let rule2 = tensor_rule(&family, model.s2, q)?;
    let rule1 = tensor_rule(&family, model.s1, q)?;
    let pis1: Vec<PiMatrix> = rule2
        .iter_nodes()
        .map(|x| eval_pi(&split, &family, 1, x))
        .collect();
    let pis2: Vec<PiMatrix> = rule1
        .iter_nodes()
        .map(|x| eval_pi(&split, &family, 2, x))
        .collect();
    let psi2_at_nodes = rule2
        .iter_nodes()
        .map(|x| split.mod2.eval_all(&family, x))
        .collect();
    let psi1_at_nodes = rule1
        .iter_nodes()
        .map(|x| split.mod1.eval_all(&family, x))
        .collect();
    Ok(RunContext {
        split,
        rule2,
        pis1,
        psi2_at_nodes,
        rule1,
        pis2,
        psi1_at_nodes,
    })
}

/// Standard ISP propagation: the block Gauss-Seidel loop over the modular
/// quadrature realization of the global Galerkin system.
pub fn run_standard_isp(
    model: &CoupledModel,
    p: usize,
    q: usize,
    eps_bgs: f64,
    max_iter: usize,
) -> Result<PropagationResult> {
    let ctx = build_context(model, p, q)?;
    let np = ctx.split.global_len();
    let mut u1 = initial_coeffs(&model.mean_state1, np);
    let mut u2 = initial_coeffs(&model.mean_state2, np);
    let mut records = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut final_inc = [f64::INFINITY; 2];
    let mut solve_seconds = [0.0f64; 2];
    let mut solve_counts = [0usize; 2];
    while iterations < max_iter {
        iterations += 1;
        let v2 = model.op2.interface_map(&u2);
        let t0 = Instant::now();
        let u1_new = modular_galerkin_update(&*model.op1, &u1, &v2, &ctx.pis1, &ctx.rule2.weights)?;
        let dt1 = t0.elapsed().as_secs_f64();
        solve_seconds[0] += dt1;
        solve_counts[0] += ctx.rule2.len();
        let inc1 = relative_increment(&u1_new, &u1, &model.g1);
        u1 = u1_new;
        let v1 = model.op1.interface_map(&u1);
        let t0 = Instant::now();
        let u2_new = modular_galerkin_update(&*model.op2, &u2, &v1, &ctx.pis2, &ctx.rule1.weights)?;
        let dt2 = t0.elapsed().as_secs_f64();
        solve_seconds[1] += dt2;
        solve_counts[1] += ctx.rule1.len();
        let inc2 = relative_increment(&u2_new, &u2, &model.g2);
        u2 = u2_new;
        records.push(IterationRecord {
            iteration: iterations,
            module: 1,
            increment: inc1,
            reduced_dim: None,
            reduced_order: None,
            support: None,
            solve_count: ctx.rule2.len(),
            solve_seconds: dt1,
            order_residual: None,
            sigmas: Vec::new(),
        });
        records.push(IterationRecord {
            iteration: iterations,
            module: 2,
            increment: inc2,
            reduced_dim: None,
            reduced_order: None,
            support: None,
            solve_count: ctx.rule1.len(),
            solve_seconds: dt2,
            order_residual: None,
            sigmas: Vec::new(),
        });
        final_inc = [inc1, inc2];
        if inc1 <= eps_bgs && inc2 <= eps_bgs {
            converged = true;
            break;
        }
    }
    Ok(PropagationResult {
        mode: RunMode::Standard,
        order: p,
        level: q,
        u1,
        u2,
        iterations,
        converged,
        records,
        final_increments: final_inc,
        module_solve_seconds: solve_seconds,
        module_solve_counts: solve_counts,
        overhead_seconds: 0.0,
        final_dim_tails: [0.0; 2],
        final_data_norms: [0.0; 2],
        final_order_residuals: [0.0; 2],
        final_reduction: [(0, 0, 0); 2],
    })
}

struct ReducedPhaseOutcome {
    updated: DMatrix<f64>,
    dim: usize,
    order: usize,
    support: usize,
    solves: usize,
    solve_seconds: f64,
    overhead_seconds: f64,
    order_residual: f64,
    dim_tail: f64,
    data_norm: f64,
    sigmas: Vec<f64>,
}

/// One reduced-ISP module update: reduce the stacked input, build the reduced
/// basis and compressed rule, solve at the support, lift at two orders and
/// apply the order-selection heuristic.
#[allow(clippy::too_many_arguments)]
fn reduced_module_phase(
    op: &dyn ModuleOperator,
    own_global: &DMatrix<f64>,
    coupled_global: &DMatrix<f64>,
    own_gramian: &Gramian,
    coupled_gramian: &Gramian,
    module: usize,
    ctx: &RunContext,
    p_tilde: usize,
    eps_dim: f64,
    eps_ord: f64,
    p_cap: usize,
) -> Result<ReducedPhaseOutcome> {
    let overhead_start = Instant::now();
    let stacked = {
        let mut m = DMatrix::zeros(
            own_global.nrows() + coupled_global.nrows(),
            own_global.ncols(),
        );
        m.rows_mut(0, own_global.nrows()).copy_from(own_global);
        m.rows_mut(own_global.nrows(), coupled_global.nrows())
            .copy_from(coupled_global);
        m
    };
    let gamma = Gramian::block(own_gramian.clone(), coupled_gramian.clone());
    let input = StackedInput {
        module,
        coeffs: &stacked,
        gramian: &gamma,
        first_rows: own_global.nrows(),
    };
    let exp = dimreduce::reduce(&input, &ctx.split, eps_dim);
    let (weights, pis, psi_nodes) = if module == 1 {
        (&ctx.rule2.weights, &ctx.pis1, &ctx.psi2_at_nodes)
    } else {
        (&ctx.rule1.weights, &ctx.pis2, &ctx.psi1_at_nodes)
    };
    let dim_tail = dimreduce::truncation_error(&exp, exp.dim);
    let data_norm = gamma.weighted_frobenius(&stacked);
    if exp.dim == 0 {
        // mean-input path: a single solve lifted through the expectation of
        // the coupling matrices
        let (own_mean, coupled_mean) = exp.state_blocks(&exp.mean);
        let overhead0 = overhead_start.elapsed().as_secs_f64();
        let t0 = Instant::now();
        let modular = op.solve(&own_mean, &coupled_mean).map_err(|e| Error::ModuleSolve {
            module,
            node: 0,
            source: Box::new(e),
        })?;
        let solve_seconds = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let mut updated = DMatrix::zeros(own_global.nrows(), own_global.ncols());
        for (pi, &w) in pis.iter().zip(weights.iter()) {
            pi.accumulate_prolong(&modular, w, &mut updated);
        }
        return Ok(ReducedPhaseOutcome {
            updated,
            dim: 0,
            order: p_tilde,
            support: 1,
            solves: 1,
            solve_seconds,
            overhead_seconds: overhead0 + t1.elapsed().as_secs_f64(),
            order_residual: 0.0,
            dim_tail,
            data_norm,
            sigmas: exp.sigmas.clone(),
        });
    }
    let thetas: Vec<Vec<f64>> = psi_nodes.iter().map(|psi| exp.eval_theta(psi)).collect();
    let basis_lo = ordreduce::build_reduced_basis(&thetas, weights, p_tilde);
    let basis_hi = ordreduce::build_reduced_basis(&thetas, weights, p_tilde + 1);
    let sparse = compress_rule(&thetas, weights, 2 * (p_tilde + 1));
    let overhead0 = overhead_start.elapsed().as_secs_f64();
    // module solves at the sparse support with affine-reconstructed inputs
    let t0 = Instant::now();
    let solve_results: Vec<(usize, Result<DMatrix<f64>>)> = sparse
        .support
        .par_iter()
        .map(|&j| {
            let rec = exp.reconstruct_at(&thetas[j]);
            let (own, coupled) = exp.state_blocks(&rec);
            let sol = op.solve(&own, &coupled).map_err(|e| Error::ModuleSolve {
                module,
                node: j,
                source: Box::new(e),
            });
            (j, sol)
        })
        .collect();
    let solve_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let mut outputs = BTreeMap::new();
    for (j, res) in solve_results {
        outputs.insert(j, res?);
    }
    let lift_lo = ordreduce::lift_to_global(&outputs, &basis_lo, &sparse, weights, pis)?;
    let lift_hi = ordreduce::lift_to_global(&outputs, &basis_hi, &sparse, weights, pis)?;
    let diff = &lift_hi - &lift_lo;
    let hi_norm = own_gramian.weighted_frobenius(&lift_hi).max(f64::MIN_POSITIVE);
    let order_residual = own_gramian.weighted_frobenius(&diff) / hi_norm;
    let new_order =
        ordreduce::select_order(p_tilde, &lift_lo, &lift_hi, own_gramian, eps_ord).min(p_cap);
    let updated = if new_order > p_tilde { lift_hi } else { lift_lo };
    Ok(ReducedPhaseOutcome {
        updated,
        dim: exp.dim,
        order: new_order,
        support: sparse.support_len(),
        solves: sparse.support_len(),
        solve_seconds,
        overhead_seconds: overhead0 + t1.elapsed().as_secs_f64(),
        order_residual,
        dim_tail,
        data_norm,
        sigmas: exp.sigmas.clone(),
    })
}

/// Reduced ISP propagation per the two-module reduction loop: dimension
/// reduction, reduced basis + compressed rule, support-only module solves,
/// two-order lifting and the order heuristic, wrapped in BGS.
#[allow(clippy::too_many_arguments)]
pub fn run_reduced_isp(
    model: &CoupledModel,
    p: usize,
    q: usize,
    eps_dim: [f64; 2],
    eps_ord: [f64; 2],
    eps_bgs: f64,
    max_iter: usize,
) -> Result<PropagationResult> {
    let ctx = build_context(model, p, q)?;
    let np = ctx.split.global_len();
    let mut u1 = initial_coeffs(&model.mean_state1, np);
    let mut u2 = initial_coeffs(&model.mean_state2, np);
    let mut p_tilde = [0usize; 2];
    let mut records = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut final_inc = [f64::INFINITY; 2];
    let mut solve_seconds = [0.0f64; 2];
    let mut solve_counts = [0usize; 2];
    let mut overhead = 0.0;
    let mut final_dim_tails = [0.0; 2];
    let mut final_data_norms = [0.0; 2];
    let mut final_order_residuals = [0.0; 2];
    let mut final_reduction = [(0usize, 0usize, 0usize); 2];
    while iterations < max_iter {
        iterations += 1;
        let v2 = model.op2.interface_map(&u2);
        let phase1 = reduced_module_phase(
            &*model.op1,
            &u1,
            &v2,
            &model.g1,
            &model.g2,
            1,
            &ctx,
            p_tilde[0],
            eps_dim[0],
            eps_ord[0],
            p,
        )?;
        p_tilde[0] = phase1.order;
        let inc1 = relative_increment(&phase1.updated, &u1, &model.g1);
        u1 = phase1.updated;
        solve_seconds[0] += phase1.solve_seconds;
        solve_counts[0] += phase1.solves;
        overhead += phase1.overhead_seconds;
        let v1 = model.op1.interface_map(&u1);
        let phase2 = reduced_module_phase(
            &*model.op2,
            &u2,
            &v1,
            &model.g2,
            &model.g1,
            2,
            &ctx,
            p_tilde[1],
            eps_dim[1],
            eps_ord[1],
            p,
        )?;
        p_tilde[1] = phase2.order;
        let inc2 = relative_increment(&phase2.updated, &u2, &model.g2);
        u2 = phase2.updated;
        solve_seconds[1] += phase2.solve_seconds;
        solve_counts[1] += phase2.solves;
        overhead += phase2.overhead_seconds;
        records.push(IterationRecord {
            iteration: iterations,
            module: 1,
            increment: inc1,
            reduced_dim: Some(phase1.dim),
            reduced_order: Some(phase1.order),
            support: Some(phase1.support),
            solve_count: phase1.solves,
            solve_seconds: phase1.solve_seconds,
            order_residual: Some(phase1.order_residual),
            sigmas: phase1.sigmas.clone(),
        });
        records.push(IterationRecord {
            iteration: iterations,
            module: 2,
            increment: inc2,
            reduced_dim: Some(phase2.dim),
            reduced_order: Some(phase2.order),
            support: Some(phase2.support),
            solve_count: phase2.solves,
            solve_seconds: phase2.solve_seconds,
            order_residual: Some(phase2.order_residual),
            sigmas: phase2.sigmas.clone(),
        });
        final_inc = [inc1, inc2];
        final_dim_tails = [phase1.dim_tail, phase2.dim_tail];
        final_data_norms = [phase1.data_norm, phase2.data_norm];
        final_order_residuals = [phase1.order_residual, phase2.order_residual];
        final_reduction = [
            (phase1.dim, phase1.order, phase1.support),
            (phase2.dim, phase2.order, phase2.support),
        ];
        if inc1 <= eps_bgs && inc2 <= eps_bgs {
            converged = true;
            break;
        }
    }
    Ok(PropagationResult {
        mode: RunMode::Reduced,
        order: p,
        level: q,
        u1,
        u2,
        iterations,
        converged,
        records,
        final_increments: final_inc,
        module_solve_seconds: solve_seconds,
        module_solve_counts: solve_counts,
        overhead_seconds: overhead,
        final_dim_tails,
        final_data_norms,
        final_order_residuals,
        final_reduction,
    })
}

/// Pads a lower-order coefficient matrix to a higher-order column count; the
/// graded ordering makes the lower basis a prefix of the higher one.
pub fn embed_coefficients(lower: &DMatrix<f64>, cols: usize) -> DMatrix<f64> {
    assert!(lower.ncols() <= cols);
    let mut out = DMatrix::zeros(lower.nrows(), cols);
    out.columns_mut(0, lower.ncols()).copy_from(lower);
    out
}

/// Reference against which the total error is measured.
pub enum ReferenceSolution<'a> {
    /// a higher-fidelity propagation run
    Run(&'a PropagationResult),
    /// ensemble statistics (e.g. from Monte-Carlo)
    Moments {
        mean1: DVector<f64>,
        std1: DVector<f64>,
        mean2: DVector<f64>,
        std2: DVector<f64>,
    },
}

fn coeff_moments(u: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let mean = u.column(0).into_owned();
    let mut std = DVector::zeros(u.nrows());
    for j in 1..u.ncols() {
        let col = u.column(j);
        for i in 0..u.nrows() {
            std[i] += col[i] * col[i];
        }
    }
    std.apply(|v: &mut f64| *v = v.sqrt());
    (mean, std)
}

/// Relative G-weighted discrepancy of stacked (mean, std) statistics between
/// a run and a reference; the documented epsilon metric of the comparison
/// tables.
pub fn stat_discrepancy(
    result: &PropagationResult,
    reference: &ReferenceSolution,
    g1: &Gramian,
    g2: &Gramian,
) -> f64 {
    let (m1, s1) = coeff_moments(&result.u1);
    let (m2, s2) = coeff_moments(&result.u2);
    let (rm1, rs1, rm2, rs2) = match reference {
        ReferenceSolution::Run(r) => {
            let (a, b) = coeff_moments(&r.u1);
            let (c, d) = coeff_moments(&r.u2);
            (a, b, c, d)
        }
        ReferenceSolution::Moments {
            mean1,
            std1,
            mean2,
            std2,
        } => (mean1.clone(), std1.clone(), mean2.clone(), std2.clone()),
    };
    let sq = |g: &Gramian, v: &DVector<f64>| {
        let n = g.weighted_frobenius(&DMatrix::from_column_slice(v.len(), 1, v.as_slice()));
        n * n
    };
    let num = sq(g1, &(&m1 - &rm1)) + sq(g1, &(&s1 - &rs1)) + sq(g2, &(&m2 - &rm2))
        + sq(g2, &(&s2 - &rs2));
    let den = sq(g1, &rm1) + sq(g1, &rs1) + sq(g2, &rm2) + sq(g2, &rs2);
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// Assembles the error budget of a run: final BGS increment, gPC truncation
/// estimated against a lower-order run, the Theorem-1 dimension tails, the
/// final order-selection residual, and the total against the reference.
pub fn error_ledger(
    result: &PropagationResult,
    lower_order: Option<&PropagationResult>,
    reference: &ReferenceSolution,
    g1: &Gramian,
    g2: &Gramian,
) -> ErrorLedger {
    let bgs = result.final_increments[0].max(result.final_increments[1]);
    let gpc = match lower_order {
        Some(lo) => {
            let d1 = &result.u1 - embed_coefficients(&lo.u1, result.u1.ncols());
            let d2 = &result.u2 - embed_coefficients(&lo.u2, result.u2.ncols());
            let num = g1.weighted_frobenius(&d1).powi(2) + g2.weighted_frobenius(&d2).powi(2);
            let den = g1.weighted_frobenius(&result.u1).powi(2)
                + g2.weighted_frobenius(&result.u2).powi(2);
            (num / den.max(f64::MIN_POSITIVE)).sqrt()
        }
        None => 0.0,
    };
    let dim_num: f64 = result.final_dim_tails.iter().map(|t| t * t).sum();
    let dim_den: f64 = result.final_data_norms.iter().map(|n| n * n).sum();
    let dim = if dim_den > 0.0 {
        (dim_num / dim_den).sqrt()
    } else {
        0.0
    };
    let ord = result.final_order_residuals[0].max(result.final_order_residuals[1]);
    let total = stat_discrepancy(result, reference, g1, g2);
    ErrorLedger {
        bgs,
        gpc,
        dim,
        ord,
        total,
    }
}
