//! Order reduction on the dependent reduced variables: orthonormal bases
//! from a signature-SVD of the quadrature moment matrix, projection with
//! compressed rules, lifting back to the global basis, and the order
//! selection heuristic.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::basis::{MultiIndexSet, PiMatrix};
use crate::galerkin::Gramian;
use crate::linalg::sorted_symmetric_eigen;
use crate::quadrature::{monomial_index_set, monomial_vandermonde, SparseRule};
use crate::{Error, Result};

/// Relative eigenvalue threshold below which moment-matrix directions are
/// dropped (basis shrinks to the numerical rank).
const MOMENT_RANK_TOL: f64 = 1e-12;

/// Orthonormal (up to a +-1 signature) polynomial basis on the reduced
/// variables, built from quadrature moments of the monomials.
#[derive(Debug, Clone)]
pub struct ReducedBasis {
    pub dim: usize,
    pub order: usize,
    pub monomials: MultiIndexSet,
    /// kept x (P~+1) map from monomials to basis functions
    pub transform: DMatrix<f64>,
    /// diagonal +-1 signature, one entry per kept function
    pub signature: Vec<f64>,
    /// true when the moment matrix was rank deficient and the basis spans
    /// fewer than P~+1 functions
    pub rank_deficient: bool,
    /// cached basis evaluations at the parent quadrature nodes (kept x Q)
    pub at_nodes: DMatrix<f64>,
}

/// Coefficients over a reduced basis.
#[derive(Debug, Clone)]
pub struct ReducedCoeffMatrix {
    pub order: usize,
    /// n x kept
    pub coeffs: DMatrix<f64>,
}

/// Builds the reduced basis of total order `order` from the mapped quadrature
/// nodes and (possibly signed) weights.
pub fn build_reduced_basis(thetas: &[Vec<f64>], weights: &[f64], order: usize) -> ReducedBasis {
    assert!(!thetas.is_empty());
    assert_eq!(thetas.len(), weights.len());
    let dim = thetas[0].len();
    assert!(dim >= 1);
    let m = monomial_vandermonde(thetas, order);
    let nm = m.nrows();
    let q = m.ncols();
    // weighted moment matrix H = M diag(w) M^T
    let mut h = DMatrix::zeros(nm, nm);
    for j in 0..q {
        let col = m.column(j);
        let w = weights[j];
        for a in 0..nm {
            let wa = w * col[a];
            for b in 0..nm {
                h[(a, b)] += wa * col[b];
            }
        }
    }
    let eig = sorted_symmetric_eigen(&h);
    let max_abs = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut kept = 0;
    for v in &eig.values {
        if v.abs() > MOMENT_RANK_TOL * max_abs && v.abs() > 0.0 {
            kept += 1;
        } else {
            break;
        }
    }
    let rank_deficient = kept < nm;
    let mut transform = DMatrix::zeros(kept, nm);
    let mut signature = Vec::with_capacity(kept);
    for k in 0..kept {
        let lam = eig.values[k];
        signature.push(if lam >= 0.0 { 1.0 } else { -1.0 });
        let scale = 1.0 / lam.abs().sqrt();
        for a in 0..nm {
            transform[(k, a)] = scale * eig.vectors[(a, k)];
        }
    }
    let at_nodes = &transform * &m;
    ReducedBasis {
        dim,
        order,
        monomials: monomial_index_set(dim, order),
        transform,
        signature,
        rank_deficient,
        at_nodes,
    }
}

impl ReducedBasis {
    pub fn kept(&self) -> usize {
        self.signature.len()
    }

    /// Basis vector at an arbitrary point of the reduced space.
    pub fn eval(&self, theta: &[f64]) -> DVector<f64> {
        assert_eq!(theta.len(), self.dim);
        let mono = monomial_vandermonde(&[theta.to_vec()], self.order);
        &self.transform * mono.column(0)
    }

    /// Cached basis vector at parent node `j`.
    pub fn at_node(&self, j: usize) -> DVector<f64> {
        self.at_nodes.column(j).into_owned()
    }

    /// Weighted discrete second-moment matrix of the basis over the given
    /// rule; equals the signature when the basis is consistent.
    pub fn discrete_gram(&self, weights: &[f64]) -> DMatrix<f64> {
        let k = self.kept();
        let mut g = DMatrix::zeros(k, k);
        for (j, &w) in weights.iter().enumerate() {
            let col = self.at_nodes.column(j);
            for a in 0..k {
                let wa = w * col[a];
                for b in 0..k {
                    g[(a, b)] += wa * col[b];
                }
            }
        }
        g
    }
}

/// Projects module-output samples at the sparse-rule support onto the reduced
/// basis: U~ = sum_{j in Z} w~_j u(theta_j) phi(theta_j)^T S.
pub fn reduced_project(
    samples: &BTreeMap<usize, DVector<f64>>,
    basis: &ReducedBasis,
    sparse: &SparseRule,
) -> Result<ReducedCoeffMatrix> {
    if samples.len() != sparse.support.len()
        || !sparse.support.iter().all(|j| samples.contains_key(j))
    {
        let node = sparse
            .support
            .iter()
            .find(|j| !samples.contains_key(j))
            .copied()
            .unwrap_or(usize::MAX);
        return Err(Error::SupportMismatch { node });
    }
    let n = samples
        .values()
        .next()
        .map(|v| v.len())
        .unwrap_or(0);
    let kept = basis.kept();
    let mut coeffs = DMatrix::zeros(n, kept);
    for &j in &sparse.support {
        let u = &samples[&j];
        let w = sparse.weights[j];
        let phi = basis.at_nodes.column(j);
        for k in 0..kept {
            let c = w * phi[k] * basis.signature[k];
            coeffs.column_mut(k).axpy(c, u, 1.0);
        }
    }
    Ok(ReducedCoeffMatrix {
        order: basis.order,
        coeffs,
    })
}

/// Evaluates a reduced-basis expansion at a point.
pub fn evaluate_reduced(
    coeffs: &ReducedCoeffMatrix,
    basis: &ReducedBasis,
    theta: &[f64],
) -> DVector<f64> {
    &coeffs.coeffs * basis.eval(theta)
}

/// Lifts per-support-node modular coefficient matrices to the global basis.
///
/// Stage one forms the reduced-basis coefficient blocks with the sparse rule;
/// stage two contracts the reconstructed modular matrices against the parent
/// rule and the module coupling matrices.
pub fn lift_to_global(
    outputs: &BTreeMap<usize, DMatrix<f64>>,
    basis: &ReducedBasis,
    sparse: &SparseRule,
    parent_weights: &[f64],
    pis: &[PiMatrix],
) -> Result<DMatrix<f64>> {
    if outputs.len() != sparse.support.len()
        || !sparse.support.iter().all(|j| outputs.contains_key(j))
    {
        let node = sparse
            .support
            .iter()
            .find(|j| !outputs.contains_key(j))
            .copied()
            .unwrap_or(usize::MAX);
        return Err(Error::SupportMismatch { node });
    }
    assert_eq!(parent_weights.len(), pis.len());
    assert_eq!(parent_weights.len(), sparse.weights.len());
    let first = &outputs[&sparse.support[0]];
    let n = first.nrows();
    let pb = first.ncols();
    let kept = basis.kept();
    // stage 1: blocks B_k = sum_{j in Z} w~_j S_k phi_k(theta_j) U_j
    let mut blocks = vec![DMatrix::zeros(n, pb); kept];
    for &j in &sparse.support {
        let u = &outputs[&j];
        if u.nrows() != n || u.ncols() != pb {
            return Err(Error::ShapeMismatch {
                context: "lift_to_global outputs",
                expected: format!("{n}x{pb}"),
                got: format!("{}x{}", u.nrows(), u.ncols()),
            });
        }
        let w = sparse.weights[j];
        let phi = basis.at_nodes.column(j);
        for (k, block) in blocks.iter_mut().enumerate() {
            crate::linalg::mat_axpy(block, w * basis.signature[k] * phi[k], u);
        }
    }
    // stage 2: full-rule contraction against the coupling matrices
    let np = pis[0].nrows();
    let mut out = DMatrix::zeros(n, np);
    let mut modular = DMatrix::zeros(n, pb);
    for (j, (&w, pi)) in parent_weights.iter().zip(pis.iter()).enumerate() {
        modular.fill(0.0);
        let phi = basis.at_nodes.column(j);
        for (k, block) in blocks.iter().enumerate() {
            crate::linalg::mat_axpy(&mut modular, phi[k], block);
        }
        pi.accumulate_prolong(&modular, w, &mut out);
    }
    Ok(out)
}

/// Order-selection heuristic: increment when consecutive lifted coefficient
/// matrices differ by more than the tolerance in the G-weighted norm.
pub fn select_order(
    prev_order: usize,
    coeff_at_k: &DMatrix<f64>,
    coeff_at_k_plus_1: &DMatrix<f64>,
    g: &Gramian,
    eps_ord: f64,
) -> usize {
    let diff = coeff_at_k_plus_1 - coeff_at_k;
    let dnorm = g.weighted_frobenius(&diff);
    let unorm = g.weighted_frobenius(coeff_at_k_plus_1);
    if dnorm > eps_ord * unorm {
        prev_order + 1
    } else {
        prev_order
    }
}
