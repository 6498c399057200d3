//! Dimension reduction of the stochastic input data exchanged between
//! modules: stack the whitened coefficient blocks, take an SVD, select the
//! reduced dimension by a relative tail tolerance, and expose the resulting
//! separable (KL-like) expansion with random coefficients.

use nalgebra::{DMatrix, DVector};

use crate::basis::{total_degree_count, BasisSplit};
use crate::galerkin::Gramian;
use crate::linalg::sorted_svd;

/// Input data for one module's reduction step: the stacked coefficient
/// matrix (own state block first) and the block Gramian that weights it.
pub struct StackedInput<'a> {
    pub module: usize,
    /// n x (P+1) stacked coefficients, columns in global basis order
    pub coeffs: &'a DMatrix<f64>,
    /// block Gramian over the stacked rows
    pub gramian: &'a Gramian,
    /// rows of the leading (own-module) state block
    pub first_rows: usize,
}

/// One retained mode of the separable expansion.
#[derive(Debug, Clone)]
pub struct ReducedMode {
    pub sigma: f64,
    /// n x (P_i+1) spatial-coefficient block on the own modular basis
    pub spatial: DMatrix<f64>,
    /// coefficient row of the scalar random factor over the complementary
    /// modular basis; the constant entry is zero by construction
    pub theta_row: DVector<f64>,
}

/// Separable reduced expansion of a module's input data.
#[derive(Debug, Clone)]
pub struct ReducedExpansion {
    pub module: usize,
    /// selected reduced dimension
    pub dim: usize,
    /// n x (P_i+1) mean block (complementary-constant columns)
    pub mean: DMatrix<f64>,
    /// all modes, full spectrum order (only the first `dim` enter the
    /// reduced approximation; the rest are kept for diagnostics)
    pub modes: Vec<ReducedMode>,
    /// full singular-value spectrum, nonincreasing
    pub sigmas: Vec<f64>,
    pub first_rows: usize,
    pub eps_dim: f64,
}

/// Assembles the whitened, zero-filled stacked matrix whose SVD drives the
/// reduction. Shape: (P'_i + 1) * n rows by P_c columns, where P'_i counts
/// own-module indices of degree <= p-1 and P_c the non-constant
/// complementary indices.
pub fn assemble_z(input: &StackedInput, split: &BasisSplit) -> DMatrix<f64> {
    let module = input.module;
    let own = split.modular(module);
    let comp = split.complementary(module);
    let own_map = split.map(module);
    let comp_map = split.complementary_map(module);
    let n = input.coeffs.nrows();
    assert_eq!(input.coeffs.ncols(), split.global_len());
    let p = split.order;
    let p_comp = comp.len() - 1;
    if p == 0 || p_comp == 0 {
        return DMatrix::zeros(0, 0);
    }
    let own_dim = own.dimension;
    let rows_blocks = total_degree_count(own_dim, p - 1);
    // whiten all columns once
    let white = input.gramian.sqrt_apply_matrix(input.coeffs);
    let mut z = DMatrix::zeros(rows_blocks * n, p_comp);
    for g in 0..split.global_len() {
        let k = comp_map[g];
        if k == 0 {
            continue;
        }
        let j = own_map[g];
        debug_assert!(own.degree(j) + comp.degree(k) <= p);
        debug_assert!(j < rows_blocks);
        let col = white.column(g);
        for r in 0..n {
            z[(j * n + r, k - 1)] = col[r];
        }
    }
    z
}

/// Runs the reduction: SVD of the stacked matrix, tail-based dimension
/// selection, un-whitened spatial blocks and zero-mean random factors.
pub fn reduce(input: &StackedInput, split: &BasisSplit, eps_dim: f64) -> ReducedExpansion {
    assert!(eps_dim > 0.0);
    let module = input.module;
    let own = split.modular(module);
    let comp = split.complementary(module);
    let own_map = split.map(module);
    let comp_map = split.complementary_map(module);
    let n = input.coeffs.nrows();
    // mean block from the complementary-constant columns
    let mut mean = DMatrix::zeros(n, own.len());
    for g in 0..split.global_len() {
        if comp_map[g] == 0 {
            mean.set_column(own_map[g], &input.coeffs.column(g));
        }
    }
    let z = assemble_z(input, split);
    if z.ncols() == 0 {
        return ReducedExpansion {
            module,
            dim: 0,
            mean,
            modes: Vec::new(),
            sigmas: Vec::new(),
            first_rows: input.first_rows,
            eps_dim,
        };
    }
    let svd = sorted_svd(&z);
    let sigmas = svd.sigma.clone();
    let total_sq: f64 = sigmas.iter().map(|s| s * s).sum();
    let dim = if total_sq == 0.0 {
        0
    } else {
        let mut d = sigmas.len();
        let mut tail = 0.0;
        // walk the spectrum from the back: d is the smallest k whose tail
        // passes the relative tolerance
        for k in (0..=sigmas.len()).rev() {
            if k < sigmas.len() {
                tail += sigmas[k] * sigmas[k];
            }
            if tail.sqrt() <= eps_dim * total_sq.sqrt() {
                d = k;
            } else {
                break;
            }
        }
        d
    };
    let rows_blocks = z.nrows() / n;
    let p_comp = comp.len() - 1;
    let mut modes = Vec::with_capacity(sigmas.len());
    for j in 0..sigmas.len() {
        // zero-padded un-whitened spatial block
        let mut spatial = DMatrix::zeros(n, own.len());
        for b in 0..rows_blocks {
            let seg = svd.u.view_range(b * n..(b + 1) * n, j..j + 1);
            let unwhite = input.gramian.inv_sqrt_apply(&seg.into_owned());
            spatial.set_column(b, &unwhite.column(0));
        }
        // zero-first-entry random factor row
        let mut theta_row = DVector::zeros(p_comp + 1);
        for k in 0..p_comp {
            theta_row[k + 1] = svd.v[(k, j)];
        }
        modes.push(ReducedMode {
            sigma: sigmas[j],
            spatial,
            theta_row,
        });
    }
    ReducedExpansion {
        module,
        dim,
        mean,
        modes,
        sigmas,
        first_rows: input.first_rows,
        eps_dim,
    }
}

/// Tail of the singular spectrum beyond `d`: the Gramian-weighted mean-square
/// truncation error of the reduced expansion.
pub fn truncation_error(exp: &ReducedExpansion, d: usize) -> f64 {
    assert!(d <= exp.sigmas.len());
    exp.sigmas[d..].iter().map(|s| s * s).sum::<f64>().sqrt()
}

impl ReducedExpansion {
    /// Affine block of the map theta -> modular coefficients: index 0 is the
    /// mean, index j >= 1 is sigma_j times the j-th spatial block.
    pub fn affine_block(&self, j: usize) -> DMatrix<f64> {
        if j == 0 {
            self.mean.clone()
        } else {
            let m = &self.modes[j - 1];
            m.sigma * &m.spatial
        }
    }

    /// Reconstructs the modular coefficient matrix at a realization of the
    /// reduced variables (length >= `self.dim`; extra entries ignored).
    pub fn reconstruct_at(&self, theta: &[f64]) -> DMatrix<f64> {
        self.reconstruct_truncated(theta, self.dim)
    }

    /// Reconstruction keeping the first `d` modes.
    pub fn reconstruct_truncated(&self, theta: &[f64], d: usize) -> DMatrix<f64> {
        let mut out = self.mean.clone();
        for j in 0..d {
            let m = &self.modes[j];
            crate::linalg::mat_axpy(&mut out, m.sigma * theta[j], &m.spatial);
        }
        out
    }

    /// Evaluates the selected reduced variables given the complementary
    /// modular basis vector at a point.
    pub fn eval_theta(&self, comp_basis: &[f64]) -> Vec<f64> {
        self.theta_truncated(comp_basis, self.dim)
    }

    /// First `d` reduced variables at a complementary basis evaluation.
    pub fn theta_truncated(&self, comp_basis: &[f64], d: usize) -> Vec<f64> {
        (0..d)
            .map(|j| {
                let row = &self.modes[j].theta_row;
                row.iter()
                    .zip(comp_basis.iter())
                    .map(|(&c, &b)| c * b)
                    .sum()
            })
            .collect()
    }

    /// Splits an n-row block matrix into the leading (own-state) block and
    /// the trailing (coupled-state) block.
    pub fn state_blocks<'m>(
        &self,
        matrix: &'m DMatrix<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = matrix.nrows();
        let first = matrix.view_range(0..self.first_rows, 0..matrix.ncols());
        let second = matrix.view_range(self.first_rows..n, 0..matrix.ncols());
        (first.into_owned(), second.into_owned())
    }
}
