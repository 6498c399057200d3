//! Small dense/sparse linear-algebra kernels shared by the solver stack:
//! banded LU with partial pivoting, CSR matrices, a right-preconditioned
//! restarted GMRES, Householder QR with column pivoting, and deterministic
//! (sign-fixed, sorted) wrappers around nalgebra's SVD and symmetric eigen.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Banded matrix in LAPACK-style band storage with room for pivoting fill.
///
/// Row `i` couples to columns `i-kl ..= i+ku`. Storage holds `2*kl + ku + 1`
/// diagonals so partial pivoting can spill into the extra `kl` superdiagonals.
#[derive(Debug, Clone)]
pub struct Banded {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    /// `data[d][j]` is entry (i, j) with diagonal offset d = i - j + kl + ku
    /// for the working band (including fill rows).
    data: Vec<Vec<f64>>,
}

impl Banded {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let rows = 2 * kl + ku + 1;
        Banded {
            n,
            kl,
            ku,
            data: vec![vec![0.0; n]; rows],
        }
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> Option<usize> {
        // the working band includes kl extra superdiagonals of pivoting fill
        let d = i as isize - j as isize + (self.kl + self.ku) as isize;
        if d < 0 || d >= (2 * self.kl + self.ku + 1) as isize {
            None
        } else {
            Some(d as usize)
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let d = self
            .offset(i, j)
            .unwrap_or_else(|| panic!("entry ({i},{j}) outside band kl={} ku={}", self.kl, self.ku));
        self.data[d][j] += v;
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let d = self
            .offset(i, j)
            .unwrap_or_else(|| panic!("entry ({i},{j}) outside band kl={} ku={}", self.kl, self.ku));
        self.data[d][j] = v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self.offset(i, j) {
            Some(d) => self.data[d][j],
            None => 0.0,
        }
    }

    /// Zeroes a row inside the band (used when pinning Dirichlet-style rows).
    pub fn clear_row(&mut self, i: usize) {
        let lo = i.saturating_sub(self.kl);
        let hi = (i + self.ku).min(self.n - 1);
        for j in lo..=hi {
            if let Some(d) = self.offset(i, j) {
                self.data[d][j] = 0.0;
            }
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for yi in y.iter_mut() {
            *yi = 0.0;
        }
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += self.get(i, j) * x[j];
            }
            *yi = acc;
        }
    }

    /// `self += c * other`; bands must be compatible.
    pub fn axpy(&mut self, c: f64, other: &Banded) {
        assert_eq!(self.n, other.n);
        assert!(self.kl >= other.kl && self.ku >= other.ku);
        for i in 0..self.n {
            let lo = i.saturating_sub(other.kl);
            let hi = (i + other.ku).min(self.n - 1);
            for j in lo..=hi {
                let v = other.get(i, j);
                if v != 0.0 {
                    self.add(i, j, c * v);
                }
            }
        }
    }

    /// Drops explicit zeros and converts to CSR.
    pub fn to_csr(&self) -> Csr {
        let mut triplets = Vec::new();
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            for j in lo..=hi {
                let v = self.get(i, j);
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Csr::from_triplets(self.n, self.n, &triplets)
    }

    /// In-place LU factorization with partial pivoting (LAPACK `gbtrf` layout).
    pub fn factor(mut self) -> Result<BandedLu> {
        let n = self.n;
        let kl = self.kl;
        let ku = self.ku;
        let kv = kl + ku; // width of the upper working band
        let mut pivots = vec![0usize; n];
        for k in 0..n {
            // pick pivot among rows k..=min(k+kl, n-1)
            let last = (k + kl).min(n - 1);
            let mut piv = k;
            let mut maxval = self.get(k, k).abs();
            for i in (k + 1)..=last {
                let v = self.get(i, k).abs();
                if v > maxval {
                    maxval = v;
                    piv = i;
                }
            }
            if maxval == 0.0 {
                return Err(Error::SingularSystem {
                    context: format!("banded LU pivot {k} is exactly zero"),
                });
            }
            pivots[k] = piv;
            if piv != k {
                // swap rows k and piv across columns k..=min(k+kv, n-1)
                let jhi = (k + kv).min(n - 1);
                for j in k..=jhi {
                    let a = self.get(k, j);
                    let b = self.get(piv, j);
                    self.set(k, j, b);
                    self.set(piv, j, a);
                }
            }
            let pivot = self.get(k, k);
            for i in (k + 1)..=last {
                let l = self.get(i, k) / pivot;
                self.set(i, k, l);
                if l != 0.0 {
                    let jhi = (k + kv).min(n - 1);
                    for j in (k + 1)..=jhi {
                        let v = self.get(i, j) - l * self.get(k, j);
                        self.set(i, j, v);
                    }
                }
            }
        }
        Ok(BandedLu { mat: self, pivots })
    }
}

/// Factored banded matrix; solves by forward/backward substitution.
#[derive(Debug, Clone)]
pub struct BandedLu {
    mat: Banded,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn n(&self) -> usize {
        self.mat.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.mat.n;
        let kl = self.mat.kl;
        let kv = kl + self.mat.ku;
        // apply permutation and L
        for k in 0..n {
            let piv = self.pivots[k];
            if piv != k {
                b.swap(k, piv);
            }
            let last = (k + kl).min(n - 1);
            for i in (k + 1)..=last {
                b[i] -= self.mat.get(i, k) * b[k];
            }
        }
        // back substitution with U
        for k in (0..n).rev() {
            let jhi = (k + kv).min(n - 1);
            let mut acc = b[k];
            for j in (k + 1)..=jhi {
                acc -= self.mat.get(k, j) * b[j];
            }
            b[k] = acc / self.mat.get(k, k);
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Builds from unsorted triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(i, j, v) in triplets {
            per_row[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in per_row.iter_mut() {
            row.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut v = 0.0;
                while k < row.len() && row[k].0 == j {
                    v += row[k].1;
                    k += 1;
                }
                col_idx.push(j);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Csr {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k])] += self.vals[k];
            }
        }
        m
    }
}

/// Linear operator interface for the iterative solver.
pub trait LinOp: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// Right preconditioner interface: overwrites `x` with `M^{-1} x`.
pub trait Precond: Sync {
    fn apply(&self, x: &mut [f64]);
}

pub struct IdentityPrecond;

impl Precond for IdentityPrecond {
    fn apply(&self, _x: &mut [f64]) {}
}

/// Right-preconditioned restarted GMRES. The returned solution satisfies
/// `||b - A x|| <= tol * ||b||` in the true (unpreconditioned) residual.
///
/// `x` carries the initial guess on entry.
pub fn gmres(
    op: &dyn LinOp,
    precond: &dyn Precond,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    restart: usize,
    max_iter: usize,
    context: &str,
) -> Result<usize> {
    let n = op.dim();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let target = tol * bnorm;
    let mut total_iters = 0usize;
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    loop {
        op.apply(x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let mut beta = norm2(&r);
        if beta <= target {
            return Ok(total_iters);
        }
        if total_iters >= max_iter {
            return Err(Error::SolveNotConverged {
                context: context.to_string(),
                residual: beta / bnorm,
            });
        }
        let m = restart.min(max_iter - total_iters).max(1);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![0.0f64; m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![0.0f64; m];
        let mut g = vec![0.0f64; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            // w = A M^{-1} v_k
            let mut z = basis[k].clone();
            precond.apply(&mut z);
            op.apply(&z, &mut w);
            // modified Gram-Schmidt
            for (i, v) in basis.iter().enumerate() {
                let hik = dot(&w, v);
                h[i][k] = hik;
                for (wj, vj) in w.iter_mut().zip(v.iter()) {
                    *wj -= hik * vj;
                }
            }
            let hk1 = norm2(&w);
            h[k + 1][k] = hk1;
            // apply accumulated Givens rotations to column k
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let denom = (h[k][k] * h[k][k] + hk1 * hk1).sqrt();
            if denom == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = h[k][k] / denom;
            sn[k] = hk1 / denom;
            h[k][k] = denom;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            total_iters += 1;
            k_used = k + 1;
            beta = g[k + 1].abs();
            if beta <= target || hk1 == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hk1).collect());
        }
        if k_used == 0 {
            return Err(Error::SolveNotConverged {
                context: context.to_string(),
                residual: beta / bnorm,
            });
        }
        // solve the small triangular system and update x
        let mut y = vec![0.0f64; k_used];
        for i in (0..k_used).rev() {
            let mut acc = g[i];
            for j in (i + 1)..k_used {
                acc -= h[i][j] * y[j];
            }
            y[i] = acc / h[i][i];
        }
        let mut update = vec![0.0f64; n];
        for (j, yj) in y.iter().enumerate() {
            for (ui, vi) in update.iter_mut().zip(basis[j].iter()) {
                *ui += yj * vi;
            }
        }
        precond.apply(&mut update);
        for (xi, ui) in x.iter_mut().zip(update.iter()) {
            *xi += ui;
        }
    }
}

/// In-place matrix update y += a * x.
pub fn mat_axpy(y: &mut DMatrix<f64>, a: f64, x: &DMatrix<f64>) {
    assert_eq!(y.shape(), x.shape());
    y.as_mut_slice()
        .iter_mut()
        .zip(x.as_slice().iter())
        .for_each(|(yi, &xi)| *yi += a * xi);
}

#[inline]
pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Householder QR with column pivoting of `a`, returning the orthonormal
/// factor thin-Q (n x r), the triangular factor R (r x m, permuted columns),
/// the pivot order, and the numerical rank.
///
/// Pivot choice: largest remaining column norm, ties broken by lowest index.
/// Rank: columns with |R[k][k]| < rank_tol * |R[0][0]| are dropped.
pub struct PivotedQr {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub pivots: Vec<usize>,
    pub rank: usize,
}

pub fn pivoted_qr(a: &DMatrix<f64>, rank_tol: f64) -> PivotedQr {
    let n = a.nrows();
    let m = a.ncols();
    let kmax = n.min(m);
    let mut work = a.clone();
    let mut pivots: Vec<usize> = (0..m).collect();
    let mut colnorms: Vec<f64> = (0..m).map(|j| work.column(j).norm_squared()).collect();
    let mut hh: Vec<DVector<f64>> = Vec::with_capacity(kmax);
    let mut rank = 0usize;
    let mut first_diag = 0.0f64;
    for k in 0..kmax {
        // recompute trailing norms exactly: cheap at our sizes, avoids the
        // classic cancellation failure of downdated norms
        for (j, norm) in colnorms.iter_mut().enumerate().skip(k) {
            *norm = work.view_range(k..n, j..j + 1).norm_squared();
        }
        let mut best = k;
        let mut bestval = colnorms[k];
        for j in (k + 1)..m {
            if colnorms[j] > bestval {
                bestval = colnorms[j];
                best = j;
            }
        }
        if best != k {
            work.swap_columns(k, best);
            pivots.swap(k, best);
            colnorms.swap(k, best);
        }
        // Householder vector for column k
        let mut v = DVector::zeros(n - k);
        for i in k..n {
            v[i - k] = work[(i, k)];
        }
        let alpha = v.norm();
        if alpha == 0.0 {
            hh.push(v);
            continue;
        }
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vnorm = v.norm();
        if vnorm > 0.0 {
            v /= vnorm;
        }
        // apply reflection to trailing columns
        for j in k..m {
            let mut s = 0.0;
            for i in k..n {
                s += v[i - k] * work[(i, j)];
            }
            s *= 2.0;
            for i in k..n {
                work[(i, j)] -= s * v[i - k];
            }
        }
        hh.push(v);
        let diag = work[(k, k)].abs();
        if k == 0 {
            first_diag = diag;
        }
        if diag >= rank_tol * first_diag && diag > 0.0 {
            rank = k + 1;
        } else {
            break;
        }
    }
    // R: first `rank` rows of the reduced matrix
    let mut r = DMatrix::zeros(rank, m);
    for i in 0..rank {
        for j in i..m {
            r[(i, j)] = work[(i, j)];
        }
    }
    // thin Q: apply reflections to the first `rank` identity columns
    let mut q = DMatrix::zeros(n, rank);
    for j in 0..rank {
        q[(j, j)] = 1.0;
    }
    for k in (0..hh.len().min(rank)).rev() {
        let v = &hh[k];
        if v.norm() == 0.0 {
            continue;
        }
        for j in 0..rank {
            let mut s = 0.0;
            for i in k..n {
                s += v[i - k] * q[(i, j)];
            }
            s *= 2.0;
            for i in k..n {
                q[(i, j)] -= s * v[i - k];
            }
        }
    }
    PivotedQr {
        q,
        r,
        pivots,
        rank,
    }
}

/// Thin SVD with singular values sorted descending and a deterministic sign
/// convention: each left singular vector's largest-magnitude entry is made
/// positive (ties resolved to the lowest index), with the matching right
/// vector flipped consistently.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<f64>,
}

pub fn sorted_svd(a: &DMatrix<f64>) -> SortedSvd {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("svd requested u");
    let vt = svd.v_t.expect("svd requested v_t");
    let s = svd.singular_values;
    let k = s.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap().then(i.cmp(&j)));
    let mut uo = DMatrix::zeros(u.nrows(), k);
    let mut vo = DMatrix::zeros(vt.ncols(), k);
    let mut sigma = Vec::with_capacity(k);
    for (new, &old) in order.iter().enumerate() {
        sigma.push(s[old]);
        let ucol = u.column(old);
        let vrow = vt.row(old);
        let mut flip = 1.0;
        let mut maxabs = -1.0;
        for (i, &val) in ucol.iter().enumerate() {
            if val.abs() > maxabs {
                maxabs = val.abs();
                flip = if val >= 0.0 { 1.0 } else { -1.0 };
                let _ = i;
            }
        }
        for i in 0..u.nrows() {
            uo[(i, new)] = flip * ucol[i];
        }
        for i in 0..vt.ncols() {
            vo[(i, new)] = flip * vrow[i];
        }
    }
    SortedSvd {
        u: uo,
        sigma,
        v: vo,
    }
}

/// Symmetric eigendecomposition sorted by |eigenvalue| descending with the
/// same deterministic sign convention as [`sorted_svd`].
pub struct SortedSymEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn sorted_symmetric_eigen(a: &DMatrix<f64>) -> SortedSymEigen {
    let eig = nalgebra::SymmetricEigen::new(a.clone());
    let k = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .abs()
            .partial_cmp(&eig.eigenvalues[i].abs())
            .unwrap()
            .then(i.cmp(&j))
    });
    let mut values = Vec::with_capacity(k);
    let mut vectors = DMatrix::zeros(a.nrows(), k);
    for (new, &old) in order.iter().enumerate() {
        values.push(eig.eigenvalues[old]);
        let col = eig.eigenvectors.column(old);
        let mut flip = 1.0;
        let mut maxabs = -1.0;
        for &val in col.iter() {
            if val.abs() > maxabs {
                maxabs = val.abs();
                flip = if val >= 0.0 { 1.0 } else { -1.0 };
            }
        }
        for i in 0..a.nrows() {
            vectors[(i, new)] = flip * col[i];
        }
    }
    SortedSymEigen { values, vectors }
}

/// Symmetric positive-semidefinite square root and inverse square root via
/// eigendecomposition. Eigenvalues below `floor * max` are treated as zero in
/// the inverse.
pub struct SymSqrt {
    pub sqrt: DMatrix<f64>,
    pub inv_sqrt: DMatrix<f64>,
}

pub fn symmetric_sqrt(a: &DMatrix<f64>, floor: f64) -> SymSqrt {
    let eig = nalgebra::SymmetricEigen::new(a.clone());
    let maxval = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let n = a.nrows();
    let mut sqrt = DMatrix::zeros(n, n);
    let mut inv = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = eig.eigenvalues[k].max(0.0);
        let s = lam.sqrt();
        let si = if lam > floor * maxval { 1.0 / s } else { 0.0 };
        let v = eig.eigenvectors.column(k);
        for i in 0..n {
            for j in 0..n {
                let vij = v[i] * v[j];
                sqrt[(i, j)] += s * vij;
                inv[(i, j)] += si * vij;
            }
        }
    }
    SymSqrt {
        sqrt,
        inv_sqrt: inv,
    }
}
