//! Univariate orthonormal polynomial families and Gauss quadrature rules for
//! the independent coordinate directions of the parameter space.
//!
//! Only the symmetric uniform density on [-1, 1] is needed by the benchmark
//! models; its orthonormal family is the normalized Legendre basis. The
//! recurrence-table layout leaves room for other measures.

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Input densities supported for the univariate construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distribution {
    /// Uniform density 1/2 on [-1, 1].
    UniformSymmetric,
}

/// A family of polynomials orthonormal under the chosen density, evaluated
/// through its three-term recurrence.
///
/// For the symmetric families all diagonal recurrence coefficients vanish and
/// only the off-diagonal (Jacobi) coefficients are tabulated.
#[derive(Debug, Clone)]
pub struct PolyFamily {
    pub distribution: Distribution,
    pub max_degree: usize,
    /// `offdiag[j-1]` is the coefficient a_j in x psi_{j-1} = a_j psi_j + a_{j-1} psi_{j-2}.
    offdiag: Vec<f64>,
}

/// A univariate Gauss rule: `level` q yields q+1 nodes exact for degree 2q+1.
#[derive(Debug, Clone)]
pub struct GaussRule1D {
    pub level: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn legendre_offdiag(j: usize) -> f64 {
    // Jacobi coefficient of the orthonormal Legendre family under density 1/2
    let jf = j as f64;
    jf / (4.0 * jf * jf - 1.0).sqrt()
}

/// Builds a polynomial family orthonormal under the given density, with
/// recurrence coefficients tabulated up to `max_degree`.
pub fn build_family(distribution: Distribution, max_degree: usize) -> PolyFamily {
    let offdiag = (1..=max_degree).map(legendre_offdiag).collect();
    PolyFamily {
        distribution,
        max_degree,
        offdiag,
    }
}

impl PolyFamily {
    fn coeff(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else if j <= self.offdiag.len() {
            self.offdiag[j - 1]
        } else {
            legendre_offdiag(j)
        }
    }

    /// Evaluates psi_degree at `point` via the three-term recurrence.
    pub fn eval(&self, degree: usize, point: f64) -> Result<f64> {
        if degree > self.max_degree {
            return Err(Error::DegreeOutOfRange {
                degree,
                max_degree: self.max_degree,
            });
        }
        Ok(self.eval_unchecked(degree, point))
    }

    fn eval_unchecked(&self, degree: usize, point: f64) -> f64 {
        let mut prev = 0.0;
        let mut cur = 1.0;
        for j in 0..degree {
            let next = (point * cur - self.coeff(j) * prev) / self.coeff(j + 1);
            prev = cur;
            cur = next;
        }
        cur
    }

    /// Evaluates psi_0 .. psi_degree at `point` in one recurrence sweep.
    pub fn eval_all(&self, degree: usize, point: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(degree + 1);
        let mut prev = 0.0;
        let mut cur = 1.0;
        out.push(cur);
        for j in 0..degree {
            let next = (point * cur - self.coeff(j) * prev) / self.coeff(j + 1);
            prev = cur;
            cur = next;
            out.push(cur);
        }
        out
    }
}

/// Gauss rule of level q for the family, by eigendecomposition of the
/// (q+1)-point Jacobi matrix. Nodes are sorted ascending and, for the
/// symmetric density, symmetrized exactly about 0.
pub fn gauss_rule(family: &PolyFamily, level: usize) -> GaussRule1D {
    let n = level + 1;
    let mut jac = DMatrix::zeros(n, n);
    for j in 1..n {
        let a = family.coeff(j);
        jac[(j - 1, j)] = a;
        jac[(j, j - 1)] = a;
    }
    let eig = nalgebra::SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let node = eig.eigenvalues[k];
            let w = eig.eigenvectors[(0, k)];
            (node, w * w)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    // enforce exact symmetry for the symmetric measure
    if family.distribution == Distribution::UniformSymmetric {
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let x = 0.5 * (nodes[j] - nodes[i]);
            nodes[i] = -x;
            nodes[j] = x;
            let w = 0.5 * (weights[i] + weights[j]);
            weights[i] = w;
            weights[j] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
    }
    // weights of a probability measure sum to one; remove eigensolver drift
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    GaussRule1D {
        level,
        nodes,
        weights,
    }
}

impl GaussRule1D {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrates `f` against the family density.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(self.weights.iter())
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}
