//! Tensor-product quadrature over parameter boxes and pivoted-QR weight
//! compression producing weakly optimal sparse rules on transformed
//! (dependent) variables.

use nalgebra::DMatrix;

use crate::basis::{total_degree_set, MultiIndexSet};
use crate::linalg::pivoted_qr;
use crate::orthopoly::{gauss_rule, PolyFamily};
use crate::{Error, Result};

/// Default cap on tensor-rule size before construction errors out.
pub const DEFAULT_RULE_CAP: usize = 1_000_000;

/// Relative threshold on pivoted-QR diagonals used for rank detection.
pub const QR_RANK_TOL: f64 = 1e-12;

/// Full tensor-product Gauss rule over an `s`-dimensional parameter box.
#[derive(Debug, Clone)]
pub struct TensorRule {
    pub dimension: usize,
    pub level: usize,
    /// flattened nodes, `dimension` coordinates per point
    nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Builds the level-`q` tensor rule in `s` dimensions. Node ordering is the
/// odometer over dimensions with the last dimension fastest.
pub fn tensor_rule(family: &PolyFamily, s: usize, q: usize) -> Result<TensorRule> {
    tensor_rule_capped(family, s, q, DEFAULT_RULE_CAP)
}

pub fn tensor_rule_capped(
    family: &PolyFamily,
    s: usize,
    q: usize,
    cap: usize,
) -> Result<TensorRule> {
    assert!(s >= 1);
    let base = gauss_rule(family, q);
    let per_dim = base.len();
    let mut size = 1usize;
    for _ in 0..s {
        size = size.checked_mul(per_dim).ok_or(Error::RuleTooLarge {
            size: usize::MAX,
            cap,
        })?;
        if size > cap {
            return Err(Error::RuleTooLarge { size, cap });
        }
    }
    let mut nodes = Vec::with_capacity(size * s);
    let mut weights = Vec::with_capacity(size);
    let mut digits = vec![0usize; s];
    loop {
        let mut w = 1.0;
        for &d in digits.iter() {
            w *= base.weights[d];
        }
        for &d in digits.iter() {
            nodes.push(base.nodes[d]);
        }
        weights.push(w);
        // odometer increment, last dimension fastest
        let mut k = s;
        loop {
            if k == 0 {
                return Ok(TensorRule {
                    dimension: s,
                    level: q,
                    nodes,
                    weights,
                });
            }
            k -= 1;
            digits[k] += 1;
            if digits[k] < per_dim {
                break;
            }
            digits[k] = 0;
        }
    }
}

impl TensorRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.nodes[j * self.dimension..(j + 1) * self.dimension]
    }

    pub fn iter_nodes(&self) -> impl Iterator<Item = &[f64]> {
        self.nodes.chunks_exact(self.dimension)
    }

    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.iter_nodes()
            .zip(self.weights.iter())
            .map(|(x, &w)| w * f(x))
            .sum()
    }
}

/// Sparse reweighting of a parent rule on mapped variables: same nodes, most
/// weights zero, moments up to the target degree preserved.
#[derive(Debug, Clone)]
pub struct SparseRule {
    /// dimension of the mapped variable
    pub dimension: usize,
    /// target total degree (the rule matches all monomial moments <= this)
    pub target_degree: usize,
    /// weights over all parent nodes, mostly zero
    pub weights: Vec<f64>,
    /// indices of the structurally nonzero weights, ascending
    pub support: Vec<usize>,
    /// numerical rank of the monomial Vandermonde (support bound)
    pub rank: usize,
}

impl SparseRule {
    pub fn support_len(&self) -> usize {
        self.support.len()
    }
}

/// Monomial Vandermonde: row order is the canonical graded monomial order,
/// column k holds the monomials evaluated at `points[k]`.
pub fn monomial_vandermonde(points: &[Vec<f64>], degree: usize) -> DMatrix<f64> {
    assert!(!points.is_empty());
    let d = points[0].len();
    assert!(d >= 1);
    let set = total_degree_set(d, degree);
    let mut m = DMatrix::zeros(set.len(), points.len());
    for (k, pt) in points.iter().enumerate() {
        assert_eq!(pt.len(), d);
        for (r, idx) in set.iter().enumerate() {
            let mut v = 1.0;
            for (&a, &x) in idx.iter().zip(pt.iter()) {
                v *= x.powi(a as i32);
            }
            m[(r, k)] = v;
        }
    }
    m
}

/// Monomial index set matching the Vandermonde row order.
pub fn monomial_index_set(d: usize, degree: usize) -> MultiIndexSet {
    total_degree_set(d, degree)
}

/// Compresses a quadrature rule on mapped points so that all monomial moments
/// of total degree <= `target_degree` are preserved with at most
/// rank-of-Vandermonde nonzero weights.
///
/// The two-stage pivoted-QR route: orthonormalize the Vandermonde rows, then
/// pivot among nodes and back-solve for the surviving weights.
pub fn compress_rule(points: &[Vec<f64>], weights: &[f64], target_degree: usize) -> SparseRule {
    assert_eq!(points.len(), weights.len());
    let q = points.len();
    let d = points[0].len();
    let m = monomial_vandermonde(points, target_degree);
    // stage 1: pivoted QR of M^T reveals the row space of M
    let f1 = pivoted_qr(&m.transpose(), QR_RANK_TOL);
    let r = f1.rank;
    if r == 0 {
        // degenerate: single-point rule carrying the total mass
        let total: f64 = weights.iter().sum();
        let mut w = vec![0.0; q];
        w[0] = total;
        return SparseRule {
            dimension: d,
            target_degree,
            weights: w,
            support: vec![0],
            rank: 0,
        };
    }
    // stage 2: pivoted QR of Q_r^T selects r nodes
    let qrt = f1.q.transpose(); // r x Q
    let f2 = pivoted_qr(&qrt, 0.0);
    // permuted weights
    let wp: Vec<f64> = f2.pivots.iter().map(|&j| weights[j]).collect();
    // z = R_r^{-1} (R * P^T w), nonzeros placed at the first r pivots
    let rfull = &f2.r; // r x Q, upper trapezoidal
    let mut rhs = vec![0.0f64; r];
    for (i, item) in rhs.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..q {
            acc += rfull[(i, j)] * wp[j];
        }
        *item = acc;
    }
    // back substitution with the leading r x r triangle
    let mut z = vec![0.0f64; r];
    for i in (0..r).rev() {
        let mut acc = rhs[i];
        for j in (i + 1)..r {
            acc -= rfull[(i, j)] * z[j];
        }
        z[i] = acc / rfull[(i, i)];
    }
    let mut w = vec![0.0f64; q];
    for (k, &zk) in z.iter().enumerate() {
        w[f2.pivots[k]] = zk;
    }
    let mut support: Vec<usize> = f2.pivots[..r]
        .iter()
        .copied()
        .filter(|&j| w[j] != 0.0)
        .collect();
    support.sort_unstable();
    SparseRule {
        dimension: d,
        target_degree,
        weights: w,
        support,
        rank: r,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::total_degree_count;
    use crate::orthopoly::{build_family, Distribution};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn fam(p: usize) -> PolyFamily {
        build_family(Distribution::UniformSymmetric, p)
    }

    #[test]
    fn two_dim_level_one_product_rule() {
        let r = tensor_rule(&fam(1), 2, 1).unwrap();
        assert_eq!(r.len(), 4);
        let g = 1.0 / 3f64.sqrt();
        let expect = [[-g, -g], [-g, g], [g, -g], [g, g]];
        for (j, e) in expect.iter().enumerate() {
            assert_abs_diff_eq!(r.node(j)[0], e[0], epsilon = 1e-14);
            assert_abs_diff_eq!(r.node(j)[1], e[1], epsilon = 1e-14);
            assert_abs_diff_eq!(r.weights[j], 0.25, epsilon = 1e-14);
        }
    }

    #[test]
    fn three_dim_level_four_count() {
        let r = tensor_rule(&fam(4), 3, 4).unwrap();
        assert_eq!(r.len(), 125);
    }

    #[test]
    fn product_moment_is_exact() {
        let r = tensor_rule(&fam(2), 2, 2).unwrap();
        let v = r.integrate(|x| x[0] * x[0] * x[1] * x[1]);
        assert_abs_diff_eq!(v, 1.0 / 9.0, epsilon = 1e-14);
    }

    #[test]
    fn cap_is_enforced() {
        let err = tensor_rule_capped(&fam(9), 7, 9, 1_000_000).unwrap_err();
        match err {
            Error::RuleTooLarge { size, cap } => {
                assert!(size > cap);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn tensor_exactness_total_degree() {
        // all multivariate monomials of total degree <= 2q+1 integrate exactly
        for &(s, q) in &[(2usize, 2usize), (3, 1), (2, 3)] {
            let r = tensor_rule(&fam(q), s, q).unwrap();
            let set = total_degree_set(s, 2 * q + 1);
            for idx in set.iter() {
                let got = r.integrate(|x| {
                    idx.iter()
                        .zip(x.iter())
                        .map(|(&a, &xi)| xi.powi(a as i32))
                        .product()
                });
                let want: f64 = idx
                    .iter()
                    .map(|&a| if a % 2 == 0 { 1.0 / (a as f64 + 1.0) } else { 0.0 })
                    .product();
                assert_abs_diff_eq!(got, want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn vandermonde_1d_rows() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0]];
        let m = monomial_vandermonde(&pts, 2);
        let want = [[1.0, 1.0, 1.0], [0.0, 1.0, 2.0], [0.0, 1.0, 4.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(m[(i, j)], want[i][j], epsilon = 0.0);
            }
        }
    }

    #[test]
    fn vandermonde_2d_row_count_and_naive_oracle() {
        let mut state = 42u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            2.0 * ((state >> 11) as f64 / (1u64 << 53) as f64) - 1.0
        };
        let pts: Vec<Vec<f64>> = (0..10).map(|_| vec![next(), next()]).collect();
        let m = monomial_vandermonde(&pts, 2);
        assert_eq!(m.nrows(), 6);
        let set = total_degree_set(2, 2);
        for (r, idx) in set.iter().enumerate() {
            for (k, pt) in pts.iter().enumerate() {
                let mut v = 1.0;
                for _ in 0..idx[0] {
                    v *= pt[0];
                }
                for _ in 0..idx[1] {
                    v *= pt[1];
                }
                assert_abs_diff_eq!(m[(r, k)], v, epsilon = 0.0);
            }
        }
    }

    #[test]
    fn compress_five_point_degree_two() {
        let pts: Vec<Vec<f64>> = [-1.0, -0.5, 0.0, 0.5, 1.0]
            .iter()
            .map(|&x| vec![x])
            .collect();
        let w = vec![0.2; 5];
        let sparse = compress_rule(&pts, &w, 2);
        assert!(sparse.support_len() <= 3);
        assert!(sparse.rank <= 3);
        let moment = |k: i32| -> f64 {
            pts.iter()
                .zip(sparse.weights.iter())
                .map(|(p, &wj)| wj * p[0].powi(k))
                .sum()
        };
        assert_abs_diff_eq!(moment(0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(moment(1), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(moment(2), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn compress_constant_only() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.1, -0.2]).collect();
        let w = vec![0.3, 0.1, 0.05, 0.25, 0.2, 0.1];
        let sparse = compress_rule(&pts, &w, 0);
        assert_eq!(sparse.support_len(), 1);
        let total: f64 = sparse.weights.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn compress_handles_negative_parent_weights() {
        let pts: Vec<Vec<f64>> = [-0.8, -0.3, 0.1, 0.4, 0.9]
            .iter()
            .map(|&x| vec![x])
            .collect();
        let w = vec![0.4, -0.1, 0.3, 0.2, 0.2];
        let sparse = compress_rule(&pts, &w, 2);
        for k in 0..=2i32 {
            let want: f64 = pts
                .iter()
                .zip(w.iter())
                .map(|(p, &wj)| wj * p[0].powi(k))
                .sum();
            let got: f64 = pts
                .iter()
                .zip(sparse.weights.iter())
                .map(|(p, &wj)| wj * p[0].powi(k))
                .sum();
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn determinism_identical_inputs_identical_support() {
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let t = i as f64 / 39.0 * 2.0 - 1.0;
                vec![t, (3.1 * t).sin()]
            })
            .collect();
        let w = vec![1.0 / 40.0; 40];
        let a = compress_rule(&pts, &w, 3);
        let b = compress_rule(&pts, &w, 3);
        assert_eq!(a.support, b.support);
        assert_eq!(a.weights, b.weights);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn exactness_transfer_on_mapped_points(seed in 0u64..4096, deg in 0usize..4) {
            // parent: 2-D tensor rule mapped through a random affine map to
            // dependent coordinates, then compressed
            let fam2 = fam(3);
            let parent = tensor_rule(&fam2, 2, 3).unwrap();
            let mut state = seed.wrapping_mul(2654435761).wrapping_add(12345);
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                2.0 * ((state >> 11) as f64 / (1u64 << 53) as f64) - 1.0
            };
            let a = [next(), next(), next(), next(), next(), next()];
            let pts: Vec<Vec<f64>> = parent
                .iter_nodes()
                .map(|x| vec![a[0] + a[1] * x[0] + a[2] * x[1], a[3] + a[4] * x[0] + a[5] * x[1]])
                .collect();
            let sparse = compress_rule(&pts, &parent.weights, deg);
            prop_assert!(sparse.support_len() <= sparse.rank.max(1));
            let nplus = total_degree_count(2, deg);
            prop_assert!(sparse.support_len() <= nplus.min(parent.len()));
            let set = total_degree_set(2, deg);
            for idx in set.iter() {
                let eval = |p: &[f64]| -> f64 {
                    idx.iter().zip(p.iter()).map(|(&k, &x)| x.powi(k as i32)).product()
                };
                let want: f64 = pts.iter().zip(parent.weights.iter()).map(|(p, &w)| w * eval(p)).sum();
                let got: f64 = pts.iter().zip(sparse.weights.iter()).map(|(p, &w)| w * eval(p)).sum();
                prop_assert!((got - want).abs() <= 1e-10 * (1.0 + want.abs()));
            }
        }
    }
}
