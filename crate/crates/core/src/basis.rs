//! Total-degree multi-index sets, the global/modular basis split with its
//! index maps, and the sparse polynomial matrices that re-express the global
//! basis in terms of either module's own basis.
//!
//! Ordering contract: indices are graded by total degree; within a degree
//! level ties are broken reverse-lexicographically (first-block-heavy tuples
//! first). This ordering is part of the CSV column contract.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::orthopoly::PolyFamily;

/// Ordered total-degree multi-index set in `s` variables up to order `p`.
#[derive(Debug, Clone)]
pub struct MultiIndexSet {
    pub dimension: usize,
    pub order: usize,
    indices: Vec<Vec<usize>>,
    lookup: HashMap<Vec<usize>, usize>,
}

fn append_level(dim: usize, degree: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if dim == 1 {
        prefix.push(degree);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    // lexicographically decreasing in the leading coordinate
    for lead in (0..=degree).rev() {
        prefix.push(lead);
        append_level(dim - 1, degree - lead, prefix, out);
        prefix.pop();
    }
}

/// Enumerates the total-degree set of dimension `s` and order `p` in the
/// canonical graded, reverse-lexicographic order.
pub fn total_degree_set(s: usize, p: usize) -> MultiIndexSet {
    assert!(s >= 1, "dimension must be at least 1");
    let mut indices = Vec::new();
    let mut prefix = Vec::with_capacity(s);
    for degree in 0..=p {
        append_level(s, degree, &mut prefix, &mut indices);
    }
    let lookup = indices
        .iter()
        .enumerate()
        .map(|(i, idx)| (idx.clone(), i))
        .collect();
    MultiIndexSet {
        dimension: s,
        order: p,
        indices,
        lookup,
    }
}

/// Binomial count (p+s)!/(p! s!) of a total-degree set.
pub fn total_degree_count(s: usize, p: usize) -> usize {
    let mut c = 1usize;
    for k in 1..=s {
        c = c * (p + k) / k;
    }
    c
}

impl MultiIndexSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn index(&self, i: usize) -> &[usize] {
        &self.indices[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.indices.iter()
    }

    pub fn position(&self, idx: &[usize]) -> Option<usize> {
        self.lookup.get(idx).copied()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.indices[i].iter().sum()
    }

    /// Evaluates the multivariate basis function of multi-index `i` at `point`
    /// as a product of univariate orthonormal factors.
    pub fn eval(&self, family: &PolyFamily, i: usize, point: &[f64]) -> f64 {
        assert_eq!(point.len(), self.dimension);
        self.indices[i]
            .iter()
            .zip(point.iter())
            .map(|(&deg, &x)| family.eval(deg, x).expect("degree within family"))
            .product()
    }

    /// Evaluates the whole basis vector at `point` in one sweep of univariate
    /// recurrences.
    pub fn eval_all(&self, family: &PolyFamily, point: &[f64]) -> Vec<f64> {
        assert_eq!(point.len(), self.dimension);
        let tables: Vec<Vec<f64>> = point
            .iter()
            .map(|&x| family.eval_all(self.order, x))
            .collect();
        self.indices
            .iter()
            .map(|idx| {
                idx.iter()
                    .zip(tables.iter())
                    .map(|(&deg, t)| t[deg])
                    .product()
            })
            .collect()
    }
}

/// Global basis over s1+s2 variables together with the per-module bases and
/// the maps from global index to modular indices.
#[derive(Debug, Clone)]
pub struct BasisSplit {
    pub global: MultiIndexSet,
    pub mod1: MultiIndexSet,
    pub mod2: MultiIndexSet,
    pub s1: usize,
    pub s2: usize,
    pub order: usize,
    /// global index -> index into `mod1`
    pub j1: Vec<usize>,
    /// global index -> index into `mod2`
    pub j2: Vec<usize>,
}

/// Splits the global total-degree basis over a parameter partition of
/// dimensions `s1` and `s2` at order `p`.
pub fn split_basis(s1: usize, s2: usize, p: usize) -> BasisSplit {
    assert!(s1 >= 1 && s2 >= 1);
    let global = total_degree_set(s1 + s2, p);
    let mod1 = total_degree_set(s1, p);
    let mod2 = total_degree_set(s2, p);
    let mut j1 = Vec::with_capacity(global.len());
    let mut j2 = Vec::with_capacity(global.len());
    for idx in global.iter() {
        let (alpha, beta) = idx.split_at(s1);
        j1.push(mod1.position(alpha).expect("alpha within modular set"));
        j2.push(mod2.position(beta).expect("beta within modular set"));
    }
    BasisSplit {
        global,
        mod1,
        mod2,
        s1,
        s2,
        order: p,
        j1,
        j2,
    }
}

impl BasisSplit {
    pub fn global_len(&self) -> usize {
        self.global.len()
    }

    /// Modular set of module `i` (1 or 2).
    pub fn modular(&self, module: usize) -> &MultiIndexSet {
        match module {
            1 => &self.mod1,
            2 => &self.mod2,
            _ => panic!("module index must be 1 or 2"),
        }
    }

    /// Map from global index to module-`i` modular index.
    pub fn map(&self, module: usize) -> &[usize] {
        match module {
            1 => &self.j1,
            2 => &self.j2,
            _ => panic!("module index must be 1 or 2"),
        }
    }

    /// Map to the block complementary to module `i`.
    pub fn complementary_map(&self, module: usize) -> &[usize] {
        self.map(3 - module)
    }

    /// Modular set of the block complementary to module `i`.
    pub fn complementary(&self, module: usize) -> &MultiIndexSet {
        self.modular(3 - module)
    }
}

/// Sparse evaluation of the coupling matrix of module `i` at a point of the
/// complementary parameter block: one structural nonzero per global row.
#[derive(Debug, Clone)]
pub struct PiMatrix {
    pub module: usize,
    /// number of modular columns P_i + 1
    pub ncols: usize,
    /// row j -> (column jᵢ(j), complementary factor value)
    pub rows: Vec<(usize, f64)>,
}

/// Evaluates the module-`i` coupling matrix at a point of the complementary
/// block: row j holds the complementary basis factor at column jᵢ(j).
pub fn eval_pi(split: &BasisSplit, family: &PolyFamily, module: usize, point: &[f64]) -> PiMatrix {
    let own_map = split.map(module);
    let comp_map = split.complementary_map(module);
    let comp_set = split.complementary(module);
    assert_eq!(point.len(), comp_set.dimension);
    let comp_vals = comp_set.eval_all(family, point);
    let rows = own_map
        .iter()
        .zip(comp_map.iter())
        .map(|(&own, &comp)| (own, comp_vals[comp]))
        .collect();
    PiMatrix {
        module,
        ncols: split.modular(module).len(),
        rows,
    }
}

impl PiMatrix {
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    /// Dense conversion, for tests and small-scale checks.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows.len(), self.ncols);
        for (j, &(col, val)) in self.rows.iter().enumerate() {
            m[(j, col)] = val;
        }
        m
    }

    /// Computes `global * Pi`, restricting a global coefficient matrix to the
    /// module basis at the pinned complementary point.
    pub fn restrict(&self, global: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(global.ncols(), self.rows.len());
        let mut out = DMatrix::zeros(global.nrows(), self.ncols);
        for (j, &(col, val)) in self.rows.iter().enumerate() {
            if val != 0.0 {
                let src = global.column(j);
                let mut dst = out.column_mut(col);
                dst.axpy(val, &src, 1.0);
            }
        }
        out
    }

    /// Accumulates `out += weight * modular * Pi^T`, prolonging a modular
    /// coefficient matrix back to the global basis.
    pub fn accumulate_prolong(&self, modular: &DMatrix<f64>, weight: f64, out: &mut DMatrix<f64>) {
        assert_eq!(modular.ncols(), self.ncols);
        assert_eq!(out.ncols(), self.rows.len());
        for (j, &(col, val)) in self.rows.iter().enumerate() {
            let c = weight * val;
            if c != 0.0 {
                let src = modular.column(col);
                let mut dst = out.column_mut(j);
                dst.axpy(c, &src, 1.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orthopoly::{build_family, gauss_rule, Distribution};
    use crate::quadrature::tensor_rule;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_enumeration() {
        let set = total_degree_set(2, 2);
        let want: Vec<Vec<usize>> = vec![
            vec![0, 0],
            vec![1, 0],
            vec![0, 1],
            vec![2, 0],
            vec![1, 1],
            vec![0, 2],
        ];
        assert_eq!(set.len(), 6);
        for (i, w) in want.iter().enumerate() {
            assert_eq!(set.index(i), w.as_slice());
        }
    }

    #[test]
    fn counts_match_binomial() {
        assert_eq!(total_degree_set(6, 4).len(), 210);
        assert_eq!(total_degree_count(6, 4), 210);
        let uni = total_degree_set(1, 5);
        assert_eq!(uni.len(), 6);
        for i in 0..6 {
            assert_eq!(uni.index(i), &[i]);
        }
    }

    #[test]
    fn graded_order_and_zero_first() {
        let set = total_degree_set(3, 4);
        assert_eq!(set.index(0), &[0, 0, 0]);
        for i in 1..set.len() {
            assert!(set.degree(i) >= set.degree(i - 1));
        }
        assert_eq!(set.len(), total_degree_count(3, 4));
    }

    #[test]
    fn split_1_1_1_maps() {
        let split = split_basis(1, 1, 1);
        assert_eq!(split.global_len(), 3);
        assert_eq!(split.j1, vec![0, 1, 0]);
        assert_eq!(split.j2, vec![0, 0, 1]);
    }

    #[test]
    fn split_3_3_4_counts() {
        let split = split_basis(3, 3, 4);
        assert_eq!(split.global_len(), 210);
        assert_eq!(split.mod1.len(), 35);
        assert_eq!(split.mod2.len(), 35);
    }

    #[test]
    fn split_pairs_distinct_and_degree_bounded() {
        let split = split_basis(2, 1, 2);
        assert_eq!(split.global_len(), 10);
        assert_eq!(split.mod1.len(), 6);
        assert_eq!(split.mod2.len(), 3);
        let mut seen = std::collections::HashSet::new();
        for g in 0..split.global_len() {
            let pair = (split.j1[g], split.j2[g]);
            assert!(seen.insert(pair), "duplicate modular pair {pair:?}");
            let d1 = split.mod1.degree(split.j1[g]);
            let d2 = split.mod2.degree(split.j2[g]);
            assert!(d1 + d2 <= 2);
        }
    }

    #[test]
    fn pi_rows_for_1_1_1_at_zero() {
        let split = split_basis(1, 1, 1);
        let fam = build_family(Distribution::UniformSymmetric, 1);
        let pi = eval_pi(&split, &fam, 1, &[0.0]);
        assert_eq!(pi.rows[0], (0, 1.0));
        assert_eq!(pi.rows[1], (1, 1.0));
        assert_eq!(pi.rows[2].0, 0);
        assert_abs_diff_eq!(pi.rows[2].1, 0.0, epsilon = 1e-15);
    }

    /// Quadrature expectation of Pi_i Pi_i^T over the complementary block.
    fn pi_second_moment(s1: usize, s2: usize, p: usize, module: usize) -> DMatrix<f64> {
        let split = split_basis(s1, s2, p);
        let fam = build_family(Distribution::UniformSymmetric, p);
        let comp_dim = if module == 1 { s2 } else { s1 };
        let rule = tensor_rule(&fam, comp_dim, p).unwrap();
        let np = split.global_len();
        let mut acc = DMatrix::zeros(np, np);
        for (node, &w) in rule.iter_nodes().zip(rule.weights.iter()) {
            let pi = eval_pi(&split, &fam, module, node);
            let dense = pi.to_dense();
            acc += w * &dense * dense.transpose();
        }
        acc
    }

    #[test]
    fn pi_identity_both_orderings() {
        for &(s1, s2, p) in &[(1usize, 1usize, 2usize), (2, 1, 3), (2, 2, 3), (3, 2, 2)] {
            for module in [1, 2] {
                let m = pi_second_moment(s1, s2, p, module);
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        let expect = if i == j { 1.0 } else { 0.0 };
                        assert_abs_diff_eq!(m[(i, j)], expect, epsilon = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn reconstruction_identity_at_random_points() {
        let split = split_basis(2, 2, 3);
        let fam = build_family(Distribution::UniformSymmetric, 3);
        let mut state = 9118u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            2.0 * ((state >> 11) as f64 / (1u64 << 53) as f64) - 1.0
        };
        let nrows = 4usize;
        let mut uhat = DMatrix::zeros(nrows, split.global_len());
        for i in 0..nrows {
            for j in 0..split.global_len() {
                uhat[(i, j)] = next();
            }
        }
        for _ in 0..50 {
            let xi1 = [next(), next()];
            let xi2 = [next(), next()];
            let full: Vec<f64> = xi1.iter().chain(xi2.iter()).cloned().collect();
            let psi = split.global.eval_all(&fam, &full);
            let psi1 = split.mod1.eval_all(&fam, &xi1);
            let psi2 = split.mod2.eval_all(&fam, &xi2);
            let direct = &uhat * nalgebra::DVector::from_vec(psi.clone());
            let pi1 = eval_pi(&split, &fam, 1, &xi2);
            let via1 = pi1.restrict(&uhat) * nalgebra::DVector::from_vec(psi1.clone());
            let pi2 = eval_pi(&split, &fam, 2, &xi1);
            let via2 = pi2.restrict(&uhat) * nalgebra::DVector::from_vec(psi2.clone());
            for i in 0..nrows {
                assert_abs_diff_eq!(via1[i], direct[i], epsilon = 1e-12);
                assert_abs_diff_eq!(via2[i], direct[i], epsilon = 1e-12);
            }
            // scalar identity psi = Pi_1 psi_1 elementwise
            let dense = pi1.to_dense();
            let rec = dense * nalgebra::DVector::from_vec(psi1);
            for j in 0..split.global_len() {
                assert_abs_diff_eq!(rec[j], psi[j], epsilon = 1e-12);
            }
            let dense2 = pi2.to_dense();
            let rec2 = dense2 * nalgebra::DVector::from_vec(psi2);
            for j in 0..split.global_len() {
                assert_abs_diff_eq!(rec2[j], psi[j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn projection_round_trip_recovers_coefficients() {
        let split = split_basis(2, 1, 2);
        let fam = build_family(Distribution::UniformSymmetric, 2);
        let mut state = 777u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            2.0 * ((state >> 11) as f64 / (1u64 << 53) as f64) - 1.0
        };
        let nrows = 3usize;
        let mut uhat = DMatrix::zeros(nrows, split.global_len());
        for i in 0..nrows {
            for j in 0..split.global_len() {
                uhat[(i, j)] = next();
            }
        }
        for module in [1usize, 2] {
            let comp_dim = if module == 1 { 1 } else { 2 };
            let rule = tensor_rule(&fam, comp_dim, 2).unwrap();
            let mut back = DMatrix::zeros(nrows, split.global_len());
            for (node, &w) in rule.iter_nodes().zip(rule.weights.iter()) {
                let pi = eval_pi(&split, &fam, module, node);
                let modular = pi.restrict(&uhat);
                pi.accumulate_prolong(&modular, w, &mut back);
            }
            for i in 0..nrows {
                for j in 0..split.global_len() {
                    assert_abs_diff_eq!(back[(i, j)], uhat[(i, j)], epsilon = 1e-10);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn count_formula_holds(s in 1usize..5, p in 0usize..6) {
            let set = total_degree_set(s, p);
            prop_assert_eq!(set.len(), total_degree_count(s, p));
            // graded, all degrees bounded, zero tuple first
            prop_assert_eq!(set.index(0).iter().sum::<usize>(), 0);
            for i in 0..set.len() {
                prop_assert!(set.degree(i) <= p);
                if i > 0 {
                    prop_assert!(set.degree(i) >= set.degree(i - 1));
                }
            }
        }

        #[test]
        fn positions_invert_enumeration(s in 1usize..4, p in 0usize..5) {
            let set = total_degree_set(s, p);
            for i in 0..set.len() {
                prop_assert_eq!(set.position(set.index(i)), Some(i));
            }
        }
    }

    #[test]
    fn univariate_gauss_exactness_feeds_pi_identity() {
        // sanity anchor for the tolerance used across the Pi tests
        let fam = build_family(Distribution::UniformSymmetric, 4);
        let rule = gauss_rule(&fam, 4);
        let s = rule.integrate(|x| fam.eval(4, x).unwrap() * fam.eval(4, x).unwrap());
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
    }
}
