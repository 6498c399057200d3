//! Bilinear quadrilateral FEM assembly on an equispaced nodal grid over the
//! unit square, with 2x2 Gauss quadrature per element. Shared by the
//! thermal-neutronics model.

use nalgebra::DVector;

use crate::linalg::Banded;

/// Equispaced m x m nodal grid on [0,1]^2.
#[derive(Debug, Clone)]
pub struct FemGrid {
    pub m: usize,
    pub h: f64,
    /// reference shape values per gauss point: shape[g][a]
    shape: [[f64; 4]; 4],
    /// physical-space gradients per gauss point: grad[g][a] = (dx, dy)
    grad: [[(f64, f64); 4]; 4],
    /// gauss weight times jacobian determinant (uniform)
    wdet: f64,
    /// local gauss-point offsets within an element, physical units
    gp_offset: [(f64, f64); 4],
}

impl FemGrid {
    pub fn new(m: usize) -> Self {
        assert!(m >= 2);
        let h = 1.0 / (m as f64 - 1.0);
        let g = 1.0 / 3f64.sqrt();
        let locs = [(-g, -g), (g, -g), (-g, g), (g, g)];
        let mut shape = [[0.0; 4]; 4];
        let mut grad = [[(0.0, 0.0); 4]; 4];
        let mut gp_offset = [(0.0, 0.0); 4];
        // corner order: (0,0), (1,0), (0,1), (1,1) in local coordinates
        let corners = [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)];
        for (gi, &(x, y)) in locs.iter().enumerate() {
            for (a, &(cx, cy)) in corners.iter().enumerate() {
                shape[gi][a] = 0.25 * (1.0 + cx * x) * (1.0 + cy * y);
                // reference gradient scaled by 2/h to physical space
                let dx = 0.25 * cx * (1.0 + cy * y) * 2.0 / h;
                let dy = 0.25 * cy * (1.0 + cx * x) * 2.0 / h;
                grad[gi][a] = (dx, dy);
            }
            gp_offset[gi] = ((x + 1.0) * 0.5 * h, (y + 1.0) * 0.5 * h);
        }
        let wdet = (h / 2.0) * (h / 2.0);
        FemGrid {
            m,
            h,
            shape,
            grad,
            wdet,
            gp_offset,
        }
    }

    pub fn node_count(&self) -> usize {
        self.m * self.m
    }

    pub fn element_count(&self) -> usize {
        (self.m - 1) * (self.m - 1)
    }

    pub fn bandwidth(&self) -> usize {
        self.m + 1
    }

    pub fn node_coords(&self, i: usize) -> [f64; 2] {
        let ix = i % self.m;
        let iy = i / self.m;
        [ix as f64 * self.h, iy as f64 * self.h]
    }

    fn element_nodes(&self, e: usize) -> [usize; 4] {
        let per_row = self.m - 1;
        let ex = e % per_row;
        let ey = e / per_row;
        let base = ey * self.m + ex;
        [base, base + 1, base + self.m, base + self.m + 1]
    }

    fn gauss_coords(&self, e: usize, g: usize) -> [f64; 2] {
        let per_row = self.m - 1;
        let ex = (e % per_row) as f64 * self.h;
        let ey = (e / per_row) as f64 * self.h;
        [ex + self.gp_offset[g].0, ey + self.gp_offset[g].1]
    }

    /// All element gauss points in assembly order, for coefficient caching.
    pub fn gauss_points(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.element_count() * 4);
        for e in 0..self.element_count() {
            for g in 0..4 {
                out.push(self.gauss_coords(e, g));
            }
        }
        out
    }

    /// Stiffness matrix with a per-gauss-point coefficient.
    pub fn stiffness<F: FnMut(usize) -> f64>(&self, mut coeff: F) -> Banded {
        let mut out = Banded::zeros(self.node_count(), self.bandwidth(), self.bandwidth());
        let mut gp = 0;
        for e in 0..self.element_count() {
            let nodes = self.element_nodes(e);
            for g in 0..4 {
                let c = coeff(gp) * self.wdet;
                gp += 1;
                for a in 0..4 {
                    let (gax, gay) = self.grad[g][a];
                    for b in 0..4 {
                        let (gbx, gby) = self.grad[g][b];
                        out.add(nodes[a], nodes[b], c * (gax * gbx + gay * gby));
                    }
                }
            }
        }
        out
    }

    /// Mass matrix with a per-gauss-point coefficient.
    pub fn mass<F: FnMut(usize) -> f64>(&self, mut coeff: F) -> Banded {
        let mut out = Banded::zeros(self.node_count(), self.bandwidth(), self.bandwidth());
        let mut gp = 0;
        for e in 0..self.element_count() {
            let nodes = self.element_nodes(e);
            for g in 0..4 {
                let c = coeff(gp) * self.wdet;
                gp += 1;
                for a in 0..4 {
                    for b in 0..4 {
                        out.add(nodes[a], nodes[b], c * self.shape[g][a] * self.shape[g][b]);
                    }
                }
            }
        }
        out
    }

    /// Load vector with a per-gauss-point density.
    pub fn load<F: FnMut(usize) -> f64>(&self, mut f: F) -> DVector<f64> {
        let mut out = DVector::zeros(self.node_count());
        let mut gp = 0;
        for e in 0..self.element_count() {
            let nodes = self.element_nodes(e);
            for g in 0..4 {
                let c = f(gp) * self.wdet;
                gp += 1;
                for a in 0..4 {
                    out[nodes[a]] += c * self.shape[g][a];
                }
            }
        }
        out
    }

    /// Action of a coefficient-weighted mass operator on `target`, with the
    /// coefficient given per gauss point (may depend on interpolated fields).
    pub fn mass_action<F: FnMut(usize) -> f64>(
        &self,
        mut coeff: F,
        target: &DVector<f64>,
    ) -> DVector<f64> {
        let mut out = DVector::zeros(self.node_count());
        let mut gp = 0;
        for e in 0..self.element_count() {
            let nodes = self.element_nodes(e);
            for g in 0..4 {
                let c = coeff(gp) * self.wdet;
                gp += 1;
                let mut tval = 0.0;
                for b in 0..4 {
                    tval += self.shape[g][b] * target[nodes[b]];
                }
                for a in 0..4 {
                    out[nodes[a]] += c * self.shape[g][a] * tval;
                }
            }
        }
        out
    }

    /// Interpolates a nodal field to every gauss point, in assembly order.
    pub fn interpolate_at_gauss(&self, nodal: &DVector<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.element_count() * 4);
        for e in 0..self.element_count() {
            let nodes = self.element_nodes(e);
            for g in 0..4 {
                let mut v = 0.0;
                for a in 0..4 {
                    v += self.shape[g][a] * nodal[nodes[a]];
                }
                out.push(v);
            }
        }
        out
    }

    /// Quadrature weight (gauss weight times jacobian) of every gauss point.
    pub fn gauss_weight(&self) -> f64 {
        self.wdet
    }

    /// L2(Omega) inner product of two gauss-point sampled functions.
    pub fn gauss_integral<F: FnMut(usize) -> f64>(&self, mut f: F) -> f64 {
        let mut acc = 0.0;
        for gp in 0..self.element_count() * 4 {
            acc += f(gp) * self.wdet;
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn stiffness_annihilates_constants() {
        let grid = FemGrid::new(9);
        let k = grid.stiffness(|_| 1.0);
        let ones = vec![1.0; grid.node_count()];
        let mut out = vec![0.0; grid.node_count()];
        k.matvec(&ones, &mut out);
        for v in out {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mass_total_is_domain_area() {
        let grid = FemGrid::new(7);
        let m = grid.mass(|_| 1.0);
        let ones = vec![1.0; grid.node_count()];
        let mut out = vec![0.0; grid.node_count()];
        m.matvec(&ones, &mut out);
        let total: f64 = out.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn load_of_one_sums_to_area() {
        let grid = FemGrid::new(6);
        let f = grid.load(|_| 1.0);
        assert_abs_diff_eq!(f.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mass_action_matches_assembled_matrix() {
        let grid = FemGrid::new(5);
        let n = grid.node_count();
        let coeffs: Vec<f64> = grid
            .gauss_points()
            .iter()
            .map(|x| 1.0 + x[0] + 0.5 * x[1])
            .collect();
        let m = grid.mass(|gp| coeffs[gp]);
        let target = DVector::from_fn(n, |i, _| (i as f64 * 0.17).sin());
        let direct = grid.mass_action(|gp| coeffs[gp], &target);
        let mut via = vec![0.0; n];
        m.matvec(target.as_slice(), &mut via);
        for i in 0..n {
            assert_abs_diff_eq!(direct[i], via[i], epsilon = 1e-13);
        }
    }
}
