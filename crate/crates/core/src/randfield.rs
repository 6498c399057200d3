//! Truncated Karhunen-Loeve expansions of spatially varying uniform random
//! fields with exponential covariance, used to build the uncertain model
//! coefficients of both benchmark problems.
//!
//! The univariate eigenpairs come from the single transcendental root family
//! l*z + tan(z/2) = 0; evaluation keeps the printed amplitude (which carries
//! the eigenvalue decay) and the field is affine in the random inputs:
//! u(x, xi) = mean + sqrt(3) * delta * sum_j gamma_j(x) * xi_j.

use std::f64::consts::PI;

/// Number of trapezoid points used for numerical L2 norms of the modes.
const NORM_QUAD_POINTS: usize = 10_000;

/// One retained (possibly tensorized) KL mode.
#[derive(Debug, Clone)]
pub struct KlMode {
    /// univariate mode index per spatial axis (1-based), length = spatial dim
    pub axes: Vec<usize>,
    /// numerical L2(Omega) norm of the mode
    pub norm: f64,
}

/// A truncated KL field over [0,1]^n with n in {1, 2}.
#[derive(Debug, Clone)]
pub struct KlField {
    pub spatial_dim: usize,
    pub mean: f64,
    pub delta: f64,
    pub corr_len: f64,
    /// retained modes, ordered by decreasing L2 norm
    pub modes: Vec<KlMode>,
    /// univariate roots, 1-based indexing via `roots[j-1]`
    pub roots: Vec<f64>,
    /// numerical L2[0,1] norms of the univariate factors
    pub factor_norms: Vec<f64>,
    /// recorded deviations of mode norms from unity
    pub warnings: Vec<String>,
}

/// Solves l*z + tan(z/2) = 0 for the `count` smallest positive roots.
///
/// Root j lies in ((2j-1)pi, (2j+1)pi); the sign change is bracketed in the
/// first half of that period and bisected to |f| <= 1e-12.
pub fn solve_roots(l: f64, count: usize) -> Vec<f64> {
    assert!(l > 0.0 && count >= 1);
    let f = |z: f64| l * z + (0.5 * z).tan();
    let mut out = Vec::with_capacity(count);
    for j in 1..=count {
        let jf = j as f64;
        // tan(z/2) < 0 on ((2j-1)pi, 2j pi), so the root sits there
        let mut a = (2.0 * jf - 1.0) * PI + 1e-9;
        let mut b = 2.0 * jf * PI;
        debug_assert!(f(a) < 0.0 && f(b) > 0.0);
        let mut mid = 0.5 * (a + b);
        for _ in 0..200 {
            mid = 0.5 * (a + b);
            let fm = f(mid);
            if fm.abs() <= 1e-13 {
                break;
            }
            if fm < 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        out.push(mid);
    }
    out
}

/// Evaluates the j-th univariate eigenfunction factor at x (1-based j).
///
/// Odd modes take the cosine branch, even modes the sine branch; the leading
/// amplitude carries the eigenvalue of the exponential kernel.
pub fn eval_mode(l: f64, root: f64, j: usize, x: f64) -> f64 {
    let amp = 2.0 * (l * root / (1.0 + l * l * root * root)).sqrt();
    if j % 2 == 1 {
        amp * (root * x).cos() / (root + root.sin()).sqrt()
    } else {
        amp * (root * x).sin() / (root - root.sin()).sqrt()
    }
}

fn factor_norm(l: f64, root: f64, j: usize) -> f64 {
    // composite trapezoid on [0,1]
    let n = NORM_QUAD_POINTS;
    let h = 1.0 / n as f64;
    let mut acc = 0.0;
    for i in 0..=n {
        let x = i as f64 * h;
        let v = eval_mode(l, root, j, x);
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        acc += w * v * v;
    }
    (acc * h).sqrt()
}

/// Builds a truncated KL field with `s` retained modes.
///
/// For 2-D fields the tensor modes are ranked by decreasing L2 norm (product
/// of the univariate factor norms), ties broken by graded-lexicographic
/// tensor index.
pub fn build_field(spatial_dim: usize, mean: f64, delta: f64, corr_len: f64, s: usize) -> KlField {
    assert!(spatial_dim == 1 || spatial_dim == 2);
    assert!(s >= 1);
    let univariate_needed = if spatial_dim == 1 { s } else { s + 2 };
    let roots = solve_roots(corr_len, univariate_needed);
    let factor_norms: Vec<f64> = roots
        .iter()
        .enumerate()
        .map(|(i, &z)| factor_norm(corr_len, z, i + 1))
        .collect();
    let mut warnings = Vec::new();
    let mut modes = Vec::new();
    if spatial_dim == 1 {
        for j in 1..=s {
            modes.push(KlMode {
                axes: vec![j],
                norm: factor_norms[j - 1],
            });
        }
    } else {
        let mut candidates = Vec::new();
        for j1 in 1..=univariate_needed {
            for j2 in 1..=univariate_needed {
                candidates.push(KlMode {
                    axes: vec![j1, j2],
                    norm: factor_norms[j1 - 1] * factor_norms[j2 - 1],
                });
            }
        }
        candidates.sort_by(|a, b| {
            b.norm
                .partial_cmp(&a.norm)
                .unwrap()
                .then((a.axes[0] + a.axes[1]).cmp(&(b.axes[0] + b.axes[1])))
                .then(a.axes.cmp(&b.axes))
        });
        candidates.truncate(s);
        modes = candidates;
    }
    for mode in &modes {
        if (mode.norm - 1.0).abs() > 1e-6 {
            warnings.push(format!(
                "mode {:?} has L2 norm {:.6e}, kept as written (amplitude carries the eigenvalue)",
                mode.axes, mode.norm
            ));
        }
    }
    KlField {
        spatial_dim,
        mean,
        delta,
        corr_len,
        modes,
        roots,
        factor_norms,
        warnings,
    }
}

impl KlField {
    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    /// gamma_k(x), the k-th retained spatial mode (0-based k).
    pub fn eval_coeff(&self, k: usize, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.spatial_dim);
        let mode = &self.modes[k];
        mode.axes
            .iter()
            .zip(x.iter())
            .map(|(&j, &xi)| eval_mode(self.corr_len, self.roots[j - 1], j, xi))
            .product()
    }

    /// Field value mean + sqrt(3) * delta * sum_k gamma_k(x) xi_k.
    pub fn eval(&self, x: &[f64], xi: &[f64]) -> f64 {
        assert_eq!(xi.len(), self.modes.len());
        let fluct: f64 = (0..self.modes.len())
            .map(|k| self.eval_coeff(k, x) * xi[k])
            .sum();
        self.mean + 3f64.sqrt() * self.delta * fluct
    }

    /// Splits the affine field at `x` into (constant, per-mode slopes).
    pub fn affine_at(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let slopes = (0..self.modes.len())
            .map(|k| 3f64.sqrt() * self.delta * self.eval_coeff(k, x))
            .collect();
        (self.mean, slopes)
    }
}
