//! Post-processing of converged coefficient matrices: moments, ANOVA
//! sensitivity indices, surrogate sampling and the Monte-Carlo reference
//! oracle.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::basis::BasisSplit;
use crate::galerkin::Gramian;
use crate::models::DeterministicModel;
use crate::orthopoly::PolyFamily;
use crate::Result;

/// First two moments read off a coefficient matrix on an orthonormal basis.
#[derive(Debug, Clone)]
pub struct MomentSummary {
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
}

impl MomentSummary {
    /// Full covariance U U^T - u0 u0^T; only assembled on demand.
    pub fn covariance(coeffs: &DMatrix<f64>) -> DMatrix<f64> {
        let n = coeffs.nrows();
        let mut cov = DMatrix::zeros(n, n);
        for j in 1..coeffs.ncols() {
            let col = coeffs.column(j);
            for a in 0..n {
                for b in 0..n {
                    cov[(a, b)] += col[a] * col[b];
                }
            }
        }
        cov
    }
}

/// mean = column 0; std from the remaining columns of the orthonormal basis.
pub fn moments(coeffs: &DMatrix<f64>) -> MomentSummary {
    let mean = coeffs.column(0).into_owned();
    let mut std = DVector::zeros(coeffs.nrows());
    for j in 1..coeffs.ncols() {
        let col = coeffs.column(j);
        for i in 0..coeffs.nrows() {
            std[i] += col[i] * col[i];
        }
    }
    std.apply(|v: &mut f64| *v = v.sqrt());
    MomentSummary { mean, std }
}

/// Variance fractions attributed to each input block and their interaction,
/// as percentages.
#[derive(Debug, Clone)]
pub struct SensitivityTable {
    pub main1: f64,
    pub main2: f64,
    pub interaction: f64,
    /// true when the total variance vanished and the table is meaningless
    pub degenerate: bool,
}

/// ANOVA split of the variance: pure-block columns feed the main effects,
/// mixed columns the interaction.
pub fn anova(coeffs: &DMatrix<f64>, split: &BasisSplit, g: &Gramian) -> SensitivityTable {
    let mut v1 = 0.0;
    let mut v2 = 0.0;
    let mut v12 = 0.0;
    for j in 1..split.global_len() {
        let col = coeffs.column(j).into_owned();
        let m = DMatrix::from_column_slice(col.len(), 1, col.as_slice());
        let contrib = g.weighted_frobenius(&m).powi(2);
        let pure1 = split.j2[j] == 0;
        let pure2 = split.j1[j] == 0;
        if pure1 {
            v1 += contrib;
        } else if pure2 {
            v2 += contrib;
        } else {
            v12 += contrib;
        }
    }
    let total = v1 + v2 + v12;
    if total <= 0.0 {
        return SensitivityTable {
            main1: f64::NAN,
            main2: f64::NAN,
            interaction: f64::NAN,
            degenerate: true,
        };
    }
    SensitivityTable {
        main1: 100.0 * v1 / total,
        main2: 100.0 * v2 / total,
        interaction: 100.0 * v12 / total,
        degenerate: false,
    }
}

/// Evaluates the surrogate U psi(xi) at the given points.
pub fn surrogate_sample(
    coeffs: &DMatrix<f64>,
    split: &BasisSplit,
    family: &PolyFamily,
    points: &[Vec<f64>],
) -> Vec<DVector<f64>> {
    points
        .iter()
        .map(|xi| {
            let psi = split.global.eval_all(family, xi);
            coeffs * DVector::from_vec(psi)
        })
        .collect()
}

/// Deterministic per-sample input draws: one counter-seeded stream per
/// sample index, independent of thread scheduling.
pub fn sample_inputs(seed: u64, index: u64, s1: usize, s2: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let xi1 = (0..s1).map(|_| rng.random_range(-1.0..1.0)).collect();
    let xi2 = (0..s2).map(|_| rng.random_range(-1.0..1.0)).collect();
    (xi1, xi2)
}

/// Monte-Carlo reference statistics from repeated deterministic solves.
#[derive(Debug, Clone)]
pub struct McReference {
    pub samples: usize,
    pub excluded: usize,
    pub flagged: bool,
    pub mean1: DVector<f64>,
    pub std1: DVector<f64>,
    pub mean2: DVector<f64>,
    pub std2: DVector<f64>,
    /// per-sample inputs and scalar state summaries (index, xi, summaries)
    pub records: Vec<McRecord>,
}

#[derive(Debug, Clone)]
pub struct McRecord {
    pub index: usize,
    pub xi1: Vec<f64>,
    pub xi2: Vec<f64>,
    pub converged: bool,
    pub summary1: f64,
    pub summary2: f64,
}

/// Runs `n` deterministic solves at i.i.d. uniform draws with a fixed seed.
/// Non-converged samples are excluded from the statistics and counted; more
/// than 1% exclusions flags the run.
pub fn mc_oracle(
    model: &dyn DeterministicModel,
    n: usize,
    seed: u64,
    eps: f64,
    max_iter: usize,
) -> Result<McReference> {
    assert!(n >= 1);
    let (s1, s2) = model.input_dims();
    let solves: Vec<(usize, Vec<f64>, Vec<f64>, Result<crate::models::DetSolution>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (xi1, xi2) = sample_inputs(seed, i as u64, s1, s2);
            let sol = model.solve_deterministic(&xi1, &xi2, eps, max_iter);
            (i, xi1, xi2, sol)
        })
        .collect();
    let (n1, n2) = model.state_dims();
    let mut sum1 = DVector::zeros(n1);
    let mut sumsq1 = DVector::zeros(n1);
    let mut sum2 = DVector::zeros(n2);
    let mut sumsq2 = DVector::zeros(n2);
    let mut kept = 0usize;
    let mut excluded = 0usize;
    let mut records = Vec::with_capacity(n);
    for (i, xi1, xi2, sol) in solves {
        let sol = sol?;
        if sol.converged {
            kept += 1;
            for k in 0..n1 {
                sum1[k] += sol.u1[k];
                sumsq1[k] += sol.u1[k] * sol.u1[k];
            }
            for k in 0..n2 {
                sum2[k] += sol.u2[k];
                sumsq2[k] += sol.u2[k] * sol.u2[k];
            }
        } else {
            excluded += 1;
        }
        records.push(McRecord {
            index: i,
            xi1,
            xi2,
            converged: sol.converged,
            summary1: sol.u1.iter().sum::<f64>() / n1 as f64,
            summary2: sol.u2.iter().sum::<f64>() / n2 as f64,
        });
    }
    let kf = kept.max(1) as f64;
    let mean1 = &sum1 / kf;
    let mean2 = &sum2 / kf;
    let var = |sumsq: &DVector<f64>, mean: &DVector<f64>| {
        DVector::from_fn(sumsq.len(), |i, _| {
            (sumsq[i] / kf - mean[i] * mean[i]).max(0.0).sqrt()
        })
    };
    let std1 = var(&sumsq1, &mean1);
    let std2 = var(&sumsq2, &mean2);
    let flagged = excluded * 100 > n;
    Ok(McReference {
        samples: kept,
        excluded,
        flagged,
        mean1,
        std1,
        mean2,
        std2,
        records,
    })
}
