//! Null distributions and p-values: label permutations, the χ² tail, and
//! Monte-Carlo weighted sums of χ²₁ variables.

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::rng;
use crate::error::{contract, Error, Result};
use crate::linalg::{self, Matrix};
use crate::teststats::{self, FeaturizedSample};

pub const DEFAULT_PERMUTATIONS: usize = 1000;
pub const DEFAULT_WEIGHTED_DRAWS: usize = 100_000;
const MC_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullMethod {
    Permutation,
    Chi2,
    WeightedChi2,
    /// Normal approximation to a held-out accuracy (C2ST).
    Normal,
    /// Exact binomial tail of a held-out accuracy (C2ST).
    Binomial,
}

/// A p-value in `(0, 1]` tagged with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PValue {
    pub value: f64,
    pub method: NullMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationPlan {
    pub permutations: usize,
    pub seed: u64,
}

impl Default for PermutationPlan {
    fn default() -> Self {
        PermutationPlan {
            permutations: DEFAULT_PERMUTATIONS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationOutcome {
    pub observed: f64,
    /// Number of permuted statistics `>=` the observed one.
    pub exceedances: usize,
    pub pvalue: PValue,
}

/// Permutation test over row labels, with the statistic evaluated on index
/// lists: `idx[..n]` are the `X` rows, `idx[n..]` the `Y` rows.
///
/// Permutation `i` is a Fisher–Yates shuffle drawn from stream `i` of
/// `plan.seed`, so the result does not depend on how the loop is scheduled.
/// `p = (1 + #{perm ≥ observed}) / (M + 1)`.
pub fn permutation_test_indexed<F>(total: usize, n: usize, statistic: F, plan: &PermutationPlan) -> Result<PermutationOutcome>
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    if plan.permutations < 1 {
        return contract("permutation plan needs M >= 1");
    }
    if n == 0 || n >= total {
        return contract(format!("cannot split {total} rows at {n}"));
    }
    let identity: Vec<usize> = (0..total).collect();
    let observed = statistic(&identity);
    let exceedances = (0..plan.permutations)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(total),
            |buf: &mut Vec<usize>, i| {
                buf.clear();
                buf.extend(0..total);
                buf.shuffle(&mut rng::stream(plan.seed, i as u64));
                statistic(buf) >= observed
            },
        )
        .filter(|&hit| hit)
        .count();
    Ok(PermutationOutcome {
        observed,
        exceedances,
        pvalue: PValue {
            value: (1 + exceedances) as f64 / (plan.permutations + 1) as f64,
            method: NullMethod::Permutation,
        },
    })
}

/// Permutation p-value of an arbitrary statistic of a featurized sample.
/// The first `n` rows of `pooled` are the observed `X` sample.
pub fn permutation_pvalue<F>(pooled: &Matrix, n: usize, m: usize, statistic: F, plan: &PermutationPlan) -> Result<PermutationOutcome>
where
    F: Fn(&FeaturizedSample) -> f64 + Sync,
{
    if pooled.nrows() != n + m {
        return contract(format!("pooled has {} rows, expected {}", pooled.nrows(), n + m));
    }
    // validates n, m >= 2 and finiteness once up front
    FeaturizedSample::from_pooled(pooled, n)?;
    permutation_test_indexed(
        n + m,
        n,
        |idx| {
            let fx = pooled.select(Axis(0), &idx[..n]);
            let fy = pooled.select(Axis(0), &idx[n..]);
            statistic(&FeaturizedSample::new(fx, fy).expect("validated above"))
        },
        plan,
    )
}

/// DMMD permutation test, summing pooled rows in place instead of copying.
pub fn dmmd_permutation_pvalue(fs: &FeaturizedSample, plan: &PermutationPlan) -> Result<PermutationOutcome> {
    let pooled = fs.pooled();
    permutation_test_indexed(
        pooled.nrows(),
        fs.n(),
        |idx| teststats::dmmd_from_indices(&pooled, idx, fs.n()),
        plan,
    )
}

// ---------------------------------------------------------------------------
// special functions

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

const GAMMA_EPS: f64 = 1e-16;
const GAMMA_MAX_ITER: usize = 100_000;
const FPMIN: f64 = 1e-300;

fn gamma_prefactor(a: f64, x: f64) -> f64 {
    (a * x.ln() - x - ln_gamma(a)).exp()
}

/// Lower regularized gamma by its power series; accurate for `x < a + 1`.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..GAMMA_MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    sum * gamma_prefactor(a, x)
}

/// Upper regularized gamma by Lentz's continued fraction; for `x >= a + 1`.
fn gamma_q_fraction(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / FPMIN;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = b + an / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    gamma_prefactor(a, x) * h
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 − P(a, x)`, accurate in
/// the far tail.
pub fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_fraction(a, x)
    }
}

/// Upper tail `1 − Φ(z)` of the standard normal, via `erfc` written as
/// `Q(1/2, z²/2)`.
pub fn normal_sf(z: f64) -> f64 {
    if z >= 0.0 {
        0.5 * regularized_gamma_q(0.5, 0.5 * z * z)
    } else {
        1.0 - normal_sf(-z)
    }
}

pub fn normal_cdf(z: f64) -> f64 {
    normal_sf(-z)
}

/// CDF of χ²ₖ at `x`.
pub fn chi2_cdf(x: f64, k: usize) -> Result<f64> {
    if !(x >= 0.0) {
        return contract(format!("chi2_cdf needs x >= 0, got {x}"));
    }
    if k < 1 {
        return contract("chi2_cdf needs k >= 1");
    }
    Ok(regularized_gamma_p(k as f64 / 2.0, x / 2.0))
}

/// Survival function of χ²ₖ at `x`.
pub fn chi2_sf(x: f64, k: usize) -> Result<f64> {
    if !(x >= 0.0) {
        return contract(format!("chi2_sf needs x >= 0, got {x}"));
    }
    if k < 1 {
        return contract("chi2_sf needs k >= 1");
    }
    Ok(regularized_gamma_q(k as f64 / 2.0, x / 2.0))
}

/// Asymptotic DFDA p-value `1 − F_{χ²_Ĥ}(T)`, floored at `1e-300`.
pub fn dfda_pvalue(t: f64, hhat: usize) -> Result<PValue> {
    if !(t >= 0.0) {
        return contract(format!("DFDA statistic must be >= 0, got {t}"));
    }
    Ok(PValue {
        value: chi2_sf(t, hhat)?.clamp(1e-300, 1.0),
        method: NullMethod::Chi2,
    })
}

// ---------------------------------------------------------------------------
// weighted χ²

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloPValue {
    pub pvalue: PValue,
    /// Binomial standard error of the tail estimate.
    pub std_error: f64,
    pub draws: usize,
}

/// `Pr(Σ λᵢ ξᵢ² ≥ x)` with `ξᵢ` i.i.d. standard normal, by Monte Carlo with
/// add-one smoothing `(1 + count) / (draws + 1)`.
pub fn weighted_chi2_survival(x: f64, lambdas: &[f64], draws: usize, seed: u64) -> Result<MonteCarloPValue> {
    if draws < 1000 {
        return contract(format!("weighted χ² needs at least 1000 draws, got {draws}"));
    }
    if !x.is_finite() {
        return contract("weighted χ² evaluated at a non-finite point");
    }
    if lambdas.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
        return contract("weights must be finite and nonnegative");
    }
    let weights: Vec<f64> = lambdas.iter().copied().filter(|&l| l > 0.0).collect();
    if weights.is_empty() {
        return Err(Error::DegenerateDistribution("all weights are zero".into()));
    }
    let chunks = draws.div_ceil(MC_CHUNK);
    let count: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = MC_CHUNK.min(draws - c * MC_CHUNK);
            let mut r = rng::stream(seed, c as u64);
            (0..len)
                .filter(|_| {
                    let q: f64 = weights
                        .iter()
                        .map(|l| {
                            let z: f64 = r.sample(StandardNormal);
                            l * z * z
                        })
                        .sum();
                    q >= x
                })
                .count()
        })
        .sum();
    let p = (1 + count) as f64 / (draws + 1) as f64;
    Ok(MonteCarloPValue {
        pvalue: PValue {
            value: p,
            method: NullMethod::WeightedChi2,
        },
        std_error: (p * (1.0 - p) / draws as f64).sqrt(),
        draws,
    })
}

/// Asymptotic DMMD p-value: weights are the eigenvalues of the unridged
/// pooled covariance, keeping those above `1e-12 · λ_max`.
pub fn dmmd_asymptotic_pvalue(s: f64, fs: &FeaturizedSample, draws: usize, seed: u64) -> Result<MonteCarloPValue> {
    if !(s >= 0.0) {
        return contract(format!("DMMD statistic must be >= 0, got {s}"));
    }
    let eig = linalg::sym_eigen(&teststats::pooled_scatter_covariance(fs))?;
    let lmax = eig.values[0];
    if !(lmax > 0.0) {
        return Err(Error::DegenerateDistribution(
            "pooled feature covariance is zero".into(),
        ));
    }
    let lambdas: Vec<f64> = eig.values.iter().copied().filter(|&l| l >= 1e-12 * lmax).collect();
    weighted_chi2_survival(s, &lambdas, draws, seed)
}
