//! Comparison tests: Gaussian-kernel MMD with the median heuristic (on raw
//! data or on learned features) and the classifier two-sample test.

use ndarray::{concatenate, Array1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::rng;
use crate::error::{contract, Error, Result};
use crate::linalg::Matrix;
use crate::nulldist::{self, NullMethod, PValue, PermutationPlan};

/// Gaussian kernel `k(a, b) = exp(−‖a − b‖² / (2σ²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    bandwidth: f64,
}

impl KernelSpec {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return contract(format!("kernel bandwidth must be positive, got {bandwidth}"));
        }
        Ok(KernelSpec { bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    fn eval_sq(&self, sq_dist: f64) -> f64 {
        (-sq_dist / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.eval_sq(sq_dist(a.iter().copied(), b.iter().copied()))
    }
}

fn sq_dist(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    a.zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Median of all pairwise Euclidean distances between distinct rows. A zero
/// median falls back to the smallest nonzero distance.
pub fn median_heuristic(pooled: &Matrix) -> Result<f64> {
    let n = pooled.nrows();
    if n < 2 {
        return contract("median heuristic needs at least two points");
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(sq_dist(pooled.row(i).iter().copied(), pooled.row(j).iter().copied()).sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let k = dists.len();
    let median = if k % 2 == 1 {
        dists[k / 2]
    } else {
        0.5 * (dists[k / 2 - 1] + dists[k / 2])
    };
    if median > 0.0 {
        return Ok(median);
    }
    dists
        .into_iter()
        .find(|&d| d > 0.0)
        .ok_or(Error::DegenerateBandwidth)
}

/// Biased (V-statistic) squared MMD between the rows of `x` and `y`.
pub fn gaussian_mmd2_biased(x: &Matrix, y: &Matrix, kernel: &KernelSpec) -> Result<f64> {
    if x.ncols() != y.ncols() || x.nrows() == 0 || y.nrows() == 0 {
        return contract("MMD needs non-empty samples of equal dimension");
    }
    let mean_kernel = |a: &Matrix, b: &Matrix| {
        let mut s = 0.0;
        for ra in a.rows() {
            for rb in b.rows() {
                s += kernel.eval_sq(sq_dist(ra.iter().copied(), rb.iter().copied()));
            }
        }
        s / (a.nrows() * b.nrows()) as f64
    };
    let v = mean_kernel(x, x) + mean_kernel(y, y) - 2.0 * mean_kernel(x, y);
    Ok(v.max(0.0))
}

pub fn kernel_matrix(pooled: &Matrix, kernel: &KernelSpec) -> Matrix {
    let n = pooled.nrows();
    let mut k = Matrix::zeros((n, n));
    for i in 0..n {
        k[[i, i]] = 1.0;
        for j in (i + 1)..n {
            let v = kernel.eval_sq(sq_dist(pooled.row(i).iter().copied(), pooled.row(j).iter().copied()));
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}

/// Biased squared MMD read off a precomputed kernel matrix, with rows
/// `idx[..n]` as `X` and `idx[n..]` as `Y`.
pub fn mmd2_from_kernel(k: &Matrix, idx: &[usize], n: usize) -> f64 {
    let total = idx.len();
    let m = total - n;
    let mut w = vec![0.0; total];
    for (pos, &i) in idx.iter().enumerate() {
        w[i] = if pos < n { 1.0 / n as f64 } else { -1.0 / m as f64 };
    }
    let mut s = 0.0;
    for (i, row) in k.rows().into_iter().enumerate() {
        let inner: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
        s += w[i] * inner;
    }
    s.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelTestOutcome {
    pub statistic: f64,
    pub bandwidth: f64,
    pub pvalue: PValue,
}

/// Gaussian-kernel MMD permutation test with median-heuristic bandwidth.
/// The kernel matrix is computed once; permutations reindex it.
pub fn mmd_test(x: &Matrix, y: &Matrix, plan: &PermutationPlan) -> Result<KernelTestOutcome> {
    if x.ncols() != y.ncols() {
        return contract("samples have different dimensions");
    }
    if x.nrows() < 2 || y.nrows() < 2 {
        return contract("MMD test needs at least two points per sample");
    }
    let pooled = concatenate(Axis(0), &[x.view(), y.view()]).expect("equal widths");
    let bandwidth = median_heuristic(&pooled)?;
    let kernel = KernelSpec::new(bandwidth)?;
    let k = kernel_matrix(&pooled, &kernel);
    let n = x.nrows();
    let out = nulldist::permutation_test_indexed(pooled.nrows(), n, |idx| mmd2_from_kernel(&k, idx, n), plan)?;
    Ok(KernelTestOutcome {
        statistic: out.observed,
        bandwidth,
        pvalue: out.pvalue,
    })
}

/// The MMD test run on learned features instead of raw inputs.
pub fn kdmmd_test(fx: &Matrix, fy: &Matrix, plan: &PermutationPlan) -> Result<KernelTestOutcome> {
    mmd_test(fx, fy, plan)
}

// ---------------------------------------------------------------------------
// classifier two-sample test

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum C2stSignificance {
    /// `1 − Φ((â − ½)·2√n_te)`.
    Normal,
    /// `Pr(Bin(n_te, ½) ≥ correct)`.
    ExactBinomial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct C2stConfig {
    /// Fraction of each class used for training.
    pub split_fraction: f64,
    pub epochs: usize,
    /// Upper bound on the gradient step; the step actually taken is also
    /// capped at `1/L` for the loss's smoothness constant `L`.
    pub learning_rate: f64,
    pub l2_penalty: f64,
    pub seed: u64,
    pub significance: C2stSignificance,
}

impl Default for C2stConfig {
    fn default() -> Self {
        C2stConfig {
            split_fraction: 0.5,
            epochs: 200,
            learning_rate: 1.0,
            l2_penalty: 1e-3,
            seed: 0,
            significance: C2stSignificance::Normal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct C2stOutcome {
    pub accuracy: f64,
    pub n_test: usize,
    pub pvalue: PValue,
    /// Penalized training loss before each epoch and after the last one.
    pub loss_trace: Vec<f64>,
}

/// Binary logistic regression with intercept on standardized inputs.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    mean: Array1<f64>,
    scale: Array1<f64>,
    weights: Array1<f64>,
    intercept: f64,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl LogisticModel {
    /// Full-batch gradient descent on mean cross-entropy plus
    /// `l2/2 · ‖w‖²`. Returns the model and the loss trace.
    pub fn fit(x: &Matrix, labels: &[f64], cfg: &C2stConfig) -> (Self, Vec<f64>) {
        let n = x.nrows() as f64;
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
        let z = (x - &mean) / &scale;
        let h = z.ncols();

        let second_moment: f64 = z.iter().map(|v| v * v).sum::<f64>() / n;
        let smoothness = 0.25 * (1.0 + second_moment) + cfg.l2_penalty;
        let step = cfg.learning_rate.min(1.0 / smoothness);

        let mut w = Array1::<f64>::zeros(h);
        let mut b = 0.0;
        let loss = |w: &Array1<f64>, b: f64| {
            let logits = z.dot(w) + b;
            let ce: f64 = logits
                .iter()
                .zip(labels)
                .map(|(&t, &y)| softplus(t) - y * t)
                .sum::<f64>()
                / n;
            ce + 0.5 * cfg.l2_penalty * w.dot(w)
        };
        let mut trace = Vec::with_capacity(cfg.epochs + 1);
        for _ in 0..cfg.epochs {
            trace.push(loss(&w, b));
            let logits = z.dot(&w) + b;
            let resid: Array1<f64> = logits.iter().zip(labels).map(|(&t, &y)| sigmoid(t) - y).collect();
            let gw = z.t().dot(&resid) / n + cfg.l2_penalty * &w;
            let gb = resid.sum() / n;
            w.scaled_add(-step, &gw);
            b -= step * gb;
        }
        trace.push(loss(&w, b));
        (
            LogisticModel {
                mean,
                scale,
                weights: w,
                intercept: b,
            },
            trace,
        )
    }

    pub fn logit(&self, row: ndarray::ArrayView1<f64>) -> f64 {
        let z = (&row - &self.mean) / &self.scale;
        z.dot(&self.weights) + self.intercept
    }
}

/// `1 − Φ((â − ½) / √(1/(4 n_te)))`.
pub fn c2st_normal_pvalue(accuracy: f64, n_test: usize) -> f64 {
    let z = (accuracy - 0.5) * 2.0 * (n_test as f64).sqrt();
    nulldist::normal_sf(z)
}

/// `Pr(Bin(n_te, ½) ≥ correct)`.
pub fn c2st_binomial_pvalue(correct: usize, n_test: usize) -> f64 {
    let n = n_test as f64;
    let ln_half_n = n * 0.5f64.ln();
    let lg_n1 = nulldist::ln_gamma(n + 1.0);
    (correct..=n_test)
        .map(|k| {
            let k = k as f64;
            (lg_n1 - nulldist::ln_gamma(k + 1.0) - nulldist::ln_gamma(n - k + 1.0) + ln_half_n).exp()
        })
        .sum::<f64>()
        .min(1.0)
}

fn split_class(rows: usize, fraction: f64, seed: u64, class: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..rows).collect();
    idx.shuffle(&mut rng::stream(seed, class));
    let n_train = (fraction * rows as f64).round() as usize;
    let test = idx.split_off(n_train.min(rows));
    (idx, test)
}

/// Classifier two-sample test: logistic regression trained on a stratified
/// split (`X` labelled 1, `Y` labelled 0), scored by held-out accuracy.
pub fn c2st_test(fx: &Matrix, fy: &Matrix, cfg: &C2stConfig) -> Result<C2stOutcome> {
    if fx.ncols() != fy.ncols() {
        return contract("samples have different dimensions");
    }
    if !(cfg.split_fraction > 0.0 && cfg.split_fraction < 1.0) {
        return contract("split_fraction must lie in (0, 1)");
    }
    if cfg.epochs < 1 || !(cfg.learning_rate > 0.0) || !(cfg.l2_penalty >= 0.0) {
        return contract("C2ST needs epochs >= 1, learning_rate > 0, l2_penalty >= 0");
    }
    let (x_train, x_test) = split_class(fx.nrows(), cfg.split_fraction, cfg.seed, 0);
    let (y_train, y_test) = split_class(fy.nrows(), cfg.split_fraction, cfg.seed, 1);
    if [&x_train, &x_test, &y_train, &y_test].iter().any(|v| v.len() < 2) {
        return contract(format!(
            "C2ST split too small: train {}+{}, test {}+{} (need >= 2 each)",
            x_train.len(),
            y_train.len(),
            x_test.len(),
            y_test.len()
        ));
    }
    let train = concatenate(
        Axis(0),
        &[fx.select(Axis(0), &x_train).view(), fy.select(Axis(0), &y_train).view()],
    )
    .expect("equal widths");
    let labels: Vec<f64> = std::iter::repeat_n(1.0, x_train.len())
        .chain(std::iter::repeat_n(0.0, y_train.len()))
        .collect();
    let (model, loss_trace) = LogisticModel::fit(&train, &labels, cfg);

    let correct_x = x_test.iter().filter(|&&i| model.logit(fx.row(i)) >= 0.0).count();
    let correct_y = y_test.iter().filter(|&&i| model.logit(fy.row(i)) < 0.0).count();
    let correct = correct_x + correct_y;
    let n_test = x_test.len() + y_test.len();
    let accuracy = correct as f64 / n_test as f64;
    let pvalue = match cfg.significance {
        C2stSignificance::Normal => PValue {
            value: c2st_normal_pvalue(accuracy, n_test).max(f64::MIN_POSITIVE),
            method: NullMethod::Normal,
        },
        C2stSignificance::ExactBinomial => PValue {
            value: c2st_binomial_pvalue(correct, n_test).max(f64::MIN_POSITIVE),
            method: NullMethod::Binomial,
        },
    };
    Ok(C2stOutcome {
        accuracy,
        n_test,
        pvalue,
        loss_trace,
    })
}
