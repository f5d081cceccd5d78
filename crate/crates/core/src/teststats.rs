//! The DMMD and DFDA test statistics on featurized samples.

use ndarray::{concatenate, s, Array1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::linalg::{self, Matrix};

/// Features of both samples, `φ(X)` (`n × H`) and `φ(Y)` (`m × H`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizedSample {
    fx: Matrix,
    fy: Matrix,
}

impl FeaturizedSample {
    pub fn new(fx: Matrix, fy: Matrix) -> Result<Self> {
        if fx.nrows() < 2 || fy.nrows() < 2 {
            return contract(format!(
                "featurized samples need n, m >= 2, got n = {}, m = {}",
                fx.nrows(),
                fy.nrows()
            ));
        }
        if fx.ncols() != fy.ncols() || fx.ncols() == 0 {
            return contract(format!(
                "feature widths differ or are zero: {} vs {}",
                fx.ncols(),
                fy.ncols()
            ));
        }
        if fx.iter().chain(fy.iter()).any(|v| !v.is_finite()) {
            return contract("features contain non-finite values");
        }
        Ok(FeaturizedSample { fx, fy })
    }

    /// Splits a pooled `(n + m) × H` matrix into its first `n` and last `m` rows.
    pub fn from_pooled(pooled: &Matrix, n: usize) -> Result<Self> {
        if n > pooled.nrows() {
            return contract("split point beyond pooled rows");
        }
        let (a, b) = pooled.view().split_at(Axis(0), n);
        FeaturizedSample::new(a.to_owned(), b.to_owned())
    }

    pub fn fx(&self) -> &Matrix {
        &self.fx
    }

    pub fn fy(&self) -> &Matrix {
        &self.fy
    }

    pub fn n(&self) -> usize {
        self.fx.nrows()
    }

    pub fn m(&self) -> usize {
        self.fy.nrows()
    }

    pub fn width(&self) -> usize {
        self.fx.ncols()
    }

    /// `φ(X)` stacked on top of `φ(Y)`.
    pub fn pooled(&self) -> Matrix {
        concatenate(Axis(0), &[self.fx.view(), self.fy.view()]).expect("equal widths")
    }

    /// The same sample with the roles of `X` and `Y` exchanged.
    pub fn swapped(&self) -> Self {
        FeaturizedSample {
            fx: self.fy.clone(),
            fy: self.fx.clone(),
        }
    }

    fn size_factor(&self) -> f64 {
        let (n, m) = (self.n() as f64, self.m() as f64);
        n * m / (n + m)
    }
}

/// Ridge `ρ = c · max(tr(C)/H, 1e-12) / √(n+m)` added to the pooled
/// covariance `C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgePolicy {
    pub c: f64,
}

impl Default for RidgePolicy {
    fn default() -> Self {
        RidgePolicy { c: 1e-3 }
    }
}

impl RidgePolicy {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return contract(format!("ridge constant must be positive, got {c}"));
        }
        Ok(RidgePolicy { c })
    }

    pub fn rho(&self, cov_trace: f64, width: usize, total: usize) -> f64 {
        self.c * (cov_trace / width as f64).max(1e-12) / (total as f64).sqrt()
    }
}

/// `mean(φ(X)) − mean(φ(Y))`.
pub fn mean_difference(fs: &FeaturizedSample) -> Array1<f64> {
    let mx = fs.fx.mean_axis(Axis(0)).expect("n >= 2");
    let my = fs.fy.mean_axis(Axis(0)).expect("m >= 2");
    mx - my
}

/// `S = nm/(n+m) ‖D‖²`.
pub fn dmmd_statistic(fs: &FeaturizedSample) -> f64 {
    let d = mean_difference(fs);
    fs.size_factor() * d.dot(&d)
}

/// DMMD statistic of a relabelled pooled sample: rows `idx[..n]` form `X`,
/// the rest form `Y`. Used by the permutation null.
pub fn dmmd_from_indices(pooled: &Matrix, idx: &[usize], n: usize) -> f64 {
    let h = pooled.ncols();
    let m = idx.len() - n;
    let mut sx = vec![0.0; h];
    let mut sy = vec![0.0; h];
    for (k, &i) in idx.iter().enumerate() {
        let acc = if k < n { &mut sx } else { &mut sy };
        for (a, v) in acc.iter_mut().zip(pooled.row(i)) {
            *a += v;
        }
    }
    let (nf, mf) = (n as f64, m as f64);
    let sq: f64 = sx
        .iter()
        .zip(&sy)
        .map(|(a, b)| {
            let d = a / nf - b / mf;
            d * d
        })
        .sum();
    nf * mf / (nf + mf) * sq
}

/// Pooled covariance without ridge: scatter about the pooled mean divided by
/// `n + m − 1`.
pub fn pooled_scatter_covariance(fs: &FeaturizedSample) -> Matrix {
    linalg::covariance(&fs.pooled()).1
}

/// Ridge-regularized pooled covariance `Σ̂` and the ridge `ρ` that was added.
pub fn pooled_covariance(fs: &FeaturizedSample, ridge: &RidgePolicy) -> (Matrix, f64) {
    let mut sigma = pooled_scatter_covariance(fs);
    let h = fs.width();
    let rho = ridge.rho(sigma.diag().sum(), h, fs.n() + fs.m());
    for i in 0..h {
        sigma[[i, i]] += rho;
    }
    (sigma, rho)
}

/// PCA target dimension `min(round(√((n+m)/2)), H)`, at least 1.
pub fn choose_hhat(n: usize, m: usize, h: usize) -> usize {
    let target = (((n + m) as f64) / 2.0).sqrt().round() as usize;
    target.min(h).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DfdaStatistic {
    pub value: f64,
    pub hhat_used: usize,
    /// The pooled features had zero covariance; `value` is then 0.
    pub degenerate: bool,
}

/// Components whose eigenvalue is below this multiple of the ridge are
/// dropped from `T`: the ridge would swamp them, so they carry no degree of
/// freedom and keeping them would make the χ²_Ĥ reference conservative.
pub const RANK_RIDGE_RATIO: f64 = 100.0;

/// `T = nm/(n+m) Dᵀ Σ̂⁻¹ D` after projecting the pooled features onto their
/// leading `hhat` principal components.
///
/// The ridge `ρ` is set from the `hhat`-dimensional covariance. Of those
/// components only the ones with eigenvalue `≥ RANK_RIDGE_RATIO · ρ` enter
/// `T`; their count is `hhat_used`, the χ² degrees of freedom. For features
/// of full numerical rank `hhat_used == hhat`.
pub fn dfda_statistic(fs: &FeaturizedSample, ridge: &RidgePolicy, hhat: usize) -> Result<DfdaStatistic> {
    let h = fs.width();
    let total = fs.n() + fs.m();
    if hhat < 1 || hhat > h || hhat > total {
        return contract(format!("hhat = {hhat} outside 1..={}", h.min(total)));
    }
    let pooled = fs.pooled();
    let pca = linalg::pca_fit(&pooled, hhat)?;
    if pca.degenerate {
        return Ok(DfdaStatistic {
            value: 0.0,
            hhat_used: hhat,
            degenerate: true,
        });
    }
    let reduced = pca.transform(&pooled)?;
    let mut sigma = linalg::covariance(&reduced).1;
    let rho = ridge.rho(sigma.diag().sum(), hhat, total);
    let kept = pca
        .eigenvalues
        .iter()
        .take_while(|&&l| l >= RANK_RIDGE_RATIO * rho)
        .count()
        .max(1);
    let rfs = FeaturizedSample::from_pooled(&reduced.slice(s![.., ..kept]).to_owned(), fs.n())?;
    let d = mean_difference(&rfs);
    sigma = sigma.slice(s![..kept, ..kept]).to_owned();
    for i in 0..kept {
        sigma[[i, i]] += rho;
    }
    let x = linalg::solve_spd(&sigma, d.as_slice().expect("contiguous")).map_err(|e| match e {
        Error::Singular { .. } => Error::Contract(format!("ridge covariance not SPD: {e}")),
        other => other,
    })?;
    let quad: f64 = d.iter().zip(&x).map(|(a, b)| a * b).sum();
    Ok(DfdaStatistic {
        value: (fs.size_factor() * quad).max(0.0),
        hhat_used: kept,
        degenerate: false,
    })
}
