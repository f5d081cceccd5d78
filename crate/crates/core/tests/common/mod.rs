//! Reference implementations shared by the integration tests. Written
//! independently of the library: plain loops over `Vec`s, no reuse of its
//! internals.
#![allow(dead_code)]

use d2st::data::rng;
use d2st::Matrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn uniform_matrix(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, 0);
    Matrix::from_shape_fn((rows, cols), |_| r.random_range(lo..hi))
}

pub fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, 1);
    Matrix::from_shape_fn((rows, cols), |_| r.sample(StandardNormal))
}

/// Forward pass of a bias-free ReLU net with tanh output. Returns the output
/// and every hidden pre-activation, in layer order.
pub fn forward(weights: &[Matrix], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut a = z.to_vec();
    let mut hidden = Vec::new();
    for (j, w) in weights.iter().enumerate() {
        let mut next = vec![0.0; w.nrows()];
        for (i, out) in next.iter_mut().enumerate() {
            for (k, x) in a.iter().enumerate() {
                *out += w[[i, k]] * x;
            }
        }
        if j + 1 < weights.len() {
            hidden.extend_from_slice(&next);
            a = next.into_iter().map(|v| v.max(0.0)).collect();
        } else {
            a = next.into_iter().map(f64::tanh).collect();
        }
    }
    (a, hidden)
}

/// `(1/N)(Σ φ(xᵢ) − Σ φ(yᵢ))` with `N` the total number of rows.
pub fn signed_mean(weights: &[Matrix], xp: &Matrix, yp: &Matrix) -> Vec<f64> {
    let h = weights.last().unwrap().nrows();
    let n = (xp.nrows() + yp.nrows()) as f64;
    let mut v = vec![0.0; h];
    for (sample, sign) in [(xp, 1.0), (yp, -1.0)] {
        for row in sample.rows() {
            let (out, _) = forward(weights, &row.to_vec());
            for (vi, o) in v.iter_mut().zip(out) {
                *vi += sign * o / n;
            }
        }
    }
    v
}

pub fn objective(weights: &[Matrix], xp: &Matrix, yp: &Matrix) -> f64 {
    signed_mean(weights, xp, yp).iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// ReLU on/off pattern over both samples.
pub fn activation_pattern(weights: &[Matrix], xp: &Matrix, yp: &Matrix) -> Vec<bool> {
    xp.rows()
        .into_iter()
        .chain(yp.rows())
        .flat_map(|row| forward(weights, &row.to_vec()).1.into_iter().map(|v| v > 0.0))
        .collect()
}

/// Inverse by Gauss–Jordan elimination with partial pivoting.
pub fn invert(a: &Matrix) -> Matrix {
    let n = a.nrows();
    let mut aug = vec![vec![0.0; 2 * n]; n];
    for i in 0..n {
        for j in 0..n {
            aug[i][j] = a[[i, j]];
        }
        aug[i][n + i] = 1.0;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| aug[p][col].abs().total_cmp(&aug[q][col].abs()))
            .unwrap();
        aug.swap(col, pivot);
        let d = aug[col][col];
        for v in aug[col].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != col {
                let f = aug[r][col];
                if f != 0.0 {
                    let pivot_row = aug[col].clone();
                    for (v, p) in aug[r].iter_mut().zip(&pivot_row) {
                        *v -= f * p;
                    }
                }
            }
        }
    }
    Matrix::from_shape_fn((n, n), |(i, j)| aug[i][n + j])
}

/// Haar-ish random orthogonal matrix by Gram–Schmidt on Gaussian columns.
pub fn random_orthogonal(n: usize, seed: u64) -> Matrix {
    let g = normal_matrix(n, n, seed);
    let mut q = Matrix::zeros((n, n));
    for j in 0..n {
        let mut v: Vec<f64> = g.column(j).to_vec();
        for k in 0..j {
            let dot: f64 = (0..n).map(|i| q[[i, k]] * v[i]).sum();
            for (i, vi) in v.iter_mut().enumerate() {
                *vi -= dot * q[[i, k]];
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for i in 0..n {
            q[[i, j]] = v[i] / norm;
        }
    }
    q
}

/// `nm/(n+m) Dᵀ A⁻¹ D` with `A` the pooled covariance about the pooled mean
/// over `n + m − 1`, plus `c · max(tr/H, 1e-12)/√(n+m)` on the diagonal.
pub fn dfda_explicit(fx: &Matrix, fy: &Matrix, c: f64) -> f64 {
    let (n, m, h) = (fx.nrows(), fy.nrows(), fx.ncols());
    let total = (n + m) as f64;
    let mut mean = vec![0.0; h];
    let mut mx = vec![0.0; h];
    let mut my = vec![0.0; h];
    for row in fx.rows() {
        for k in 0..h {
            mx[k] += row[k] / n as f64;
            mean[k] += row[k] / total;
        }
    }
    for row in fy.rows() {
        for k in 0..h {
            my[k] += row[k] / m as f64;
            mean[k] += row[k] / total;
        }
    }
    let mut cov = Matrix::zeros((h, h));
    for row in fx.rows().into_iter().chain(fy.rows()) {
        for a in 0..h {
            for b in 0..h {
                cov[[a, b]] += (row[a] - mean[a]) * (row[b] - mean[b]) / (total - 1.0);
            }
        }
    }
    let tr: f64 = (0..h).map(|k| cov[[k, k]]).sum();
    let rho = c * (tr / h as f64).max(1e-12) / total.sqrt();
    for k in 0..h {
        cov[[k, k]] += rho;
    }
    let inv = invert(&cov);
    let d: Vec<f64> = mx.iter().zip(&my).map(|(a, b)| a - b).collect();
    let mut q = 0.0;
    for a in 0..h {
        for b in 0..h {
            q += d[a] * inv[[a, b]] * d[b];
        }
    }
    (n * m) as f64 / total * q
}

/// Linear-kernel biased MMD² as a double sum of inner products.
pub fn linear_mmd2(fx: &Matrix, fy: &Matrix) -> f64 {
    let dot = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| -> f64 { a.iter().zip(b).map(|(p, q)| p * q).sum() };
    let (n, m) = (fx.nrows() as f64, fy.nrows() as f64);
    let mut kxx = 0.0;
    let mut kyy = 0.0;
    let mut kxy = 0.0;
    for a in fx.rows() {
        for b in fx.rows() {
            kxx += dot(a, b);
        }
        for b in fy.rows() {
            kxy += dot(a, b);
        }
    }
    for a in fy.rows() {
        for b in fy.rows() {
            kyy += dot(a, b);
        }
    }
    kxx / (n * n) + kyy / (m * m) - 2.0 * kxy / (n * m)
}
