//! Dense symmetric linear algebra: Jacobi eigendecomposition, Cholesky
//! solves and PCA.

use ndarray::{Array1, Array2, Axis};

use crate::error::{contract, Error, Result};

/// Row-major matrix of doubles; rows are observations.
pub type Matrix = Array2<f64>;

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenpairs of a symmetric matrix, eigenvalues sorted descending.
///
/// Column `i` of `vectors` belongs to `values[i]`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Array1<f64>,
    pub vectors: Matrix,
}

fn max_abs(a: &Matrix) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps until the off-diagonal Frobenius norm drops below `1e-12` times the
/// Frobenius norm of the input.
pub fn sym_eigen(a: &Matrix) -> Result<EigenDecomposition> {
    let (rows, cols) = a.dim();
    if rows != cols || rows == 0 {
        return contract(format!("sym_eigen needs a non-empty square matrix, got {rows}x{cols}"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return contract("sym_eigen input has non-finite entries");
    }
    let n = rows;
    let scale = max_abs(a).max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[[i, j]] - a[[j, i]]).abs() > SYMMETRY_TOL * scale {
                return contract(format!("sym_eigen input is not symmetric at ({i}, {j})"));
            }
        }
    }

    let mut w = a.clone();
    let mut v = Matrix::eye(n);
    let frob = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let threshold = JACOBI_TOL * frob;

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| w[[i, j]] * w[[i, j]])
            .sum::<f64>()
            .sqrt();
        if off <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = w[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (w[[q, q]] - w[[p, p]]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let wkp = w[[k, p]];
                    let wkq = w[[k, q]];
                    w[[k, p]] = c * wkp - s * wkq;
                    w[[k, q]] = s * wkp + c * wkq;
                }
                for k in 0..n {
                    let wpk = w[[p, k]];
                    let wqk = w[[q, k]];
                    w[[p, k]] = c * wpk - s * wqk;
                    w[[q, k]] = s * wpk + c * wqk;
                }
                w[[p, q]] = 0.0;
                w[[q, p]] = 0.0;
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            sweeps: JACOBI_MAX_SWEEPS,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[[j, j]].total_cmp(&w[[i, i]]));
    let values = Array1::from_iter(order.iter().map(|&i| w[[i, i]]));
    let vectors = v.select(Axis(1), &order);
    Ok(EigenDecomposition { values, vectors })
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let (rows, cols) = a.dim();
    if rows != cols || rows == 0 {
        return contract(format!("cholesky needs a non-empty square matrix, got {rows}x{cols}"));
    }
    let n = rows;
    let mut l = Matrix::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Singular { pivot: j, value: d });
        }
        let ljj = d.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `A x = b` for symmetric positive-definite `A` via Cholesky.
pub fn solve_spd(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if a.nrows() != b.len() {
        return contract(format!(
            "solve_spd: matrix has {} rows but right-hand side has length {}",
            a.nrows(),
            b.len()
        ));
    }
    let l = cholesky(a)?;
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    Ok(x)
}

/// A fitted PCA transform.
#[derive(Debug, Clone)]
pub struct Pca {
    /// Column means of the fitting data.
    pub mean: Array1<f64>,
    /// `k × H`; rows are the leading orthonormal eigenvectors of the covariance.
    pub projection: Matrix,
    /// Leading `k` covariance eigenvalues, descending.
    pub eigenvalues: Array1<f64>,
    /// Set when the fitting data has (numerically) zero covariance; the
    /// projection is then an arbitrary orthonormal basis.
    pub degenerate: bool,
}

impl Pca {
    /// Centers `z` by the fitted mean and projects onto the components (`n × k`).
    pub fn transform(&self, z: &Matrix) -> Result<Matrix> {
        if z.ncols() != self.projection.ncols() {
            return contract(format!(
                "PCA fitted on {} columns, got {}",
                self.projection.ncols(),
                z.ncols()
            ));
        }
        let centered = z - &self.mean;
        Ok(centered.dot(&self.projection.t()))
    }
}

/// Unbiased (`n − 1`) covariance of the rows of `z`, plus their mean.
pub(crate) fn covariance(z: &Matrix) -> (Array1<f64>, Matrix) {
    let n = z.nrows();
    let mean = z.mean_axis(Axis(0)).expect("non-empty");
    let centered = z - &mean;
    let mut cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    // enforce exact symmetry
    let h = cov.nrows();
    for i in 0..h {
        for j in (i + 1)..h {
            let s = 0.5 * (cov[[i, j]] + cov[[j, i]]);
            cov[[i, j]] = s;
            cov[[j, i]] = s;
        }
    }
    (mean, cov)
}

/// Fits a `k`-component PCA on the rows of `z`.
///
/// Each component's sign is fixed so that its first entry with absolute value
/// above `1e-12` is positive. Tied eigenvalues are not an error; the returned
/// basis is one valid choice.
pub fn pca_fit(z: &Matrix, k: usize) -> Result<Pca> {
    let (n, h) = z.dim();
    if n < 2 {
        return contract(format!("pca_fit needs at least 2 rows, got {n}"));
    }
    if k < 1 || k > n.min(h) {
        return contract(format!("pca_fit: k = {k} outside 1..={}", n.min(h)));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return contract("pca_fit input has non-finite entries");
    }
    let (mean, cov) = covariance(z);
    let eig = sym_eigen(&cov)?;
    let mut projection = eig.vectors.slice(ndarray::s![.., ..k]).t().to_owned();
    for mut row in projection.rows_mut() {
        if let Some(first) = row.iter().copied().find(|v| v.abs() > 1e-12) {
            if first < 0.0 {
                row.mapv_inplace(|v| -v);
            }
        }
    }
    let scale = max_abs(z);
    let degenerate = eig.values[0] <= 1e-20 * (1.0 + scale * scale);
    let eigenvalues = eig.values.slice(ndarray::s![..k]).mapv(|v| v.max(0.0));
    Ok(Pca {
        mean,
        projection,
        eigenvalues,
        degenerate,
    })
}
