//! Feature networks: bias-free ReLU layers followed by a final `tanh`.
//!
//! A net with input dimension `d` has width `H = d + 1` and depth `D`, i.e.
//! `D − 1` weight matrices `W₁ (H×d), W₂..W_{D−1} (H×H)`, and computes
//!
//! ```text
//! φ(z) = tanh(W_{D−1} relu(⋯ relu(W₁ z)⋯))
//! ```
//!
//! subject to `∏ ‖W_j‖_Fro ≤ β`. Because there are no biases and ReLU is
//! positively homogeneous, rescaling the layers rescales the pre-`tanh`
//! output by the product of the factors, which is what [`FeatureNet::project_weights`]
//! relies on.

mod train;

use rand::Rng;
use serde::Deserialize;

use crate::data::rng;
use crate::error::{contract, Error, Result};
use crate::linalg::Matrix;

pub use train::{train, trace_csv, TraceEntry, TrainConfig, TrainOutcome};

/// Relative slack allowed on the Frobenius-product constraint.
pub const BETA_SLACK: f64 = 1e-9;

/// Default Frobenius-product bound for input dimension `d`: `10·√d`.
pub fn default_beta(d: usize) -> f64 {
    10.0 * (d as f64).sqrt()
}

pub const DEFAULT_DEPTH: usize = 3;

/// Largest double below one. `tanh` rounds to exactly ±1 for arguments beyond
/// about 19; outputs are clamped so they stay inside the open cube.
const TANH_BOUND: f64 = 1.0 - f64::EPSILON / 2.0;

fn squash(x: f64) -> f64 {
    x.tanh().clamp(-TANH_BOUND, TANH_BOUND)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNet {
    d: usize,
    beta: f64,
    weights: Vec<Matrix>,
}

/// Per-sample activations kept for backpropagation.
struct Activations {
    /// `acts[0]` is the input, `acts[l]` the post-ReLU output of layer `l`.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of every layer; the last one feeds `tanh`.
    pre: Vec<Vec<f64>>,
}

fn matvec(w: &Matrix, x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(w.rows().into_iter().map(|row| {
        row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }));
}

fn frobenius(w: &Matrix) -> f64 {
    w.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl FeatureNet {
    /// Builds a net from explicit weights, checking shapes, finiteness and the
    /// β constraint.
    pub fn from_weights(d: usize, beta: f64, weights: Vec<Matrix>) -> Result<Self> {
        if d < 1 {
            return contract("feature net needs d >= 1");
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return contract(format!("beta must be positive and finite, got {beta}"));
        }
        if weights.is_empty() {
            return contract("feature net needs at least one weight matrix (depth >= 2)");
        }
        let h = d + 1;
        for (j, w) in weights.iter().enumerate() {
            let expected = if j == 0 { (h, d) } else { (h, h) };
            if w.dim() != expected {
                return contract(format!(
                    "layer {} has shape {:?}, expected {:?}",
                    j + 1,
                    w.dim(),
                    expected
                ));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return contract(format!("layer {} has non-finite weights", j + 1));
            }
        }
        let net = FeatureNet { d, beta, weights };
        if net.frobenius_product() > beta * (1.0 + BETA_SLACK) {
            return contract(format!(
                "Frobenius product {} exceeds beta {}",
                net.frobenius_product(),
                beta
            ));
        }
        Ok(net)
    }

    /// Random net with Glorot-uniform layers, projected onto the β constraint.
    pub fn init(d: usize, depth: usize, beta: f64, seed: u64) -> Result<Self> {
        if depth < 2 {
            return contract(format!("depth must be at least 2, got {depth}"));
        }
        if d < 1 {
            return contract("feature net needs d >= 1");
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return contract(format!("beta must be positive and finite, got {beta}"));
        }
        let h = d + 1;
        let weights = (0..depth - 1)
            .map(|j| {
                let fan_in = if j == 0 { d } else { h };
                let a = (6.0 / (fan_in + h) as f64).sqrt();
                let mut r = rng::stream(seed, j as u64);
                Matrix::from_shape_fn((h, fan_in), |_| r.random_range(-a..a))
            })
            .collect();
        let net = FeatureNet {
            d,
            beta: f64::INFINITY,
            weights,
        };
        net.project_weights(beta)
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    /// Output dimension `H = d + 1`.
    pub fn width(&self) -> usize {
        self.d + 1
    }

    /// Number of weight matrices plus one.
    pub fn depth(&self) -> usize {
        self.weights.len() + 1
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn frobenius_product(&self) -> f64 {
        self.weights.iter().map(frobenius).product()
    }

    /// Rescales every layer by `(β/P)^{1/(D−1)}` when the Frobenius product
    /// `P` exceeds `β`; otherwise returns the weights unchanged. The result
    /// carries `beta` as its constraint.
    pub fn project_weights(&self, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return contract(format!("beta must be positive and finite, got {beta}"));
        }
        let norms: Vec<f64> = self.weights.iter().map(frobenius).collect();
        for (j, n) in norms.iter().enumerate() {
            if !n.is_finite() {
                return Err(Error::DegenerateNet { layer: j + 1 });
            }
        }
        let mut out = FeatureNet {
            d: self.d,
            beta,
            weights: self.weights.clone(),
        };
        if norms.contains(&0.0) {
            // product is zero, constraint trivially holds
            return Ok(out);
        }
        let log_p: f64 = norms.iter().map(|n| n.ln()).sum();
        if log_p <= beta.ln() {
            return Ok(out);
        }
        let factor = ((beta.ln() - log_p) / self.weights.len() as f64).exp();
        for w in &mut out.weights {
            w.mapv_inplace(|v| v * factor);
        }
        Ok(out)
    }

    fn check_input(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.d {
            return contract(format!("input has length {}, net expects {}", z.len(), self.d));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return contract("input has non-finite entries");
        }
        Ok(())
    }

    fn activations(&self, z: &[f64]) -> Activations {
        let last = self.weights.len() - 1;
        let mut acts = Vec::with_capacity(self.weights.len());
        let mut pre = Vec::with_capacity(self.weights.len());
        acts.push(z.to_vec());
        for (j, w) in self.weights.iter().enumerate() {
            let mut p = Vec::new();
            matvec(w, acts.last().unwrap(), &mut p);
            if j < last {
                acts.push(p.iter().map(|&v| v.max(0.0)).collect());
            }
            pre.push(p);
        }
        Activations { acts, pre }
    }

    /// Output of the last linear layer, before `tanh`.
    pub fn pre_tanh(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_input(z)?;
        Ok(self.activations(z).pre.pop().unwrap())
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.pre_tanh(z)?;
        out.iter_mut().for_each(|v| *v = squash(*v));
        Ok(out)
    }

    /// Row-wise [`forward`](Self::forward), `n × d → n × H`.
    pub fn forward_batch(&self, z: &Matrix) -> Result<Matrix> {
        if z.nrows() == 0 {
            return contract("forward_batch needs at least one row");
        }
        if z.ncols() != self.d {
            return contract(format!("input has {} columns, net expects {}", z.ncols(), self.d));
        }
        let h = self.width();
        let mut out = Matrix::zeros((z.nrows(), h));
        for (i, row) in z.rows().into_iter().enumerate() {
            let phi = self.forward(&row.to_vec())?;
            out.row_mut(i).assign(&ndarray::ArrayView1::from(&phi[..]));
        }
        Ok(out)
    }

    fn check_pair(&self, xp: &Matrix, yp: &Matrix) -> Result<()> {
        if xp.nrows() == 0 || yp.nrows() == 0 {
            return contract("objective needs at least one row per sample");
        }
        if xp.ncols() != self.d || yp.ncols() != self.d {
            return contract(format!(
                "samples have {} and {} columns, net expects {}",
                xp.ncols(),
                yp.ncols(),
                self.d
            ));
        }
        Ok(())
    }

    /// `(1/N) (Σ φ(x′ᵢ) − Σ φ(y′ᵢ))` with `N = n′ + m′`.
    pub fn signed_mean(&self, xp: &Matrix, yp: &Matrix) -> Result<Vec<f64>> {
        self.check_pair(xp, yp)?;
        let mut v = vec![0.0; self.width()];
        for (rows, sign) in [(xp, 1.0), (yp, -1.0)] {
            for row in rows.rows() {
                let phi = self.forward(&row.to_vec())?;
                v.iter_mut().zip(&phi).for_each(|(a, b)| *a += sign * b);
            }
        }
        let n = (xp.nrows() + yp.nrows()) as f64;
        v.iter_mut().for_each(|a| *a /= n);
        Ok(v)
    }

    /// Training criterion `‖(1/N)(Σ φ(x′ᵢ) − Σ φ(y′ᵢ))‖`, in `[0, √H]`.
    pub fn objective(&self, xp: &Matrix, yp: &Matrix) -> Result<f64> {
        Ok(norm(&self.signed_mean(xp, yp)?))
    }

    /// Objective and its gradient with respect to every weight matrix.
    pub fn objective_gradient(&self, xp: &Matrix, yp: &Matrix) -> Result<(f64, Vec<Matrix>)> {
        self.check_pair(xp, yp)?;
        let rows: Vec<(Vec<f64>, f64)> = xp
            .rows()
            .into_iter()
            .map(|r| (r.to_vec(), 1.0))
            .chain(yp.rows().into_iter().map(|r| (r.to_vec(), -1.0)))
            .collect();
        let refs: Vec<(&[f64], f64)> = rows.iter().map(|(r, s)| (&r[..], *s)).collect();
        Ok(self.labelled_gradient(&refs))
    }

    /// Gradient of `‖(1/|B|) Σ tᵢ φ(zᵢ)‖` over a labelled batch `(zᵢ, tᵢ)`.
    /// ReLU's subgradient at zero is taken as zero; at a zero objective the
    /// gradient is zero.
    pub(crate) fn labelled_gradient(&self, batch: &[(&[f64], f64)]) -> (f64, Vec<Matrix>) {
        let h = self.width();
        let scale = 1.0 / batch.len() as f64;
        let forward: Vec<(Activations, f64)> = batch
            .iter()
            .map(|(z, t)| (self.activations(z), *t))
            .collect();
        let mut v = vec![0.0; h];
        for (a, t) in &forward {
            for (vi, p) in v.iter_mut().zip(a.pre.last().unwrap()) {
                *vi += t * scale * squash(*p);
            }
        }
        let obj = norm(&v);
        let mut grads: Vec<Matrix> = self.weights.iter().map(|w| Matrix::zeros(w.dim())).collect();
        if obj == 0.0 {
            return (obj, grads);
        }
        let unit: Vec<f64> = v.iter().map(|x| x / obj).collect();
        let n_layers = self.weights.len();
        for (a, t) in &forward {
            let coef = t * scale;
            let mut g: Vec<f64> = a.pre[n_layers - 1]
                .iter()
                .zip(&unit)
                .map(|(p, u)| {
                    let th = p.tanh();
                    coef * u * (1.0 - th * th)
                })
                .collect();
            for l in (0..n_layers).rev() {
                let input = &a.acts[l];
                let grad = &mut grads[l];
                for (i, gi) in g.iter().enumerate() {
                    if *gi == 0.0 {
                        continue;
                    }
                    for (k, xk) in input.iter().enumerate() {
                        grad[[i, k]] += gi * xk;
                    }
                }
                if l > 0 {
                    let w = &self.weights[l];
                    let mut prev = vec![0.0; w.ncols()];
                    for (i, gi) in g.iter().enumerate() {
                        if *gi == 0.0 {
                            continue;
                        }
                        for (k, pk) in prev.iter_mut().enumerate() {
                            *pk += w[[i, k]] * gi;
                        }
                    }
                    for (pk, z) in prev.iter_mut().zip(&a.pre[l - 1]) {
                        if *z <= 0.0 {
                            *pk = 0.0;
                        }
                    }
                    g = prev;
                }
            }
        }
        (obj, grads)
    }

    /// Adds `step[j]` to every layer (no projection).
    pub(crate) fn add_step(&mut self, step: &[Matrix]) {
        for (w, s) in self.weights.iter_mut().zip(step) {
            *w += s;
        }
    }

    /// JSON document `{d, depth, beta, weights}` with every number written to
    /// 17 significant digits.
    pub fn to_json(&self) -> String {
        let num = |v: f64| format!("{v:.16e}");
        let layers: Vec<String> = self
            .weights
            .iter()
            .map(|w| {
                let rows: Vec<String> = w
                    .rows()
                    .into_iter()
                    .map(|r| format!("[{}]", r.iter().map(|&v| num(v)).collect::<Vec<_>>().join(",")))
                    .collect();
                format!("[{}]", rows.join(","))
            })
            .collect();
        format!(
            "{{\"d\":{},\"depth\":{},\"beta\":{},\"weights\":[{}]}}\n",
            self.d,
            self.depth(),
            num(self.beta),
            layers.join(",")
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct NetFile {
            d: usize,
            depth: usize,
            beta: f64,
            weights: Vec<Vec<Vec<f64>>>,
        }
        let file: NetFile = serde_json::from_str(text)?;
        if file.weights.len() + 1 != file.depth {
            return contract(format!(
                "net file declares depth {} but holds {} weight matrices",
                file.depth,
                file.weights.len()
            ));
        }
        let mut weights = Vec::with_capacity(file.weights.len());
        for (j, layer) in file.weights.into_iter().enumerate() {
            let rows = layer.len();
            let cols = layer.first().map_or(0, Vec::len);
            if layer.iter().any(|r| r.len() != cols) {
                return contract(format!("layer {} is ragged", j + 1));
            }
            let flat: Vec<f64> = layer.into_iter().flatten().collect();
            weights.push(Matrix::from_shape_vec((rows, cols), flat).expect("checked rectangular"));
        }
        FeatureNet::from_weights(file.d, file.beta, weights)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
