use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::FeatureNet;
use crate::data::rng;
use crate::error::{contract, Error, Result};
use crate::linalg::Matrix;

/// Controls for [`train`].
///
/// `eta` is the leniency: training stops once the best objective has failed
/// to improve by more than `eta` for `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub eta: f64,
    pub patience: usize,
    pub seed: u64,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 0.05,
            batch_size: 32,
            eta: 1e-3,
            patience: 10,
            seed: 0,
            momentum: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.epochs < 1 {
            bad.push("epochs must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            bad.push("learning_rate must be positive");
        }
        if self.batch_size < 1 {
            bad.push("batch_size must be >= 1");
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            bad.push("eta must be nonnegative");
        }
        if self.patience < 1 {
            bad.push("patience must be >= 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            bad.push("momentum must lie in [0, 1)");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            contract(bad.join("; "))
        }
    }
}

/// One row of the training trace. Epoch 0 is the initial net.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub epoch: usize,
    /// Full-data objective after this epoch.
    pub objective: f64,
    /// Best full-data objective so far.
    pub best: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best net seen, by full-data objective.
    pub net: FeatureNet,
    pub trace: Vec<TraceEntry>,
}

impl TrainOutcome {
    pub fn best_objective(&self) -> f64 {
        self.trace.last().map_or(0.0, |e| e.best)
    }
}

/// `epoch,objective,best` CSV of a training trace.
pub fn trace_csv(trace: &[TraceEntry]) -> String {
    let mut out = String::from("epoch,objective,best\n");
    for e in trace {
        out.push_str(&format!("{},{:.16e},{:.16e}\n", e.epoch, e.objective, e.best));
    }
    out
}

/// Maximizes the mean-difference objective on the transfer sample by
/// minibatch gradient ascent with momentum, projecting onto the β constraint
/// after every step.
pub fn train(net: &FeatureNet, xp: &Matrix, yp: &Matrix, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let initial = net.objective(xp, yp)?;

    let rows: Vec<(Vec<f64>, f64)> = xp
        .rows()
        .into_iter()
        .map(|r| (r.to_vec(), 1.0))
        .chain(yp.rows().into_iter().map(|r| (r.to_vec(), -1.0)))
        .collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();

    let mut current = net.clone();
    let mut best_net = net.clone();
    let mut best = initial;
    let mut reference = initial;
    let mut stale = 0;
    let mut velocity: Vec<Matrix> = net.weights().iter().map(|w| Matrix::zeros(w.dim())).collect();
    let mut trace = vec![TraceEntry {
        epoch: 0,
        objective: initial,
        best,
    }];

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng::stream(cfg.seed, epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f64], f64)> = chunk.iter().map(|&i| (&rows[i].0[..], rows[i].1)).collect();
            let (_, grads) = current.labelled_gradient(&batch);
            if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::TrainingDiverged { epoch });
            }
            for (v, g) in velocity.iter_mut().zip(&grads) {
                *v *= cfg.momentum;
                v.scaled_add(cfg.learning_rate, g);
            }
            current.add_step(&velocity);
            current = current.project_weights(net.beta()).map_err(|e| match e {
                Error::DegenerateNet { .. } => Error::TrainingDiverged { epoch },
                other => other,
            })?;
        }
        let objective = current.objective(xp, yp)?;
        if objective > best {
            best = objective;
            best_net = current.clone();
        }
        trace.push(TraceEntry {
            epoch,
            objective,
            best,
        });
        if best > reference + cfg.eta {
            reference = best;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        net: best_net,
        trace,
    })
}
