use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::rng;
use crate::error::{contract, Error, Result};
use crate::linalg::Matrix;

const BLOB_SPACING: f64 = 10.0;

/// Distribution family of a synthetic two-sample problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorKind {
    /// `p = N(0, I)`, `q = N(ε e₁, I)`.
    GaussianShift { epsilon: f64 },
    /// `p = N(0, I)`, `q = N(0, s² I)`.
    GaussianScale { scale: f64 },
    /// Equal-weight mixture over a `grid × grid` lattice (spacing 10) in the
    /// first two coordinates. `p` components are isotropic; `q` components
    /// have covariance eigenvalues `(ratio, 1)` rotated by 45°. Remaining
    /// coordinates are standard normal.
    Blobs { grid: usize, ratio: f64 },
}

impl FromStr for GeneratorKind {
    type Err = Error;

    /// Parses a bare kind name with default parameters.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_shift" => Ok(GeneratorKind::GaussianShift { epsilon: 1.0 }),
            "gaussian_scale" => Ok(GeneratorKind::GaussianScale { scale: 2.0 }),
            "blobs" => Ok(GeneratorKind::Blobs { grid: 3, ratio: 4.0 }),
            other => Err(Error::Config(format!("unknown generator kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub kind: GeneratorKind,
    pub d: usize,
    /// Relative perturbation of the defining parameter for the transfer pair
    /// `(p′, q′)`; zero means `p′ = p`, `q′ = q`.
    #[serde(default)]
    pub transfer_delta: f64,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, d: usize) -> Self {
        GeneratorSpec {
            kind,
            d,
            transfer_delta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(Error::Config("generator dimension d must be at least 1".into()));
        }
        if !self.transfer_delta.is_finite() || self.transfer_delta < 0.0 {
            return Err(Error::Config("transfer_delta must be finite and nonnegative".into()));
        }
        match self.kind {
            GeneratorKind::GaussianShift { epsilon } if !epsilon.is_finite() => {
                Err(Error::Config("epsilon must be finite".into()))
            }
            GeneratorKind::GaussianScale { scale } if !(scale.is_finite() && scale > 0.0) => {
                Err(Error::Config("scale must be finite and positive".into()))
            }
            GeneratorKind::Blobs { grid, ratio } => {
                if grid < 1 || !(ratio.is_finite() && ratio > 0.0) {
                    Err(Error::Config("blobs need grid >= 1 and a positive ratio".into()))
                } else if self.d < 2 {
                    Err(Error::Config("blobs need d >= 2".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Whether `q` differs from `p`, i.e. whether a type-2 error is defined.
    pub fn has_alternative(&self) -> bool {
        match self.kind {
            GeneratorKind::GaussianShift { epsilon } => epsilon != 0.0,
            GeneratorKind::GaussianScale { scale } => scale != 1.0,
            GeneratorKind::Blobs { ratio, .. } => ratio != 1.0,
        }
    }
}

/// Which of the four distributions to sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    P,
    Q,
    PTransfer,
    QTransfer,
}

impl Role {
    fn stream_index(self) -> u64 {
        match self {
            Role::P => 0,
            Role::Q => 1,
            Role::PTransfer => 2,
            Role::QTransfer => 3,
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p" => Ok(Role::P),
            "q" => Ok(Role::Q),
            "p_transfer" => Ok(Role::PTransfer),
            "q_transfer" => Ok(Role::QTransfer),
            other => Err(Error::Config(format!("unknown role `{other}`"))),
        }
    }
}

/// Draws `n` observations of the distribution selected by `role`.
///
/// A pure function of its arguments; different roles under the same seed use
/// independent streams.
pub fn generate(spec: &GeneratorSpec, n: usize, role: Role, seed: u64) -> Result<Matrix> {
    spec.validate()?;
    if n < 1 {
        return contract("generate needs n >= 1");
    }
    let d = spec.d;
    let mut rng = rng::stream(seed, role.stream_index());
    let mut z = Matrix::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
    let bump = 1.0 + spec.transfer_delta;
    match spec.kind {
        GeneratorKind::GaussianShift { epsilon } => {
            let shift = match role {
                Role::P | Role::PTransfer => 0.0,
                Role::Q => epsilon,
                Role::QTransfer => epsilon * bump,
            };
            z.column_mut(0).mapv_inplace(|v| v + shift);
        }
        GeneratorKind::GaussianScale { scale } => {
            let s = match role {
                Role::P | Role::PTransfer => 1.0,
                Role::Q => scale,
                Role::QTransfer => scale * bump,
            };
            z.mapv_inplace(|v| v * s);
        }
        GeneratorKind::Blobs { grid, ratio } => {
            let r = match role {
                Role::P | Role::PTransfer => 1.0,
                Role::Q => ratio,
                Role::QTransfer => ratio * bump,
            };
            let sq = r.sqrt();
            let h = std::f64::consts::FRAC_1_SQRT_2;
            for mut row in z.rows_mut() {
                let cell = rng.random_range(0..grid * grid);
                let (cx, cy) = ((cell / grid) as f64, (cell % grid) as f64);
                // rotate diag(√r, 1)·ξ by 45 degrees
                let (a, b) = (sq * row[0], row[1]);
                row[0] = BLOB_SPACING * cx + h * (a - b);
                row[1] = BLOB_SPACING * cy + h * (a + b);
            }
        }
    }
    Ok(z)
}
