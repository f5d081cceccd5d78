//! Single-test driver and the type-1/type-2 error-rate simulation harness.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, C2stConfig};
use crate::data::{self, rng, GeneratorSpec, Role};
use crate::error::{contract, Error, Result};
use crate::featmap::{self, FeatureNet, TrainConfig};
use crate::linalg::Matrix;
use crate::nulldist::{self, PermutationPlan};
use crate::teststats::{self, FeaturizedSample, RidgePolicy};

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DmmdPerm,
    DmmdAsymptotic,
    DfdaChi2,
    MmdMed,
    Kdmmd,
    C2st,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::DmmdPerm,
        Method::DmmdAsymptotic,
        Method::DfdaChi2,
        Method::MmdMed,
        Method::Kdmmd,
        Method::C2st,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::DmmdPerm => "dmmd_perm",
            Method::DmmdAsymptotic => "dmmd_asymptotic",
            Method::DfdaChi2 => "dfda_chi2",
            Method::MmdMed => "mmd_med",
            Method::Kdmmd => "kdmmd",
            Method::C2st => "c2st",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Outcome of one two-sample test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub method: Method,
    pub statistic: f64,
    pub p_value: f64,
    /// `p_value <= alpha`.
    pub reject: bool,
    pub n: usize,
    pub m: usize,
    /// Width of the representation the statistic was computed on.
    #[serde(rename = "H")]
    pub h: usize,
    pub hhat_used: usize,
    pub alpha: f64,
    pub seed: u64,
    pub wall_time_ms: f64,
}

/// Everything a single test needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TestParams {
    pub alpha: f64,
    pub permutations: usize,
    pub seed: u64,
    pub asymptotic_draws: usize,
    pub ridge: RidgePolicy,
    pub c2st: C2stConfig,
}

impl Default for TestParams {
    fn default() -> Self {
        TestParams {
            alpha: DEFAULT_ALPHA,
            permutations: nulldist::DEFAULT_PERMUTATIONS,
            seed: 0,
            asymptotic_draws: nulldist::DEFAULT_WEIGHTED_DRAWS,
            ridge: RidgePolicy::default(),
            c2st: C2stConfig::default(),
        }
    }
}

/// Runs `method` on raw samples `x`, `y`. With a net, the feature-based
/// methods see `φ(x)`, `φ(y)`; without one the inputs are taken as features
/// already. `mmd_med` always works on the raw inputs.
pub fn run_test(method: Method, x: &Matrix, y: &Matrix, net: Option<&FeatureNet>, params: &TestParams) -> Result<TestResult> {
    if !(params.alpha > 0.0 && params.alpha < 1.0) {
        return contract(format!("alpha must lie in (0, 1), got {}", params.alpha));
    }
    if x.ncols() != y.ncols() {
        return contract(format!("x has {} columns but y has {}", x.ncols(), y.ncols()));
    }
    let start = Instant::now();
    let (fx, fy) = match (net, method) {
        (Some(net), m) if m != Method::MmdMed => (net.forward_batch(x)?, net.forward_batch(y)?),
        _ => (x.clone(), y.clone()),
    };
    let plan = PermutationPlan {
        permutations: params.permutations,
        seed: params.seed,
    };
    let h = fx.ncols();
    let (statistic, p_value, hhat_used) = match method {
        Method::DmmdPerm => {
            let fs = FeaturizedSample::new(fx, fy)?;
            let out = nulldist::dmmd_permutation_pvalue(&fs, &plan)?;
            (out.observed, out.pvalue.value, h)
        }
        Method::DmmdAsymptotic => {
            let fs = FeaturizedSample::new(fx, fy)?;
            let s = teststats::dmmd_statistic(&fs);
            let p = nulldist::dmmd_asymptotic_pvalue(s, &fs, params.asymptotic_draws, params.seed)?;
            (s, p.pvalue.value, h)
        }
        Method::DfdaChi2 => {
            let fs = FeaturizedSample::new(fx, fy)?;
            let hhat = teststats::choose_hhat(fs.n(), fs.m(), h);
            let t = teststats::dfda_statistic(&fs, &params.ridge, hhat)?;
            (t.value, nulldist::dfda_pvalue(t.value, t.hhat_used)?.value, t.hhat_used)
        }
        Method::MmdMed => {
            let out = baselines::mmd_test(&fx, &fy, &plan)?;
            (out.statistic, out.pvalue.value, h)
        }
        Method::Kdmmd => {
            let out = baselines::kdmmd_test(&fx, &fy, &plan)?;
            (out.statistic, out.pvalue.value, h)
        }
        Method::C2st => {
            let cfg = C2stConfig {
                seed: params.seed,
                ..params.c2st.clone()
            };
            let out = baselines::c2st_test(&fx, &fy, &cfg)?;
            (out.accuracy, out.pvalue.value, h)
        }
    };
    Ok(TestResult {
        method,
        statistic,
        p_value,
        reject: p_value <= params.alpha,
        n: x.nrows(),
        m: y.nrows(),
        h,
        hhat_used,
        alpha: params.alpha,
        seed: params.seed,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Wilson score interval for `successes / trials` at the given two-sided
/// confidence. At zero successes the upper bound is capped by the rule of
/// three, `3/trials`; at all successes the lower bound is symmetrically
/// raised to `1 − 3/trials`.
pub fn wilson_interval(successes: usize, trials: usize, confidence: f64) -> Result<(f64, f64)> {
    if trials < 1 || successes > trials {
        return contract(format!("wilson_interval: {successes} successes out of {trials}"));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return contract("confidence must lie in (0, 1)");
    }
    use statrs::distribution::{ContinuousCDF, Normal};
    let z = Normal::standard().inverse_cdf(0.5 + confidence / 2.0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let mut lo = (center - half).max(0.0);
    let mut hi = (center + half).min(1.0);
    if successes == 0 {
        lo = 0.0;
        hi = hi.min(3.0 / n);
    }
    if successes == trials {
        hi = 1.0;
        lo = lo.max(1.0 - 3.0 / n);
    }
    Ok((lo, hi))
}

// ---------------------------------------------------------------------------
// experiment harness

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_permutations() -> usize {
    nulldist::DEFAULT_PERMUTATIONS
}
fn default_draws() -> usize {
    nulldist::DEFAULT_WEIGHTED_DRAWS
}
fn default_depth() -> usize {
    featmap::DEFAULT_DEPTH
}
fn default_repetitions() -> usize {
    200
}

/// Sweep description, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: GeneratorSpec,
    /// Per-sample sizes; each entry runs with `n = m`.
    pub sample_sizes: Vec<usize>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// Frobenius-product bound; defaults to `10·√d`.
    #[serde(default)]
    pub beta: Option<f64>,
    /// Per-class transfer sample size; defaults to the test size `n`.
    #[serde(default)]
    pub transfer_size: Option<usize>,
    /// Skip the feature net and test on the raw inputs.
    #[serde(default)]
    pub identity_features: bool,
    /// Train one net up front instead of one per replicate.
    #[serde(default)]
    pub fixed_net: bool,
    #[serde(default = "default_draws")]
    pub asymptotic_draws: usize,
    #[serde(default)]
    pub ridge: RidgePolicy,
    #[serde(default)]
    pub c2st: C2stConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad: Vec<String> = Vec::new();
        if let Err(e) = self.generator.validate() {
            bad.push(format!("generator: {e}"));
        }
        if self.sample_sizes.is_empty() {
            bad.push("sample_sizes: must not be empty".into());
        }
        if self.sample_sizes.iter().any(|&s| s < 4) {
            bad.push("sample_sizes: every size must be >= 4".into());
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            bad.push("sample_sizes: must be strictly ascending".into());
        }
        if self.repetitions < 1 {
            bad.push("repetitions: must be >= 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bad.push("alpha: must lie in (0, 1)".into());
        }
        if self.permutations < 1 {
            bad.push("permutations: must be >= 1".into());
        }
        if self.methods.is_empty() {
            bad.push("methods: must not be empty".into());
        }
        if let Err(e) = self.train.validate() {
            bad.push(format!("train: {e}"));
        }
        if self.depth < 2 {
            bad.push("depth: must be >= 2".into());
        }
        if let Some(b) = self.beta {
            if !(b > 0.0 && b.is_finite()) {
                bad.push("beta: must be positive".into());
            }
        }
        if self.transfer_size.is_some_and(|t| t < 1) {
            bad.push("transfer_size: must be >= 1".into());
        }
        if self.asymptotic_draws < 1000 && self.methods.contains(&Method::DmmdAsymptotic) {
            bad.push("asymptotic_draws: must be >= 1000".into());
        }
        if !(self.ridge.c > 0.0) {
            bad.push("ridge.c: must be positive".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    fn beta(&self) -> f64 {
        self.beta.unwrap_or_else(|| featmap::default_beta(self.generator.d))
    }

    fn params(&self, seed: u64) -> TestParams {
        TestParams {
            alpha: self.alpha,
            permutations: self.permutations,
            seed,
            asymptotic_draws: self.asymptotic_draws,
            ridge: self.ridge,
            c2st: self.c2st.clone(),
        }
    }

    /// Trains a feature net on fresh transfer data drawn from `seed`.
    pub fn train_net(&self, transfer_n: usize, seed: u64) -> Result<FeatureNet> {
        let xp = data::generate(&self.generator, transfer_n, Role::PTransfer, rng::mix(seed, 0))?;
        let yp = data::generate(&self.generator, transfer_n, Role::QTransfer, rng::mix(seed, 1))?;
        let init = FeatureNet::init(self.generator.d, self.depth, self.beta(), rng::mix(seed, 2))?;
        let cfg = TrainConfig {
            seed: rng::mix(seed, 3),
            ..self.train.clone()
        };
        Ok(featmap::train(&init, &xp, &yp, &cfg)?.net)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ErrorType {
    #[serde(rename = "type1")]
    Type1,
    #[serde(rename = "type2")]
    Type2,
}

impl ErrorType {
    pub fn name(self) -> &'static str {
        match self {
            ErrorType::Type1 => "type1",
            ErrorType::Type2 => "type2",
        }
    }
}

/// One line of the sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub method: Method,
    pub n: usize,
    pub m: usize,
    pub error_type: ErrorType,
    /// Errors over replicates: rejections under H₀ (type 1) or
    /// non-rejections under H₁ (type 2).
    pub errors: usize,
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub repetitions: usize,
    pub alpha: f64,
}

impl SweepRow {
    /// Power `1 − rate` of a type-2 row.
    pub fn power(&self) -> f64 {
        1.0 - self.rate
    }
}

pub const SWEEP_HEADER: &str = "method,n,m,error_type,rate,ci_lo,ci_hi,R,alpha";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.n,
            r.m,
            r.error_type.name(),
            r.rate,
            r.ci_lo,
            r.ci_hi,
            r.repetitions,
            r.alpha
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses rayon's default.
    pub threads: Option<usize>,
    /// Overrides the config's `fixed_net` when set.
    pub fixed_net: bool,
}

/// Rejections of every method in one replicate, under H₀ and (if defined) H₁.
struct ReplicateOutcome {
    null: Vec<bool>,
    alt: Option<Vec<bool>>,
}

fn run_replicate(cfg: &ExperimentConfig, n: usize, seed: u64, shared: Option<&FeatureNet>) -> Result<ReplicateOutcome> {
    let trained;
    let net = if cfg.identity_features {
        None
    } else if let Some(net) = shared {
        Some(net)
    } else {
        trained = cfg.train_net(cfg.transfer_size.unwrap_or(n), rng::mix(seed, 10))?;
        Some(&trained)
    };
    let gen = &cfg.generator;
    let params = cfg.params(rng::mix(seed, 20));
    let run_all = |x: &Matrix, y: &Matrix| -> Result<Vec<bool>> {
        cfg.methods
            .iter()
            .map(|&method| Ok(run_test(method, x, y, net, &params)?.reject))
            .collect()
    };
    let x0 = data::generate(gen, n, Role::P, rng::mix(seed, 11))?;
    let y0 = data::generate(gen, n, Role::P, rng::mix(seed, 12))?;
    let null = run_all(&x0, &y0)?;
    let alt = if gen.has_alternative() {
        let x1 = data::generate(gen, n, Role::P, rng::mix(seed, 13))?;
        let y1 = data::generate(gen, n, Role::Q, rng::mix(seed, 14))?;
        Some(run_all(&x1, &y1)?)
    } else {
        None
    };
    Ok(ReplicateOutcome { null, alt })
}

/// Runs the sweep: for every sample size, `R` replicates each drawing fresh
/// transfer data (unless the net is fixed), an H₀ pair `(p, p)` and, when
/// the generator has an alternative, an H₁ pair `(p, q)`. Rows come out in
/// sample-size order, then method order, type 1 before type 2.
///
/// Replicate seeds depend only on `(base_seed, size index, replicate)`, so
/// output is identical for any thread count.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = opts.threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;

    let shared = if (cfg.fixed_net || opts.fixed_net) && !cfg.identity_features {
        let size = cfg
            .transfer_size
            .unwrap_or(*cfg.sample_sizes.last().expect("validated non-empty"));
        Some(cfg.train_net(size, rng::mix(cfg.base_seed, u64::MAX))?)
    } else {
        None
    };

    let mut rows = Vec::new();
    for (si, &n) in cfg.sample_sizes.iter().enumerate() {
        let size_seed = rng::mix(cfg.base_seed, si as u64);
        let outcomes: Vec<ReplicateOutcome> = pool.install(|| {
            (0..cfg.repetitions)
                .into_par_iter()
                .map(|r| run_replicate(cfg, n, rng::mix(size_seed, r as u64), shared.as_ref()))
                .collect::<Result<Vec<_>>>()
        })?;
        let reps = cfg.repetitions;
        for (k, &method) in cfg.methods.iter().enumerate() {
            let type1 = outcomes.iter().filter(|o| o.null[k]).count();
            rows.push(sweep_row(method, n, ErrorType::Type1, type1, reps, cfg.alpha)?);
            if cfg.generator.has_alternative() {
                let misses = outcomes
                    .iter()
                    .filter(|o| !o.alt.as_ref().expect("alternative run")[k])
                    .count();
                rows.push(sweep_row(method, n, ErrorType::Type2, misses, reps, cfg.alpha)?);
            }
        }
    }
    Ok(rows)
}

fn sweep_row(method: Method, n: usize, error_type: ErrorType, errors: usize, reps: usize, alpha: f64) -> Result<SweepRow> {
    let (ci_lo, ci_hi) = wilson_interval(errors, reps, 0.95)?;
    Ok(SweepRow {
        method,
        n,
        m: n,
        error_type,
        errors,
        rate: errors as f64 / reps as f64,
        ci_lo,
        ci_hi,
        repetitions: reps,
        alpha,
    })
}
