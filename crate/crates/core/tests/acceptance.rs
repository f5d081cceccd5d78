//! Acceptance suite. Every criterion prints one `PASS`/`FAIL` line; the test
//! fails if any criterion does.
//!
//! Set `D2ST_ACCEPTANCE=2,9` to run a subset while iterating.

mod common;

use std::process::Command;
use std::time::Instant;

use d2st::data::{self, rng, GeneratorKind, GeneratorSpec, Role};
use d2st::experiment::{self, ErrorType, ExperimentConfig, Method, RunOptions, TestParams};
use d2st::featmap::{self, FeatureNet, TrainConfig};
use d2st::nulldist::{self, PermutationPlan};
use d2st::teststats::{self, FeaturizedSample, RidgePolicy};
use rand::Rng;
use rayon::prelude::*;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn shift_spec(epsilon: f64, d: usize) -> GeneratorSpec {
    GeneratorSpec::new(GeneratorKind::GaussianShift { epsilon }, d)
}

fn sweep_config(generator: GeneratorSpec, sizes: Vec<usize>, reps: usize, methods: Vec<Method>) -> ExperimentConfig {
    ExperimentConfig {
        generator,
        sample_sizes: sizes,
        repetitions: reps,
        alpha: 0.05,
        permutations: 1000,
        methods,
        base_seed: 0,
        train: TrainConfig::default(),
        depth: featmap::DEFAULT_DEPTH,
        beta: None,
        transfer_size: None,
        identity_features: false,
        fixed_net: false,
        asymptotic_draws: nulldist::DEFAULT_WEIGHTED_DRAWS,
        ridge: RidgePolicy::default(),
        c2st: Default::default(),
    }
}

// 1. type-1 calibration of every test under H₀
fn type1_calibration() -> Verdict {
    let mut cfg = sweep_config(
        shift_spec(0.0, 10),
        vec![100],
        500,
        vec![
            Method::DmmdPerm,
            Method::DfdaChi2,
            Method::DmmdAsymptotic,
            Method::MmdMed,
            Method::C2st,
        ],
    );
    cfg.permutations = 500;
    cfg.base_seed = 101;
    let rows = experiment::run_experiment(&cfg, &RunOptions::default()).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for r in &rows {
        assert_eq!(r.error_type, ErrorType::Type1);
        ok &= (0.030..=0.075).contains(&r.rate);
        parts.push(format!("{}={:.3}", r.method, r.rate));
    }
    verdict(ok, format!("type-1 rates in [0.030, 0.075]: {}", parts.join(" ")))
}

fn power_at(method: Method, n: usize, rows: &[experiment::SweepRow]) -> f64 {
    rows.iter()
        .find(|r| r.method == method && r.n == n && r.error_type == ErrorType::Type2)
        .map(|r| r.power())
        .unwrap()
}

// 2. power ordering and growth with n
fn power_trend() -> Verdict {
    // Pre-run: bisect ε so that dmmd_perm power at n = m = 50 is near 1/2.
    let probe = |eps: f64| -> f64 {
        let mut cfg = sweep_config(shift_spec(eps, 10), vec![50], 100, vec![Method::DmmdPerm]);
        cfg.permutations = 200;
        cfg.base_seed = 7;
        let rows = experiment::run_experiment(&cfg, &RunOptions::default()).unwrap();
        power_at(Method::DmmdPerm, 50, &rows)
    };
    let (mut lo, mut hi) = (0.0, 2.0);
    let mut eps = 1.0;
    for _ in 0..8 {
        eps = 0.5 * (lo + hi);
        let p = probe(eps);
        if (0.4..=0.6).contains(&p) {
            break;
        }
        if p < 0.5 {
            lo = eps;
        } else {
            hi = eps;
        }
    }

    let sizes = vec![50, 100, 200];
    let mut cfg = sweep_config(shift_spec(eps, 10), sizes.clone(), 300, vec![Method::DmmdPerm, Method::DfdaChi2]);
    cfg.base_seed = 202;
    let rows = experiment::run_experiment(&cfg, &RunOptions::default()).unwrap();
    let mut ok = true;
    let mut parts = vec![format!("eps={eps:.4}")];
    for method in [Method::DmmdPerm, Method::DfdaChi2] {
        let powers: Vec<f64> = sizes.iter().map(|&n| power_at(method, n, &rows)).collect();
        ok &= powers.windows(2).all(|w| w[1] > w[0]) && powers[2] >= 0.9;
        parts.push(format!("{method}={powers:.3?}"));
    }
    let p50 = power_at(Method::DmmdPerm, 50, &rows);
    ok &= (0.3..=0.7).contains(&p50);
    verdict(ok, format!("calibrated power at 50 in [0.3, 0.7], strictly increasing, >= 0.9 at 200: {}", parts.join(" ")))
}

// 3. DMMD equals the scaled linear-kernel MMD²
fn linear_kernel_oracle() -> Verdict {
    let mut r = rng::stream(3, 0);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let n = r.random_range(2..=30);
        let m = r.random_range(2..=30);
        let h = r.random_range(1..=8);
        let fx = common::uniform_matrix(n, h, -1.0, 1.0, rng::mix(i, 0));
        let fy = common::uniform_matrix(m, h, -1.0, 1.0, rng::mix(i, 1));
        let oracle = (n * m) as f64 / (n + m) as f64 * common::linear_mmd2(&fx, &fy);
        let s = teststats::dmmd_statistic(&FeaturizedSample::new(fx, fy).unwrap());
        worst = worst.max(rel_err(s, oracle));
    }
    verdict(worst <= 1e-10, format!("1000 instances, worst relative error {worst:.2e} (tol 1e-10)"))
}

// 4. DFDA against an explicit inverse, and rotation invariance of S and T
fn dfda_oracle() -> Verdict {
    let mut r = rng::stream(4, 0);
    let ridge = RidgePolicy::default();
    let (mut worst_t, mut worst_rot): (f64, f64) = (0.0, 0.0);
    for i in 0..500 {
        let h = r.random_range(1..=6);
        let n = r.random_range(h + 2..=40);
        let m = r.random_range(h + 2..=40);
        let fx = common::normal_matrix(n, h, rng::mix(i, 0));
        let fy = common::normal_matrix(m, h, rng::mix(i, 1)) + 0.3;
        let fs = FeaturizedSample::new(fx.clone(), fy.clone()).unwrap();
        let t = teststats::dfda_statistic(&fs, &ridge, h).unwrap();
        assert_eq!(t.hhat_used, h);
        worst_t = worst_t.max(rel_err(t.value, common::dfda_explicit(&fx, &fy, ridge.c)));

        let q = common::random_orthogonal(h, rng::mix(i, 2));
        let rotated = FeaturizedSample::new(fx.dot(&q.t()), fy.dot(&q.t())).unwrap();
        let s = teststats::dmmd_statistic(&fs);
        let s_rot = teststats::dmmd_statistic(&rotated);
        let t_rot = teststats::dfda_statistic(&rotated, &ridge, h).unwrap().value;
        worst_rot = worst_rot.max(rel_err(s_rot, s)).max(rel_err(t_rot, t.value));
    }
    verdict(
        worst_t <= 1e-8 && worst_rot <= 1e-8,
        format!("500 instances, explicit-inverse error {worst_t:.2e}, rotation error {worst_rot:.2e} (tol 1e-8)"),
    )
}

// 5. permutation and asymptotic DMMD p-values agree under H₀
fn null_cross_validation() -> Verdict {
    let spec = shift_spec(0.0, 10);
    let reps = 200;
    let diffs: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|i| {
            let seed = rng::mix(505, i);
            let net = FeatureNet::init(10, featmap::DEFAULT_DEPTH, featmap::default_beta(10), rng::mix(seed, 0)).unwrap();
            let x = data::generate(&spec, 200, Role::P, rng::mix(seed, 1)).unwrap();
            let y = data::generate(&spec, 200, Role::P, rng::mix(seed, 2)).unwrap();
            let fs = FeaturizedSample::new(net.forward_batch(&x).unwrap(), net.forward_batch(&y).unwrap()).unwrap();
            let plan = PermutationPlan {
                permutations: 10_000,
                seed: rng::mix(seed, 3),
            };
            let perm = nulldist::dmmd_permutation_pvalue(&fs, &plan).unwrap();
            let asym = nulldist::dmmd_asymptotic_pvalue(perm.observed, &fs, 400_000, rng::mix(seed, 4)).unwrap();
            (perm.pvalue.value - asym.pvalue.value).abs()
        })
        .collect();
    let close = diffs.iter().filter(|&&d| d <= 0.02).count();
    let worst = diffs.iter().copied().fold(0.0, f64::max);
    verdict(
        close as f64 >= 0.95 * reps as f64,
        format!("{close}/{reps} replicates with |p_perm - p_asym| <= 0.02 (need 95%), worst {worst:.4}"),
    )
}

// 6. χ² CDF closed forms and weighted χ² Monte Carlo
fn chi2_machinery() -> Verdict {
    use statrs::function::erf::erf;
    let mut worst: f64 = 0.0;
    for i in 1..=1000 {
        let x = i as f64 * 0.05;
        worst = worst
            .max((nulldist::chi2_cdf(x, 1).unwrap() - erf((x / 2.0).sqrt())).abs())
            .max((nulldist::chi2_cdf(x, 2).unwrap() - (1.0 - (-x / 2.0).exp())).abs());
    }
    let mut outside = 0;
    let mut worst_z: f64 = 0.0;
    let mut sum_z2 = 0.0;
    for i in 0..50u64 {
        let k = 1 + (i % 10) as usize;
        // spread x over the bulk and upper tail of χ²_k
        let x = k as f64 * (0.3 + 0.5 * (i / 10) as f64);
        let exact = nulldist::chi2_sf(x, k).unwrap();
        let mc = nulldist::weighted_chi2_survival(x, &vec![1.0; k], 100_000, 1 + i).unwrap();
        let z = (mc.pvalue.value - exact).abs() / mc.std_error;
        worst_z = worst_z.max(z);
        sum_z2 += z * z;
        if z > 3.0 {
            outside += 1;
        }
    }
    verdict(
        worst <= 1e-10 && outside == 0,
        format!("closed-form error {worst:.2e} (tol 1e-10); weighted χ² worst {worst_z:.2} SE over 50 pairs (tol 3), sum z² {sum_z2:.1} (χ²₅₀ scale)"),
    )
}

// 7. analytic gradient against central differences
fn gradient_check() -> Verdict {
    let mut r = rng::stream(7, 0);
    let h_step = 1e-6;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut nets = 0;
    while nets < 100 {
        let seed = r.random::<u64>();
        let d = r.random_range(1..=4);
        let depth = r.random_range(2..=4);
        let net = FeatureNet::init(d, depth, 1e6, seed).unwrap();
        let n = r.random_range(2..=8);
        let xp = common::normal_matrix(n, d, rng::mix(seed, 1));
        let yp = common::normal_matrix(n, d, rng::mix(seed, 2)) + 0.5;
        let (_, grads) = net.objective_gradient(&xp, &yp).unwrap();
        let base = net.weights().to_vec();
        let pattern = common::activation_pattern(&base, &xp, &yp);
        let mut num = Vec::new();
        let mut ana = Vec::new();
        for (j, w) in base.iter().enumerate() {
            for idx in ndarray::indices(w.dim()) {
                let shifted = |delta: f64| {
                    let mut ws = base.clone();
                    ws[j][idx] += delta;
                    ws
                };
                let (plus, minus) = (shifted(h_step), shifted(-h_step));
                // skip entries whose perturbation crosses a ReLU kink
                if common::activation_pattern(&plus, &xp, &yp) != pattern
                    || common::activation_pattern(&minus, &xp, &yp) != pattern
                {
                    continue;
                }
                let fd = (common::objective(&plus, &xp, &yp) - common::objective(&minus, &xp, &yp)) / (2.0 * h_step);
                num.push(fd);
                ana.push(grads[j][idx]);
            }
        }
        let scale = num.iter().map(|v| v * v).sum::<f64>().sqrt();
        if scale < 1e-8 {
            continue;
        }
        let err = num.iter().zip(&ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        worst = worst.max(err / scale);
        checked += num.len();
        nets += 1;
    }
    verdict(worst <= 1e-4, format!("100 nets, {checked} entries, worst relative error {worst:.2e} (tol 1e-4)"))
}

// 8. the objective is the supremum of wᵀ(mean difference) over the unit ball
fn sup_identity() -> Verdict {
    let mut r = rng::stream(8, 0);
    let mut worst: f64 = 0.0;
    let mut dominated = true;
    for i in 0..200u64 {
        let d = r.random_range(1..=5);
        let depth = r.random_range(2..=4);
        let net = FeatureNet::init(d, depth, featmap::default_beta(d), rng::mix(i, 0)).unwrap();
        let n = r.random_range(2..=20);
        let xp = common::normal_matrix(n, d, rng::mix(i, 1));
        let yp = common::normal_matrix(n, d, rng::mix(i, 2)) + 0.25;
        let obj = net.objective(&xp, &yp).unwrap();
        let v = common::signed_mean(net.weights(), &xp, &yp);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let at_argmax: f64 = v.iter().map(|x| x * x / norm).sum();
        worst = worst.max((obj - at_argmax).abs());
        let mut wr = rng::stream(rng::mix(i, 3), 0);
        for _ in 0..10_000 {
            let w: Vec<f64> = (0..v.len()).map(|_| wr.sample(rand_distr::StandardNormal)).collect();
            let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            let val: f64 = w.iter().zip(&v).map(|(a, b)| a * b / wn).sum();
            dominated &= val <= obj + 1e-12;
        }
    }
    verdict(
        worst <= 1e-12 && dominated,
        format!("200 instances, |objective - max| worst {worst:.2e} (tol 1e-12), dominates 10^4 random directions: {dominated}"),
    )
}

// 9. a trained net beats its own random initialization
//
// The transfer task is the separable 1-D one (classes at ±1 with ±0.05 jitter)
// placed in coordinate 1, with the remaining d − 1 coordinates standard
// normal nuisance. The test pair is a Gaussian shift of ε along e₁.
fn separable_transfer(n: usize, d: usize, sign: f64, seed: u64) -> d2st::Matrix {
    let mut m = common::normal_matrix(n, d, seed);
    let mut r = rng::stream(seed, 9);
    for i in 0..n {
        m[[i, 0]] = sign * (1.0 + 0.05 * r.random_range(-1.0..1.0));
    }
    m
}

fn training_efficacy() -> Verdict {
    let d = 10;
    let spec = shift_spec(0.5, d);
    let reps = 300;
    let params = TestParams {
        permutations: 500,
        ..TestParams::default()
    };
    let outcomes: Vec<(bool, bool, f64)> = (0..reps)
        .into_par_iter()
        .map(|i| {
            let seed = rng::mix(909, i);
            let init = FeatureNet::init(d, featmap::DEFAULT_DEPTH, featmap::default_beta(d), rng::mix(seed, 0)).unwrap();
            let xp = separable_transfer(200, d, 1.0, rng::mix(seed, 1));
            let yp = separable_transfer(200, d, -1.0, rng::mix(seed, 2));
            let cfg = TrainConfig {
                seed: rng::mix(seed, 3),
                ..TrainConfig::default()
            };
            let trained = featmap::train(&init, &xp, &yp, &cfg).unwrap();
            let x = data::generate(&spec, 50, Role::P, rng::mix(seed, 4)).unwrap();
            let y = data::generate(&spec, 50, Role::Q, rng::mix(seed, 5)).unwrap();
            let p = TestParams {
                seed: rng::mix(seed, 6),
                ..params.clone()
            };
            let run = |net: &FeatureNet| experiment::run_test(Method::DmmdPerm, &x, &y, Some(net), &p).unwrap().reject;
            (run(&trained.net), run(&init), trained.best_objective())
        })
        .collect();
    let trained = outcomes.iter().filter(|o| o.0).count() as f64 / reps as f64;
    let random = outcomes.iter().filter(|o| o.1).count() as f64 / reps as f64;
    let mean_obj = outcomes.iter().map(|o| o.2).sum::<f64>() / reps as f64;
    verdict(
        trained - random >= 0.2,
        format!("power trained {trained:.3} vs random init {random:.3}, gap {:.3} (need 0.2); mean transfer objective {mean_obj:.3}", trained - random),
    )
}

// 10. sequential experiment output is byte-identical across runs
fn cli_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.json");
    std::fs::write(
        &config,
        r#"{
  "generator": {"kind": "gaussian_shift", "epsilon": 0.8, "d": 3},
  "sample_sizes": [20, 40],
  "repetitions": 8,
  "permutations": 100,
  "methods": ["dmmd_perm", "dmmd_asymptotic", "dfda_chi2", "mmd_med", "kdmmd", "c2st"],
  "base_seed": 42,
  "asymptotic_draws": 5000,
  "train": {"epochs": 20}
}"#,
    )
    .unwrap();
    let run = |name: &str| -> Vec<u8> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_d2st"))
            .args(["experiment", config.to_str().unwrap(), "--threads", "1", "--out", out.to_str().unwrap()])
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out).unwrap()
    };
    let a = run("a.csv");
    let b = run("b.csv");
    verdict(
        a == b && !a.is_empty(),
        format!("two --threads 1 runs: {} bytes, identical: {}", a.len(), a == b),
    )
}

type Criterion = (u32, &'static str, fn() -> Verdict);

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        (1, "type-1 calibration", type1_calibration),
        (2, "power trend", power_trend),
        (3, "linear-kernel oracle", linear_kernel_oracle),
        (4, "DFDA brute-force oracle", dfda_oracle),
        (5, "null cross-validation", null_cross_validation),
        (6, "chi-square machinery", chi2_machinery),
        (7, "gradient correctness", gradient_check),
        (8, "sup-over-w identity", sup_identity),
        (9, "training efficacy", training_efficacy),
        (10, "determinism", cli_determinism),
    ];
    let only: Option<Vec<u32>> = std::env::var("D2ST_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("{status} [{id:>2}] {name}: {} ({:.1}s)", v.detail, start.elapsed().as_secs_f64());
        if !v.pass {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
