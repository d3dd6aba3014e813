//! Acceptance criteria 1 to 9. Each test prints one `criterion N: PASS|FAIL`
//! line with the measured numbers, then asserts.
//!
//! Criterion 4 trains at the stated size (2000 examples, hidden 64, 3000
//! epochs) and takes over an hour on a single core.

use std::ffi::OsString;
use std::fs;
use std::path::Path;
use std::time::Instant;

use epinv_core::dataset::{generate_dataset, load_dataset, save_dataset, DatasetConfig};
use epinv_core::eval::{param_error, peak_stats, EvalReport, MetricKind};
use epinv_core::ode::integrate_on_grid;
use epinv_core::refine::{refine_many, RefineConfig};
use epinv_core::regressor::{
    init_weights, load_weights, loss_and_grad, save_weights, RegressorConfig, RegressorWeights, Sample, TrainedModel,
};
use epinv_core::{eval_rhs, integrate, ModelId, ParamVector, SolverConfig, Trajectory};

fn verdict(n: u32, pass: bool, detail: &str) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn run(args: &[&str]) -> i32 {
    let argv: Vec<OsString> = std::iter::once("epinv").chain(args.iter().copied()).map(OsString::from).collect();
    epinv::run(argv)
}

fn covid(values: [f64; 3]) -> Trajectory {
    let spec = ModelId::Covid.spec();
    integrate(spec, &ParamVector::new(ModelId::Covid, values.to_vec()), &spec.y0_default, &SolverConfig::default())
        .unwrap()
}

fn mean_rel_err(a: &ParamVector, truth: &ParamVector) -> f64 {
    let n = a.values.len() as f64;
    a.values.iter().zip(&truth.values).map(|(x, t)| 100.0 * (x - t).abs() / t.abs()).sum::<f64>() / n
}

/// Model, state, parameters, expected derivative.
type RhsCase<'a> = (ModelId, &'a [f64], &'a [f64], &'a [f64]);

#[test]
fn criterion_1_rhs_oracles() {
    #[rustfmt::skip]
    let cases: &[RhsCase] = &[
        (ModelId::Covid, &[999.0, 1.0, 0.0, 0.0], &[0.191, 0.05, 0.029], &[-0.190809, 0.111809, 0.029, 0.05]),
        (ModelId::Hiv, &[1000.0, 10.0, 100.0], &[10.0, 0.02, 0.3, 0.2, 2.5, 0.03, 250.0, 1500.0, 2.4e-5, 2e-5], &[-2.6, -1.0, 247.6]),
        (ModelId::Tuberculosis, &[900.0, 50.0, 30.0, 20.0], &[500.0, 10.0, 1.0, 0.1, 0.5, 2.0, 1.0, 10.0, 0.0], &[140.0, 140.2, -8.0, 127.8]),
        (ModelId::Dengue, &[500.0, 10.0, 5.0, 0.0, 1000.0, 20.0, 10.0], &[10.0, 30.0, 0.05, 0.05, 1.0, 0.06, 0.02, 0.01, 0.5, 0.25, 0.1], &[-25.0, 19.8, -0.6, 0.5, -30.0, 44.8, 4.3]),
        (ModelId::Ebola, &[900.0, 50.0, 30.0, 10.0, 5.0, 5.0], &[3.5, 0.01, 0.5, 0.1, 0.2, 0.5, 0.1, 0.5, 0.2, 0.5, 0.5, 0.1, 0.1], &[-96.84, 91.84, -0.25, 2.0, -0.5, 3.75]),
        (ModelId::Anthrax, &[80.0, 20.0, 2.0, 4.0], &[0.003, 0.0015, 1.0, 0.5, 0.1, 0.01, 0.1, 0.15, 0.05, 100.0, 0.002, 0.1], &[-110.28, 107.13, -0.192, -20.97]),
        (ModelId::Polio, &[0.03, 0.9, 0.004, 0.02, 0.006, 0.04], &[0.02, 0.5, 20.0, 40.0, 40.0, 100.0, 0.2, 0.1], &[-0.2971, -0.75375, 0.13942, 0.35235, 0.15688, 0.4022]),
        (ModelId::Measles, &[900.0, 50.0, 50.0], &[0.02, 0.5, 100.0, 40.0], &[-20.5, -1978.5, -3001.0]),
    ];
    let mut worst: f64 = 0.0;
    for (id, state, params, want) in cases {
        let got = eval_rhs(id.spec(), state, &ParamVector::new(*id, params.to_vec())).unwrap();
        for (g, w) in got.iter().zip(*want) {
            worst = worst.max((g - w).abs());
        }
    }
    let pass = worst < 1e-12;
    verdict(1, pass, &format!("{} models, max abs deviation {worst:e} (limit 1e-12)", cases.len()));
    assert!(pass);
}

#[test]
fn criterion_2_solver_accuracy() {
    let f = |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = -y[0];
    let out = integrate_on_grid(&f, &[1.0], &[0.0, 1.0], &SolverConfig::default()).unwrap();
    let decay_err = (out[1] - (-1.0f64).exp()).abs();

    let spec = ModelId::Covid.spec();
    let bench = [0.191, 0.05, 0.029];
    let traj = covid(bench);
    let n0: f64 = spec.y0_default.iter().sum();
    let drift = (0..traj.n_samples())
        .map(|k| (traj.row(k).iter().sum::<f64>() - n0).abs() / n0)
        .fold(0.0, f64::max);

    let p = ParamVector::new(ModelId::Covid, bench.to_vec());
    let tight = SolverConfig {
        rel_tol: 1e-13,
        abs_tol: 1e-13,
        ..SolverConfig::default()
    };
    let reference = integrate(spec, &p, &spec.y0_default, &tight).unwrap();
    let errors: Vec<f64> = (0..8)
        .map(|k| {
            let rel_tol = 1e-4 / f64::powi(2.0, k);
            let cfg = SolverConfig {
                rel_tol,
                abs_tol: rel_tol * 1e-2,
                ..SolverConfig::default()
            };
            let t = integrate(spec, &p, &spec.y0_default, &cfg).unwrap();
            t.states.iter().zip(&reference.states).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .collect();
    let monotone = errors.windows(2).all(|w| w[1] <= w[0]);
    let pass = decay_err < 1e-8 && drift < 1e-6 && monotone;
    verdict(
        2,
        pass,
        &format!("exp error {decay_err:e}, conservation drift {drift:e}, halving errors {errors:.3?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_3_gradient_check() {
    const EPS: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    let mut worst: f64 = 0.0;
    for seed in [11, 12, 13] {
        let cfg = RegressorConfig::new(4, 3, 4, seed);
        let w = init_weights(&cfg).unwrap();
        // Deterministic inputs in [0, 1): 3 sequences of length 10.
        let val = |i: usize| ((i as f64 * 12.9898 + seed as f64 * 78.233).sin() * 43758.5453).fract().abs();
        let inputs: Vec<Vec<f64>> = (0..3).map(|n| (0..40).map(|i| val(n * 100 + i)).collect()).collect();
        let targets: Vec<Vec<f64>> = (0..3).map(|n| (0..3).map(|i| val(1000 + n * 10 + i)).collect()).collect();
        let samples: Vec<Sample<'_>> =
            inputs.iter().zip(&targets).map(|(i, t)| Sample { input: i, target: t }).collect();
        let (_, grad) = loss_and_grad(&w, &samples).unwrap();
        let loss = |values: Vec<f64>| {
            loss_and_grad(&RegressorWeights::from_values(cfg.clone(), values).unwrap(), &samples).unwrap().0
        };
        for i in 0..w.len() {
            let mut plus = w.values().to_vec();
            plus[i] += EPS;
            let mut minus = w.values().to_vec();
            minus[i] -= EPS;
            let numeric = (loss(plus) - loss(minus)) / (2.0 * EPS);
            worst = worst.max((grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(FLOOR));
        }
    }
    let pass = worst < 1e-4;
    verdict(3, pass, &format!("hidden 4, length 10, 3 seeds: max relative deviation {worst:e} (limit 1e-4)"));
    assert!(pass);
}

#[test]
fn criterion_4_inverse_map_quality() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let start = Instant::now();
    let code = run(&[
        "pipeline", "--model", "covid", "--train", "2000", "--val", "200", "--test", "200", "--hidden", "64",
        "--epochs", "3000", "--seed", "7", "--out", out.to_str().unwrap(),
    ]);
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    assert_eq!(code, 0);
    let report = EvalReport::from_json(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let worst = report.params.iter().map(|p| p.mean).fold(0.0, f64::max);
    let pass = report.aggregate.mean < 5.0 && worst < 15.0;
    let per: Vec<String> = report.params.iter().map(|p| format!("{} {:.3}%", p.name, p.mean)).collect();
    verdict(
        4,
        pass,
        &format!(
            "aggregate {:.3}% (limit 5), per parameter [{}] (limit 15), {minutes:.1} min wall clock",
            report.aggregate.mean,
            per.join(", ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_inference_speed() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&DatasetConfig::new(ModelId::Covid, 20, 5, 5, 3)).unwrap();
    let cfg = RegressorConfig::for_model(&ds.config.spec(), 64, 3);
    let model = TrainedModel {
        weights: init_weights(&cfg).unwrap(),
        norm: ds.norm.clone(),
        t_grid: ds.t_grid().to_vec(),
    };
    let weights = dir.path().join("w.bin");
    save_weights(&model, &weights).unwrap();
    let traj = dir.path().join("t.json");
    fs::write(&traj, serde_json::to_string(&ds.test[0].trajectory).unwrap()).unwrap();
    let start = Instant::now();
    let code = run(&["infer", "--weights", weights.to_str().unwrap(), "--traj", traj.to_str().unwrap()]);
    let secs = start.elapsed().as_secs_f64();
    let pass = code == 0 && secs < 1.0;
    verdict(5, pass, &format!("hidden-64 inference incl. loading both files: {secs:.4} s (limit 1 s)"));
    assert!(pass);
}

#[test]
fn criterion_6_refinement_improvement() {
    let ds = generate_dataset(&DatasetConfig::new(ModelId::Covid, 200, 20, 50, 7)).unwrap();
    let spec = ds.config.spec();
    // Tasks whose +5% start stays inside every range.
    let chosen: Vec<_> = ds
        .test
        .iter()
        .filter(|ex| ex.params.values.iter().zip(&spec.params).all(|(v, d)| v * 1.05 < d.range_hi))
        .take(5)
        .collect();
    assert_eq!(chosen.len(), 5);
    let cfg = RefineConfig::default();
    let start = Instant::now();
    let perturbed: Vec<_> = chosen
        .iter()
        .map(|ex| {
            let init = ex.params.values.iter().map(|v| v * 1.05).collect();
            (ex.trajectory.clone(), ParamVector::new(ModelId::Covid, init))
        })
        .collect();
    let exact: Vec<_> = chosen.iter().map(|ex| (ex.trajectory.clone(), ex.params.clone())).collect();
    let from_perturbed = refine_many(&spec, &perturbed, &cfg, &ds.norm);
    let from_truth = refine_many(&spec, &exact, &cfg, &ds.norm);
    let minutes = start.elapsed().as_secs_f64() / 60.0;

    let mut init_errs = Vec::new();
    let mut refined_errs = Vec::new();
    let mut truth_errs = Vec::new();
    for (k, ex) in chosen.iter().enumerate() {
        init_errs.push(mean_rel_err(&perturbed[k].1, &ex.params));
        refined_errs.push(mean_rel_err(&from_perturbed[k].as_ref().unwrap().params, &ex.params));
        truth_errs.push(mean_rel_err(&from_truth[k].as_ref().unwrap().params, &ex.params));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (init, refined) = (mean(&init_errs), mean(&refined_errs));
    let truth_worst = truth_errs.iter().copied().fold(0.0, f64::max);
    let pass = refined <= init / 10.0 && truth_worst <= 0.1;
    verdict(
        6,
        pass,
        &format!(
            "5 tasks: initial {init:.3}% -> refined {refined:.5}% (per task {refined_errs:.5?}); \
             from truth worst {truth_worst:.5}% (limit 0.1); {minutes:.1} min"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_peak_phenomenology() {
    let peak = |a: f64, b: f64, g: f64| peak_stats(&covid([a, b, g]), 1).unwrap();
    let by_alpha: Vec<(f64, f64)> = [0.15, 0.25, 0.35, 0.45].iter().map(|&a| peak(a, 0.05, 0.03)).collect();
    let alpha_ok = by_alpha.windows(2).all(|w| w[1].0 <= w[0].0 && w[1].1 > w[0].1)
        && by_alpha[3].0 < by_alpha[0].0;
    let by_beta: Vec<f64> = [0.04, 0.05, 0.06].iter().map(|&b| peak(0.32, b, 0.03).1).collect();
    let by_gamma: Vec<f64> = [0.02, 0.03, 0.04].iter().map(|&g| peak(0.32, 0.05, g).1).collect();
    let beta_ok = by_beta.windows(2).all(|w| w[1] < w[0]);
    let gamma_ok = by_gamma.windows(2).all(|w| w[1] < w[0]);
    let pass = alpha_ok && beta_ok && gamma_ok;
    verdict(
        7,
        pass,
        &format!("alpha (t, I) peaks {by_alpha:.2?}; beta peaks {by_beta:.2?}; gamma peaks {by_gamma:.2?}"),
    );
    assert!(pass);
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    fs::read(a).unwrap() == fs::read(b).unwrap()
}

#[test]
fn criterion_8_determinism_and_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<_> = [("a", "1"), ("b", "3")]
        .iter()
        .map(|(name, jobs)| {
            let out = dir.path().join(name);
            let code = run(&[
                "pipeline", "--model", "covid", "--train", "64", "--val", "16", "--test", "16", "--hidden", "16",
                "--epochs", "30", "--seed", "7", "--jobs", jobs, "--out", out.to_str().unwrap(),
            ]);
            assert_eq!(code, 0);
            out
        })
        .collect();
    let identical = ["report.json", "dataset.bin", "dataset.bin.json", "weights.bin"]
        .iter()
        .all(|f| same_bytes(&runs[0].join(f), &runs[1].join(f)));

    let ds = load_dataset(&runs[0].join("dataset.bin")).unwrap();
    let resaved = dir.path().join("again.bin");
    save_dataset(&ds, &resaved).unwrap();
    let ds_round = same_bytes(&resaved, &runs[0].join("dataset.bin")) && load_dataset(&resaved).unwrap() == ds;
    let model = load_weights(&runs[0].join("weights.bin")).unwrap();
    let rewritten = dir.path().join("again.w");
    save_weights(&model, &rewritten).unwrap();
    let w_round = same_bytes(&rewritten, &runs[0].join("weights.bin")) && load_weights(&rewritten).unwrap() == model;

    let pass = identical && ds_round && w_round;
    verdict(
        8,
        pass,
        &format!("pipeline repeat (--jobs 1 vs 3) byte-identical: {identical}; dataset round trip: {ds_round}; weights round trip: {w_round}"),
    );
    assert!(pass);
}

#[test]
fn criterion_9_metric_fidelity() {
    let cases = [
        (param_error(0.012, 0.0, true).unwrap(), (0.012, MetricKind::Mae)),
        (param_error(0.2, 0.1, false).unwrap(), (100.0, MetricKind::RelL2Pct)),
        (param_error(0.3, 0.3, false).unwrap(), (0.0, MetricKind::RelL2Pct)),
    ];
    let exact = cases.iter().all(|(got, want)| got == want);
    let zero_rejected = param_error(0.1, 0.0, false).is_err();
    let pass = exact && zero_rejected;
    verdict(
        9,
        pass,
        &format!("TB d example {:?}; arithmetic cases exact: {exact}; zero truth without flag rejected: {zero_rejected}", cases[0].0),
    );
    assert!(pass);
}
