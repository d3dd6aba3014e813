use epinv_core::eval::{evaluate, param_error, peak_stats, EvalReport, MetricKind, TimingStats};
use epinv_core::{integrate, Error, ModelId, ParamVector, SolverConfig, Trajectory};
use proptest::prelude::*;

fn covid(alpha: f64, beta: f64, gamma: f64) -> Trajectory {
    let spec = ModelId::Covid.spec();
    let p = ParamVector::new(ModelId::Covid, vec![alpha, beta, gamma]);
    integrate(spec, &p, &spec.y0_default, &SolverConfig::default()).unwrap()
}

fn pv(v: &[f64]) -> ParamVector {
    ParamVector::new(ModelId::Covid, v.to_vec())
}

#[test]
fn metric_examples() {
    assert_eq!(param_error(0.2, 0.1, false).unwrap(), (100.0, MetricKind::RelL2Pct));
    assert_eq!(param_error(0.012, 0.0, true).unwrap(), (0.012, MetricKind::Mae));
    assert!(matches!(param_error(0.1, 0.0, false), Err(Error::ZeroTruth)));
}

#[test]
fn two_task_aggregate() {
    let spec = ModelId::Covid.spec();
    let truth = [0.2, 0.05, 0.03];
    let a = [0.202, 0.0505, 0.0303];
    let b = [0.206, 0.0515, 0.0309];
    let r = evaluate(&[(pv(&a), pv(&truth)), (pv(&b), pv(&truth))], spec).unwrap();
    assert_eq!(r.n_tasks, 2);
    assert_eq!(r.aggregate.n_pairs, 6);
    assert!((r.aggregate.mean - 2.0).abs() < 1e-9);
    assert!((r.aggregate.std_dev - 1.0).abs() < 1e-9);
    for p in &r.params {
        assert_eq!(p.metric, MetricKind::RelL2Pct);
        assert!((p.mean - 2.0).abs() < 1e-9 && (p.std_dev - 1.0).abs() < 1e-9);
    }
}

#[test]
fn report_json_round_trip_and_table() {
    let spec = ModelId::Covid.spec();
    let mut r = evaluate(&[(pv(&[0.21, 0.05, 0.03]), pv(&[0.2, 0.05, 0.03]))], spec).unwrap();
    r.timing = TimingStats::from_seconds(&[0.1, 0.3]);
    let json = r.to_json().unwrap();
    let back = EvalReport::from_json(&json).unwrap();
    assert_eq!(back.timing, None);
    assert_eq!(back.to_json().unwrap(), json);
    let table = r.render_table();
    assert!(table.contains("aggregate"));
    assert!(table.contains("alpha"));
    assert!(table.contains("inference: 2 runs"));
}

#[test]
fn wrong_model_or_length_is_rejected() {
    let spec = ModelId::Covid.spec();
    let short = pv(&[0.2, 0.05]);
    assert!(evaluate(&[(short, pv(&[0.2, 0.05, 0.03]))], spec).is_err());
    assert!(evaluate(&[], spec).is_err());
}

#[test]
fn stronger_infection_peaks_earlier_and_higher() {
    let fast = peak_stats(&covid(0.45, 0.05, 0.03), 1).unwrap();
    let slow = peak_stats(&covid(0.15, 0.05, 0.03), 1).unwrap();
    assert!(fast.0 < slow.0 && fast.1 > slow.1);
}

#[test]
fn peak_monotone_in_each_rate() {
    let alphas = [0.15, 0.25, 0.35, 0.45];
    let peaks: Vec<(f64, f64)> = alphas.iter().map(|&a| peak_stats(&covid(a, 0.05, 0.03), 1).unwrap()).collect();
    for w in peaks.windows(2) {
        assert!(w[1].0 <= w[0].0 && w[1].1 > w[0].1, "{peaks:?}");
    }
    let by_beta: Vec<f64> =
        [0.04, 0.05, 0.06].iter().map(|&b| peak_stats(&covid(0.32, b, 0.03), 1).unwrap().1).collect();
    assert!(by_beta.windows(2).all(|w| w[1] < w[0]), "{by_beta:?}");
    let by_gamma: Vec<f64> =
        [0.02, 0.03, 0.04].iter().map(|&g| peak_stats(&covid(0.32, 0.05, g), 1).unwrap().1).collect();
    assert!(by_gamma.windows(2).all(|w| w[1] < w[0]), "{by_gamma:?}");
}

#[test]
fn decreasing_channel_peaks_at_start() {
    let traj = covid(0.3, 0.05, 0.03);
    let (t, y) = peak_stats(&traj, 0).unwrap();
    assert_eq!(t, 0.0);
    assert_eq!(y, traj.row(0)[0]);
    assert!(peak_stats(&traj, 4).is_err());
}

#[test]
fn ties_go_to_earliest_time() {
    let traj = Trajectory {
        model_id: ModelId::Covid,
        t_grid: vec![0.0, 1.0, 2.0],
        n_states: 1,
        states: vec![1.0, 3.0, 3.0],
    };
    assert_eq!(peak_stats(&traj, 0).unwrap(), (1.0, 3.0));
}

proptest! {
    #[test]
    fn metric_is_symmetric_in_the_error(t in 0.01..1.0f64, d in 0.0..0.5f64) {
        let up = param_error(t + d, t, false).unwrap().0;
        let down = param_error(t - d, t, false).unwrap().0;
        prop_assert!((up - down).abs() <= 1e-9 * up.max(1.0));
    }

    #[test]
    fn aggregate_is_mean_of_pooled_errors(preds in prop::collection::vec((0.15..0.5f64, 0.03..0.07f64, 0.02..0.04f64), 1..12)) {
        let spec = ModelId::Covid.spec();
        let truth = pv(&[0.3, 0.05, 0.03]);
        let pairs: Vec<_> = preds.iter().map(|&(a, b, g)| (pv(&[a, b, g]), truth.clone())).collect();
        let r = evaluate(&pairs, spec).unwrap();
        let per_param_mean = r.params.iter().map(|p| p.mean).sum::<f64>() / 3.0;
        prop_assert!((r.aggregate.mean - per_param_mean).abs() <= 1e-9 * r.aggregate.mean.max(1.0));
        prop_assert!(r.aggregate.std_dev >= 0.0);
        prop_assert_eq!(r.aggregate.n_pairs, 3 * preds.len());
    }
}
