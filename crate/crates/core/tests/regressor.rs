use epinv_core::dataset::{generate_dataset, DatasetConfig};
use epinv_core::registry::registry;
use epinv_core::regressor::{
    forward, infer, init_weights, load_weights, lr_at, save_weights, train, RegressorConfig, TrainConfig,
    TrainedModel, WEIGHTS_FORMAT_VERSION,
};
use epinv_core::{Error, ModelId};
use proptest::prelude::*;

fn tiny_run(seed: u64) -> (epinv_core::dataset::Dataset, RegressorConfig, TrainConfig) {
    let mut dc = DatasetConfig::new(ModelId::Covid, 16, 4, 4, seed);
    dc.n_samples = Some(12);
    let ds = generate_dataset(&dc).unwrap();
    let rc = RegressorConfig::for_model(&ds.config.spec(), 6, seed);
    let tc = TrainConfig {
        epochs: 20,
        decay_every: 8,
        batch: Some(5),
        log_every: 5,
        seed,
        ..TrainConfig::default()
    };
    (ds, rc, tc)
}

#[test]
fn identical_seeds_give_identical_histories() {
    let (ds, rc, tc) = tiny_run(3);
    let (m1, h1) = train(&ds, &rc, &tc).unwrap();
    let (m2, h2) = train(&ds, &rc, &tc).unwrap();
    assert_eq!(h1.untimed(), h2.untimed());
    assert_eq!(m1.weights, m2.weights);
    let epochs: Vec<usize> = h1.entries.iter().map(|e| e.epoch).collect();
    assert_eq!(epochs, [0, 5, 10, 15, 20]);
}

#[test]
fn history_learning_rates_follow_the_schedule() {
    let (ds, rc, tc) = tiny_run(4);
    let (_, h) = train(&ds, &rc, &tc).unwrap();
    for w in h.entries.windows(2) {
        assert!(w[1].lr <= w[0].lr);
    }
    for e in &h.entries[1..] {
        assert_eq!(e.lr, lr_at(&tc, e.epoch - 1));
    }
}

#[test]
fn long_schedule_levels() {
    let tc = TrainConfig::default();
    let levels: Vec<f64> = [0, 20_000, 40_000].iter().map(|&e| lr_at(&tc, e)).collect();
    assert_eq!(levels[0], 1e-3);
    assert!((levels[1] - 1e-4).abs() < 1e-18);
    assert!((levels[2] - 1e-5).abs() < 1e-19);
}

#[test]
fn short_training_reduces_validation_loss() {
    let (ds, rc, mut tc) = tiny_run(5);
    tc.epochs = 60;
    tc.decay_every = 1000;
    let (_, h) = train(&ds, &rc, &tc).unwrap();
    assert!(h.entries.last().unwrap().val_loss < h.entries[0].val_loss);
}

#[test]
fn weights_round_trip_and_infer_without_dataset() {
    let (ds, rc, tc) = tiny_run(6);
    let (model, _) = train(&ds, &rc, &tc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    save_weights(&model, &path).unwrap();
    let back = load_weights(&path).unwrap();
    assert_eq!(back.weights, model.weights);
    assert_eq!(back.norm, model.norm);
    assert_eq!(back.t_grid, model.t_grid);
    assert!(back.weights.values().iter().zip(model.weights.values()).all(|(a, b)| a.to_bits() == b.to_bits()));

    let spec = ds.config.spec();
    let a = infer(&back, &ds.test[0].trajectory, &spec).unwrap();
    let b = infer(&back, &ds.test[0].trajectory, &spec).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.params.values.len(), 3);

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[8..12].copy_from_slice(&(WEIGHTS_FORMAT_VERSION + 1).to_le_bytes());
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_weights(&path), Err(Error::Version { .. })));
}

#[test]
fn mismatched_input_dim_is_rejected() {
    let (ds, _, _) = tiny_run(7);
    let weights = init_weights(&RegressorConfig::new(3, 3, 4, 0)).unwrap();
    let model = TrainedModel {
        weights,
        norm: ds.norm.clone(),
        t_grid: ds.t_grid().to_vec(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    save_weights(&model, &path).unwrap();
    match load_weights(&path) {
        Err(Error::Dimension { what, expected, got }) => {
            assert_eq!((what, expected, got), ("weights input_dim", 4, 3))
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn inference_rejects_other_grids() {
    let (ds, rc, tc) = tiny_run(8);
    let (model, _) = train(&ds, &rc, &TrainConfig { epochs: 1, ..tc }).unwrap();
    let spec = ModelId::Covid.spec();
    let other = epinv_core::integrate(spec, &spec.midpoint(), &spec.y0_default, &Default::default()).unwrap();
    assert!(matches!(infer(&model, &other, spec), Err(Error::GridMismatch(_))));
}

#[test]
fn every_model_gets_one_output_per_parameter() {
    for spec in registry() {
        let rc = RegressorConfig::for_model(spec, 3, 1);
        let w = init_weights(&rc).unwrap();
        let x = vec![0.5; 7 * spec.n_states()];
        assert_eq!(forward(&w, &x).unwrap().len(), spec.n_params());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn forward_is_pure(seed in any::<u64>(), xs in prop::collection::vec(-1.0..2.0f64, 4 * 9)) {
        let w = init_weights(&RegressorConfig::new(4, 3, 5, seed)).unwrap();
        let a = forward(&w, &xs).unwrap();
        let b = forward(&w, &xs).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn schedule_is_exact(e in 0usize..200_000, every in 1usize..50_000) {
        let tc = TrainConfig { decay_every: every, ..TrainConfig::default() };
        prop_assert_eq!(lr_at(&tc, e), 1e-3 * 0.1f64.powi((e / every) as i32));
    }
}
