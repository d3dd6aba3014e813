use std::collections::HashSet;

use epinv_core::dataset::{
    check_labels, denormalize_states, derive_seed, generate_dataset, load_dataset, normalize_trajectory,
    save_dataset, scale_params, unscale_params, Dataset, DatasetConfig, Split, DATASET_FORMAT_VERSION,
};
use epinv_core::registry::registry;
use epinv_core::{integrate, Error, ModelId, ParamVector};
use proptest::prelude::*;

fn small(model: ModelId, seed: u64) -> DatasetConfig {
    let mut c = DatasetConfig::new(model, 12, 4, 4, seed);
    c.n_samples = Some(30);
    c
}

fn bits(ds: &Dataset) -> Vec<u64> {
    Split::ALL
        .iter()
        .flat_map(|&s| ds.split(s).iter())
        .flat_map(|ex| ex.trajectory.states.iter().chain(&ex.params.values))
        .map(|v| v.to_bits())
        .collect()
}

#[test]
fn covid_counts_and_labels() {
    let ds = generate_dataset(&small(ModelId::Covid, 1)).unwrap();
    assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (12, 4, 4));
    check_labels(&ds).unwrap();
    for s in Split::ALL {
        for ex in ds.split(s) {
            assert!((0.12..=0.52).contains(&ex.params.values[0]));
            assert_eq!(ex.trajectory.t_grid, ds.t_grid());
        }
    }
    assert_eq!(ds.format_version, DATASET_FORMAT_VERSION);
}

#[test]
fn tiny_datasets_repeat_bit_for_bit() {
    let mut c = DatasetConfig::new(ModelId::Covid, 2, 1, 1, 99);
    c.n_samples = Some(10);
    let a = generate_dataset(&c).unwrap();
    let b = generate_dataset(&c).unwrap();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a, b);
}

#[test]
fn worker_count_does_not_change_output() {
    let c = small(ModelId::Covid, 5);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| generate_dataset(&c).unwrap())
    };
    assert_eq!(bits(&run(1)), bits(&run(3)));
}

#[test]
fn every_model_generates() {
    for spec in registry() {
        let mut c = DatasetConfig::new(spec.model_id, 3, 1, 1, 11);
        c.n_samples = Some(20);
        let ds = generate_dataset(&c).unwrap_or_else(|e| panic!("{}: {e}", spec.model_id.as_str()));
        check_labels(&ds).unwrap();
    }
}

#[test]
fn seed_streams_are_disjoint() {
    let mut seen = HashSet::new();
    for split in Split::ALL {
        for index in 0..2000 {
            for attempt in 0..3 {
                assert!(seen.insert(derive_seed(7, split, index, attempt)));
            }
        }
    }
}

#[test]
fn stored_labels_reproduce_their_trajectories() {
    let ds = generate_dataset(&small(ModelId::Covid, 3)).unwrap();
    let spec = ds.config.spec();
    for s in Split::ALL {
        for ex in ds.split(s) {
            let again = integrate(&spec, &ex.params, &spec.y0_default, &ds.config.solver).unwrap();
            assert_eq!(again.states.len(), ex.trajectory.states.len());
            assert!(again.states.iter().zip(&ex.trajectory.states).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}

#[test]
fn train_split_normalizes_to_unit_range() {
    let ds = generate_dataset(&small(ModelId::Covid, 4)).unwrap();
    let n = ds.norm.n_states();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for ex in &ds.train {
        let x = normalize_trajectory(&ex.trajectory, &ds.norm).unwrap();
        for row in x.chunks_exact(n) {
            for c in 0..n {
                lo[c] = lo[c].min(row[c]);
                hi[c] = hi[c].max(row[c]);
            }
        }
    }
    for c in 0..n {
        assert!(lo[c].abs() < 1e-12 && (hi[c] - 1.0).abs() < 1e-12, "channel {c}: [{}, {}]", lo[c], hi[c]);
    }
}

#[test]
fn save_load_round_trip() {
    let ds = generate_dataset(&small(ModelId::Dengue, 8)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    save_dataset(&ds, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back, ds);
    assert_eq!(bits(&back), bits(&ds));
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("d.bin.json")).unwrap()).unwrap();
    assert_eq!(side["n_train"], 12);
    assert_eq!(side["config"]["model_id"], "dengue");
}

#[test]
fn container_guards() {
    let ds = generate_dataset(&small(ModelId::Covid, 9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    save_dataset(&ds, &path).unwrap();
    let good = std::fs::read(&path).unwrap();

    let mut magic = good.clone();
    magic[0] ^= 0xff;
    std::fs::write(&path, &magic).unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::BadMagic { .. })));

    let mut version = good.clone();
    version[8..12].copy_from_slice(&(DATASET_FORMAT_VERSION + 1).to_le_bytes());
    std::fs::write(&path, &version).unwrap();
    match load_dataset(&path) {
        Err(Error::Version { found, supported }) => {
            assert_eq!((found, supported), (DATASET_FORMAT_VERSION + 1, DATASET_FORMAT_VERSION))
        }
        other => panic!("{other:?}"),
    }

    let cut = good.len() - 100;
    std::fs::write(&path, &good[..cut]).unwrap();
    match load_dataset(&path) {
        Err(Error::Truncated { offset, .. }) => assert_eq!(offset, cut),
        other => panic!("{other:?}"),
    }

    let missing = dir.path().join("nope.bin");
    match load_dataset(&missing) {
        Err(e @ Error::Io { .. }) => assert!(e.to_string().contains("nope.bin")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn scaling_examples() {
    let spec = ModelId::Covid.spec();
    let ds = generate_dataset(&small(ModelId::Covid, 2)).unwrap();
    let p = ParamVector::new(ModelId::Covid, vec![0.191, 0.04, 0.04]);
    let s = scale_params(&p, &ds.norm).unwrap();
    assert!((s[0] - 0.1775).abs() < 1e-15);
    assert_eq!(s[1], 0.0);
    assert_eq!(s[2], 1.0);
    let lo = ParamVector::new(ModelId::Covid, spec.params.iter().map(|d| d.range_lo).collect());
    assert!(scale_params(&lo, &ds.norm).unwrap().iter().all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn param_scaling_inverts(a in 0.12..0.52f64, b in 0.04..0.06f64, g in 0.02..0.04f64) {
        let ds = generate_dataset(&DatasetConfig { n_samples: Some(5), ..DatasetConfig::new(ModelId::Covid, 1, 1, 1, 0) }).unwrap();
        let p = ParamVector::new(ModelId::Covid, vec![a, b, g]);
        let back = unscale_params(&scale_params(&p, &ds.norm).unwrap(), &ds.norm).unwrap();
        for (x, y) in back.values.iter().zip(&p.values) {
            prop_assert!((x - y).abs() <= 1e-14 * y.abs());
        }
    }

    #[test]
    fn normalization_inverts(seed in 0u64..1000) {
        let ds = generate_dataset(&DatasetConfig { n_samples: Some(8), ..DatasetConfig::new(ModelId::Measles, 2, 1, 1, seed) }).unwrap();
        let traj = &ds.test[0].trajectory;
        let back = denormalize_states(&normalize_trajectory(traj, &ds.norm).unwrap(), &ds.norm).unwrap();
        for (x, y) in back.iter().zip(&traj.states) {
            prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1e-300) || x == y);
        }
    }
}
