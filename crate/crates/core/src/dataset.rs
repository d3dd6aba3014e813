//! Labeled (trajectory, parameters) datasets from repeated forward solves.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{read_file, sidecar_path, Reader, Writer};
use crate::error::{check_dim, Error, Result};
use crate::ode::{integrate, SolverConfig, Trajectory};
use crate::registry::{sample_params, validate_params, ModelId, ModelSpec, ParamVector};

pub const DATASET_FORMAT_VERSION: u32 = 1;
const DATASET_MAGIC: &[u8; 8] = b"EPINVDS\0";

/// Attempts per example before generation gives up.
pub const MAX_ATTEMPTS: usize = 11;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub model_id: ModelId,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub master_seed: u64,
    pub solver: SolverConfig,
    /// Overrides the model's default horizon.
    pub t_horizon: Option<f64>,
    /// Overrides the model's default grid size.
    pub n_samples: Option<usize>,
}

impl DatasetConfig {
    pub fn new(model_id: ModelId, n_train: usize, n_val: usize, n_test: usize, master_seed: u64) -> Self {
        DatasetConfig {
            model_id,
            n_train,
            n_val,
            n_test,
            master_seed,
            solver: SolverConfig::default(),
            t_horizon: None,
            n_samples: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(Error::Config("split counts must all be at least 1".into()));
        }
        let spec = self.spec();
        if spec.n_samples < 2 {
            return Err(Error::Config("n_samples must be at least 2".into()));
        }
        self.solver.validate(spec.t_horizon)
    }

    /// The model spec with any grid overrides applied.
    pub fn spec(&self) -> ModelSpec {
        let base = self.model_id.spec();
        base.with_grid(
            self.t_horizon.unwrap_or(base.t_horizon),
            self.n_samples.unwrap_or(base.n_samples),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}` (expected train, val or test)"))),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sampling seed for one attempt at one example.
pub fn derive_seed(master_seed: u64, split: Split, index: usize, attempt: usize) -> u64 {
    let mut s = splitmix64(master_seed);
    s = splitmix64(s ^ split.tag());
    s = splitmix64(s ^ index as u64);
    splitmix64(s ^ attempt as u64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub trajectory: Trajectory,
    pub params: ParamVector,
}

/// Frozen input and target scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub model_id: ModelId,
    pub state_min: Vec<f64>,
    pub state_max: Vec<f64>,
    /// Channels that were constant over the training split.
    pub degenerate: Vec<bool>,
    pub param_lo: Vec<f64>,
    pub param_hi: Vec<f64>,
}

impl NormStats {
    /// Min–max per channel over `train`; constant channels get `max = min + 1`.
    pub fn from_examples(spec: &ModelSpec, train: &[Example]) -> Result<NormStats> {
        if train.is_empty() {
            return Err(Error::Config("cannot compute statistics of an empty split".into()));
        }
        let n = spec.n_states();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for ex in train {
            check_dim("trajectory channels", n, ex.trajectory.n_states)?;
            for row in ex.trajectory.states.chunks_exact(n) {
                for c in 0..n {
                    lo[c] = lo[c].min(row[c]);
                    hi[c] = hi[c].max(row[c]);
                }
            }
        }
        let mut degenerate = vec![false; n];
        for c in 0..n {
            if hi[c] <= lo[c] {
                hi[c] = lo[c] + 1.0;
                degenerate[c] = true;
            }
        }
        Ok(NormStats {
            model_id: spec.model_id,
            state_min: lo,
            state_max: hi,
            degenerate,
            param_lo: spec.params.iter().map(|p| p.range_lo).collect(),
            param_hi: spec.params.iter().map(|p| p.range_hi).collect(),
        })
    }

    pub fn n_states(&self) -> usize {
        self.state_min.len()
    }

    pub fn n_params(&self) -> usize {
        self.param_lo.len()
    }

    /// `max - min` of channel `c`.
    pub fn span(&self, c: usize) -> f64 {
        self.state_max[c] - self.state_min[c]
    }
}

/// Per-channel min–max scaling; returns an `n_samples x n_states` row-major matrix.
pub fn normalize_trajectory(traj: &Trajectory, norm: &NormStats) -> Result<Vec<f64>> {
    let n = norm.n_states();
    check_dim("trajectory channels", n, traj.n_states)?;
    let mut out = traj.states.clone();
    for row in out.chunks_exact_mut(n) {
        for c in 0..n {
            row[c] = (row[c] - norm.state_min[c]) / norm.span(c);
        }
    }
    Ok(out)
}

/// Inverse of [`normalize_trajectory`].
pub fn denormalize_states(normalized: &[f64], norm: &NormStats) -> Result<Vec<f64>> {
    let n = norm.n_states();
    if !normalized.len().is_multiple_of(n) {
        return Err(Error::Dimension {
            what: "normalized matrix length",
            expected: n * (normalized.len() / n + 1),
            got: normalized.len(),
        });
    }
    let mut out = normalized.to_vec();
    for row in out.chunks_exact_mut(n) {
        for c in 0..n {
            row[c] = norm.state_min[c] + row[c] * norm.span(c);
        }
    }
    Ok(out)
}

/// Maps each parameter onto `[0, 1]` across its range.
pub fn scale_params(params: &ParamVector, norm: &NormStats) -> Result<Vec<f64>> {
    check_dim("parameters", norm.n_params(), params.values.len())?;
    Ok(params
        .values
        .iter()
        .enumerate()
        .map(|(k, &p)| (p - norm.param_lo[k]) / (norm.param_hi[k] - norm.param_lo[k]))
        .collect())
}

/// Inverse of [`scale_params`].
pub fn unscale_params(scaled: &[f64], norm: &NormStats) -> Result<ParamVector> {
    check_dim("scaled parameters", norm.n_params(), scaled.len())?;
    let values = scaled
        .iter()
        .enumerate()
        .map(|(k, &s)| norm.param_lo[k] + s * (norm.param_hi[k] - norm.param_lo[k]))
        .collect();
    Ok(ParamVector::new(norm.model_id, values))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    pub norm: NormStats,
    pub format_version: u32,
    /// Total examples that needed more than one attempt.
    pub resampled: usize,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.train[0].trajectory.t_grid
    }
}

fn generate_example(
    spec: &ModelSpec,
    config: &DatasetConfig,
    split: Split,
    index: usize,
) -> Result<(Example, usize)> {
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        let seed = derive_seed(config.master_seed, split, index, attempt);
        let params = sample_params(spec, seed);
        match integrate(spec, &params, &spec.y0_default, &config.solver) {
            Ok(trajectory) => return Ok((Example { trajectory, params }, attempt)),
            Err(e) => last = Some(e),
        }
    }
    Err(Error::Generation {
        index,
        attempts: MAX_ATTEMPTS,
        last: Box::new(last.expect("at least one attempt")),
    })
}

fn generate_split(spec: &ModelSpec, config: &DatasetConfig, split: Split, n: usize) -> Result<(Vec<Example>, usize)> {
    let results: Vec<Result<(Example, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| generate_example(spec, config, split, i))
        .collect();
    let mut out = Vec::with_capacity(n);
    let mut resampled = 0;
    for r in results {
        let (ex, retries) = r?;
        if retries > 0 {
            resampled += 1;
        }
        out.push(ex);
    }
    Ok((out, resampled))
}

/// Deterministic in `config`; independent of the rayon pool size.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let spec = config.spec();
    let (train, r1) = generate_split(&spec, config, Split::Train, config.n_train)?;
    let (val, r2) = generate_split(&spec, config, Split::Val, config.n_val)?;
    let (test, r3) = generate_split(&spec, config, Split::Test, config.n_test)?;
    let norm = NormStats::from_examples(&spec, &train)?;
    Ok(Dataset {
        config: config.clone(),
        train,
        val,
        test,
        norm,
        format_version: DATASET_FORMAT_VERSION,
        resampled: r1 + r2 + r3,
    })
}

pub(crate) fn write_norm(w: &mut Writer, norm: &NormStats) {
    w.str(norm.model_id.as_str());
    w.f64s(&norm.state_min);
    w.f64s(&norm.state_max);
    w.u64(norm.degenerate.len() as u64);
    for &d in &norm.degenerate {
        w.u64(d as u64);
    }
    w.f64s(&norm.param_lo);
    w.f64s(&norm.param_hi);
}

pub(crate) fn read_norm(r: &mut Reader<'_>) -> Result<NormStats> {
    let model_id: ModelId = r.str()?.parse()?;
    let state_min = r.f64s()?;
    let state_max = r.f64s()?;
    let n = r.len()?;
    let mut degenerate = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        degenerate.push(r.u64()? != 0);
    }
    let param_lo = r.f64s()?;
    let param_hi = r.f64s()?;
    if state_max.len() != state_min.len() || degenerate.len() != state_min.len() {
        return Err(Error::Corrupt("inconsistent channel statistics".into()));
    }
    if param_hi.len() != param_lo.len() {
        return Err(Error::Corrupt("inconsistent parameter ranges".into()));
    }
    Ok(NormStats {
        model_id,
        state_min,
        state_max,
        degenerate,
        param_lo,
        param_hi,
    })
}

#[derive(Serialize)]
struct DatasetSidecar<'a> {
    format_version: u32,
    config: &'a DatasetConfig,
    norm: &'a NormStats,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    n_samples: usize,
    resampled: usize,
}

/// Writes the binary container and a `<path>.json` sidecar.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = Writer::new(DATASET_MAGIC, DATASET_FORMAT_VERSION);
    w.str(&serde_json::to_string(&ds.config)?);
    write_norm(&mut w, &ds.norm);
    w.u64(ds.resampled as u64);
    w.f64s(ds.t_grid());
    for split in Split::ALL {
        let examples = ds.split(split);
        w.u64(examples.len() as u64);
        for ex in examples {
            w.f64s(&ex.params.values);
            w.f64s(&ex.trajectory.states);
        }
    }
    w.write_to(path)?;

    let sidecar = DatasetSidecar {
        format_version: ds.format_version,
        config: &ds.config,
        norm: &ds.norm,
        n_train: ds.train.len(),
        n_val: ds.val.len(),
        n_test: ds.test.len(),
        n_samples: ds.t_grid().len(),
        resampled: ds.resampled,
    };
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_string_pretty(&sidecar)? + "\n")
        .map_err(|e| Error::io(side, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let buf = read_file(path)?;
    let mut r = Reader::open(&buf, DATASET_MAGIC, "dataset", DATASET_FORMAT_VERSION)?;
    let config: DatasetConfig = serde_json::from_str(&r.str()?)?;
    let norm = read_norm(&mut r)?;
    let resampled = r.len()?;
    let t_grid = r.f64s()?;
    let spec = config.spec();
    let n_states = spec.n_states();
    if norm.n_states() != n_states || norm.n_params() != spec.n_params() {
        return Err(Error::Corrupt("statistics do not match the model".into()));
    }
    let mut splits: Vec<Vec<Example>> = Vec::with_capacity(3);
    for _ in Split::ALL {
        let n = r.len()?;
        let mut examples = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let values = r.f64s()?;
            let states = r.f64s()?;
            if values.len() != spec.n_params() || states.len() != t_grid.len() * n_states {
                return Err(Error::Corrupt("example has the wrong shape".into()));
            }
            examples.push(Example {
                trajectory: Trajectory {
                    model_id: config.model_id,
                    t_grid: t_grid.clone(),
                    n_states,
                    states,
                },
                params: ParamVector::new(config.model_id, values),
            });
        }
        splits.push(examples);
    }
    r.finish()?;
    let test = splits.pop().unwrap();
    let val = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::Corrupt("empty split".into()));
    }
    Ok(Dataset {
        config,
        train,
        val,
        test,
        norm,
        format_version: DATASET_FORMAT_VERSION,
        resampled,
    })
}

/// Every label lies inside its range.
pub fn check_labels(ds: &Dataset) -> Result<()> {
    let spec = ds.config.spec();
    for split in Split::ALL {
        for ex in ds.split(split) {
            if let Err(v) = validate_params(&spec, &ex.params)? {
                let v = &v[0];
                return Err(Error::OutOfRange {
                    name: v.name.clone(),
                    value: v.value,
                    lo: v.lo,
                    hi: v.hi,
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64) -> DatasetConfig {
        let mut c = DatasetConfig::new(ModelId::Covid, 3, 2, 2, seed);
        c.n_samples = Some(20);
        c
    }

    #[test]
    fn counts_and_determinism() {
        let a = generate_dataset(&tiny(5)).unwrap();
        let b = generate_dataset(&tiny(5)).unwrap();
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (3, 2, 2));
        assert_eq!(a, b);
        let c = generate_dataset(&tiny(6)).unwrap();
        assert_ne!(a.train[0].params, c.train[0].params);
    }

    #[test]
    fn zero_counts_rejected() {
        let mut c = tiny(1);
        c.n_val = 0;
        assert!(matches!(generate_dataset(&c), Err(Error::Config(_))));
    }

    #[test]
    fn param_scaling() {
        let spec = ModelId::Covid.spec();
        let ds = generate_dataset(&tiny(2)).unwrap();
        let p = ParamVector::new(ModelId::Covid, vec![0.191, 0.05, 0.029]);
        let s = scale_params(&p, &ds.norm).unwrap();
        assert!((s[0] - 0.1775).abs() < 1e-12);
        let lo = ParamVector::new(ModelId::Covid, spec.params.iter().map(|d| d.range_lo).collect());
        let hi = ParamVector::new(ModelId::Covid, spec.params.iter().map(|d| d.range_hi).collect());
        assert_eq!(scale_params(&lo, &ds.norm).unwrap(), vec![0.0; 3]);
        assert_eq!(scale_params(&hi, &ds.norm).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn normalization_edges() {
        let norm = NormStats {
            model_id: ModelId::Covid,
            state_min: vec![0.0, 5.0, 0.0, 0.0],
            state_max: vec![1000.0, 6.0, 1.0, 1.0],
            degenerate: vec![false; 4],
            param_lo: vec![0.0; 3],
            param_hi: vec![1.0; 3],
        };
        let traj = Trajectory {
            model_id: ModelId::Covid,
            t_grid: vec![0.0],
            n_states: 4,
            states: vec![500.0, 5.0, 0.25, 1.0],
        };
        let x = normalize_trajectory(&traj, &norm).unwrap();
        assert_eq!(x, vec![0.5, 0.0, 0.25, 1.0]);
        assert_eq!(denormalize_states(&x, &norm).unwrap(), traj.states);
    }

    #[test]
    fn degenerate_channel_flagged() {
        let spec = ModelId::Covid.spec();
        let ex = |v: f64| Example {
            trajectory: Trajectory {
                model_id: ModelId::Covid,
                t_grid: vec![0.0, 1.0],
                n_states: 4,
                states: vec![v, 1.0, 0.0, 2.0, v + 1.0, 1.0, 3.0, 2.0],
            },
            params: spec.midpoint(),
        };
        let norm = NormStats::from_examples(spec, &[ex(0.0), ex(4.0)]).unwrap();
        assert_eq!(norm.degenerate, vec![false, true, false, true]);
        assert_eq!(norm.state_max[1], 2.0);
        assert_eq!((norm.state_min[0], norm.state_max[0]), (0.0, 5.0));
    }
}
