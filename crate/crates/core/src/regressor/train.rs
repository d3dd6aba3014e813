use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    init_weights, loss_and_grad_with, Adam, Precision, RegressorConfig, RegressorWeights, Sample,
    TrainedModel,
};
use crate::dataset::{normalize_trajectory, scale_params, Dataset, Example, NormStats};
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub epochs: usize,
    pub decay_factor: f64,
    pub decay_every: usize,
    /// Mini-batch size; the whole training split when `None`.
    pub batch: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Validation loss is computed every `log_every` epochs.
    pub log_every: usize,
    pub precision: Precision,
}

impl Default for TrainConfig {
    /// Long schedule: 60k epochs, lr 1e-3 decayed by 0.1 every 20k.
    fn default() -> Self {
        TrainConfig {
            lr_init: 1e-3,
            epochs: 60_000,
            decay_factor: 0.1,
            decay_every: 20_000,
            batch: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            log_every: 100,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    /// The 60k-epoch schedule shrunk to `epochs`, keeping three lr levels.
    pub fn scaled(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            decay_every: (epochs / 3).max(1),
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return Err(Error::Config("lr_init must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config("decay_factor must lie in (0, 1]".into()));
        }
        if self.decay_every == 0 || self.log_every == 0 {
            return Err(Error::Config("decay_every and log_every must be positive".into()));
        }
        if self.batch == Some(0) {
            return Err(Error::Config("batch must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }
}

/// `lr_init * decay_factor^floor(epoch / decay_every)`.
pub fn lr_at(tc: &TrainConfig, epoch: usize) -> f64 {
    let k = (epoch / tc.decay_every) as i32;
    tc.lr_init * tc.decay_factor.powi(k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    /// Completed epochs.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Rate used in the last completed epoch.
    pub lr: f64,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub entries: Vec<LogEntry>,
}

impl TrainHistory {
    /// Entries with timing dropped, for reproducibility comparisons.
    pub fn untimed(&self) -> Vec<(usize, f64, f64, f64)> {
        self.entries
            .iter()
            .map(|e| (e.epoch, e.train_loss, e.val_loss, e.lr))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,lr,wall_clock_s\n");
        for e in &self.entries {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{:.3}\n",
                e.epoch, e.train_loss, e.val_loss, e.lr, e.wall_clock_s
            ));
        }
        s
    }
}

struct Prepared {
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

impl Prepared {
    fn new(examples: &[Example], norm: &NormStats) -> Result<Prepared> {
        let mut inputs = Vec::with_capacity(examples.len());
        let mut targets = Vec::with_capacity(examples.len());
        for ex in examples {
            inputs.push(normalize_trajectory(&ex.trajectory, norm)?);
            targets.push(scale_params(&ex.params, norm)?);
        }
        Ok(Prepared { inputs, targets })
    }

    fn samples(&self, order: &[usize]) -> Vec<Sample<'_>> {
        order
            .iter()
            .map(|&i| Sample {
                input: &self.inputs[i],
                target: &self.targets[i],
            })
            .collect()
    }

    fn mse(&self, weights: &RegressorWeights) -> Result<f64> {
        let refs: Vec<&[f64]> = self.inputs.iter().map(|x| x.as_slice()).collect();
        let preds = super::forward_batch(weights, &refs)?;
        let mut sse = 0.0;
        let mut n = 0usize;
        for (p, t) in preds.iter().zip(&self.targets) {
            for (a, b) in p.iter().zip(t) {
                sse += (a - b) * (a - b);
                n += 1;
            }
        }
        Ok(sse / n as f64)
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// [`train_with_progress`] without a callback.
pub fn train(ds: &Dataset, rc: &RegressorConfig, tc: &TrainConfig) -> Result<(TrainedModel, TrainHistory)> {
    train_with_progress(ds, rc, tc, |_| {})
}

/// Adam over shuffled mini-batches for `tc.epochs` full passes. Returns the
/// final weights; divergence aborts with [`Error::Diverged`] carrying the
/// history so far.
pub fn train_with_progress(
    ds: &Dataset,
    rc: &RegressorConfig,
    tc: &TrainConfig,
    mut on_log: impl FnMut(&LogEntry),
) -> Result<(TrainedModel, TrainHistory)> {
    tc.validate()?;
    let spec = ds.config.spec();
    check_dim("regressor input_dim", spec.n_states(), rc.input_dim)?;
    check_dim("regressor output_dim", spec.n_params(), rc.output_dim)?;

    let start = Instant::now();
    let train_set = Prepared::new(&ds.train, &ds.norm)?;
    let val_set = Prepared::new(&ds.val, &ds.norm)?;
    let n = train_set.inputs.len();
    let batch = tc.batch.unwrap_or(n).min(n);

    let mut weights = init_weights(rc)?;
    let mut opt = Adam::new(weights.len(), tc.beta1, tc.beta2, tc.eps);
    let mut history = TrainHistory::default();

    let diverged = |epoch: usize, history: &TrainHistory| Error::Diverged {
        epoch,
        history: Box::new(history.clone()),
    };

    let initial = LogEntry {
        epoch: 0,
        train_loss: train_set.mse(&weights)?,
        val_loss: val_set.mse(&weights)?,
        lr: lr_at(tc, 0),
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    on_log(&initial);
    history.entries.push(initial);

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..tc.epochs {
        let lr = lr_at(tc, epoch);
        order.shuffle(&mut epoch_rng(tc.seed, epoch));
        let mut loss_sum = 0.0;
        for idx in order.chunks(batch) {
            let samples = train_set.samples(idx);
            let (loss, grad) = match loss_and_grad_with(&weights, &samples, tc.precision) {
                Ok(r) => r,
                Err(Error::NonFiniteLoss(_)) => return Err(diverged(epoch, &history)),
                Err(e) => return Err(e),
            };
            loss_sum += loss * idx.len() as f64;
            opt.step(weights.values_mut(), &grad, lr);
        }
        let train_loss = loss_sum / n as f64;
        if !train_loss.is_finite() || !weights.all_finite() {
            return Err(diverged(epoch, &history));
        }
        let done = epoch + 1;
        if done % tc.log_every == 0 || done == tc.epochs {
            let val_loss = val_set.mse(&weights)?;
            if !val_loss.is_finite() {
                return Err(diverged(epoch, &history));
            }
            let entry = LogEntry {
                epoch: done,
                train_loss,
                val_loss,
                lr,
                wall_clock_s: start.elapsed().as_secs_f64(),
            };
            on_log(&entry);
            history.entries.push(entry);
        }
    }

    Ok((
        TrainedModel {
            weights,
            norm: ds.norm.clone(),
            t_grid: ds.t_grid().to_vec(),
        },
        history,
    ))
}
