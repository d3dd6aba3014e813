//! Two-layer LSTM regressor from normalized trajectories to range-scaled
//! parameters.

mod adam;
mod io;
pub(crate) mod network;
pub(crate) mod scalar;
mod train;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{normalize_trajectory, unscale_params, NormStats};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::ode::Trajectory;
use crate::registry::{ModelSpec, ParamVector};
use network::Layout;
use scalar::Scalar;

pub use adam::Adam;
pub use io::{load_weights, save_weights, WEIGHTS_FORMAT_VERSION};
pub use train::{lr_at, train, train_with_progress, LogEntry, TrainConfig, TrainHistory};

/// Examples per independently reduced gradient chunk. Fixed so that sums
/// do not depend on the worker count.
pub const GRAD_CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressorConfig {
    pub n_layers: usize,
    pub hidden: usize,
    pub dense_sizes: Vec<usize>,
    pub input_dim: usize,
    pub output_dim: usize,
    pub seed: u64,
}

impl RegressorConfig {
    /// Two LSTM layers of `hidden` units and a `[64, 64]` head.
    pub fn new(input_dim: usize, output_dim: usize, hidden: usize, seed: u64) -> Self {
        RegressorConfig {
            n_layers: 2,
            hidden,
            dense_sizes: vec![64, 64],
            input_dim,
            output_dim,
            seed,
        }
    }

    pub fn for_model(spec: &ModelSpec, hidden: usize, seed: u64) -> Self {
        Self::new(spec.n_states(), spec.n_params(), hidden, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let sizes_ok = self.n_layers >= 1
            && self.hidden >= 1
            && self.input_dim >= 1
            && self.output_dim >= 1
            && self.dense_sizes.iter().all(|&d| d >= 1);
        if sizes_ok {
            Ok(())
        } else {
            Err(Error::Config("regressor sizes must all be at least 1".into()))
        }
    }

    pub fn n_weights(&self) -> usize {
        Layout::new(self).total
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Input,
    Forget,
    Cell,
    Output,
}

impl Gate {
    fn block(self) -> usize {
        match self {
            Gate::Input => 0,
            Gate::Forget => 1,
            Gate::Cell => 2,
            Gate::Output => 3,
        }
    }
}

/// Borrowed row-major matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatrixView<'a> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

/// All trainable arrays, stored contiguously: per LSTM layer the input,
/// recurrent and bias arrays (gate blocks in input, forget, cell, output
/// order), then each dense layer's weight and bias, then the output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressorWeights {
    config: RegressorConfig,
    layout: Layout,
    values: Vec<f64>,
}

impl RegressorWeights {
    pub fn from_values(config: RegressorConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        check_dim("regressor weights", layout.total, values.len())?;
        Ok(RegressorWeights {
            config,
            layout,
            values,
        })
    }

    pub fn config(&self) -> &RegressorConfig {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.layout.lstm.len() {
            return Err(Error::Config(format!(
                "layer {layer} out of range ({} layers)",
                self.layout.lstm.len()
            )));
        }
        Ok(())
    }

    /// Input-to-hidden weights of one gate, `hidden x n_in`.
    pub fn gate_input_weights(&self, layer: usize, gate: Gate) -> Result<MatrixView<'_>> {
        self.check_layer(layer)?;
        let s = self.layout.lstm[layer];
        let h = self.layout.hidden;
        let lo = s.w_ih + gate.block() * h * s.n_in;
        Ok(MatrixView {
            rows: h,
            cols: s.n_in,
            data: &self.values[lo..lo + h * s.n_in],
        })
    }

    /// Hidden-to-hidden weights of one gate, `hidden x hidden`.
    pub fn gate_recurrent_weights(&self, layer: usize, gate: Gate) -> Result<MatrixView<'_>> {
        self.check_layer(layer)?;
        let s = self.layout.lstm[layer];
        let h = self.layout.hidden;
        let lo = s.w_hh + gate.block() * h * h;
        Ok(MatrixView {
            rows: h,
            cols: h,
            data: &self.values[lo..lo + h * h],
        })
    }

    pub fn gate_bias(&self, layer: usize, gate: Gate) -> Result<&[f64]> {
        self.check_layer(layer)?;
        let s = self.layout.lstm[layer];
        let h = self.layout.hidden;
        let lo = s.bias + gate.block() * h;
        Ok(&self.values[lo..lo + h])
    }

    /// Dense layer `k` (the last one is the linear output layer) as
    /// `(weight n_out x n_in, bias)`.
    pub fn dense_layer(&self, k: usize) -> Result<(MatrixView<'_>, &[f64])> {
        let d = *self
            .layout
            .dense
            .get(k)
            .ok_or_else(|| Error::Config(format!("dense layer {k} out of range")))?;
        Ok((
            MatrixView {
                rows: d.n_out,
                cols: d.n_in,
                data: &self.values[d.w..d.w + d.n_out * d.n_in],
            },
            &self.values[d.b..d.b + d.n_out],
        ))
    }
}

/// Uniform on `±1/sqrt(fan_in)` per array, forget-gate biases set to 1.
pub fn init_weights(config: &RegressorConfig) -> Result<RegressorWeights> {
    config.validate()?;
    let layout = Layout::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut values = vec![0.0; layout.total];
    let mut fill = |range: std::ops::Range<usize>, fan_in: usize, rng: &mut ChaCha8Rng| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in &mut values[range] {
            *v = rng.gen_range(-bound..bound);
        }
    };
    let h = layout.hidden;
    for s in &layout.lstm {
        fill(s.w_ih..s.w_ih + 4 * h * s.n_in, s.n_in, &mut rng);
        fill(s.w_hh..s.w_hh + 4 * h * h, h, &mut rng);
        fill(s.bias..s.bias + 4 * h, h, &mut rng);
    }
    for d in &layout.dense {
        fill(d.w..d.w + d.n_out * d.n_in, d.n_in, &mut rng);
        fill(d.b..d.b + d.n_out, d.n_in, &mut rng);
    }
    for s in &layout.lstm {
        let forget = s.bias + h;
        values[forget..forget + h].fill(1.0);
    }
    Ok(RegressorWeights {
        config: config.clone(),
        layout,
        values,
    })
}

fn check_input(weights: &RegressorWeights, x: &[f64]) -> Result<usize> {
    let d = weights.config.input_dim;
    if x.is_empty() || !x.len().is_multiple_of(d) {
        return Err(Error::Dimension {
            what: "input matrix length (multiple of input_dim)",
            expected: d * (x.len() / d).max(1),
            got: x.len(),
        });
    }
    check_finite("regressor input", x)?;
    Ok(x.len() / d)
}

/// Scaled parameter estimate for one `steps x input_dim` row-major input.
pub fn forward(weights: &RegressorWeights, x: &[f64]) -> Result<Vec<f64>> {
    let steps = check_input(weights, x)?;
    let fwd = network::forward(&weights.layout, &weights.values, &[x], steps);
    Ok(fwd.output().to_vec())
}

/// [`forward`] over many inputs of equal length; order preserved.
pub fn forward_batch(weights: &RegressorWeights, xs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let steps = check_input(weights, xs[0])?;
    for x in xs {
        if check_input(weights, x)? != steps {
            return Err(Error::Dimension {
                what: "sequence length",
                expected: steps,
                got: x.len() / weights.config.input_dim,
            });
        }
    }
    let p = weights.config.output_dim;
    let chunks: Vec<Vec<Vec<f64>>> = xs
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let fwd = network::forward(&weights.layout, &weights.values, chunk, steps);
            fwd.output().chunks_exact(p).map(|r| r.to_vec()).collect()
        })
        .collect();
    Ok(chunks.into_iter().flatten().collect())
}

/// Arithmetic used for gradient passes. Inference always runs in `f64`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// Single precision with `f64` accumulation across chunks; about twice
    /// as fast.
    #[default]
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision `{other}` (expected f32 or f64)"))),
        }
    }
}

/// One training pair: normalized input matrix and scaled target.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub input: &'a [f64],
    pub target: &'a [f64],
}

/// Mean squared error over batch and outputs, and its gradient, in `f64`.
pub fn loss_and_grad(weights: &RegressorWeights, batch: &[Sample<'_>]) -> Result<(f64, Vec<f64>)> {
    loss_and_grad_with(weights, batch, Precision::F64)
}

/// [`loss_and_grad`] with a choice of arithmetic.
pub fn loss_and_grad_with(
    weights: &RegressorWeights,
    batch: &[Sample<'_>],
    precision: Precision,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let p = weights.config.output_dim;
    let steps = check_input(weights, batch[0].input)?;
    for s in batch {
        check_dim("target", p, s.target.len())?;
        let n = check_input(weights, s.input)?;
        check_dim("sequence length", steps, n)?;
    }
    match precision {
        Precision::F32 => loss_and_grad_in::<f32>(weights, batch, steps),
        Precision::F64 => loss_and_grad_in::<f64>(weights, batch, steps),
    }
}

fn loss_and_grad_in<T: Scalar>(
    weights: &RegressorWeights,
    batch: &[Sample<'_>],
    steps: usize,
) -> Result<(f64, Vec<f64>)> {
    let p = weights.config.output_dim;
    let denom = (batch.len() * p) as f64;
    let params: Vec<T> = weights.values.iter().map(|&v| T::of(v)).collect();

    let parts: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_chunks(GRAD_CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let inputs: Vec<&[f64]> = chunk.iter().map(|s| s.input).collect();
            let fwd = network::forward(&weights.layout, &params, &inputs, steps);
            let out = fwd.output();
            let mut d_out = vec![T::ZERO; out.len()];
            let mut sse = 0.0;
            for (b, s) in chunk.iter().enumerate() {
                let mut e = 0.0;
                for k in 0..p {
                    let r = out[b * p + k].to_f64() - s.target[k];
                    e += r * r;
                    d_out[b * p + k] = T::of(2.0 * r / denom);
                }
                if !e.is_finite() {
                    return Err(Error::NonFiniteLoss(ci * GRAD_CHUNK + b));
                }
                sse += e;
            }
            let mut grad = vec![T::ZERO; params.len()];
            network::backward(&weights.layout, &params, &fwd, &d_out, &mut grad);
            Ok((sse, grad.into_iter().map(T::to_f64).collect()))
        })
        .collect();

    let mut sse = 0.0;
    let mut grad = vec![0.0; weights.values.len()];
    for part in parts {
        let (s, g) = part?;
        sse += s;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((sse / denom, grad))
}

/// Regressor plus everything needed to map a raw trajectory to parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub weights: RegressorWeights,
    pub norm: NormStats,
    /// Grid the model was trained on.
    pub t_grid: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub params: ParamVector,
    pub seconds: f64,
}

/// Normalize, run the network, unscale.
pub fn infer(model: &TrainedModel, traj: &Trajectory, spec: &ModelSpec) -> Result<Inference> {
    let start = Instant::now();
    if traj.model_id != model.norm.model_id || spec.model_id != model.norm.model_id {
        return Err(Error::Config(format!(
            "model trained for {} cannot read a {} trajectory",
            model.norm.model_id, traj.model_id
        )));
    }
    if traj.t_grid.len() != model.t_grid.len()
        || traj
            .t_grid
            .iter()
            .zip(&model.t_grid)
            .any(|(a, b)| (a - b).abs() > 1e-9 * b.abs().max(1.0))
    {
        return Err(Error::GridMismatch(format!(
            "trajectory has {} points over [0, {}], model expects {} over [0, {}]",
            traj.t_grid.len(),
            traj.t_grid.last().copied().unwrap_or(0.0),
            model.t_grid.len(),
            model.t_grid.last().copied().unwrap_or(0.0)
        )));
    }
    let x = normalize_trajectory(traj, &model.norm)?;
    let y = forward(&model.weights, &x)?;
    let params = unscale_params(&y, &model.norm)?;
    Ok(Inference {
        params,
        seconds: start.elapsed().as_secs_f64(),
    })
}
