//! Physics-informed refinement of a parameter estimate.
//!
//! A small tanh MLP `u(τ)` with `τ = t / T` is fitted to one observed
//! trajectory in normalized units, then optimized jointly with the model
//! parameters so that `du/dt` also satisfies the model equations. The
//! parameters are kept inside their ranges by a sigmoid reparameterization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{normalize_trajectory, NormStats};
use crate::dual::{Dual, DUAL_WIDTH};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::ode::Trajectory;
use crate::regressor::scalar::gemm;
use crate::regressor::Adam;
use crate::registry::{check_params, uniform_grid, ModelSpec, ParamVector};

/// Fraction of the range by which boundary values are moved inward.
pub const BOUNDARY_NUDGE: f64 = 1e-6;

/// Raw values are clamped to this magnitude so the decoded value never
/// rounds onto a bound.
const RAW_LIMIT: f64 = 30.0;

const FIRST_LAYER_SLOPE: f64 = 8.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    /// Hidden tanh layers of the surrogate.
    pub surrogate_depth: usize,
    pub surrogate_width: usize,
    /// Collocation points spread uniformly over the horizon; the
    /// trajectory's sample count when `None`.
    pub n_collocation: Option<usize>,
    /// Joint optimization steps, after the data-only pre-fit.
    pub steps: usize,
    pub prefit_steps: usize,
    pub lr: f64,
    /// The joint phase multiplies the rate by `decay_factor` every
    /// `decay_every` steps (a third of `steps` when `None`), as in
    /// regressor training.
    pub decay_factor: f64,
    pub decay_every: Option<usize>,
    /// Adam's denominator floor. The losses here reach 1e-8 and below, so
    /// the usual 1e-8 would stall the updates.
    pub adam_eps: f64,
    pub w_data: f64,
    pub w_phys: f64,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            surrogate_depth: 4,
            surrogate_width: 64,
            n_collocation: None,
            steps: 20_000,
            prefit_steps: 2_000,
            lr: 1e-3,
            decay_factor: 0.1,
            decay_every: None,
            adam_eps: 1e-15,
            w_data: 1.0,
            w_phys: 1.0,
            seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.surrogate_depth == 0 || self.surrogate_width == 0 {
            return Err(Error::Config("surrogate depth and width must be positive".into()));
        }
        if self.n_collocation == Some(0) {
            return Err(Error::Config("n_collocation must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config("decay_factor must lie in (0, 1]".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        if self.decay_every == Some(0) {
            return Err(Error::Config("decay_every must be positive".into()));
        }
        for (name, w) in [("w_data", self.w_data), ("w_phys", self.w_phys)] {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite")));
            }
        }
        Ok(())
    }

    /// Rate at joint step `step` (counted from the end of the pre-fit).
    pub fn lr_at(&self, step: usize) -> f64 {
        let every = self.decay_every.unwrap_or((self.steps / 3).max(1));
        self.lr * self.decay_factor.powi((step / every) as i32)
    }
}

/// An unconstrained scalar decoding to `lo + (hi - lo) * sigmoid(raw)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundedParam {
    pub raw: f64,
    pub lo: f64,
    pub hi: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl BoundedParam {
    /// Encodes `value`, nudging a value on a bound inward by
    /// [`BOUNDARY_NUDGE`] of the width.
    pub fn encode(value: f64, lo: f64, hi: f64) -> Result<BoundedParam> {
        if !(lo < hi) || !value.is_finite() || value < lo || value > hi {
            return Err(Error::OutOfRange {
                name: String::new(),
                value,
                lo,
                hi,
            });
        }
        let w = hi - lo;
        let v = value.clamp(lo + BOUNDARY_NUDGE * w, hi - BOUNDARY_NUDGE * w);
        let u = (v - lo) / w;
        Ok(BoundedParam {
            raw: (u / (1.0 - u)).ln(),
            lo,
            hi,
        })
    }

    pub fn value(&self) -> f64 {
        self.lo + (self.hi - self.lo) * sigmoid(self.raw)
    }

    /// `d value / d raw`.
    fn slope(&self) -> f64 {
        let s = sigmoid(self.raw);
        (self.hi - self.lo) * s * (1.0 - s)
    }
}

pub fn encode_params(spec: &ModelSpec, params: &ParamVector) -> Result<Vec<BoundedParam>> {
    check_params(spec, params)?;
    spec.params
        .iter()
        .zip(&params.values)
        .map(|(d, &v)| {
            BoundedParam::encode(v, d.range_lo, d.range_hi).map_err(|e| match e {
                Error::OutOfRange { value, lo, hi, .. } => Error::OutOfRange {
                    name: d.name.clone(),
                    value,
                    lo,
                    hi,
                },
                other => other,
            })
        })
        .collect()
}

pub fn decode_params(spec: &ModelSpec, bounded: &[BoundedParam]) -> Result<ParamVector> {
    check_dim("bounded parameters", spec.n_params(), bounded.len())?;
    Ok(ParamVector::new(
        spec.model_id,
        bounded.iter().map(BoundedParam::value).collect(),
    ))
}

/// Fully connected tanh network from scaled time to normalized states.
///
/// Weights are stored flat: per hidden layer a row-major `width x fan_in`
/// matrix followed by its bias, then the linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Surrogate {
    depth: usize,
    width: usize,
    n_out: usize,
    t_horizon: f64,
    values: Vec<f64>,
}

/// Per-layer activations and their time derivatives for a batch of points.
struct Pass {
    taus: Vec<f64>,
    /// `a[l]` and `da[l]` are `n x width`; `dz[l]` is the pre-activation
    /// derivative.
    a: Vec<Vec<f64>>,
    da: Vec<Vec<f64>>,
    dz: Vec<Vec<f64>>,
    y: Vec<f64>,
    dy: Vec<f64>,
}

impl Surrogate {
    /// Glorot-uniform weights and zero biases after the first layer.
    pub fn new(n_out: usize, t_horizon: f64, depth: usize, width: usize, seed: u64) -> Result<Surrogate> {
        if depth == 0 || width == 0 || n_out == 0 {
            return Err(Error::Config("surrogate dimensions must be positive".into()));
        }
        if !(t_horizon > 0.0 && t_horizon.is_finite()) {
            return Err(Error::Config("t_horizon must be positive".into()));
        }
        let mut s = Surrogate {
            depth,
            width,
            n_out,
            t_horizon,
            values: Vec::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(s.n_weights());
        // First layer: slopes up to FIRST_LAYER_SLOPE with each unit's
        // transition centred at a uniform point of [0, 1], so the features
        // resolve structure across the whole horizon.
        let slopes: Vec<f64> = (0..width)
            .map(|_| rng.gen_range(-FIRST_LAYER_SLOPE..FIRST_LAYER_SLOPE))
            .collect();
        let centres: Vec<f64> = (0..width).map(|_| rng.gen::<f64>()).collect();
        values.extend(&slopes);
        values.extend(slopes.iter().zip(&centres).map(|(w, c)| -w * c));
        for l in 1..=depth {
            let (rows, cols) = s.shape(l);
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            values.extend((0..rows * cols).map(|_| rng.gen_range(-bound..bound)));
            values.extend(std::iter::repeat_n(0.0, rows));
        }
        s.values = values;
        Ok(s)
    }

    /// A surrogate with the given flat weights.
    pub fn from_values(
        n_out: usize,
        t_horizon: f64,
        depth: usize,
        width: usize,
        values: Vec<f64>,
    ) -> Result<Surrogate> {
        let mut s = Surrogate::new(n_out, t_horizon, depth, width, 0)?;
        check_dim("surrogate weights", s.n_weights(), values.len())?;
        check_finite("surrogate weights", &values)?;
        s.values = values;
        Ok(s)
    }

    pub fn n_outputs(&self) -> usize {
        self.n_out
    }

    pub fn t_horizon(&self) -> f64 {
        self.t_horizon
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_weights(&self) -> usize {
        (0..=self.depth)
            .map(|l| {
                let (r, c) = self.shape(l);
                r * c + r
            })
            .sum()
    }

    /// `(rows, cols)` of layer `l`; layer `depth` is the output layer.
    fn shape(&self, l: usize) -> (usize, usize) {
        let rows = if l == self.depth { self.n_out } else { self.width };
        let cols = if l == 0 { 1 } else { self.width };
        (rows, cols)
    }

    fn offset(&self, l: usize) -> usize {
        (0..l)
            .map(|k| {
                let (r, c) = self.shape(k);
                r * c + r
            })
            .sum()
    }

    /// Normalized states and their derivatives in physical time at each
    /// of `times`, both `times.len() x n_outputs` row-major.
    pub fn eval(&self, times: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let taus: Vec<f64> = times.iter().map(|t| t / self.t_horizon).collect();
        let pass = self.forward(&taus);
        let dy = pass.dy.iter().map(|d| d / self.t_horizon).collect();
        (pass.y, dy)
    }

    fn forward(&self, taus: &[f64]) -> Pass {
        let n = taus.len();
        let w = self.width;
        let mut a = Vec::with_capacity(self.depth);
        let mut da = Vec::with_capacity(self.depth);
        let mut dz_all = Vec::with_capacity(self.depth);
        for l in 0..self.depth {
            let off = self.offset(l);
            let (rows, cols) = self.shape(l);
            let mat = &self.values[off..off + rows * cols];
            let bias = &self.values[off + rows * cols..off + rows * cols + rows];
            let mut z = vec![0.0; n * w];
            let mut dz = vec![0.0; n * w];
            if l == 0 {
                for (k, &tau) in taus.iter().enumerate() {
                    for j in 0..w {
                        z[k * w + j] = mat[j] * tau + bias[j];
                        dz[k * w + j] = mat[j];
                    }
                }
            } else {
                let prev: &Vec<f64> = &a[l - 1];
                let dprev: &Vec<f64> = &da[l - 1];
                for row in z.chunks_exact_mut(w) {
                    row.copy_from_slice(bias);
                }
                gemm(n, cols, rows, prev, false, mat, true, 1.0, &mut z);
                gemm(n, cols, rows, dprev, false, mat, true, 0.0, &mut dz);
            }
            let act: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
            let dact: Vec<f64> = act
                .iter()
                .zip(&dz)
                .map(|(s, d)| (1.0 - s * s) * d)
                .collect();
            a.push(act);
            da.push(dact);
            dz_all.push(dz);
        }
        let off = self.offset(self.depth);
        let mat = &self.values[off..off + self.n_out * w];
        let bias = &self.values[off + self.n_out * w..off + self.n_out * w + self.n_out];
        let mut y = vec![0.0; n * self.n_out];
        for row in y.chunks_exact_mut(self.n_out) {
            row.copy_from_slice(bias);
        }
        let mut dy = vec![0.0; n * self.n_out];
        gemm(n, w, self.n_out, &a[self.depth - 1], false, mat, true, 1.0, &mut y);
        gemm(n, w, self.n_out, &da[self.depth - 1], false, mat, true, 0.0, &mut dy);
        Pass {
            taus: taus.to_vec(),
            a,
            da,
            dz: dz_all,
            y,
            dy,
        }
    }

    /// Accumulates into `grad` the weight gradient given loss gradients
    /// with respect to the outputs (`g_y`) and their τ-derivatives (`g_dy`).
    fn backward(&self, pass: &Pass, g_y: &[f64], g_dy: &[f64], grad: &mut [f64]) {
        let n = pass.taus.len();
        let w = self.width;
        let no = self.n_out;

        let off = self.offset(self.depth);
        let mat = &self.values[off..off + no * w];
        {
            let (gm, gb) = grad[off..off + no * w + no].split_at_mut(no * w);
            gemm(no, n, w, g_y, true, &pass.a[self.depth - 1], false, 1.0, gm);
            gemm(no, n, w, g_dy, true, &pass.da[self.depth - 1], false, 1.0, gm);
            for row in g_y.chunks_exact(no) {
                for (b, g) in gb.iter_mut().zip(row) {
                    *b += g;
                }
            }
        }
        let mut g_a = vec![0.0; n * w];
        let mut g_da = vec![0.0; n * w];
        gemm(n, no, w, g_y, false, mat, false, 0.0, &mut g_a);
        gemm(n, no, w, g_dy, false, mat, false, 0.0, &mut g_da);

        let mut g_z = vec![0.0; n * w];
        let mut g_dz = vec![0.0; n * w];
        for l in (0..self.depth).rev() {
            let act = &pass.a[l];
            let dz = &pass.dz[l];
            for i in 0..n * w {
                let s = 1.0 - act[i] * act[i];
                g_dz[i] = g_da[i] * s;
                let ga = g_a[i] - 2.0 * act[i] * g_da[i] * dz[i];
                g_z[i] = ga * s;
            }
            let off = self.offset(l);
            let (rows, cols) = self.shape(l);
            let (gm, gb) = grad[off..off + rows * cols + rows].split_at_mut(rows * cols);
            for row in g_z.chunks_exact(w) {
                for (b, g) in gb.iter_mut().zip(row) {
                    *b += g;
                }
            }
            if l == 0 {
                for (k, &tau) in pass.taus.iter().enumerate() {
                    for j in 0..w {
                        gm[j] += g_z[k * w + j] * tau + g_dz[k * w + j];
                    }
                }
            } else {
                gemm(rows, n, cols, &g_z, true, &pass.a[l - 1], false, 1.0, gm);
                gemm(rows, n, cols, &g_dz, true, &pass.da[l - 1], false, 1.0, gm);
                let mat = &self.values[off..off + rows * cols];
                gemm(n, rows, cols, &g_z, false, mat, false, 0.0, &mut g_a);
                gemm(n, rows, cols, &g_dz, false, mat, false, 0.0, &mut g_da);
            }
        }
    }
}

/// Everything fixed for one refinement task: targets, scalings and points.
struct Problem<'a> {
    spec: &'a ModelSpec,
    consts: Vec<f64>,
    /// Data points first, then collocation points not already among them.
    taus: Vec<f64>,
    n_data: usize,
    /// Index into `taus` of each collocation point.
    colloc: Vec<usize>,
    targets: Vec<f64>,
    state_min: Vec<f64>,
    span: Vec<f64>,
    /// `1 / span_c`: converts a physical rate into normalized units.
    rate_scale: Vec<f64>,
    t_horizon: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub data: f64,
    pub physics: f64,
}

impl<'a> Problem<'a> {
    fn new(
        spec: &'a ModelSpec,
        traj: &Trajectory,
        norm: &NormStats,
        colloc: &[f64],
        t_horizon: f64,
    ) -> Result<Problem<'a>> {
        let n = spec.n_states();
        check_dim("trajectory channels", n, traj.n_states)?;
        check_dim("normalization channels", n, norm.n_states())?;
        if n + spec.n_params() > DUAL_WIDTH {
            return Err(Error::Config(format!(
                "{} states and parameters exceed the {DUAL_WIDTH} derivative slots",
                n + spec.n_params()
            )));
        }
        for &t in colloc {
            if !(0.0..=t_horizon).contains(&t) {
                return Err(Error::Config(format!(
                    "collocation time {t} outside [0, {t_horizon}]"
                )));
            }
        }
        let mut taus: Vec<f64> = traj.t_grid.iter().map(|t| t / t_horizon).collect();
        let n_data = taus.len();
        let mut colloc_idx = Vec::with_capacity(colloc.len());
        for t in colloc {
            let tau = t / t_horizon;
            match taus[..n_data].iter().position(|&d| d == tau) {
                Some(k) => colloc_idx.push(k),
                None => {
                    colloc_idx.push(taus.len());
                    taus.push(tau);
                }
            }
        }
        let span: Vec<f64> = (0..n).map(|c| norm.span(c)).collect();
        Ok(Problem {
            spec,
            consts: spec.constants.iter().map(|(_, v)| *v).collect(),
            taus,
            n_data,
            colloc: colloc_idx,
            targets: normalize_trajectory(traj, norm)?,
            state_min: norm.state_min.clone(),
            rate_scale: span.iter().map(|s| 1.0 / s).collect(),
            t_horizon,
            span,
        })
    }

    /// Loss parts and, when requested, gradients with respect to the
    /// surrogate weights and the raw parameters.
    fn evaluate(
        &self,
        surrogate: &Surrogate,
        params: &[BoundedParam],
        weights: (f64, f64),
        grads: Option<(&mut [f64], &mut [f64])>,
    ) -> LossParts {
        let n = self.spec.n_states();
        let m = self.spec.n_params();
        let pass = surrogate.forward(&self.taus);
        let n_colloc = self.colloc.len();
        let want_grad = grads.is_some();

        let mut g_y = vec![0.0; pass.y.len()];
        let mut g_dy = vec![0.0; pass.y.len()];
        let mut g_raw = vec![0.0; m];

        let data_count = (self.n_data * n) as f64;
        let mut data = 0.0;
        for i in 0..self.n_data * n {
            let r = pass.y[i] - self.targets[i];
            data += r * r;
            g_y[i] = 2.0 * weights.0 * r / data_count;
        }
        data /= data_count;

        let values: Vec<f64> = params.iter().map(BoundedParam::value).collect();
        let slopes: Vec<f64> = params.iter().map(BoundedParam::slope).collect();
        let mut physics = 0.0;
        let mut y_dual = vec![Dual::constant(0.0); n];
        let p_dual: Vec<Dual> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| Dual::variable(v, n + i))
            .collect();
        let mut f = vec![Dual::constant(0.0); n];
        let mut resid = vec![0.0; n];
        for &k in &self.colloc {
            let row = &pass.y[k * n..(k + 1) * n];
            for c in 0..n {
                y_dual[c] = Dual::variable(self.state_min[c] + self.span[c] * row[c], c);
            }
            self.spec.rhs_generic(&y_dual, &p_dual, &self.consts, &mut f);
            for c in 0..n {
                resid[c] = pass.dy[k * n + c] / self.t_horizon - self.rate_scale[c] * f[c].v;
                physics += resid[c] * resid[c];
            }
            if !want_grad {
                continue;
            }
            for c in 0..n {
                let g = 2.0 * weights.1 * resid[c] / n_colloc as f64;
                g_dy[k * n + c] += g / self.t_horizon;
                let gs = g * self.rate_scale[c];
                for j in 0..n {
                    g_y[k * n + j] -= gs * f[c].d[j] * self.span[j];
                }
                for i in 0..m {
                    g_raw[i] -= gs * f[c].d[n + i];
                }
            }
        }
        physics /= n_colloc as f64;

        if let Some((g_w, g_p)) = grads {
            surrogate.backward(&pass, &g_y, &g_dy, g_w);
            for i in 0..m {
                g_p[i] += g_raw[i] * slopes[i];
            }
        }
        LossParts { data, physics }
    }
}

fn collocation_times(t_horizon: f64, n: usize) -> Vec<f64> {
    uniform_grid(t_horizon, n)
}

/// Mean squared difference between the surrogate on the trajectory's grid
/// and the normalized observations.
pub fn data_loss(surrogate: &Surrogate, traj: &Trajectory, norm: &NormStats) -> Result<f64> {
    let n = norm.n_states();
    check_dim("surrogate outputs", n, surrogate.n_outputs())?;
    check_dim("trajectory channels", n, traj.n_states)?;
    let targets = normalize_trajectory(traj, norm)?;
    let (y, _) = surrogate.eval(&traj.t_grid);
    let sse: f64 = y.iter().zip(&targets).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sse / targets.len() as f64)
}

/// Mean over `times` of the squared norm of `du/dt - f(y(u)) / span`, the
/// model residual with states in normalized units and time in the model's
/// own units.
pub fn physics_residual(
    surrogate: &Surrogate,
    params: &[BoundedParam],
    spec: &ModelSpec,
    norm: &NormStats,
    times: &[f64],
) -> Result<f64> {
    check_dim("surrogate outputs", spec.n_states(), surrogate.n_outputs())?;
    check_dim("bounded parameters", spec.n_params(), params.len())?;
    if times.is_empty() {
        return Err(Error::Config("no collocation times".into()));
    }
    let t_horizon = surrogate.t_horizon();
    let empty = Trajectory {
        model_id: spec.model_id,
        t_grid: Vec::new(),
        n_states: spec.n_states(),
        states: Vec::new(),
    };
    let problem = Problem::new(spec, &empty, norm, times, t_horizon)?;
    Ok(problem.evaluate(surrogate, params, (1.0, 1.0), None).physics)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineLogEntry {
    /// Counted from the start of the pre-fit.
    pub step: usize,
    pub prefit: bool,
    pub data_loss: f64,
    pub physics_loss: f64,
    pub total: f64,
    /// Decoded parameters the losses were evaluated at.
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Refined {
    pub params: ParamVector,
    /// Joint step whose parameters were returned, `None` when no joint
    /// step ran.
    pub best_step: Option<usize>,
    pub best_loss: f64,
    pub history: Vec<RefineLogEntry>,
    /// Step at which a non-finite loss stopped the run.
    pub aborted_at: Option<usize>,
    pub surrogate: Surrogate,
}

impl Refined {
    pub fn history_csv(&self) -> String {
        let mut s = String::from("step,phase,data_loss,physics_loss,total\n");
        for e in &self.history {
            s.push_str(&format!(
                "{},{},{:e},{:e},{:e}\n",
                e.step,
                if e.prefit { "prefit" } else { "joint" },
                e.data_loss,
                e.physics_loss,
                e.total
            ));
        }
        s
    }
}

/// Fits the surrogate to `traj` with the data term alone. The rate decays
/// by `decay_factor` at each third of `steps`.
pub fn fit_surrogate(
    spec: &ModelSpec,
    traj: &Trajectory,
    norm: &NormStats,
    cfg: &RefineConfig,
    steps: usize,
) -> Result<(Surrogate, f64)> {
    cfg.validate()?;
    let t_horizon = traj.t_horizon();
    let mut surrogate = Surrogate::new(
        spec.n_states(),
        t_horizon,
        cfg.surrogate_depth,
        cfg.surrogate_width,
        cfg.seed,
    )?;
    let problem = Problem::new(spec, traj, norm, &[], t_horizon)?;
    let mut opt = Adam::new(surrogate.n_weights(), 0.9, 0.999, cfg.adam_eps);
    let mut grad = vec![0.0; surrogate.n_weights()];
    let schedule = RefineConfig {
        steps,
        decay_every: None,
        ..cfg.clone()
    };
    for step in 0..steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let loss = problem.evaluate_data(&surrogate, Some(&mut grad)).data;
        if !loss.is_finite() {
            return Err(Error::NonFinite("surrogate data loss"));
        }
        opt.step(&mut surrogate.values, &grad, schedule.lr_at(step));
    }
    let loss = problem.evaluate_data(&surrogate, None).data;
    Ok((surrogate, loss))
}

impl Problem<'_> {
    fn evaluate_data(&self, surrogate: &Surrogate, grad: Option<&mut [f64]>) -> LossParts {
        let n = self.spec.n_states();
        let taus = &self.taus[..self.n_data];
        let pass = surrogate.forward(taus);
        let count = (self.n_data * n) as f64;
        let mut data = 0.0;
        let mut g_y = vec![0.0; pass.y.len()];
        for i in 0..self.n_data * n {
            let r = pass.y[i] - self.targets[i];
            data += r * r;
            g_y[i] = 2.0 * r / count;
        }
        if let Some(g) = grad {
            let zeros = vec![0.0; pass.y.len()];
            surrogate.backward(&pass, &g_y, &zeros, g);
        }
        LossParts {
            data: data / count,
            physics: f64::NAN,
        }
    }
}

/// Data-only pre-fit followed by joint Adam on the surrogate weights and
/// the raw parameters. Returns the parameters of the joint step with the
/// lowest total loss; a non-finite loss stops the run early with the best
/// parameters seen so far.
pub fn refine(
    spec: &ModelSpec,
    traj: &Trajectory,
    init: &ParamVector,
    cfg: &RefineConfig,
    norm: &NormStats,
) -> Result<Refined> {
    cfg.validate()?;
    traj.validate()?;
    if traj.model_id != spec.model_id {
        return Err(Error::Config(format!(
            "trajectory is for `{}` but the model is `{}`",
            traj.model_id.as_str(),
            spec.model_id.as_str()
        )));
    }
    let mut bounded = encode_params(spec, init)?;
    let t_horizon = traj.t_horizon();
    let n_colloc = cfg.n_collocation.unwrap_or(traj.n_samples()).max(1);
    let colloc = collocation_times(t_horizon, n_colloc);
    let problem = Problem::new(spec, traj, norm, &colloc, t_horizon)?;

    let mut surrogate = Surrogate::new(
        spec.n_states(),
        t_horizon,
        cfg.surrogate_depth,
        cfg.surrogate_width,
        cfg.seed,
    )?;
    let n_w = surrogate.n_weights();
    let mut opt_w = Adam::new(n_w, 0.9, 0.999, cfg.adam_eps);
    let mut opt_p = Adam::new(bounded.len(), 0.9, 0.999, cfg.adam_eps);
    let mut g_w = vec![0.0; n_w];
    let mut g_p = vec![0.0; bounded.len()];
    let mut raws = vec![0.0; bounded.len()];

    let mut history = Vec::with_capacity(cfg.prefit_steps + cfg.steps);
    let mut best = (f64::INFINITY, None, decode_params(spec, &bounded)?);
    let mut best_surrogate = surrogate.clone();
    let mut aborted_at = None;

    for step in 0..cfg.prefit_steps + cfg.steps {
        let prefit = step < cfg.prefit_steps;
        g_w.iter_mut().for_each(|g| *g = 0.0);
        g_p.iter_mut().for_each(|g| *g = 0.0);
        let parts = if prefit {
            problem.evaluate(&surrogate, &bounded, (cfg.w_data, 0.0), Some((&mut g_w, &mut g_p)))
        } else {
            problem.evaluate(
                &surrogate,
                &bounded,
                (cfg.w_data, cfg.w_phys),
                Some((&mut g_w, &mut g_p)),
            )
        };
        let total = cfg.w_data * parts.data + cfg.w_phys * parts.physics;
        history.push(RefineLogEntry {
            step,
            prefit,
            data_loss: parts.data,
            physics_loss: parts.physics,
            total,
            params: bounded.iter().map(BoundedParam::value).collect(),
        });
        if !total.is_finite() || g_w.iter().chain(&g_p).any(|g| !g.is_finite()) {
            aborted_at = Some(step);
            break;
        }
        if !prefit && total < best.0 {
            best = (total, Some(step), decode_params(spec, &bounded)?);
            best_surrogate.values.copy_from_slice(&surrogate.values);
        }
        let lr = if prefit {
            cfg.lr
        } else {
            cfg.lr_at(step - cfg.prefit_steps)
        };
        opt_w.step(&mut surrogate.values, &g_w, lr);
        if !prefit {
            for (r, b) in raws.iter_mut().zip(&bounded) {
                *r = b.raw;
            }
            opt_p.step(&mut raws, &g_p, lr);
            for (b, &r) in bounded.iter_mut().zip(&raws) {
                b.raw = r.clamp(-RAW_LIMIT, RAW_LIMIT);
            }
        }
    }
    if best.1.is_none() {
        best_surrogate = surrogate;
    }

    Ok(Refined {
        params: best.2,
        best_step: best.1,
        best_loss: best.0,
        history,
        aborted_at,
        surrogate: best_surrogate,
    })
}

/// Refines independent tasks concurrently; results are in task order.
pub fn refine_many(
    spec: &ModelSpec,
    tasks: &[(Trajectory, ParamVector)],
    cfg: &RefineConfig,
    norm: &NormStats,
) -> Vec<Result<Refined>> {
    tasks
        .par_iter()
        .map(|(traj, init)| refine(spec, traj, init, cfg, norm))
        .collect()
}
