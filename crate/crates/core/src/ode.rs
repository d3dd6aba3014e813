//! Adaptive Dormand–Prince 5(4) integration onto a fixed uniform output grid.
//!
//! Steps are chosen by an embedded error estimate with a PI controller;
//! grid values between accepted steps come from the pair's quartic
//! continuous extension, so output times never drift with step
//! accumulation.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::registry::{check_params, uniform_grid, ModelId, ModelSpec, ParamVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Initial step; chosen automatically when `None`.
    pub h_init: Option<f64>,
    /// Step-size floor; `1e-12 * t_horizon` when `None`.
    pub h_min: Option<f64>,
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            h_init: None,
            h_min: None,
            max_steps: 1_000_000,
        }
    }
}

impl SolverConfig {
    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn validate(&self, t_horizon: f64) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if !(t_horizon > 0.0 && t_horizon.is_finite()) {
            return Err(Error::Config(format!("bad horizon {t_horizon}")));
        }
        let h_min = self.h_min_for(t_horizon);
        if !(h_min > 0.0 && h_min < t_horizon) {
            return Err(Error::Config(format!("h_min {h_min} not in (0, {t_horizon})")));
        }
        if let Some(h) = self.h_init {
            if !(h > 0.0) {
                return Err(Error::Config("h_init must be positive".into()));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        Ok(())
    }

    fn h_min_for(&self, t_horizon: f64) -> f64 {
        self.h_min.unwrap_or(1e-12 * t_horizon)
    }
}

/// States sampled on a uniform grid, stored row-major (`n_samples x n_states`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub model_id: ModelId,
    pub t_grid: Vec<f64>,
    pub n_states: usize,
    pub states: Vec<f64>,
}

impl Trajectory {
    pub fn n_samples(&self) -> usize {
        self.t_grid.len()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.states[k * self.n_states..(k + 1) * self.n_states]
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.states
            .chunks_exact(self.n_states)
            .map(|row| row[c])
            .collect()
    }

    pub fn t_horizon(&self) -> f64 {
        *self.t_grid.last().unwrap_or(&0.0)
    }

    /// Checks the grid is uniform, starts at 0 and every entry is finite.
    pub fn validate(&self) -> Result<()> {
        check_dim(
            "trajectory states",
            self.t_grid.len() * self.n_states,
            self.states.len(),
        )?;
        check_finite("trajectory", &self.states)?;
        check_finite("time grid", &self.t_grid)?;
        if self.t_grid.first() != Some(&0.0) {
            return Err(Error::GridMismatch("grid must start at t = 0".into()));
        }
        let expect = uniform_grid(self.t_horizon(), self.t_grid.len());
        let tol = 1e-9 * self.t_horizon().abs().max(1.0);
        if expect
            .iter()
            .zip(&self.t_grid)
            .any(|(a, b)| (a - b).abs() > tol)
            || self.t_grid.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::GridMismatch("grid is not uniform".into()));
        }
        Ok(())
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b5 - b4
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// continuous extension
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const GROW_MAX: f64 = 5.0;
const SHRINK_MIN: f64 = 0.1;
const PI_ALPHA: f64 = 0.17;
const PI_BETA: f64 = 0.04;

/// Result of a single embedded step.
#[derive(Clone, Debug, PartialEq)]
pub struct Dp54Step {
    /// Fifth-order solution at `t + h`.
    pub y_next: Vec<f64>,
    /// Weighted RMS norm of the fifth/fourth order difference.
    pub err_est: f64,
}

struct Workspace {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_next: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Workspace {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_next: vec![0.0; n],
        }
    }

    /// Stages 2..7 given `k[0] = f(t, y)`. Fills `y_next`, returns the error norm.
    fn step<F>(&mut self, f: &F, t: f64, y: &[f64], h: f64, rtol: f64, atol: f64) -> Result<f64>
    where
        F: Fn(f64, &[f64], &mut [f64]),
    {
        let n = y.len();
        let Workspace { k, tmp, y_next } = self;
        let [k1, k2, k3, k4, k5, k6, k7] = k;

        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        f(t + C2 * h, tmp, k2);
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * h, tmp, k3);
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * h, tmp, k4);
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * h, tmp, k5);
        for i in 0..n {
            tmp[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + h, tmp, k6);
        for i in 0..n {
            // Weights sum to one; centring on k1 keeps constant fields exact.
            let base = k1[i];
            y_next[i] = y[i]
                + h * (base
                    + B3 * (k3[i] - base)
                    + B4 * (k4[i] - base)
                    + B5 * (k5[i] - base)
                    + B6 * (k6[i] - base));
        }
        check_finite("integration stage", y_next)?;
        f(t + h, y_next, k7);
        check_finite("integration stage", k7)?;

        let mut acc = 0.0;
        for i in 0..n {
            let base = k1[i];
            let diff = h
                * (E3 * (k3[i] - base)
                    + E4 * (k4[i] - base)
                    + E5 * (k5[i] - base)
                    + E6 * (k6[i] - base)
                    + E7 * (k7[i] - base));
            let scale = atol + rtol * y[i].abs().max(y_next[i].abs());
            acc += (diff / scale).powi(2);
        }
        let err = (acc / n.max(1) as f64).sqrt();
        if !err.is_finite() {
            return Err(Error::NonFinite("error estimate"));
        }
        Ok(err)
    }

    /// Interpolates inside the last accepted step `[t, t + h]` at `theta`.
    fn dense(&self, y: &[f64], h: f64, theta: f64, out: &mut [f64]) {
        let k = &self.k;
        let theta1 = 1.0 - theta;
        for i in 0..y.len() {
            let ydiff = self.y_next[i] - y[i];
            let bspl = h * k[0][i] - ydiff;
            let r4 = ydiff - h * k[6][i] - bspl;
            let r5 = h
                * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i]
                    + D7 * k[6][i]);
            out[i] = y[i] + theta * (ydiff + theta1 * (bspl + theta * (r4 + theta1 * r5)));
        }
    }
}

/// One Dormand–Prince 5(4) step of `dy/dt = f(t, y)` from `(t, y)` with step `h`.
pub fn step_dp54<F>(f: &F, y: &[f64], t: f64, h: f64, config: &SolverConfig) -> Result<Dp54Step>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("step size must be positive, got {h}")));
    }
    check_finite("state", y)?;
    let mut ws = Workspace::new(y.len());
    f(t, y, &mut ws.k[0]);
    check_finite("integration stage", &ws.k[0])?;
    let err_est = ws.step(f, t, y, h, config.rel_tol, config.abs_tol)?;
    Ok(Dp54Step {
        y_next: ws.y_next,
        err_est,
    })
}

fn rms(v: &[f64], scale: &[f64]) -> f64 {
    let acc: f64 = v.iter().zip(scale).map(|(a, s)| (a / s).powi(2)).sum();
    (acc / v.len().max(1) as f64).sqrt()
}

fn initial_step<F>(f: &F, y0: &[f64], f0: &[f64], span: f64, rtol: f64, atol: f64) -> f64
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let scale: Vec<f64> = y0.iter().map(|v| atol + rtol * v.abs()).collect();
    let d0 = rms(y0, &scale);
    let d1 = rms(f0, &scale);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, d)| y + h0 * d).collect();
    let mut f1 = vec![0.0; y0.len()];
    f(h0, &y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff, &scale) / h0;
    let h1 = if d1.max(d2) <= 1e-15 || !d2.is_finite() {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

/// Integrates `dy/dt = f(t, y)` from `t = 0` and returns the states at the
/// points of `t_grid` (row-major). `t_grid` must start at 0 and increase.
pub fn integrate_on_grid<F>(
    f: &F,
    y0: &[f64],
    t_grid: &[f64],
    config: &SolverConfig,
) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let t_end = *t_grid
        .last()
        .ok_or_else(|| Error::Config("empty time grid".into()))?;
    if t_grid[0] != 0.0 {
        return Err(Error::GridMismatch("grid must start at t = 0".into()));
    }
    config.validate(t_end.max(f64::MIN_POSITIVE))?;
    check_finite("initial state", y0)?;

    let mut out = Vec::with_capacity(t_grid.len() * n);
    out.extend_from_slice(y0);
    if t_grid.len() == 1 {
        return Ok(out);
    }

    let (rtol, atol) = (config.rel_tol, config.abs_tol);
    let h_min = config.h_min_for(t_end);
    let mut ws = Workspace::new(n);
    let mut y = y0.to_vec();
    let mut t = 0.0;
    f(t, &y, &mut ws.k[0]);
    check_finite("integration stage", &ws.k[0])?;

    let mut h = match config.h_init {
        Some(h) => h.min(t_end),
        None => initial_step(f, &y, &ws.k[0].clone(), t_end, rtol, atol),
    };
    let mut err_prev: f64 = 1e-4;
    let mut last_rejected = false;
    let mut next_out = 1;
    let mut steps = 0usize;
    let mut point = vec![0.0; n];

    while next_out < t_grid.len() {
        if steps >= config.max_steps {
            return Err(Error::MaxSteps(config.max_steps));
        }
        steps += 1;

        let last = t + 1.01 * h >= t_end;
        if last {
            h = t_end - t;
        }

        let err = match ws.step(f, t, &y, h, rtol, atol) {
            Ok(err) => err,
            Err(Error::NonFinite(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };

        if err <= 1.0 {
            let t_new = if last { t_end } else { t + h };
            while next_out < t_grid.len() && t_grid[next_out] <= t_new {
                let tg = t_grid[next_out];
                if tg == t_new {
                    out.extend_from_slice(&ws.y_next);
                } else {
                    ws.dense(&y, h, (tg - t) / h, &mut point);
                    out.extend_from_slice(&point);
                }
                next_out += 1;
            }
            y.copy_from_slice(&ws.y_next);
            let (head, tail) = ws.k.split_at_mut(6);
            head[0].copy_from_slice(&tail[0]);
            t = t_new;

            let mut factor = if err == 0.0 {
                GROW_MAX
            } else {
                SAFETY * err.powf(-PI_ALPHA) * err_prev.powf(PI_BETA)
            };
            factor = factor.clamp(SHRINK_MIN, GROW_MAX);
            if last_rejected {
                factor = factor.min(1.0);
            }
            err_prev = err.max(1e-4);
            last_rejected = false;
            h *= factor;
        } else {
            let factor = if err.is_finite() {
                (SAFETY * err.powf(-0.2)).clamp(SHRINK_MIN, 1.0)
            } else {
                SHRINK_MIN
            };
            last_rejected = true;
            h *= factor;
        }

        if next_out < t_grid.len() && h < h_min {
            return Err(Error::StepUnderflow { t, h, h_min });
        }
    }
    Ok(out)
}

/// Forward solve of a registered model onto its uniform output grid.
pub fn integrate(
    spec: &ModelSpec,
    params: &ParamVector,
    y0: &[f64],
    config: &SolverConfig,
) -> Result<Trajectory> {
    check_params(spec, params)?;
    check_dim("initial state", spec.n_states(), y0.len())?;
    check_finite("parameters", &params.values)?;
    if spec.n_samples == 0 {
        return Err(Error::Config("n_samples must be positive".into()));
    }
    let t_grid = spec.t_grid();
    let field = spec.vector_field(&params.values);
    let states = integrate_on_grid(&field, y0, &t_grid, config)?;
    check_finite("trajectory", &states)?;
    Ok(Trajectory {
        model_id: spec.model_id,
        t_grid,
        n_states: spec.n_states(),
        states,
    })
}
