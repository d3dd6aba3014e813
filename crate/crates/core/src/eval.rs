//! Error metrics over inferred parameters and peak diagnostics of
//! trajectories.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::ode::Trajectory;
use crate::registry::{check_params, ModelId, ModelSpec, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// `100 |pred - true| / |true|`.
    RelL2Pct,
    /// `|pred - true|`, for parameters whose true value is 0.
    Mae,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::RelL2Pct => "rel_l2_pct",
            MetricKind::Mae => "mae",
        }
    }
}

pub fn param_error(pred: f64, truth: f64, zero_true: bool) -> Result<(f64, MetricKind)> {
    if zero_true {
        return Ok(((pred - truth).abs(), MetricKind::Mae));
    }
    if truth == 0.0 {
        return Err(Error::ZeroTruth);
    }
    Ok((100.0 * (pred - truth).abs() / truth.abs(), MetricKind::RelL2Pct))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamStat {
    pub name: String,
    pub metric: MetricKind,
    pub mean: f64,
    pub std_dev: f64,
}

/// Pooled over every (task, parameter) pair measured in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std_dev: f64,
    pub n_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub n: usize,
    pub mean_s: f64,
    pub max_s: f64,
}

impl TimingStats {
    pub fn from_seconds(seconds: &[f64]) -> Option<TimingStats> {
        if seconds.is_empty() {
            return None;
        }
        Some(TimingStats {
            n: seconds.len(),
            mean_s: seconds.iter().sum::<f64>() / seconds.len() as f64,
            max_s: seconds.iter().copied().fold(0.0, f64::max),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: ModelId,
    pub n_tasks: usize,
    pub params: Vec<ParamStat>,
    pub aggregate: Aggregate,
    /// Wall-clock inference times. Left out of the JSON so that reports
    /// of identical runs compare byte for byte.
    #[serde(skip)]
    pub timing: Option<TimingStats>,
}

/// Population mean and standard deviation.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-parameter and pooled error statistics over `(predicted, true)` pairs.
pub fn evaluate(estimates: &[(ParamVector, ParamVector)], spec: &ModelSpec) -> Result<EvalReport> {
    if estimates.is_empty() {
        return Err(Error::Config("no estimates to evaluate".into()));
    }
    let m = spec.n_params();
    let mut per_param = vec![Vec::with_capacity(estimates.len()); m];
    for (pred, truth) in estimates {
        check_params(spec, pred)?;
        check_params(spec, truth)?;
        check_dim("predicted parameters", m, pred.values.len())?;
        check_dim("true parameters", m, truth.values.len())?;
        for (k, d) in spec.params.iter().enumerate() {
            let (e, _) = param_error(pred.values[k], truth.values[k], d.zero_true)?;
            if !e.is_finite() {
                return Err(Error::NonFinite("parameter error"));
            }
            per_param[k].push(e);
        }
    }
    let mut params = Vec::with_capacity(m);
    let mut pooled = Vec::new();
    for (d, errs) in spec.params.iter().zip(&per_param) {
        let metric = if d.zero_true {
            MetricKind::Mae
        } else {
            pooled.extend_from_slice(errs);
            MetricKind::RelL2Pct
        };
        let (mean, std_dev) = mean_std(errs);
        params.push(ParamStat {
            name: d.name.clone(),
            metric,
            mean,
            std_dev,
        });
    }
    let (mean, std_dev) = mean_std(&pooled);
    Ok(EvalReport {
        model_id: spec.model_id,
        n_tasks: estimates.len(),
        params,
        aggregate: Aggregate {
            mean,
            std_dev,
            n_pairs: pooled.len(),
        },
        timing: None,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<EvalReport> {
        Ok(serde_json::from_str(s)?)
    }

    /// Aligned plain-text table: one row per parameter, then the aggregate.
    pub fn render_table(&self) -> String {
        let rows: Vec<[String; 4]> = self
            .params
            .iter()
            .map(|p| {
                [
                    p.name.clone(),
                    p.metric.as_str().to_string(),
                    format!("{:.4}", p.mean),
                    format!("{:.4}", p.std_dev),
                ]
            })
            .chain(std::iter::once([
                "aggregate".to_string(),
                MetricKind::RelL2Pct.as_str().to_string(),
                format!("{:.4}", self.aggregate.mean),
                format!("{:.4}", self.aggregate.std_dev),
            ]))
            .collect();
        let header = ["parameter", "metric", "mean", "std_dev"];
        let mut widths = header.map(str::len);
        for r in &rows {
            for (w, cell) in widths.iter_mut().zip(r) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = format!("{} ({} tasks)\n", self.model_id.as_str(), self.n_tasks);
        let line = |cells: [&str; 4], out: &mut String| {
            let _ = writeln!(
                out,
                "{:<w0$}  {:<w1$}  {:>w2$}  {:>w3$}",
                cells[0],
                cells[1],
                cells[2],
                cells[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2],
                w3 = widths[3]
            );
        };
        line(header, &mut out);
        for r in &rows {
            line([&r[0], &r[1], &r[2], &r[3]], &mut out);
        }
        if let Some(t) = &self.timing {
            let _ = writeln!(
                out,
                "inference: {} runs, mean {:.4} s, max {:.4} s",
                t.n, t.mean_s, t.max_s
            );
        }
        out
    }
}

/// Time and value of the largest sample of `channel`; ties go to the
/// earliest time.
pub fn peak_stats(traj: &Trajectory, channel: usize) -> Result<(f64, f64)> {
    if channel >= traj.n_states {
        return Err(Error::Dimension {
            what: "channel index bound",
            expected: traj.n_states,
            got: channel,
        });
    }
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for k in 0..traj.n_samples() {
        let v = traj.row(k)[channel];
        if v > best.1 {
            best = (traj.t_grid[k], v);
        }
    }
    if best.0.is_nan() {
        return Err(Error::Config("trajectory has no samples".into()));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_cases() {
        assert_eq!(param_error(0.2, 0.1, false).unwrap(), (100.0, MetricKind::RelL2Pct));
        assert_eq!(param_error(0.3, 0.3, false).unwrap().0, 0.0);
        assert_eq!(param_error(0.012, 0.0, true).unwrap(), (0.012, MetricKind::Mae));
        assert!(matches!(param_error(0.1, 0.0, false), Err(Error::ZeroTruth)));
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
    }
}
