use std::path::Path;

use serde::Serialize;

use super::{RegressorConfig, RegressorWeights, TrainedModel};
use crate::container::{read_file, sidecar_path, Reader, Writer};
use crate::dataset::{read_norm, write_norm, NormStats};
use crate::error::{Error, Result};

pub const WEIGHTS_FORMAT_VERSION: u32 = 1;
const WEIGHTS_MAGIC: &[u8; 8] = b"EPINVWT\0";

#[derive(Serialize)]
struct WeightsSidecar<'a> {
    format_version: u32,
    config: &'a RegressorConfig,
    n_weights: usize,
    norm: &'a NormStats,
    n_samples: usize,
    t_horizon: f64,
}

/// Weights, configuration, scaling statistics and training grid in one file.
pub fn save_weights(model: &TrainedModel, path: &Path) -> Result<()> {
    let mut w = Writer::new(WEIGHTS_MAGIC, WEIGHTS_FORMAT_VERSION);
    w.str(&serde_json::to_string(model.weights.config())?);
    write_norm(&mut w, &model.norm);
    w.f64s(&model.t_grid);
    w.f64s(model.weights.values());
    w.write_to(path)?;

    let side = sidecar_path(path);
    let sidecar = WeightsSidecar {
        format_version: WEIGHTS_FORMAT_VERSION,
        config: model.weights.config(),
        n_weights: model.weights.len(),
        norm: &model.norm,
        n_samples: model.t_grid.len(),
        t_horizon: model.t_grid.last().copied().unwrap_or(0.0),
    };
    std::fs::write(&side, serde_json::to_string_pretty(&sidecar)? + "\n")
        .map_err(|e| Error::io(side, e))
}

pub fn load_weights(path: &Path) -> Result<TrainedModel> {
    let buf = read_file(path)?;
    let mut r = Reader::open(&buf, WEIGHTS_MAGIC, "weights", WEIGHTS_FORMAT_VERSION)?;
    let config: RegressorConfig = serde_json::from_str(&r.str()?)?;
    let norm = read_norm(&mut r)?;
    let t_grid = r.f64s()?;
    let values = r.f64s()?;
    r.finish()?;

    let spec = norm.model_id.spec();
    if config.input_dim != norm.n_states() || config.input_dim != spec.n_states() {
        return Err(Error::Dimension {
            what: "weights input_dim",
            expected: spec.n_states(),
            got: config.input_dim,
        });
    }
    if config.output_dim != norm.n_params() || config.output_dim != spec.n_params() {
        return Err(Error::Dimension {
            what: "weights output_dim",
            expected: spec.n_params(),
            got: config.output_dim,
        });
    }
    let weights = RegressorWeights::from_values(config, values)?;
    Ok(TrainedModel {
        weights,
        norm,
        t_grid,
    })
}
