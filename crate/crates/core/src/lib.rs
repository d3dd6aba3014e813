//! Learned inverse maps from epidemic trajectories to the coefficients of
//! compartmental ODE models.
//!
//! The pipeline is: forward-simulate registered models over their
//! parameter boxes ([`dataset`]), train a two-layer LSTM regressor on the
//! resulting (trajectory, parameters) pairs ([`regressor`]), infer
//! parameters for unseen trajectories, and optionally sharpen an estimate
//! with a physics-informed refinement stage ([`refine`]).

mod container;
pub mod dataset;
pub mod dual;
pub mod error;
pub mod eval;
pub mod ode;
pub mod refine;
pub mod regressor;
pub mod registry;

pub use error::{Error, Result};
pub use ode::{integrate, step_dp54, SolverConfig, Trajectory};
pub use registry::{
    eval_rhs, list_models, sample_params, validate_params, ModelId, ModelSpec, ParamDescriptor,
    ParamVector,
};
