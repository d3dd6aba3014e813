//! The registered compartmental disease models.
//!
//! Each [`ModelSpec`] bundles the compartment labels, the estimated
//! parameters with their sampling boxes, the fixed constants, and the
//! default initial state and output grid. Parameter and state order is
//! fixed here and every serialized vector follows it.

mod equations;

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dual::Real;
use crate::error::{check_dim, check_finite, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    Covid,
    Hiv,
    Smallpox,
    Tuberculosis,
    Pneumonia,
    Dengue,
    Ebola,
    Anthrax,
    Polio,
    Measles,
    Zika,
}

impl ModelId {
    /// Registry order.
    pub const ALL: [ModelId; 11] = [
        ModelId::Covid,
        ModelId::Hiv,
        ModelId::Smallpox,
        ModelId::Tuberculosis,
        ModelId::Pneumonia,
        ModelId::Dengue,
        ModelId::Ebola,
        ModelId::Anthrax,
        ModelId::Polio,
        ModelId::Measles,
        ModelId::Zika,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::Covid => "covid",
            ModelId::Hiv => "hiv",
            ModelId::Smallpox => "smallpox",
            ModelId::Tuberculosis => "tuberculosis",
            ModelId::Pneumonia => "pneumonia",
            ModelId::Dengue => "dengue",
            ModelId::Ebola => "ebola",
            ModelId::Anthrax => "anthrax",
            ModelId::Polio => "polio",
            ModelId::Measles => "measles",
            ModelId::Zika => "zika",
        }
    }

    pub(crate) fn code(self) -> u32 {
        ModelId::ALL.iter().position(|&m| m == self).unwrap() as u32
    }

    pub fn spec(self) -> &'static ModelSpec {
        &registry()[self.code() as usize]
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        ModelId::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == lower)
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamDescriptor {
    /// ASCII identifier used on the command line and in files.
    pub name: String,
    /// Display symbol.
    pub symbol: String,
    pub range_lo: f64,
    pub range_hi: f64,
    /// Set when the benchmark ground truth for this parameter is exactly 0.
    pub zero_true: bool,
}

impl ParamDescriptor {
    fn new(name: &str, symbol: &str, range_lo: f64, range_hi: f64) -> Self {
        ParamDescriptor {
            name: name.to_string(),
            symbol: symbol.to_string(),
            range_lo,
            range_hi,
            zero_true: false,
        }
    }

    fn zero_true(mut self) -> Self {
        self.zero_true = true;
        self
    }

    pub fn width(&self) -> f64 {
        self.range_hi - self.range_lo
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.range_lo && v <= self.range_hi
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: ModelId,
    pub tier: u8,
    pub state_labels: Vec<String>,
    pub params: Vec<ParamDescriptor>,
    pub constants: Vec<(String, f64)>,
    pub y0_default: Vec<f64>,
    pub t_horizon: f64,
    pub n_samples: usize,
    /// How ambiguous published terms were read, if any.
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub model_id: ModelId,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn new(model_id: ModelId, values: Vec<f64>) -> Self {
        ParamVector { model_id, values }
    }
}

/// One row of [`list_models`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ModelSummary {
    pub model_id: ModelId,
    pub tier: u8,
    pub n_params: usize,
    pub n_states: usize,
}

/// A parameter outside its sampling box.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub index: usize,
    pub name: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = if self.value > self.hi { "above" } else { "below" };
        let bound = if self.value > self.hi { self.hi } else { self.lo };
        write!(f, "{} = {} {} {}", self.name, self.value, side, bound)
    }
}

impl ModelSpec {
    pub fn n_states(&self) -> usize {
        self.state_labels.len()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Copy with a different output grid.
    pub fn with_grid(&self, t_horizon: f64, n_samples: usize) -> ModelSpec {
        ModelSpec {
            t_horizon,
            n_samples,
            ..self.clone()
        }
    }

    /// Uniform output grid `t_k = k * T / (n - 1)`; the last point is `T` exactly.
    pub fn t_grid(&self) -> Vec<f64> {
        uniform_grid(self.t_horizon, self.n_samples)
    }

    fn constant_values(&self) -> Vec<f64> {
        self.constants.iter().map(|(_, v)| *v).collect()
    }

    /// Box midpoint.
    pub fn midpoint(&self) -> ParamVector {
        ParamVector::new(
            self.model_id,
            self.params
                .iter()
                .map(|p| 0.5 * (p.range_lo + p.range_hi))
                .collect(),
        )
    }

    /// Unchecked generic evaluation, shared by the solver and the refiner.
    pub(crate) fn rhs_generic<T: Real>(&self, y: &[T], p: &[T], consts: &[f64], dy: &mut [T]) {
        equations::rhs(self.model_id, y, p, consts, dy);
    }

    /// Returns a closure evaluating `dy/dt` for fixed parameters without
    /// per-call checks.
    pub(crate) fn vector_field<'a>(
        &'a self,
        params: &'a [f64],
    ) -> impl Fn(f64, &[f64], &mut [f64]) + 'a {
        let consts = self.constant_values();
        move |_t, y, dy| equations::rhs(self.model_id, y, params, &consts, dy)
    }
}

pub fn uniform_grid(t_horizon: f64, n_samples: usize) -> Vec<f64> {
    if n_samples == 1 {
        return vec![0.0];
    }
    let last = (n_samples - 1) as f64;
    (0..n_samples)
        .map(|k| {
            if k == n_samples - 1 {
                t_horizon
            } else {
                t_horizon * (k as f64) / last
            }
        })
        .collect()
}

pub fn registry() -> &'static [ModelSpec] {
    static REGISTRY: OnceLock<Vec<ModelSpec>> = OnceLock::new();
    REGISTRY.get_or_init(build_registry)
}

pub fn list_models() -> Vec<ModelSummary> {
    registry()
        .iter()
        .map(|m| ModelSummary {
            model_id: m.model_id,
            tier: m.tier,
            n_params: m.n_params(),
            n_states: m.n_states(),
        })
        .collect()
}

/// `dy/dt` at `state`.
pub fn eval_rhs(spec: &ModelSpec, state: &[f64], params: &ParamVector) -> Result<Vec<f64>> {
    check_params(spec, params)?;
    check_dim("state", spec.n_states(), state.len())?;
    check_finite("state", state)?;
    check_finite("parameters", &params.values)?;
    let mut dy = vec![0.0; spec.n_states()];
    spec.rhs_generic(state, &params.values, &spec.constant_values(), &mut dy);
    check_finite("derivative", &dy)?;
    Ok(dy)
}

/// Each value uniform on its descriptor's range, from a ChaCha8 stream.
pub fn sample_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = spec
        .params
        .iter()
        .map(|p| p.range_lo + p.width() * rng.gen::<f64>())
        .collect();
    ParamVector::new(spec.model_id, values)
}

/// Lists every value outside its (inclusive) range.
pub fn validate_params(
    spec: &ModelSpec,
    params: &ParamVector,
) -> Result<std::result::Result<(), Vec<Violation>>> {
    check_params(spec, params)?;
    let violations: Vec<Violation> = spec
        .params
        .iter()
        .zip(&params.values)
        .enumerate()
        .filter(|(_, (d, &v))| !d.contains(v))
        .map(|(index, (d, &value))| Violation {
            index,
            name: d.name.clone(),
            value,
            lo: d.range_lo,
            hi: d.range_hi,
        })
        .collect();
    Ok(if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    })
}

pub(crate) fn check_params(spec: &ModelSpec, params: &ParamVector) -> Result<()> {
    if params.model_id != spec.model_id {
        return Err(Error::Config(format!(
            "parameters for {} passed to {}",
            params.model_id, spec.model_id
        )));
    }
    check_dim("parameters", spec.n_params(), params.values.len())
}

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn consts(pairs: &[(&str, f64)]) -> Vec<(String, f64)> {
    pairs.iter().map(|(n, v)| (n.to_string(), *v)).collect()
}

type P = ParamDescriptor;

fn build_registry() -> Vec<ModelSpec> {
    vec![
        ModelSpec {
            model_id: ModelId::Covid,
            tier: 1,
            state_labels: labels(&["S", "I", "D", "R"]),
            params: vec![
                P::new("alpha", "α", 0.12, 0.52),
                P::new("beta", "β", 0.04, 0.06),
                P::new("gamma", "γ", 0.02, 0.04),
            ],
            constants: consts(&[("N", 1000.0)]),
            y0_default: vec![999.0, 1.0, 0.0, 0.0],
            t_horizon: 200.0,
            n_samples: 100,
            notes: vec!["state order S, I, D, R; beta is the recovery rate, gamma the death rate".into()],
        },
        ModelSpec {
            model_id: ModelId::Hiv,
            tier: 1,
            state_labels: labels(&["T", "I", "V"]),
            params: vec![
                P::new("s", "s", 5.0, 15.0),
                P::new("mu_T", "μ_T", 0.005, 0.045),
                P::new("mu_I", "μ_I", 0.05, 0.45),
                P::new("mu_b", "μ_b", 0.05, 0.45),
                P::new("mu_V", "μ_V", 2.0, 3.0),
                P::new("r", "r", 0.01, 0.05),
                P::new("N", "N", 225.0, 275.0),
                P::new("T_max", "T_max", 1400.0, 1600.0),
                P::new("k1", "k_1", 2e-5, 3e-5),
                P::new("k1_prime", "k_1′", 1.5e-5, 2.5e-5),
            ],
            constants: vec![],
            y0_default: vec![1000.0, 0.0, 1e-3],
            t_horizon: 200.0,
            n_samples: 100,
            notes: vec!["logistic growth term r T (1 - (T + I)/T_max), infection k1 V T outside it".into()],
        },
        ModelSpec {
            model_id: ModelId::Smallpox,
            tier: 2,
            state_labels: labels(&["S", "En", "Ei", "Ci", "I", "Q", "U", "V"]),
            params: vec![
                P::new("chi1", "χ_1", 0.04, 0.08),
                P::new("chi2", "χ_2", 0.02, 0.06),
                P::new("eps1", "ε_1", 0.75, 1.25),
                P::new("eps2", "ε_2", 0.1, 0.5),
                P::new("rho", "ρ", 0.9, 1.1),
                P::new("theta", "θ", 0.5, 1.5),
                P::new("alpha", "α", 0.02, 0.1),
                P::new("gamma", "γ", 0.05, 0.15),
            ],
            constants: consts(&[("beta", 1e-3), ("phi", 0.5)]),
            y0_default: vec![999.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            t_horizon: 100.0,
            n_samples: 100,
            notes: vec![
                "unnamed efficacy symbols read as eps1, eps2; chi_12 read as chi1 * eps2".into(),
                "contact rate beta and fraction phi are fixed constants".into(),
            ],
        },
        ModelSpec {
            model_id: ModelId::Tuberculosis,
            tier: 1,
            state_labels: labels(&["S", "L", "I", "T"]),
            params: vec![
                P::new("delta", "δ", 450.0, 550.0),
                P::new("beta", "β", 5.0, 25.0),
                P::new("c", "c", 0.3, 1.7),
                P::new("mu", "μ", 0.08, 0.22),
                P::new("k", "k", 0.05, 1.2),
                P::new("r1", "r_1", 0.5, 5.5),
                P::new("r2", "r_2", 0.4, 2.4),
                P::new("beta_prime", "β′", 5.0, 20.0),
                P::new("d", "d", -1.0, 1.0).zero_true(),
            ],
            constants: consts(&[("N", 1000.0)]),
            y0_default: vec![990.0, 0.0, 10.0, 0.0],
            t_horizon: 40.0,
            n_samples: 100,
            notes: vec![],
        },
        ModelSpec {
            model_id: ModelId::Pneumonia,
            tier: 2,
            state_labels: labels(&["S", "V", "C", "I", "R"]),
            params: vec![
                P::new("pi", "π", 0.005, 0.015),
                P::new("lambda", "λ", 0.05, 0.15),
                P::new("k", "k", 0.3, 0.7),
                P::new("chi_a", "χ_a", 0.0005, 0.0045),
                P::new("tau", "τ", 0.6, 1.2),
                P::new("phi", "φ", 0.0005, 0.0045),
                P::new("chi_b", "χ_b", 0.0005, 0.0015),
                P::new("p", "p", 0.1, 0.3),
                P::new("theta", "θ", 0.005, 0.011),
                P::new("mu", "μ", 0.005, 0.015),
                P::new("alpha", "α", 0.04, 0.08),
                P::new("rho", "ρ", 0.01, 0.09),
                P::new("beta", "β", 0.0085, 0.0145),
                P::new("eta", "η", 0.1, 0.3),
                P::new("q", "q", 0.3, 0.7),
                P::new("delta", "δ", 0.05, 0.15),
            ],
            constants: vec![],
            y0_default: vec![0.9, 0.05, 0.03, 0.02, 0.0],
            t_horizon: 100.0,
            n_samples: 100,
            notes: vec![
                "chi_a drives carrier-to-infected progression; chi_b, k and tau do not enter the equations".into(),
                "force of infection lambda is a free parameter".into(),
                "theta range read as (0.005, 0.011)".into(),
            ],
        },
        ModelSpec {
            model_id: ModelId::Dengue,
            tier: 1,
            state_labels: labels(&["Sb", "Eb", "Ib", "Rb", "Sv", "Ev", "Iv"]),
            params: vec![
                P::new("pi_b", "π_b", 5.0, 15.0),
                P::new("pi_v", "π_v", 25.0, 35.0),
                P::new("lambda_b", "λ_b", 0.01, 0.09),
                P::new("lambda_v", "λ_v", 0.01, 0.09),
                P::new("delta_b", "δ_b", 0.75, 1.25),
                P::new("delta_v", "δ_v", 0.04, 0.08),
                P::new("mu_b", "μ_b", 0.0175, 0.0225),
                P::new("mu_v", "μ_v", 0.006, 0.026),
                P::new("sigma_b", "σ_b", 0.4, 0.8),
                P::new("sigma_v", "σ_v", 0.05, 0.45),
                P::new("tau_b", "τ_b", 0.05, 0.15),
            ],
            constants: vec![],
            y0_default: vec![500.0, 10.0, 5.0, 0.0, 1000.0, 20.0, 10.0],
            t_horizon: 100.0,
            n_samples: 100,
            notes: vec![
                "exposed hosts leave at rate sigma_b + mu_b".into(),
                "vector infection flow is lambda_v Sv; delta_v is the infected-vector death rate".into(),
            ],
        },
        ModelSpec {
            model_id: ModelId::Ebola,
            tier: 1,
            state_labels: labels(&["S", "E", "I", "H", "F", "R"]),
            params: vec![
                P::new("beta1", "β_1", 3.0, 4.0),
                P::new("beta_h", "β_h", 0.005, 0.015),
                P::new("beta_f", "β_f", 0.3, 0.7),
                P::new("alpha", "α", 0.05, 0.15),
                P::new("gamma_h", "γ_h", 0.05, 0.45),
                P::new("theta1", "θ_1", 0.4, 0.8),
                P::new("gamma_i", "γ_i", 0.05, 0.15),
                P::new("delta1", "δ_1", 0.3, 0.9),
                P::new("gamma_d", "γ_d", 0.1, 0.3),
                P::new("delta2", "δ_2", 0.2, 0.8),
                P::new("gamma_f", "γ_f", 0.2, 0.8),
                P::new("gamma_ih", "γ_ih", 0.05, 0.15),
                P::new("gamma_dh", "γ_dh", 0.03, 0.12),
            ],
            constants: consts(&[("N", 1000.0)]),
            y0_default: vec![999.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            t_horizon: 100.0,
            n_samples: 100,
            notes: vec![],
        },
        ModelSpec {
            model_id: ModelId::Anthrax,
            tier: 1,
            state_labels: labels(&["S", "I", "A", "C"]),
            params: vec![
                P::new("r", "r", 0.002, 0.004),
                P::new("mu", "μ", 0.001, 0.002),
                P::new("kappa", "κ", 0.75, 1.25),
                P::new("eta_a", "η_a", 0.25, 0.75),
                P::new("eta_c", "η_c", 0.05, 0.15),
                P::new("eta_i", "η_i", 0.005, 0.015),
                P::new("tau", "τ", 0.05, 0.15),
                P::new("gamma", "γ", 0.05, 0.25),
                P::new("delta", "δ", 0.01, 0.11),
                P::new("K", "K", 75.0, 125.0),
                P::new("beta", "β", 0.001, 0.003),
                P::new("sigma", "σ", 0.05, 0.15),
            ],
            constants: vec![],
            y0_default: vec![90.0, 10.0, 0.0, 0.0],
            t_horizon: 100.0,
            n_samples: 100,
            notes: vec!["direct transmission eta_i S I / (S + I) enters I once".into()],
        },
        ModelSpec {
            model_id: ModelId::Polio,
            tier: 1,
            state_labels: labels(&["Sc", "Sa", "Ic", "Ia", "Rc", "Ra"]),
            params: vec![
                P::new("mu", "μ", 0.01, 0.03),
                P::new("alpha", "α", 0.25, 0.75),
                P::new("gamma_a", "γ_a", 10.0, 30.0),
                P::new("gamma_c", "γ_c", 20.0, 60.0),
                P::new("beta_aa", "β_aa", 25.0, 65.0),
                P::new("beta_cc", "β_cc", 75.0, 125.0),
                P::new("beta_ac", "β_ac", -0.5, 0.5).zero_true(),
                P::new("beta_ca", "β_ca", -0.5, 0.5).zero_true(),
            ],
            constants: consts(&[("N", 1.0), ("Nc", 0.04), ("Na", 0.96)]),
            y0_default: vec![0.039, 0.95, 0.001, 0.01, 0.0, 0.0],
            t_horizon: 2.0,
            n_samples: 100,
            notes: vec!["population fractions; time in years".into()],
        },
        ModelSpec {
            model_id: ModelId::Measles,
            tier: 1,
            state_labels: labels(&["S", "E", "I"]),
            params: vec![
                P::new("mu", "μ", 0.01, 0.03),
                P::new("beta1", "β_1", 0.15, 0.55),
                P::new("gamma", "γ", 75.0, 125.0),
                P::new("sigma", "σ", 20.0, 50.0),
            ],
            constants: consts(&[("N", 1000.0)]),
            y0_default: vec![900.0, 50.0, 50.0],
            t_horizon: 1.0,
            n_samples: 100,
            notes: vec![
                "beta1 is the constant contact rate".into(),
                "exposed leave at rate mu + sigma".into(),
            ],
        },
        ModelSpec {
            model_id: ModelId::Zika,
            tier: 2,
            state_labels: labels(&["Sb", "Eb", "Ib1", "Ib2", "Ab", "Rb", "Sv", "Ev", "Iv"]),
            params: vec![
                P::new("a", "a", 0.3, 0.7),
                P::new("b", "b", 0.2, 0.6),
                P::new("c", "c", 0.3, 0.7),
                P::new("eta", "η", 0.05, 0.15),
                P::new("beta", "β", 0.045, 0.055),
                P::new("kappa", "κ", 0.2, 1.0),
                P::new("tau", "τ", 0.1, 0.5),
                P::new("theta", "θ", 10.0, 30.0),
                P::new("m", "m", 3.0, 7.0),
                P::new("nu_b", "V_b", 0.175, 0.225),
                P::new("nu_v", "V_v", 7.5, 12.5),
                P::new("gamma_b1", "γ_b1", 0.1, 0.3),
                P::new("gamma_b2", "γ_b2", 0.03, 0.07),
                P::new("gamma_b", "γ_b", 0.12, 0.18),
                P::new("mu_v", "μ_v", 0.05, 0.09),
            ],
            constants: consts(&[("Nb", 1000.0)]),
            y0_default: vec![999.0, 0.0, 1.0, 0.0, 0.0, 0.0, 5000.0, 0.0, 0.0],
            t_horizon: 100.0,
            n_samples: 100,
            notes: vec![
                "vector population N_v = m * Nb with Nb constant".into(),
                "theta is a percentage: a fraction theta/100 of new human infections is exposed, the rest asymptomatic".into(),
                "vector exposure term includes Sv".into(),
            ],
        },
    ]
}
