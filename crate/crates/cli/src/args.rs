//! Flag definitions and the config-file merge.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};
use epinv_core::dataset::Split;
use epinv_core::regressor::Precision;
use epinv_core::ModelId;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "epinv", version, about = "Simulate compartmental epidemic models and infer their parameters from trajectories")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Seed for every random choice made by the command
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads, 0 for one per core; outputs do not depend on it
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// key=value file supplying defaults for this command's flags; `#` starts a comment [default: none]
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the registered models, or print one model's card
    Models(ModelsArgs),
    /// Integrate one model and write the trajectory as JSON
    Simulate(SimulateArgs),
    /// Generate a train/val/test dataset container
    Generate(GenerateArgs),
    /// Train the sequence regressor on a dataset
    Train(TrainArgs),
    /// Estimate the parameters of one trajectory with trained weights
    Infer(InferArgs),
    /// Refine a parameter estimate against one trajectory with a physics-informed surrogate
    Refine(RefineArgs),
    /// Score trained weights on a dataset split
    Eval(EvalArgs),
    /// Write SVG and CSV plots of one trajectory or an overlay of two
    Plot(PlotArgs),
    /// Generate, train and evaluate in one call
    Pipeline(PipelineArgs),
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Models(a) => &a.common,
            Command::Simulate(a) => &a.common,
            Command::Generate(a) => &a.common,
            Command::Train(a) => &a.common,
            Command::Infer(a) => &a.common,
            Command::Refine(a) => &a.common,
            Command::Eval(a) => &a.common,
            Command::Plot(a) => &a.common,
            Command::Pipeline(a) => &a.common,
        }
    }
}

#[derive(Debug, Args)]
pub struct ModelsArgs {
    /// Print the card of this model instead of the list [default: none]
    #[arg(long)]
    pub id: Option<ModelId>,
    /// Emit JSON instead of text
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub common: Common,
}

/// Grid overrides shared by `simulate`, `generate` and `pipeline`.
#[derive(Debug, Args, Clone)]
pub struct GridArgs {
    /// Time horizon [default: the model's own]
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Number of grid samples [default: the model's own]
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "covid")]
    pub model: ModelId,
    /// Comma-separated parameter values in registry order [default: box midpoint]
    #[arg(long, value_delimiter = ',')]
    pub params: Option<Vec<f64>>,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Output trajectory JSON
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Clone)]
pub struct SplitArgs {
    #[arg(long, default_value = "covid")]
    pub model: ModelId,
    /// Training examples
    #[arg(long = "train", default_value_t = 2000)]
    pub n_train: usize,
    /// Validation examples
    #[arg(long = "val", default_value_t = 200)]
    pub n_val: usize,
    /// Test examples
    #[arg(long = "test", default_value_t = 200)]
    pub n_test: usize,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    /// Output dataset container
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

/// Regressor size and schedule, shared by `train` and `pipeline`.
#[derive(Debug, Args, Clone)]
pub struct FitArgs {
    /// LSTM hidden width
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// Training epochs
    #[arg(long, default_value_t = 3000)]
    pub epochs: usize,
    /// Initial learning rate
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Epochs between 10x learning-rate decays [default: a third of --epochs]
    #[arg(long)]
    pub decay_every: Option<usize>,
    /// Mini-batch size [default: the whole training split]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Arithmetic of the training passes
    #[arg(long, default_value = "f32")]
    pub precision: Precision,
    /// Epochs between validation-loss log entries
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
    /// Long schedule: hidden 256, 60000 epochs, decay every 20000
    #[arg(long, conflicts_with_all = ["hidden", "epochs", "decay_every"])]
    pub full_scale: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset container
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Output weights container
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Training-log CSV [default: <out>.log.csv]
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Weights container
    #[arg(long, value_name = "FILE")]
    pub weights: PathBuf,
    /// Trajectory JSON
    #[arg(long, value_name = "FILE")]
    pub traj: PathBuf,
    /// Parameter JSON output [default: stdout only]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

/// Surrogate size and optimizer settings for refinement.
#[derive(Debug, Args, Clone)]
pub struct RefineOpts {
    /// Joint optimization steps
    #[arg(long, default_value_t = 20_000)]
    pub steps: usize,
    /// Data-only steps before the joint phase
    #[arg(long, default_value_t = 2000)]
    pub prefit: usize,
    /// Refinement learning rate
    #[arg(long = "refine-lr", default_value_t = 1e-3)]
    pub refine_lr: f64,
    /// Hidden layers of the surrogate
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    /// Units per surrogate layer
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Collocation points [default: the trajectory's sample count]
    #[arg(long)]
    pub collocation: Option<usize>,
    /// Weight of the data term
    #[arg(long, default_value_t = 1.0)]
    pub w_data: f64,
    /// Weight of the physics residual
    #[arg(long, default_value_t = 1.0)]
    pub w_phys: f64,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    /// Trajectory JSON
    #[arg(long, value_name = "FILE")]
    pub traj: PathBuf,
    /// Initial parameters as JSON, e.g. the output of `infer` [default: none]
    #[arg(long, value_name = "FILE", conflicts_with = "init_values", required_unless_present = "init_values")]
    pub init: Option<PathBuf>,
    /// Initial parameters, comma-separated [default: none]
    #[arg(long, value_delimiter = ',')]
    pub init_values: Option<Vec<f64>>,
    /// Take the state scaling from this dataset [default: the trajectory's own range]
    #[arg(long, value_name = "FILE", conflicts_with = "weights")]
    pub data: Option<PathBuf>,
    /// Take the state scaling from these weights [default: the trajectory's own range]
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    #[command(flatten)]
    pub opts: RefineOpts,
    /// Refined parameter JSON [default: stdout only]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Per-step loss CSV [default: none]
    #[arg(long, value_name = "FILE")]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Weights container
    #[arg(long, value_name = "FILE")]
    pub weights: PathBuf,
    /// Dataset container
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Split to score: train, val or test
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Score only the first N examples [default: all]
    #[arg(long)]
    pub tasks: Option<usize>,
    /// Also refine every estimate and score the refined values
    #[arg(long)]
    pub refine: bool,
    #[command(flatten)]
    pub opts: RefineOpts,
    /// Report JSON for the regressor estimates [default: none]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Report JSON for the refined estimates [default: none]
    #[arg(long, value_name = "FILE", requires = "refine")]
    pub refined_out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Trajectory JSON
    #[arg(long, value_name = "FILE")]
    pub traj: PathBuf,
    /// Second trajectory JSON drawn over the first [default: none]
    #[arg(long, value_name = "FILE", conflicts_with = "resim")]
    pub overlay: Option<PathBuf>,
    /// Parameter JSON to re-simulate on the same grid and draw over the first [default: none]
    #[arg(long, value_name = "FILE")]
    pub resim: Option<PathBuf>,
    /// Channel labels to plot, comma-separated [default: all]
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<String>>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Output directory for dataset, weights, training log and report
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

/// Location of `--config` in raw arguments, if any.
fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(2);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

fn given_on_command_line(argv: &[OsString], long: &str) -> bool {
    let flag = format!("--{long}");
    let with_value = format!("--{long}=");
    argv.iter().skip(2).any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&with_value)
    })
}

#[derive(Debug)]
pub enum ParseError {
    Clap(clap::Error),
    /// The config file could not be read.
    Config(CliError),
}

impl From<clap::Error> for ParseError {
    fn from(e: clap::Error) -> Self {
        ParseError::Clap(e)
    }
}

/// Inserts values from the `--config` file for every flag not given on the
/// command line, then parses.
pub fn parse(argv: Vec<OsString>) -> Result<Cli, ParseError> {
    let Some(path) = config_path(&argv) else {
        return Ok(Cli::try_parse_from(argv)?);
    };
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) => return Err(ParseError::Config(CliError::io(&path, e))),
    };
    let root = Cli::command();
    let name = argv.get(1).map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let Some(sub) = root.find_subcommand(&name) else {
        return Ok(Cli::try_parse_from(argv)?);
    };
    let mut sub = sub.clone();
    sub.build();
    let mut extra: Vec<OsString> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(usage_error(format!("{}:{}: expected key=value", path.display(), lineno + 1)));
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim();
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            return Err(usage_error(format!(
                "{}:{}: unknown key `{key}` for `{name}`",
                path.display(),
                lineno + 1
            )));
        };
        if key == "config" {
            return Err(usage_error(format!("{}:{}: a config file cannot name another", path.display(), lineno + 1)));
        }
        let overridden = given_on_command_line(&argv, &key)
            || sub
                .get_arg_conflicts_with(arg)
                .iter()
                .filter_map(|a| a.get_long())
                .any(|l| given_on_command_line(&argv, l));
        if overridden {
            continue;
        }
        if arg.get_action().takes_values() {
            extra.push(format!("--{key}").into());
            extra.push(value.into());
        } else {
            match value {
                "true" => extra.push(format!("--{key}").into()),
                "false" => {}
                _ => {
                    return Err(usage_error(format!(
                        "{}:{}: `{key}` takes true or false",
                        path.display(),
                        lineno + 1
                    )))
                }
            }
        }
    }
    let mut merged = argv[..2].to_vec();
    merged.extend(extra);
    merged.extend_from_slice(&argv[2..]);
    Ok(Cli::try_parse_from(merged)?)
}

fn usage_error(msg: String) -> ParseError {
    ParseError::Clap(Cli::command().error(clap::error::ErrorKind::InvalidValue, msg))
}

