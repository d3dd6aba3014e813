//! The `epinv` command line: model cards, simulation, dataset generation,
//! training, inference, refinement, evaluation and plots.

pub mod args;
pub mod plot;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use epinv_core::dataset::{generate_dataset, load_dataset, save_dataset, Dataset, DatasetConfig, Example, NormStats};
use epinv_core::eval::{evaluate, EvalReport, TimingStats};
use epinv_core::refine::{refine, refine_many, RefineConfig, BOUNDARY_NUDGE};
use epinv_core::regressor::{infer, load_weights, save_weights, train_with_progress, RegressorConfig, TrainConfig, TrainedModel};
use epinv_core::{integrate, list_models, ModelId, ModelSpec, ParamVector, SolverConfig, Trajectory};
use rayon::prelude::*;

use args::{Command, ParseError, FitArgs, GridArgs, RefineOpts, SplitArgs};
use plot::{emit_plot, Series};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Core(#[from] epinv_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run(argv: Vec<OsString>) -> i32 {
    let cli = match args::parse(argv) {
        Ok(c) => c,
        Err(ParseError::Clap(e)) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
        Err(ParseError::Config(e)) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let jobs = cli.command.common().jobs;
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {jobs} worker threads: {e}");
            return EXIT_RUNTIME;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("run `epinv --help` for usage");
            }
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Models(a) => cmd_models(a.id, a.json),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Generate(a) => {
            let ds = build_dataset(&a.split, a.common.seed)?;
            save_dataset(&ds, &a.out)?;
            println!(
                "wrote {} ({} train / {} val / {} test, {} resampled)",
                a.out.display(),
                ds.train.len(),
                ds.val.len(),
                ds.test.len(),
                ds.resampled
            );
            Ok(())
        }
        Command::Train(a) => {
            let ds = load_dataset(&a.data)?;
            let log = a.log.clone().unwrap_or_else(|| suffixed(&a.out, ".log.csv"));
            let model = train_model(&ds, &a.fit, a.common.seed, &log)?;
            save_weights(&model, &a.out)?;
            println!("wrote {} and {}", a.out.display(), log.display());
            Ok(())
        }
        Command::Infer(a) => {
            let model = load_weights(&a.weights)?;
            let traj = read_trajectory(&a.traj)?;
            let est = infer(&model, &traj, traj.model_id.spec())?;
            print_params(traj.model_id.spec(), &est.params);
            println!("inference took {:.4} s", est.seconds);
            if let Some(out) = &a.out {
                write_json(out, &est.params)?;
            }
            Ok(())
        }
        Command::Refine(a) => cmd_refine(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Plot(a) => cmd_plot(a),
        Command::Pipeline(a) => {
            fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
            let ds = build_dataset(&a.split, a.common.seed)?;
            save_dataset(&ds, &a.out.join("dataset.bin"))?;
            let model = train_model(&ds, &a.fit, a.common.seed, &a.out.join("train_log.csv"))?;
            save_weights(&model, &a.out.join("weights.bin"))?;
            let (report, _) = score(&model, &ds, &ds.test)?;
            let path = a.out.join("report.json");
            fs::write(&path, report.to_json()?).map_err(|e| CliError::io(&path, e))?;
            print!("{}", report.render_table());
            println!("wrote {}", a.out.display());
            Ok(())
        }
    }
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_models(id: Option<ModelId>, json: bool) -> Result<()> {
    let Some(id) = id else {
        if json {
            println!("{}", serde_json::to_string_pretty(&list_models()).expect("plain data"));
            return Ok(());
        }
        println!("{:<14} {:>4} {:>7} {:>7}", "model", "tier", "states", "params");
        for m in list_models() {
            println!("{:<14} {:>4} {:>7} {:>7}", m.model_id.as_str(), m.tier, m.n_states, m.n_params);
        }
        return Ok(());
    };
    let spec = id.spec();
    if json {
        println!("{}", serde_json::to_string_pretty(spec).expect("plain data"));
        return Ok(());
    }
    println!("{} (tier {})", spec.model_id, spec.tier);
    println!("states: {}", spec.state_labels.join(", "));
    println!("initial state: {:?}", spec.y0_default);
    println!("grid: {} samples over [0, {}]", spec.n_samples, spec.t_horizon);
    println!("parameters:");
    for p in &spec.params {
        println!(
            "  {:<10} {:<6} ({}, {}){}",
            p.name,
            p.symbol,
            p.range_lo,
            p.range_hi,
            if p.zero_true { "  benchmark value 0, scored by MAE" } else { "" }
        );
    }
    if !spec.constants.is_empty() {
        println!("constants:");
        for (n, v) in &spec.constants {
            println!("  {n} = {v}");
        }
    }
    for n in &spec.notes {
        println!("note: {n}");
    }
    Ok(())
}

fn grid_spec(model: ModelId, grid: &GridArgs) -> ModelSpec {
    let base = model.spec();
    base.with_grid(grid.horizon.unwrap_or(base.t_horizon), grid.samples.unwrap_or(base.n_samples))
}

fn cmd_simulate(a: args::SimulateArgs) -> Result<()> {
    let spec = grid_spec(a.model, &a.grid);
    let params = match a.params {
        Some(v) => ParamVector::new(a.model, v),
        None => spec.midpoint(),
    };
    let traj = integrate(&spec, &params, &spec.y0_default, &SolverConfig::default())?;
    write_json(&a.out, &traj)?;
    println!("wrote {} ({} samples)", a.out.display(), traj.n_samples());
    Ok(())
}

fn build_dataset(s: &SplitArgs, seed: u64) -> Result<Dataset> {
    let mut cfg = DatasetConfig::new(s.model, s.n_train, s.n_val, s.n_test, seed);
    cfg.t_horizon = s.grid.horizon;
    cfg.n_samples = s.grid.samples;
    Ok(generate_dataset(&cfg)?)
}

fn train_model(ds: &Dataset, fit: &FitArgs, seed: u64, log: &Path) -> Result<TrainedModel> {
    let spec = ds.config.spec();
    let (hidden, epochs, decay_every) = if fit.full_scale {
        (256, 60_000, 20_000)
    } else {
        (fit.hidden, fit.epochs, fit.decay_every.unwrap_or((fit.epochs / 3).max(1)))
    };
    let rc = RegressorConfig::for_model(&spec, hidden, seed);
    let tc = TrainConfig {
        lr_init: fit.lr,
        epochs,
        decay_every,
        batch: fit.batch,
        seed,
        log_every: fit.log_every,
        precision: fit.precision,
        ..TrainConfig::default()
    };
    let (model, history) = train_with_progress(ds, &rc, &tc, |e| {
        eprintln!(
            "epoch {:>6}  train {:.4e}  val {:.4e}  lr {:.1e}  {:.0} s",
            e.epoch, e.train_loss, e.val_loss, e.lr, e.wall_clock_s
        );
    })?;
    fs::write(log, history.to_csv()).map_err(|e| CliError::io(log, e))?;
    Ok(model)
}

/// Regressor estimates for `examples` and their report, timings included.
fn score(model: &TrainedModel, ds: &Dataset, examples: &[Example]) -> Result<(EvalReport, Vec<ParamVector>)> {
    let spec = ds.config.spec();
    if model.norm.model_id != spec.model_id {
        return Err(CliError::Usage(format!(
            "weights are for {}, dataset is {}",
            model.norm.model_id, spec.model_id
        )));
    }
    let estimates = examples
        .par_iter()
        .map(|ex| infer(model, &ex.trajectory, &spec))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let pairs: Vec<_> = estimates.iter().zip(examples).map(|(e, ex)| (e.params.clone(), ex.params.clone())).collect();
    let mut report = evaluate(&pairs, &spec)?;
    let seconds: Vec<f64> = estimates.iter().map(|e| e.seconds).collect();
    report.timing = TimingStats::from_seconds(&seconds);
    Ok((report, estimates.into_iter().map(|e| e.params).collect()))
}

fn refine_config(o: &RefineOpts, seed: u64) -> Result<RefineConfig> {
    let cfg = RefineConfig {
        surrogate_depth: o.depth,
        surrogate_width: o.width,
        n_collocation: o.collocation,
        steps: o.steps,
        prefit_steps: o.prefit,
        lr: o.refine_lr,
        w_data: o.w_data,
        w_phys: o.w_phys,
        seed,
        ..RefineConfig::default()
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Moves values onto the inside of their sampling box so refinement can
/// start from them; regressor estimates may land slightly outside.
fn clamp_into_box(spec: &ModelSpec, p: &ParamVector) -> ParamVector {
    let values = p
        .values
        .iter()
        .zip(&spec.params)
        .map(|(&v, d)| {
            let margin = 1e3 * BOUNDARY_NUDGE * d.width();
            v.clamp(d.range_lo + margin, d.range_hi - margin)
        })
        .collect();
    ParamVector::new(p.model_id, values)
}

fn cmd_refine(a: args::RefineArgs) -> Result<()> {
    let traj = read_trajectory(&a.traj)?;
    let spec = traj.model_id.spec().with_grid(traj.t_horizon(), traj.n_samples());
    let init = match (&a.init, a.init_values) {
        (Some(path), _) => read_json::<ParamVector>(path)?,
        (None, Some(v)) => ParamVector::new(traj.model_id, v),
        (None, None) => return Err(CliError::Usage("one of --init or --init-values is required".into())),
    };
    let norm = match (&a.data, &a.weights) {
        (Some(p), _) => load_dataset(p)?.norm,
        (None, Some(p)) => load_weights(p)?.norm,
        (None, None) => NormStats::from_examples(
            &spec,
            &[Example {
                trajectory: traj.clone(),
                params: init.clone(),
            }],
        )?,
    };
    let cfg = refine_config(&a.opts, a.common.seed)?;
    let start = Instant::now();
    let r = refine(&spec, &traj, &init, &cfg, &norm)?;
    print_params(&spec, &r.params);
    println!(
        "best joint loss {:.4e} at step {}, {:.1} s",
        r.best_loss,
        r.best_step.map_or("none".to_string(), |s| s.to_string()),
        start.elapsed().as_secs_f64()
    );
    if let Some(step) = r.aborted_at {
        eprintln!("warning: non-finite loss at step {step}; returned the best values seen before it");
    }
    if let Some(out) = &a.out {
        write_json(out, &r.params)?;
    }
    if let Some(h) = &a.history {
        fs::write(h, r.history_csv()).map_err(|e| CliError::io(h, e))?;
    }
    Ok(())
}

fn cmd_eval(a: args::EvalArgs) -> Result<()> {
    let model = load_weights(&a.weights)?;
    let ds = load_dataset(&a.data)?;
    let all = ds.split(a.split);
    let examples = &all[..a.tasks.unwrap_or(all.len()).min(all.len())];
    if examples.is_empty() {
        return Err(CliError::Usage("no examples to score".into()));
    }
    let (report, estimates) = score(&model, &ds, examples)?;
    print!("{}", report.render_table());
    if let Some(out) = &a.out {
        fs::write(out, report.to_json()?).map_err(|e| CliError::io(out, e))?;
    }
    if a.refine {
        let spec = ds.config.spec();
        let cfg = refine_config(&a.opts, a.common.seed)?;
        let tasks: Vec<_> = examples
            .iter()
            .zip(&estimates)
            .map(|(ex, est)| (ex.trajectory.clone(), clamp_into_box(&spec, est)))
            .collect();
        let start = Instant::now();
        let refined = refine_many(&spec, &tasks, &cfg, &ds.norm)
            .into_iter()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let per_task = start.elapsed().as_secs_f64() / tasks.len() as f64;
        let pairs: Vec<_> = refined.iter().zip(examples).map(|(r, ex)| (r.params.clone(), ex.params.clone())).collect();
        let refined_report = evaluate(&pairs, &spec)?;
        println!("after refinement ({per_task:.1} s per task):");
        print!("{}", refined_report.render_table());
        if let Some(out) = &a.refined_out {
            fs::write(out, refined_report.to_json()?).map_err(|e| CliError::io(out, e))?;
        }
    }
    Ok(())
}

fn cmd_plot(a: args::PlotArgs) -> Result<()> {
    let traj = read_trajectory(&a.traj)?;
    let spec = traj.model_id.spec();
    let second = match (&a.overlay, &a.resim) {
        (Some(p), _) => Some(("overlay".to_string(), read_trajectory(p)?)),
        (None, Some(p)) => {
            let params: ParamVector = read_json(p)?;
            let grid_spec = spec.with_grid(traj.t_horizon(), traj.n_samples());
            let y0 = traj.row(0).to_vec();
            Some(("re-simulated".to_string(), integrate(&grid_spec, &params, &y0, &SolverConfig::default())?))
        }
        (None, None) => None,
    };
    let channels = match &a.channels {
        None => (0..traj.n_states).collect(),
        Some(names) => names
            .iter()
            .map(|n| {
                spec.state_labels
                    .iter()
                    .position(|l| l == n)
                    .ok_or_else(|| CliError::Usage(format!("{} has no channel `{n}`", spec.model_id)))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let mut series = vec![Series {
        label: if second.is_some() { "true".into() } else { String::new() },
        traj: &traj,
    }];
    if let Some((label, t)) = &second {
        if t.model_id != traj.model_id {
            return Err(CliError::Usage(format!("cannot overlay {} on {}", t.model_id, traj.model_id)));
        }
        series.push(Series { label: label.clone(), traj: t });
    }
    let files = emit_plot(&series, &channels, &spec.state_labels, &a.out)?;
    println!("wrote {} files to {}", files.len(), a.out.display());
    Ok(())
}

fn print_params(spec: &ModelSpec, p: &ParamVector) {
    for (d, v) in spec.params.iter().zip(&p.values) {
        println!("{:<10} {v:.6e}", d.name);
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let t: Trajectory = read_json(path)?;
    t.validate()?;
    Ok(t)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("plain data");
    s.push('\n');
    fs::write(path, s).map_err(|e| CliError::io(path, e))
}
