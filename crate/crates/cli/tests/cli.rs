use std::ffi::OsString;
use std::fs;
use std::path::Path;

use clap::CommandFactory;
use epinv::args::Cli;
use epinv::{read_trajectory, run, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};

fn epinv(args: &[&str]) -> i32 {
    let argv: Vec<OsString> = std::iter::once("epinv").chain(args.iter().copied()).map(OsString::from).collect();
    run(argv)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn models_and_cards() {
    assert_eq!(epinv(&["models"]), EXIT_OK);
    assert_eq!(epinv(&["models", "--id", "covid"]), EXIT_OK);
    assert_eq!(epinv(&["models", "--id", "zika", "--json"]), EXIT_OK);
    assert_eq!(epinv(&["models", "--id", "flu"]), EXIT_USAGE);
}

#[test]
fn help_lists_every_flag_with_a_default() {
    let mut root = Cli::command();
    root.build();
    for sub in root.get_subcommands() {
        let help = sub.clone().render_long_help().to_string();
        for arg in sub.get_arguments() {
            let Some(long) = arg.get_long() else { continue };
            assert!(help.contains(&format!("--{long}")), "{}: --{long} missing from help", sub.get_name());
            let optional = !arg.is_required_set() && arg.get_action().takes_values();
            if optional && long != "init" && long != "init-values" {
                let documented = !arg.get_default_values().is_empty()
                    || arg.get_help().is_some_and(|h| h.to_string().contains("[default:"));
                assert!(documented, "{}: --{long} has no documented default", sub.get_name());
            }
        }
    }
    assert_eq!(epinv(&["train", "--help"]), EXIT_OK);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(epinv(&[]), EXIT_USAGE);
    assert_eq!(epinv(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(epinv(&["generate", "--out", "x", "--bogus", "1"]), EXIT_USAGE);
    assert_eq!(epinv(&["train", "--data", "d", "--out", "w", "--full-scale", "--hidden", "8"]), EXIT_USAGE);
    assert_eq!(epinv(&["refine", "--traj", "t", "--init", "a.json", "--init-values", "0.2,0.05,0.03"]), EXIT_USAGE);
    assert_eq!(epinv(&["generate", "--out", "x", "--train", "many"]), EXIT_USAGE);
}

#[test]
fn conflict_message_names_both_flags() {
    let err = Cli::command()
        .try_get_matches_from(["epinv", "train", "--data", "d", "--out", "w", "--full-scale", "--epochs", "9"])
        .unwrap_err()
        .to_string();
    assert!(err.contains("--full-scale") && err.contains("--epochs"), "{err}");
}

#[test]
fn missing_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.json");
    assert_eq!(epinv(&["plot", "--traj", p(&missing), "--out", p(dir.path())]), EXIT_RUNTIME);
    assert_eq!(epinv(&["eval", "--weights", p(&missing), "--data", p(&missing)]), EXIT_RUNTIME);
    assert_eq!(epinv(&["generate", "--config", p(&missing), "--out", "x"]), EXIT_RUNTIME);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.cfg");
    fs::write(&cfg, "# small run\ntrain = 12\nval=4   # trailing comment\ntest=4\nseed=5\n\n").unwrap();
    let from_cfg = dir.path().join("a.bin");
    let explicit = dir.path().join("b.bin");
    let overridden = dir.path().join("c.bin");
    assert_eq!(epinv(&["generate", "--config", p(&cfg), "--out", p(&from_cfg)]), EXIT_OK);
    assert_eq!(
        epinv(&["generate", "--train", "12", "--val", "4", "--test", "4", "--seed", "5", "--out", p(&explicit)]),
        EXIT_OK
    );
    assert_eq!(fs::read(&from_cfg).unwrap(), fs::read(&explicit).unwrap());
    assert_eq!(epinv(&["generate", "--config", p(&cfg), "--seed", "6", "--out", p(&overridden)]), EXIT_OK);
    assert_ne!(fs::read(&from_cfg).unwrap(), fs::read(&overridden).unwrap());

    fs::write(&cfg, "hidden = 8\n").unwrap();
    assert_eq!(epinv(&["generate", "--config", p(&cfg), "--out", p(&from_cfg)]), EXIT_USAGE);
    fs::write(&cfg, "just words\n").unwrap();
    assert_eq!(epinv(&["generate", "--config", p(&cfg), "--out", p(&from_cfg)]), EXIT_USAGE);

    // A config value that conflicts with a command-line flag yields to it.
    fs::write(&cfg, "full-scale = true\n").unwrap();
    let err = epinv(&["train", "--config", p(&cfg), "--hidden", "8", "--data", p(&dir.path().join("none")), "--out", "w"]);
    assert_eq!(err, EXIT_RUNTIME, "should reach the missing dataset, not a usage error");
}

#[test]
fn simulate_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("t.json");
    assert_eq!(epinv(&["simulate", "--params", "0.191,0.05,0.029", "--out", p(&traj)]), EXIT_OK);
    let t = read_trajectory(&traj).unwrap();
    assert_eq!(t.n_samples(), 100);

    let out = dir.path().join("plots");
    assert_eq!(epinv(&["plot", "--traj", p(&traj), "--out", p(&out)]), EXIT_OK);
    for ch in ["S", "I", "D", "R"] {
        let csv = fs::read_to_string(out.join(format!("{ch}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 101);
        assert!(fs::read_to_string(out.join(format!("{ch}.svg"))).unwrap().starts_with("<svg"));
    }
    let all = fs::read_to_string(out.join("trajectory.svg")).unwrap();
    assert_eq!(all.matches("<polyline").count(), 4);
    assert_eq!(fs::read_to_string(out.join("trajectory.csv")).unwrap().lines().next().unwrap(), "t,S,I,D,R");

    // Same inputs, same bytes.
    let again = dir.path().join("plots2");
    assert_eq!(epinv(&["plot", "--traj", p(&traj), "--out", p(&again)]), EXIT_OK);
    for f in ["S.svg", "trajectory.svg", "trajectory.csv"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap());
    }

    // Overlay of a re-simulation with other parameters: two series per channel.
    let params = dir.path().join("p.json");
    fs::write(&params, r#"{"model_id":"covid","values":[0.25,0.05,0.03]}"#).unwrap();
    let ov = dir.path().join("overlay");
    assert_eq!(epinv(&["plot", "--traj", p(&traj), "--resim", p(&params), "--channels", "I", "--out", p(&ov)]), EXIT_OK);
    assert_eq!(fs::read_to_string(ov.join("I.svg")).unwrap().matches("<polyline").count(), 2);
    assert!(!ov.join("S.svg").exists());

    // Overlay on another grid is rejected.
    let short = dir.path().join("short.json");
    assert_eq!(epinv(&["simulate", "--samples", "50", "--out", p(&short)]), EXIT_OK);
    assert_eq!(epinv(&["plot", "--traj", p(&traj), "--overlay", p(&short), "--out", p(&ov)]), EXIT_RUNTIME);
    assert_eq!(epinv(&["plot", "--traj", p(&traj), "--channels", "Q", "--out", p(&ov)]), EXIT_USAGE);
}

#[test]
fn train_infer_refine_eval_chain() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.bin");
    let weights = dir.path().join("w.bin");
    let traj = dir.path().join("t.json");
    let est = dir.path().join("est.json");
    assert_eq!(epinv(&["generate", "--train", "24", "--val", "6", "--test", "6", "--seed", "2", "--out", p(&data)]), EXIT_OK);
    assert_eq!(
        epinv(&["train", "--data", p(&data), "--out", p(&weights), "--hidden", "8", "--epochs", "10", "--log-every", "5"]),
        EXIT_OK
    );
    let log = fs::read_to_string(dir.path().join("w.bin.log.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,val_loss,lr,wall_clock_s\n"));
    assert_eq!(log.lines().count(), 4);

    assert_eq!(epinv(&["simulate", "--params", "0.3,0.05,0.03", "--out", p(&traj)]), EXIT_OK);
    assert_eq!(epinv(&["infer", "--weights", p(&weights), "--traj", p(&traj), "--out", p(&est)]), EXIT_OK);
    let est_json = fs::read_to_string(&est).unwrap();
    assert!(est_json.contains("\"covid\""));

    let refined = dir.path().join("r.json");
    let history = dir.path().join("h.csv");
    let args = [
        "refine", "--traj", p(&traj), "--init-values", "0.31,0.051,0.031", "--weights", p(&weights), "--steps", "30",
        "--prefit", "10", "--width", "8", "--depth", "2", "--out", p(&refined), "--history", p(&history),
    ];
    assert_eq!(epinv(&args), EXIT_OK);
    assert_eq!(fs::read_to_string(&history).unwrap().lines().count(), 41);
    assert_eq!(
        epinv(&["refine", "--traj", p(&traj), "--init", p(&refined), "--steps", "5", "--prefit", "5", "--width", "8"]),
        EXIT_OK
    );
    assert_eq!(epinv(&["refine", "--traj", p(&traj), "--init-values", "0.31,0.051,0.031", "--width", "0"]), EXIT_USAGE);

    let report = dir.path().join("report.json");
    let refined_report = dir.path().join("refined.json");
    assert_eq!(
        epinv(&[
            "eval", "--weights", p(&weights), "--data", p(&data), "--out", p(&report), "--refine", "--tasks", "2",
            "--steps", "20", "--prefit", "10", "--width", "8", "--depth", "2", "--refined-out", p(&refined_report),
        ]),
        EXIT_OK
    );
    let r = epinv_core::eval::EvalReport::from_json(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r.n_tasks, 2);
    assert!(refined_report.exists());
    assert_eq!(epinv(&["eval", "--weights", p(&weights), "--data", p(&data), "--split", "holdout"]), EXIT_USAGE);
}

#[test]
fn pipeline_output_is_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let outs: Vec<_> = ["1", "2"]
        .iter()
        .map(|jobs| {
            let out = dir.path().join(format!("run{jobs}"));
            let args = [
                "pipeline", "--train", "40", "--val", "8", "--test", "8", "--hidden", "8", "--epochs", "6", "--batch", "16",
                "--seed", "9", "--jobs", jobs, "--out", p(&out),
            ];
            assert_eq!(epinv(&args), EXIT_OK);
            out
        })
        .collect();
    for f in ["report.json", "dataset.bin", "weights.bin"] {
        assert_eq!(fs::read(outs[0].join(f)).unwrap(), fs::read(outs[1].join(f)).unwrap(), "{f}");
    }
    assert!(outs[0].join("train_log.csv").exists());
}
