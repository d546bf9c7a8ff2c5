use std::path::PathBuf;
use std::process::ExitCode;

use advsieve::config::{FilterSelection, RunConfig};
use advsieve::metrics::{format_table, UNDEFINED};
use advsieve::pipeline::{self, DetectorReport};
use advsieve::{Error, ErrorKind};
use clap::{Parser, Subcommand};

/// Craft adversarial digits and detect them with low-pass sieves.
#[derive(Debug, Parser)]
#[command(name = "advsieve", version)]
struct Cli {
    /// Run configuration file (`section.key = value` lines). Without it,
    /// defaults apply with paths relative to the working directory.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Detectors to run: dsg, dsm or both.
    #[arg(long, global = true, value_name = "KIND")]
    filter: Option<FilterSelection>,

    /// Confidence-drop threshold in (0, 1).
    #[arg(long, global = true, value_name = "REAL")]
    theta: Option<f64>,

    /// Overrides both the training seed and the attack/benchmark seed.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the classifier and save its parameters.
    Train,
    /// Attack the benign digits and write the corpus and benchmark.
    Attack,
    /// Reshuffle the saved corpus into the benchmark directory.
    BuildBench,
    /// Run the detectors over the benchmark and write verdicts and reports.
    Detect,
    /// Rescore saved verdicts at the configured threshold.
    Evaluate,
    /// Score the detectors at every threshold 0.05, 0.10, ..., 0.95.
    Sweep,
    /// Print the resolved configuration.
    ShowConfig,
}

fn exit_code(err: &Error) -> u8 {
    match err.kind() {
        ErrorKind::Validation => 1,
        ErrorKind::Input => 2,
        ErrorKind::Quality => 3,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::defaults(&std::env::current_dir().unwrap_or_else(|_| PathBuf::from("."))),
    };
    if let Some(filter) = cli.filter {
        cfg.detection.filter = filter;
    }
    if let Some(theta) = cli.theta {
        cfg.detection.theta = theta;
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
        cfg.attack.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_reports(reports: &[DetectorReport]) {
    for r in reports {
        let title = r.name.to_uppercase();
        println!("{}", format_table(&[(title.as_str(), &r.report)]));
    }
    for r in reports {
        let f1 = r.report.f1.map_or_else(|| UNDEFINED.to_string(), |f| f.rounded());
        println!("{} F1 = {f1}", r.name);
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli)?;
    match cli.command {
        Command::Train => {
            let s = pipeline::run_train(&cfg)?;
            println!("trained on {} images", s.train_size);
            println!("test accuracy = {}", s.test_accuracy);
            println!("parameters written to {}", s.params_path.display());
        }
        Command::Attack => {
            let s = pipeline::run_attack(&cfg)?;
            let rate = if s.attempted == 0 { 0.0 } else { s.succeeded as f64 / s.attempted as f64 };
            println!("attacks succeeded: {}/{} ({rate:.4})", s.succeeded, s.attempted);
            println!(
                "benchmark: {} samples ({} benign, {} adversarial) in {}",
                s.benchmark_len,
                s.benign,
                s.succeeded,
                cfg.paths.benchmark_dir.display()
            );
        }
        Command::BuildBench => {
            let bench = pipeline::run_build_bench(&cfg)?;
            println!("benchmark: {} samples in {}", bench.len(), cfg.paths.benchmark_dir.display());
        }
        Command::Detect => print_reports(&pipeline::run_detect(&cfg)?),
        Command::Evaluate => print_reports(&pipeline::run_evaluate(&cfg)?),
        Command::Sweep => {
            for sweep in pipeline::run_sweep(&cfg)? {
                println!("{}: theta, flagged, f1", sweep.kind);
                for (theta, report) in &sweep.points {
                    let m = report.matrix;
                    let f1 = report.f1.map_or_else(|| UNDEFINED.to_string(), |f| f.rounded());
                    println!("  {theta:.2}, {}, {f1}", m.tp + m.fp);
                }
            }
        }
        Command::ShowConfig => print!("{}", cfg.to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
