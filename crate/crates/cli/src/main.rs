use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hinfopt_cli::config::{self, set_override, task_name, Task};
use hinfopt_cli::{init_threads, run_experiment, CliError};
use serde_json::{json, Value};

/// Static output-feedback H-infinity policy optimization experiments.
#[derive(Debug, Parser)]
#[command(name = "hinfopt", version)]
struct Args {
    task: Task,
    /// Builtin plant for `reproduce` (shorthand for --plant).
    target: Option<String>,
    /// JSON config file; flags below override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (`output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    plant: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Iteration horizon (`T`).
    #[arg(long = "T", alias = "horizon")]
    horizon: Option<usize>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

fn load(args: &Args) -> Result<Value, CliError> {
    let mut v = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
            serde_json::from_str(&text).map_err(|e| CliError::Schema { pointer: String::new(), message: format!("invalid JSON: {e}") })?
        }
        None => json!({}),
    };
    set_override(&mut v, "task", json!(task_name(args.task)));
    if let Some(p) = args.plant.as_ref().or(args.target.as_ref()) {
        set_override(&mut v, "plant", json!(p));
    }
    let mut put = |key: &str, val: Option<Value>| {
        if let Some(val) = val {
            set_override(&mut v, key, val);
        }
    };
    put("output_dir", args.out.as_ref().map(|p| json!(p)));
    put("alpha", args.alpha.map(|x| json!(x)));
    put("T", args.horizon.map(|x| json!(x)));
    put("resolution", args.resolution.map(|x| json!(x)));
    put("gamma", args.gamma.map(|x| json!(x)));
    put("rho", args.rho.map(|x| json!(x)));
    put("seed", args.seed.map(|x| json!(x)));
    put("threads", args.threads.map(|x| json!(x)));
    Ok(v)
}

fn run(args: &Args) -> Result<Value, CliError> {
    let cfg = config::parse_config_value(&load(args)?)?;
    init_threads(cfg.threads)?;
    let report = run_experiment(&cfg)?;
    Ok(json!({
        "task": report.task,
        "output_dir": report.config.output_dir,
        "wall_time_s": report.wall_time_s,
        "results": report.results,
    }))
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
