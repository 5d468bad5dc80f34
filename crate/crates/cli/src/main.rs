//! Experiment driver for the splitting-scheme library.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical divergence
//! (partial CSV is flushed), 4 solver failure.

mod config;
mod emit;
mod expr;
mod runner;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Parser, Subcommand};

use config::{ConfigError, ExperimentConfig};
use emit::{OrderSummary, Summary};
use runner::Experiment;

/// Environment variable capping batch concurrency.
const THREADS_ENV: &str = "SPLITKIT_THREADS";

#[derive(Parser)]
#[command(
    name = "splitkit",
    about = "Run operator-splitting experiments on the parabolic model problem",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Directory that relative output paths resolve against
    /// (default: the config file's directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the seed of RANDOM initial data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress status lines on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    /// Measure wall-clock time per step. Timing entries are zeroed by
    /// default so that identical runs are byte-identical.
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config.
    Run { config: PathBuf },
    /// Run every *.json config in a directory (concurrently).
    Suite { dir: PathBuf },
    /// Run one experiment plus its step-halving order ladder.
    Orders { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Run { config } => run_one(config, &cli, false),
        Command::Orders { config } => run_one(config, &cli, true),
        Command::Suite { dir } => run_suite(dir, &cli),
    };
    ExitCode::from(code)
}

fn status(cli: &Cli, message: &str) {
    if !cli.quiet {
        println!("{message}");
    }
}

fn run_one(config_path: &Path, cli: &Cli, with_orders: bool) -> u8 {
    match execute(config_path, cli, with_orders) {
        Ok(summary_line) => {
            status(cli, &summary_line);
            0
        }
        Err(code_and_message) => {
            eprintln!("{}: {}", config_path.display(), code_and_message.1);
            code_and_message.0
        }
    }
}

fn resolve_output(base: &Path, cli: &Cli, relative: &str) -> PathBuf {
    let p = Path::new(relative);
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match &cli.out {
        Some(out) => out.join(p),
        None => base.join(p),
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), (u8, String)> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| (2u8, format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    let mut file = std::fs::File::create(path)
        .map_err(|e| (2u8, format!("cannot create {}: {e}", path.display())))?;
    file.write_all(bytes)
        .and_then(|_| file.flush())
        .map_err(|e| (2u8, format!("cannot write {}: {e}", path.display())))
}

/// Run a single config; returns a one-line status or (exit code, message).
fn execute(config_path: &Path, cli: &Cli, with_orders: bool) -> Result<String, (u8, String)> {
    let config = ExperimentConfig::load(config_path).map_err(|e| {
        let code = match e {
            ConfigError::Io(_) | ConfigError::Parse(_) | ConfigError::Invalid { .. } => 2u8,
        };
        (code, e.to_string())
    })?;
    let base_dir = config_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    let experiment =
        Experiment::build(&config, cli.seed).map_err(|e| (e.exit_code() as u8, e.to_string()))?;

    let (result, failure) = match experiment.run(cli.timing) {
        Ok(result) => (result, None),
        Err((partial, failure)) => (partial, Some(failure)),
    };

    // The CSV is flushed even when the run diverged.
    if let Some(csv_rel) = &config.output.csv {
        let path = resolve_output(&base_dir, cli, csv_rel);
        write_bytes(&path, emit::emit_table(&result.records).as_bytes())?;
    }

    if let Some(failure) = failure {
        let code = failure.exit_code() as u8;
        return Err((code, failure.to_string()));
    }

    let order = if with_orders {
        let levels = config.orders.map_or(5, |o| o.levels);
        let estimate = experiment
            .order_study(levels)
            .map_err(|e| (e.exit_code() as u8, e.to_string()))?;
        Some(OrderSummary::from(&estimate))
    } else {
        None
    };

    let summary = Summary::from_records(
        experiment.scheme_label(),
        experiment.sigma(),
        experiment.tau(),
        &result.records,
        order,
    );
    if let Some(summary_rel) = &config.output.summary {
        let path = resolve_output(&base_dir, cli, summary_rel);
        write_bytes(&path, &summary.to_json_bytes())?;
    }

    let mut line = format!(
        "{}: {} steps, terminal |y| = {:.6e}",
        config_path.display(),
        experiment.steps(),
        summary.terminal_norm_identity,
    );
    if let Some(order) = &summary.order {
        match order.slope {
            Some(slope) => line.push_str(&format!(", order slope {slope:.3}")),
            None => line.push_str(", order saturated"),
        }
    }
    Ok(line)
}

fn thread_cap() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

fn run_suite(dir: &Path, cli: &Cli) -> u8 {
    let mut configs: Vec<PathBuf> = match std::fs::read_dir(dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
            .collect(),
        Err(e) => {
            eprintln!("cannot read {}: {e}", dir.display());
            return 2;
        }
    };
    configs.sort();
    if configs.is_empty() {
        eprintln!("no *.json configs in {}", dir.display());
        return 2;
    }

    let workers = thread_cap().min(configs.len());
    let queue = Mutex::new(configs.into_iter());
    let results: Mutex<Vec<(PathBuf, u8, String)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let Some(path) = queue.lock().unwrap().next() else {
                    break;
                };
                let outcome = match execute(&path, cli, false) {
                    Ok(line) => (path, 0u8, line),
                    Err((code, message)) => (path, code, message),
                };
                results.lock().unwrap().push(outcome);
            });
        }
    });

    let mut results = results.into_inner().unwrap();
    results.sort_by(|a, b| a.0.cmp(&b.0));
    let mut worst = 0u8;
    for (path, code, message) in &results {
        if *code == 0 {
            status(cli, message);
        } else {
            eprintln!("{}: exit {code}: {message}", path.display());
        }
        worst = worst.max(*code);
    }
    worst
}
