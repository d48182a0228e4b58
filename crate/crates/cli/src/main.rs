//! Experiment runner, geometry self-test and report emitter.
//!
//! Exit codes: 0 on success, 1 on runtime or property failure, 2 on usage or
//! config errors (clap uses 2 for bad arguments as well).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hypc2f::c2f::{average_accuracy, per_session_rates, RunHistory};
use hypc2f::experiment::{run_experiment, ExperimentConfig};
use hypc2f::selftest::{run_selftest, SelftestOptions};

#[derive(Parser)]
#[command(
    name = "hypc2f",
    about = "Poincare-ball coarse-to-fine few-shot class-incremental learning runner",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment from a JSON config and write history.json /
    /// history.csv.
    Run {
        /// Path to the experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the geometry / stats / gradient invariant suites.
    Selftest {
        /// Run every curvature-dependent suite at this single curvature.
        #[arg(long)]
        curvature: Option<f64>,
        /// Scale factor applied to every tolerance (must be positive).
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Recompute the metrics of a stored history and print its table.
    Report {
        /// Path to a history.json produced by `run`.
        history: PathBuf,
    },
}

enum Failure {
    /// Bad usage or config: exit 2.
    Usage(String),
    /// Runtime or property failure: exit 1.
    Runtime(String),
}

impl Failure {
    fn exit(self) -> ExitCode {
        match self {
            Failure::Usage(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(2)
            }
            Failure::Runtime(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(1)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, out } => cmd_run(&config, seed, out.as_deref()),
        Command::Selftest { curvature, tol } => cmd_selftest(curvature, tol),
        Command::Report { history } => cmd_report(&history),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.exit(),
    }
}

fn print_history_table(history: &RunHistory) {
    let (fine, coarse) = per_session_rates(history);
    let dash = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    println!("session  acc_coarse  acc_fine  acc_total  avg_acc  f_fine  f_coarse");
    for (n, r) in history.sessions.iter().enumerate() {
        println!(
            "{:<7}  {:<10.4}  {:<8.4}  {:<9.4}  {:<7.4}  {:<6}  {:<8}",
            r.session,
            r.acc_coarse,
            r.acc_fine,
            r.acc_total,
            average_accuracy(history, n),
            dash(fine[n]),
            dash(coarse[n]),
        );
    }
    let last = history.sessions.last().expect("non-empty history");
    println!(
        "summary: base coarse {:.4} | final fine {:.4} | average {:.4} | forgetting {}",
        history.sessions[0].acc_coarse,
        last.acc_fine,
        history.avg_acc,
        history
            .forgetting
            .map(|f| format!("{f:.4}"))
            .unwrap_or_else(|| "n/a".into()),
    );
}

/// Write both output files under temporary names first, then rename; a
/// failure part-way leaves no partial outputs behind.
fn write_outputs(dir: &Path, history: &RunHistory) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let json = history
        .to_json()
        .map_err(|e| Failure::Runtime(format!("serializing history: {e}")))?;
    let csv = history.to_csv();

    let json_tmp = dir.join("history.json.tmp");
    let csv_tmp = dir.join("history.csv.tmp");
    let io = |e: std::io::Error| Failure::Runtime(format!("writing outputs: {e}"));
    fs::write(&json_tmp, json).map_err(io)?;
    fs::write(&csv_tmp, csv).map_err(io)?;
    fs::rename(&json_tmp, dir.join("history.json")).map_err(io)?;
    fs::rename(&csv_tmp, dir.join("history.csv")).map_err(io)?;
    Ok(())
}

fn cmd_run(config_path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<(), Failure> {
    let text = fs::read_to_string(config_path).map_err(|e| {
        Failure::Usage(format!("cannot read config {}: {e}", config_path.display()))
    })?;
    let mut config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("invalid config: {e}")))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(o) = out {
        config.out_dir = Some(o.display().to_string());
    }
    config
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;

    let history = run_experiment(&config).map_err(|e| Failure::Runtime(e.to_string()))?;
    let out_dir = config
        .out_dir
        .as_deref()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    write_outputs(&out_dir, &history)?;
    print_history_table(&history);
    println!(
        "wrote {} and {}",
        out_dir.join("history.json").display(),
        out_dir.join("history.csv").display()
    );
    Ok(())
}

fn cmd_selftest(curvature: Option<f64>, tol: Option<f64>) -> Result<(), Failure> {
    let mut opts = SelftestOptions::default();
    if let Some(c) = curvature {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Failure::Usage(format!(
                "--curvature must be positive and finite, got {c}"
            )));
        }
        opts.curvatures = vec![c];
    }
    if let Some(t) = tol {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Failure::Usage(format!(
                "--tol must be positive and finite, got {t}"
            )));
        }
        opts.tol_scale = t;
    }
    let reports = run_selftest(&opts);
    let mut failures = Vec::new();
    for r in &reports {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        println!("{tag}: {} -- {}", r.name, r.detail);
        if !r.passed {
            failures.push(r.name);
        }
    }
    if failures.is_empty() {
        println!("all {} properties passed", reports.len());
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "{} of {} properties failed: {}",
            failures.len(),
            reports.len(),
            failures.join(", ")
        )))
    }
}

fn cmd_report(path: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let history = RunHistory::from_json(&text)
        .map_err(|e| Failure::Usage(format!("schema mismatch: {e}")))?;
    history
        .validate_structure()
        .map_err(|e| Failure::Usage(format!("schema mismatch: {e}")))?;
    // recomputed metrics must agree with the stored ones
    history
        .validate_consistency(1e-9)
        .map_err(|e| Failure::Runtime(format!("stale history: {e}")))?;
    print_history_table(&history);
    Ok(())
}
