//! Scenario runner for constrained mechanical systems with variable-rank
//! constraints.
//!
//! Exit codes: 0 success, 2 invalid scenario or arguments, 3 crossing with
//! an indeterminate outgoing subspace, 4 integration failure.

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use nonholo::scenario::{
    apply_override, build_system, classify_csv, classify_grid, describe_outcome, jumps_csv,
    load_scenario, parse_grid, parse_sweep, probe, run_scenario, write_outputs, RunStatus,
    ScenarioFile,
};
use nonholo::transitions::CrossingOutcome;
use nonholo::Error;
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "nonholo",
    version,
    about = "Simulate mechanical systems with variable-rank linear constraints: \
             integrate between rank transitions, resolve momentum jumps, export CSV/JSON"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file: integrate, resolve crossings, apply impulses,
    /// write trajectory/jump/result files.
    Run {
        scenario: PathBuf,
        /// Directory for output files (default: the scenario's directory).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Fan out over a parameter: `dotted.path=start:stop:count` or
        /// `dotted.path=v1,v2,...`; runs execute on a worker pool with
        /// per-value output suffixes.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Tabulate rank and regular/singular classification over a grid.
    Classify {
        scenario: PathBuf,
        /// Grid spec, e.g. `x=-1:1:21,y=0.5`; every coordinate appears once.
        #[arg(long)]
        grid: String,
        /// Sampling radius (default: half the smallest grid step).
        #[arg(long)]
        radius: Option<f64>,
        /// Sampled directions per point (default: 4 * dim).
        #[arg(long)]
        samples: Option<usize>,
        /// Write the table to a CSV file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analyze a potential crossing at a point without integrating.
    JumpProbe {
        scenario: PathBuf,
        /// Crossing point, comma-separated coordinates.
        #[arg(long)]
        at: String,
        /// Incoming momentum covector, comma-separated components.
        #[arg(long)]
        p: String,
        /// Outgoing path `expr,expr,...` in `eps`; repeatable. Defaults to
        /// the scenario's [probe] paths, else ballistic continuation.
        #[arg(long = "path")]
        paths: Vec<String>,
        /// Write the resolved jump as a one-row CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run {
            scenario,
            out_dir,
            sweep,
        } => cmd_run(&scenario, out_dir.as_deref(), sweep.as_deref()),
        Command::Classify {
            scenario,
            grid,
            radius,
            samples,
            out,
        } => cmd_classify(&scenario, &grid, radius, samples, out.as_deref()),
        Command::JumpProbe {
            scenario,
            at,
            p,
            paths,
            out,
        } => cmd_probe(&scenario, &at, &p, &paths, out.as_deref()),
    }
}

fn scenario_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".to_string())
}

fn base_dir(path: &Path, out_dir: Option<&Path>) -> PathBuf {
    out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).to_path_buf())
}

fn status_code(status: &RunStatus) -> ExitCode {
    match status {
        RunStatus::Completed => ExitCode::SUCCESS,
        RunStatus::IndeterminateCrossing(_) => ExitCode::from(3),
        RunStatus::IntegrationFailure { .. } => ExitCode::from(4),
    }
}

fn run_one(sc: &ScenarioFile, path: &Path, dir: &Path, stem: &str) -> Result<RunStatus, Error> {
    let system = build_system(&sc.system)?;
    let result = run_scenario(sc)?;
    let written = write_outputs(sc, &system, &result, dir, stem)?;
    for w in &written {
        println!("wrote {}", w.display());
    }
    match &result.status {
        RunStatus::Completed => {
            let jumps = result.summary.counts.get("jumps").copied().unwrap_or(0);
            println!(
                "{}: {} segment(s), {} report(s), {} jump(s), max drift {:.3e}",
                path.display(),
                result.segments.len(),
                result.reports.len(),
                jumps,
                result.summary.max_drift
            );
        }
        RunStatus::IndeterminateCrossing(info) => {
            eprintln!(
                "{}: halted at t0 = {}: {}",
                path.display(),
                info.t0,
                info.reason
            );
            for (k, b) in info.candidates.iter().enumerate() {
                eprintln!("  candidate {k}: rank {}", b.rank());
            }
            eprintln!(
                "  supply transition.hypothesis = \"same-balance\" to continue without a jump"
            );
        }
        RunStatus::IntegrationFailure { t, reason } => {
            eprintln!(
                "{}: integration failed at t = {t}: {reason}",
                path.display()
            );
        }
    }
    Ok(result.status)
}

fn cmd_run(path: &Path, out_dir: Option<&Path>, sweep: Option<&str>) -> Result<ExitCode, Error> {
    let dir = base_dir(path, out_dir);
    let stem = scenario_stem(path);
    match sweep {
        None => {
            let sc = load_scenario(path)?;
            let status = run_one(&sc, path, &dir, &stem)?;
            Ok(status_code(&status))
        }
        Some(spec) => {
            let (key, values) = parse_sweep(spec)?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Scenario(format!("cannot read {}: {e}", path.display())))?;
            let doc: toml::Value = toml::from_str(&text)
                .map_err(|e| Error::Scenario(format!("{}: {e}", path.display())))?;
            let runs: Vec<(usize, f64, ScenarioFile)> = values
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let mut d = doc.clone();
                    apply_override(&mut d, &key, v)?;
                    let sc: ScenarioFile = d
                        .try_into()
                        .map_err(|e| Error::Scenario(format!("sweep value {v}: {e}")))?;
                    Ok((k, v, sc))
                })
                .collect::<Result<_, Error>>()?;
            let outcomes: Vec<Result<RunStatus, Error>> = runs
                .par_iter()
                .map(|(k, v, sc)| {
                    let stem_k = format!("{stem}_sweep{k}");
                    println!("sweep {k}: {key} = {v}");
                    run_one(sc, path, &dir, &stem_k)
                })
                .collect();
            let mut worst = ExitCode::SUCCESS;
            for outcome in outcomes {
                let code = status_code(&outcome?);
                if code != ExitCode::SUCCESS {
                    worst = code;
                }
            }
            Ok(worst)
        }
    }
}

fn cmd_classify(
    path: &Path,
    grid: &str,
    radius: Option<f64>,
    samples: Option<usize>,
    out: Option<&Path>,
) -> Result<ExitCode, Error> {
    let sc = load_scenario(path)?;
    let system = build_system(&sc.system)?;
    let axes = parse_grid(grid, system.coordinate_names())?;
    let rows = classify_grid(&system, &axes, radius, samples)?;
    let csv = classify_csv(system.dim(), &rows);
    match out {
        Some(p) => {
            std::fs::write(p, csv)?;
            println!("wrote {}", p.display());
        }
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_vector(s: &str, what: &str) -> Result<DVector<f64>, Error> {
    let vals: Result<Vec<f64>, Error> = s
        .split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::Scenario(format!("bad {what} component `{x}`")))
        })
        .collect();
    Ok(DVector::from_vec(vals?))
}

fn cmd_probe(
    path: &Path,
    at: &str,
    p: &str,
    cli_paths: &[String],
    out: Option<&Path>,
) -> Result<ExitCode, Error> {
    let sc = load_scenario(path)?;
    let system = build_system(&sc.system)?;
    let point = parse_vector(at, "point")?;
    let p_minus = parse_vector(p, "momentum")?;
    let topts = sc.transition.to_opts()?;
    let paths: Vec<Vec<String>> = if !cli_paths.is_empty() {
        cli_paths
            .iter()
            .map(|s| s.split(',').map(|e| e.trim().to_string()).collect())
            .collect()
    } else {
        sc.probe
            .as_ref()
            .map(|p| p.paths.clone())
            .unwrap_or_default()
    };
    let outcome = probe(&system, &point, &p_minus, &paths, &topts)?;
    print!("{}", describe_outcome(&outcome));
    match outcome {
        CrossingOutcome::Resolved { report, .. } => {
            if let Some(out) = out {
                std::fs::write(out, jumps_csv(system.dim(), &[report]))?;
                println!("wrote {}", out.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        CrossingOutcome::Indeterminate(_) => Ok(ExitCode::from(3)),
    }
}
