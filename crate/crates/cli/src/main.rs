//! `ppwf`: runs verification scenarios for the pp-wave construction
//! pipeline and prints one pass/fail line per check.

use clap::{Parser, Subcommand};
use ppwave_core::report::{Report, ReportDiff};
use ppwave_core::runner::{run, RunOptions};
use ppwave_core::scenario::parse_scenario;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ppwf", about = "pp-wave construction and verification")]
struct Cli {
    /// worker thread cap (defaults to the machine's cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// multiplies every check tolerance
    #[arg(long, global = true, default_value_t = 1.0)]
    tol_scale: f64,
    /// overrides the snapshot directory (also: PPWF_SNAPSHOT_DIR)
    #[arg(long, global = true)]
    snapshot_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// full pipeline: gauge, scale solve, assembly, all listed checks
    Run { scenario: PathBuf },
    /// scale data and the lambda solve only, with the CSV series
    CheckOde { scenario: PathBuf },
    /// the spinor transport checks only
    Spinor { scenario: PathBuf },
    /// the rigidity verdict for a periodic family
    Rigidity { scenario: PathBuf },
    /// compare two reports
    ReportDiff { a: PathBuf, b: PathBuf },
}

fn load(path: &PathBuf) -> Result<ppwave_core::scenario::Scenario, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_scenario(&text).map_err(|e| e.to_string())
}

fn print_report(report: &Report) {
    for c in &report.checks {
        println!(
            "{} {:<24} residual {:>12.3e}  tol {:>9.1e}  ({})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.residual,
            c.tolerance,
            c.anchor
        );
    }
    for f in &report.failures {
        println!("FAIL stage {}: {}", f.stage, f.message);
    }
}

fn execute(scenario_path: &PathBuf, options: &RunOptions, keep: &[&str]) -> ExitCode {
    let mut scenario = match load(scenario_path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::FAILURE;
        }
    };
    if !keep.is_empty() {
        scenario.checks.retain(|c| keep.contains(&c.name.as_str()));
    }
    match run(&scenario, options) {
        Ok(report) => {
            print_report(&report);
            if report.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .ok();
    }
    let options = RunOptions {
        tol_scale: cli.tol_scale,
        snapshot_dir: cli.snapshot_dir.clone(),
    };
    match &cli.command {
        Command::Run { scenario } => execute(scenario, &options, &[]),
        Command::CheckOde { scenario } => execute(
            scenario,
            &options,
            &["gauge-div-residual", "gauge-trace-residual", "lambda-ode-residual", "scale-invariance"],
        ),
        Command::Spinor { scenario } => execute(
            scenario,
            &options,
            &[
                "gauge-div-residual",
                "spinor-parallel",
                "spinor-constraint",
                "spinor-gronwall",
                "spinor-lichnerowicz",
            ],
        ),
        Command::Rigidity { scenario } => execute(scenario, &options, &["rigidity"]),
        Command::ReportDiff { a, b } => {
            let ra = match Report::read(a) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::FAILURE;
                }
            };
            let rb = match Report::read(b) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::FAILURE;
                }
            };
            let diff = ReportDiff::compute(&ra, &rb);
            for name in &diff.missing {
                println!("only in {}: {name}", a.display());
            }
            for name in &diff.extra {
                println!("only in {}: {name}", b.display());
            }
            for (name, res_a, res_b, pass_a, pass_b) in &diff.changed {
                println!(
                    "{name}: {res_a:.3e} ({}) -> {res_b:.3e} ({})",
                    if *pass_a { "pass" } else { "fail" },
                    if *pass_b { "pass" } else { "fail" },
                );
            }
            if diff.same_verdicts() {
                println!("verdicts agree");
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
