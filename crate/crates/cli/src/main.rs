use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use forktrack::harness::{run_scenario, suite_cases, Scenario};

#[derive(Parser)]
#[command(name = "forktrack", about = "Pallet unloading scenario simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file and summarize the outcome.
    Run {
        /// Scenario file to execute.
        scenario: PathBuf,
        /// Write the per-cycle log to this CSV file.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Print a machine-readable report to stdout instead of the summary.
        #[arg(long, value_enum)]
        report: Option<ReportFormat>,
    },
    /// Run the bundled cases and check each against its expectations.
    Suite,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { scenario, csv, seed, report } => run_one(scenario, csv, seed, report),
        Command::Suite => run_suite(),
    }
}

fn run_one(
    path: PathBuf,
    csv: Option<PathBuf>,
    seed: Option<u64>,
    report: Option<ReportFormat>,
) -> ExitCode {
    let text = match std::fs::read_to_string(&path) {
        Ok(text) => text,
        Err(err) => {
            eprintln!("error: cannot read {}: {err}", path.display());
            return ExitCode::from(2);
        }
    };
    let mut scn = match Scenario::parse(&text) {
        Ok(scn) => scn,
        Err(err) => {
            eprintln!("error: {}: {err}", path.display());
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = seed {
        scn.seed = seed;
        scn.tracker.seed = seed;
    }

    let result = match run_scenario(&scn) {
        Ok(result) => result,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(3);
        }
    };

    if let Some(csv_path) = csv {
        if let Err(err) = std::fs::write(&csv_path, &result.csv) {
            eprintln!("error: cannot write {}: {err}", csv_path.display());
            return ExitCode::from(2);
        }
    }

    let r = &result.report;
    match report {
        Some(ReportFormat::Json) => println!("{}", r.to_json()),
        None => {
            println!("scenario      {}", r.scenario);
            println!("outcome       {}", r.outcome.name());
            println!("final tilt    {:+.2} deg", r.final_fork_tilt.to_degrees());
            println!("max drag      {:.1} mm", r.max_drag * 1e3);
            println!("cycles        {}", r.cycles);
            match r.converged_delta_tilt {
                Some(d) => println!("handoff tilt  {:+.3} deg", d.to_degrees()),
                None => println!("handoff tilt  n/a"),
            }
        }
    }
    ExitCode::SUCCESS
}

fn run_suite() -> ExitCode {
    let mut all_ok = true;
    for case in suite_cases() {
        let scn = match Scenario::parse(case.text) {
            Ok(scn) => scn,
            Err(err) => {
                println!("{:<8} FAIL  scenario: {err}", case.name);
                all_ok = false;
                continue;
            }
        };
        let result = match run_scenario(&scn) {
            Ok(result) => result,
            Err(err) => {
                println!("{:<8} FAIL  run: {err}", case.name);
                all_ok = false;
                continue;
            }
        };
        let failures = case.expect.check(&result.report);
        if failures.is_empty() {
            println!(
                "{:<8} pass  ({}, drag {:.1} mm)",
                case.name,
                result.report.outcome.name(),
                result.report.max_drag * 1e3
            );
        } else {
            all_ok = false;
            println!("{:<8} FAIL  {}", case.name, failures.join("; "));
        }
    }
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
