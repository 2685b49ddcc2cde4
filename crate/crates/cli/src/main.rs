use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use quill_cli::runner::{run_scenario_with_trace, Overrides, RunStatus};
use quill_cli::scenario::parse_scenario;
use quill_core::simnet::Trace;

/// Deterministic simulation harness for a three-overlay peer-to-peer
/// microblogging protocol.
#[derive(Parser)]
#[command(name = "quill", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and report assertion results and metrics.
    Run {
        /// Scenario file path.
        file: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the event trace to this path (tab-separated, LF endings).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the report to this path as well as stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Override the initial block difficulty.
        #[arg(long)]
        difficulty_bits: Option<u32>,
    },
    /// Parse and validate a scenario without running it.
    Check {
        /// Scenario file path.
        file: PathBuf,
    },
    /// Summarize a trace file produced by `run --trace`.
    Stats {
        /// Trace file path.
        trace: PathBuf,
    },
}

// Exit codes: 0 pass, 1 assertion failure, 2 parse error, 3 runtime cap.
fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            file,
            seed,
            trace,
            report,
            difficulty_bits,
        } => {
            let text = std::fs::read_to_string(&file)
                .with_context(|| format!("reading {}", file.display()))?;
            let scenario = match parse_scenario(&text) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("{}: {e}", file.display());
                    return Ok(ExitCode::from(2));
                }
            };
            let name = file
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scenario".to_owned());
            let overrides = Overrides {
                seed,
                difficulty_bits,
            };
            let (run_report, run_trace) = run_scenario_with_trace(&scenario, &name, &overrides);
            let text = run_report.to_text();
            print!("{text}");
            if let Some(path) = report {
                std::fs::write(&path, &text)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            if let Some(path) = trace {
                std::fs::write(&path, run_trace.to_text())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(match run_report.status {
                RunStatus::Pass => ExitCode::SUCCESS,
                RunStatus::AssertionsFailed => ExitCode::from(1),
                RunStatus::RuntimeCap => ExitCode::from(3),
            })
        }
        Command::Check { file } => {
            let text = std::fs::read_to_string(&file)
                .with_context(|| format!("reading {}", file.display()))?;
            match parse_scenario(&text) {
                Ok(s) => {
                    let assertions = s.directives.iter().filter(|(_, _, d)| d.is_assertion()).count();
                    println!(
                        "ok: {} directives ({} assertions), seed {}",
                        s.directives.len(),
                        assertions,
                        s.header.seed
                    );
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    eprintln!("{}: {e}", file.display());
                    Ok(ExitCode::from(2))
                }
            }
        }
        Command::Stats { trace } => {
            let text = std::fs::read_to_string(&trace)
                .with_context(|| format!("reading {}", trace.display()))?;
            let parsed = Trace::parse(&text).context("malformed trace file")?;
            let entries = parsed.entries();
            println!("events: {}", entries.len());
            if let (Some(first), Some(last)) = (entries.first(), entries.last()) {
                println!("first_tick: {}", first.tick);
                println!("last_tick: {}", last.tick);
            }
            println!("digest: {}", parsed.digest().to_hex());
            let mut by_kind: BTreeMap<&str, u64> = BTreeMap::new();
            let mut by_node: BTreeMap<&str, u64> = BTreeMap::new();
            for e in entries {
                *by_kind.entry(&e.kind).or_insert(0) += 1;
                *by_node.entry(&e.node).or_insert(0) += 1;
            }
            for (kind, count) in by_kind {
                println!("kind.{kind}: {count}");
            }
            println!("nodes: {}", by_node.len());
            Ok(ExitCode::SUCCESS)
        }
    }
}
