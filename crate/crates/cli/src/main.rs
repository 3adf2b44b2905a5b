use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use gradvi_cli::config::ScenarioConfig;
use gradvi_cli::plot::{emit_plot_data, PlotKind};
use gradvi_cli::run::{output_root, run_scenario, run_sweep, scenario_dir, write_sweep, RunStatus};
use gradvi_cli::scenarios::{builtin, BUILTINS};
use gradvi_cli::verify::run_suite;

/// Penalty solvers for evolution problems with derivative constraints.
#[derive(Parser)]
#[command(name = "gradvi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and write its artifacts.
    Solve {
        /// JSON config file, or `builtin:<name>`.
        config: String,
        /// Output directory (default: from the config, under the output root).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also dump every field.
        #[arg(long)]
        fields: bool,
    },
    /// Solve once per value of one numeric parameter.
    Sweep {
        config: String,
        /// Dotted parameter path, e.g. `material.p` or `schedule.eps`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; `--values ''` gives a header-only table.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit whitespace-delimited plot columns from a run or sweep.
    Plot {
        bundle: PathBuf,
        /// profile, residual-history or sweep.
        #[arg(long)]
        kind: String,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance suite.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated criterion ids, e.g. `AC-3,AC-6`.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List built-in scenarios, or print one as JSON.
    Scenarios { name: Option<String> },
}

fn load(config: &str) -> anyhow::Result<ScenarioConfig> {
    match config.strip_prefix("builtin:") {
        Some(name) => builtin(name).with_context(|| format!("no built-in scenario `{name}`")),
        None => Ok(ScenarioConfig::load(config.as_ref())?),
    }
}

fn parse_values(text: &str) -> anyhow::Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<f64>().with_context(|| format!("sweep value `{v}` is not a number")))
        .collect()
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Solve { config, out, fields } => {
            let mut cfg = load(&config)?;
            cfg.output.fields |= fields;
            let dir = out.unwrap_or_else(|| scenario_dir(&cfg));
            let summary = run_scenario(&cfg, &dir)?;
            println!("wrote {}", dir.display());
            match summary.status {
                RunStatus::Ok => Ok(ExitCode::SUCCESS),
                RunStatus::Failed => {
                    eprintln!("solver failure: {}", summary.error.unwrap_or_default());
                    Ok(ExitCode::from(1))
                }
            }
        }
        Command::Sweep {
            config,
            axis,
            values,
            threads,
            out,
        } => {
            let values = parse_values(&values)?;
            let cfg = load(&config)?;
            let dir = out.unwrap_or_else(|| scenario_dir(&cfg).join(format!("sweep-{axis}")));
            let rows = run_sweep(&cfg, &axis, &values, threads.max(1))?;
            let path = write_sweep(&rows, &dir)?;
            println!("wrote {}", path.display());
            for r in rows.iter().filter(|r| !r.ok()) {
                eprintln!("row {} failed: {}", r.value, r.error.as_deref().unwrap_or(""));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Plot { bundle, kind, out } => {
            let kind: PlotKind = kind.parse()?;
            let text = emit_plot_data(&bundle, kind)?;
            match out {
                Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { seed, only, out } => {
            let report = run_suite(seed, &only, |c, elapsed| {
                println!("{}  ({:.2} s)", c.line(), elapsed.as_secs_f64());
            });
            let dir = out.unwrap_or_else(|| output_root().join("verify"));
            report.write(&dir)?;
            println!("wrote {}", dir.display());
            Ok(if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Scenarios { name: None } => {
            for name in BUILTINS {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Scenarios { name: Some(name) } => {
            let cfg = builtin(&name).with_context(|| format!("no built-in scenario `{name}`"))?;
            println!("{}", cfg.to_json());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
