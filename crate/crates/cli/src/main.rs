use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use sie_cli::config::load_config;
use sie_cli::pipeline::{run_pipeline, sweep, Method, SweepAxis};
use sie_cli::report::{write_run_report, write_sweep};
use sie_cli::selftest::run_selftest;

/// Joint far- and near-end speech intelligibility enhancement pipeline.
#[derive(Parser)]
#[command(name = "sie", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the scenario, process with one method, write report and audio.
    Run {
        /// Scenario configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Processing method: proposed_asii, mi_baseline_rho075,
        /// mi_baseline_sii, disjoint, or passthrough.
        #[arg(long)]
        method: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the configured random seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a grid of SNR values and methods; write sweep.csv and sweep.json.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Axis to vary: near_snr or far_snr.
        #[arg(long)]
        axis: String,
        /// Comma-separated dB values, e.g. "-20,-15,-10,-5,0".
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        /// Comma-separated method names (default: all five).
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in oracle-equivalence and invariant suites.
    Selftest,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Machine-readable error record on stderr.
            let record = serde_json::json!({ "error": format!("{e:#}") });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}

fn parse_methods(spec: Option<&str>) -> Result<Vec<Method>> {
    match spec {
        None => Ok(Method::ALL.to_vec()),
        Some(list) => list
            .split(',')
            .map(|s| Method::from_str(s.trim()))
            .collect(),
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            method,
            out,
            seed,
        } => {
            let method = Method::from_str(&method)?;
            let mut scenario = load_config(&config)?;
            if let Some(seed) = seed {
                scenario.seed = seed;
            }
            std::fs::create_dir_all(&out)
                .with_context(|| format!("creating {}", out.display()))?;
            let (report, outcomes) = run_pipeline(&scenario, &[method])?;
            write_run_report(&out.join("report.json"), &report)?;
            let outcome = &outcomes[0];
            sie_core::wav::write_mono_f32(
                &out.join(format!("processed_{method}.wav")),
                &outcome.playback,
                scenario.sample_rate,
            )?;
            sie_core::wav::write_mono_f32(
                &out.join(format!("near_end_{method}.wav")),
                &outcome.near_end,
                scenario.sample_rate,
            )?;
            println!(
                "{method}: asii = {:.4}, power ratio = {:.9}",
                outcome.report.asii, outcome.report.realized_power_ratio
            );
            Ok(())
        }
        Command::Sweep {
            config,
            axis,
            values,
            methods,
            out,
        } => {
            let axis = SweepAxis::from_str(&axis)?;
            let values: Vec<f64> = values
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .with_context(|| format!("bad sweep value '{t}'"))
                })
                .collect::<Result<_>>()?;
            let methods = parse_methods(methods.as_deref())?;
            let scenario = load_config(&config)?;
            let table = sweep(&scenario, axis, &values, &methods)?;
            write_sweep(&out, &table)?;
            println!(
                "wrote {} rows to {}",
                table.rows.len(),
                out.join("sweep.csv").display()
            );
            Ok(())
        }
        Command::Selftest => run_selftest(),
    }
}
