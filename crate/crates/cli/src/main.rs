use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use coop_track::commands::{command_certify, command_sweep, parse_values, run_prepared, Overrides, SweepParam};
use coop_track::scenario::{load_config, Prepared, ScenarioConfig, CHAIN_SAMPLED, PAPER_SEC4};
use coop_track::simulation::Law;

const DEFAULT_OUT: &str = "coop-track-out";

/// Certify, simulate and verify cooperative unicycle tracking scenarios.
#[derive(Debug, Parser)]
#[command(name = "coop-track", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute every certificate constant and write `certificate.txt`.
    Certify(Common),
    /// Simulate, run all enabled monitors, write `trajectory.csv` and `report.txt`.
    Run(Common),
    /// Run one scenario per parameter value and tabulate the outcomes.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of T0, k_v, k_omega, h.
        #[arg(long)]
        param: String,
        /// Comma-separated values; empty means nothing to run.
        #[arg(long, default_value = "", allow_hyphen_values = true)]
        values: String,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file, or `builtin:paper_sec4` / `builtin:chain_sampled`.
    config: String,
    /// Output directory.
    #[arg(long, env = "COOP_TRACK_OUT")]
    out: Option<PathBuf>,
    /// Log spacing in seconds.
    #[arg(long)]
    log_every: Option<f64>,
    /// Control law, overriding the config.
    #[arg(long)]
    law: Option<Law>,
}

impl Common {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = match self.config.strip_prefix("builtin:") {
            Some("paper_sec4") => ScenarioConfig::from_toml_str(PAPER_SEC4)?,
            Some("chain_sampled") => ScenarioConfig::from_toml_str(CHAIN_SAMPLED)?,
            Some(other) => anyhow::bail!("unknown bundled scenario `{other}`"),
            None => load_config(&self.config).with_context(|| format!("loading {}", self.config))?,
        };
        Overrides {
            law: self.law,
            log_every: self.log_every,
        }
        .apply(&mut cfg);
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ScenarioConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.simulation.output_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }
}

fn certify(common: &Common) -> Result<ExitCode> {
    let cfg = common.load()?;
    let out = common.out_dir(&cfg);
    let outcome = command_certify(cfg, Some(&out))?;
    print!("{}", outcome.report);
    println!("# {}", outcome.sampling_statement());
    if let Some(p) = &outcome.path {
        eprintln!("wrote {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn run(common: &Common) -> Result<ExitCode> {
    let cfg = common.load()?;
    let out = common.out_dir(&cfg);
    let outcome = run_prepared(Prepared::new(cfg)?, Some(&out))?;
    print!("{}", outcome.monitors.summary_table());
    for p in [&outcome.csv_path, &outcome.report_path].into_iter().flatten() {
        eprintln!("wrote {}", p.display());
    }
    Ok(exit(outcome.exit_code() != 0))
}

fn sweep(common: &Common, param: &str, values: &str) -> Result<ExitCode> {
    let param: SweepParam = param.parse()?;
    let values = parse_values(values)?;
    let cfg = common.load()?;
    let out = common.out_dir(&cfg);
    let summary = command_sweep(&cfg, param, &values);
    print!("{}", summary.table());
    let path = summary.write(Path::new(&out))?;
    eprintln!("wrote {}", path.display());
    Ok(exit(summary.any_failed()))
}

fn exit(failed: bool) -> ExitCode {
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Certify(c) => certify(c),
        Command::Run(c) => run(c),
        Command::Sweep { common, param, values } => sweep(common, param, values),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
