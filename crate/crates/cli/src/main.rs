//! `isac`: run the simulator sweeps from a TOML configuration and write the
//! result CSVs plus a `<command>_run.json` metadata file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use isac_core::config::{load_config, ConfigError, RunConfig};
use isac_core::engine::{configure_workers, single_point, sweep_rcs, sweep_ts, tradeoff_curve, SweepResult};
use isac_core::output::{
    deviation_flags, file_name, metadata_json, rows, to_csv, FileDiagnostics, OutputSet, RunMetadata,
};
use isac_core::policy::Policy;

/// Overrides the worker pool size.
const WORKERS_ENV: &str = "ISAC_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "isac", version, about = "Monte Carlo ISAC link simulator")]
struct Cli {
    /// TOML configuration; defaults to the reference scenario.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Detection probability against target RCS, per configured policy.
    RcsSweep,
    /// Detection probability against the sensing window, per configured policy.
    TsSweep,
    /// Pure-communication point, concurrent curve over rho, time-sharing curve over beta.
    Tradeoff,
    /// One Monte Carlo point per configured policy.
    Single,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::RcsSweep => "rcs-sweep",
            Command::TsSweep => "ts-sweep",
            Command::Tradeoff => "tradeoff",
            Command::Single => "single",
        }
    }
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = cli.trials {
        cfg.trials = trials;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(cfg: &RunConfig, command: Command) -> Result<Vec<(String, SweepResult)>, Failure> {
    let scenario = cfg.scenario().map_err(|e| Failure::Config(e.to_string()))?;
    let expand = |v: &isac_core::config::Values| v.expand().map_err(|e| Failure::Config(e.to_string()));
    let policies = cfg.policies();
    if policies.is_empty() && !matches!(command, Command::Tradeoff) {
        return Err(Failure::Config("no policies enabled under [policies]".into()));
    }
    let runtime = |e: isac_core::Error| Failure::Runtime(e.to_string());
    let (trials, seed) = (cfg.trials, cfg.seed);
    let mut out = Vec::new();
    match command {
        Command::Single => {
            for p in policies {
                out.push((p.to_string(), single_point(&scenario, p, trials, seed).map_err(runtime)?));
            }
        }
        Command::RcsSweep => {
            let grid = expand(&cfg.sweeps.rcs_dbsm)?;
            for p in policies {
                out.push((p.to_string(), sweep_rcs(&scenario, p, &grid, trials, seed).map_err(runtime)?));
            }
        }
        Command::TsSweep => {
            let grid = expand(&cfg.sweeps.sensing_window_ms)?;
            for p in policies {
                out.push((p.to_string(), sweep_ts(&scenario, p, &grid, trials, seed).map_err(runtime)?));
            }
        }
        Command::Tradeoff => {
            let rho = expand(&cfg.sweeps.rho)?;
            let beta = expand(&cfg.sweeps.beta)?;
            let [pure, conc, ts] = tradeoff_curve(&scenario, &rho, &beta, trials, seed).map_err(runtime)?;
            out.push((Policy::PureComm.to_string(), pure));
            out.push(("concurrent".into(), conc));
            out.push(("time-sharing".into(), ts));
        }
    }
    Ok(out)
}

fn write_outputs(
    cfg: &RunConfig,
    command: Command,
    results: &[(String, SweepResult)],
) -> Result<Vec<PathBuf>, Failure> {
    let io = |e: isac_core::output::OutputError| Failure::Runtime(e.to_string());
    let mut set = OutputSet::create(&PathBuf::from(&cfg.out)).map_err(io)?;
    let mut files = Vec::new();
    for (label, result) in results {
        let name = file_name(command.name(), label);
        let bytes = match to_csv(&rows(result)) {
            Ok(b) => b,
            Err(e) => {
                set.abort();
                return Err(io(e));
            }
        };
        set.write(&name, &bytes).map_err(io)?;
        files.push(FileDiagnostics { file: name, rows: result.rows.iter().map(|r| r.estimate.clone()).collect() });
    }
    let meta = RunMetadata {
        version: env!("CARGO_PKG_VERSION"),
        command: command.name(),
        deviation_flags: deviation_flags(cfg),
        snr_aggregation: "linear mean over all data slots of all scored windows, then dB",
        config: cfg,
        files,
    };
    set.write(&format!("{}_run.json", command.name()), &metadata_json(&meta)).map_err(io)?;
    Ok(set.written().to_vec())
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>, Failure> {
    let cfg = resolve_config(cli).map_err(|e| Failure::Config(e.to_string()))?;
    if let Ok(raw) = std::env::var(WORKERS_ENV) {
        let workers: usize = raw
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::Config(format!("{WORKERS_ENV} must be a positive integer, got {raw:?}")))?;
        configure_workers(workers).map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let results = simulate(&cfg, cli.command)?;
    write_outputs(&cfg, cli.command, &results)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
