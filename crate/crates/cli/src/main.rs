//! Command-line front end: sweep execution, single-trial reports, collision
//! threshold design, baseline calibration and observation dumps.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ranging_core::channel::{draw_users, synthesize, write_observation_text, CollisionMode};
use ranging_core::flm::calibrate_alpha;
use ranging_core::montecarlo::{
    render_eta_csv, render_sweep_csv, render_trial_report, run_eta_sweep, run_sweep, run_trial,
    SweepSpec, SweepVariable,
};
use ranging_core::rng::TrialRng;
use ranging_core::scenario::{Codebook, ScenarioConfig};
use ranging_core::RangingError;

#[derive(Parser)]
#[command(
    name = "ranging",
    about = "OFDMA initial-ranging simulator and estimator benchmarks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo sweep and emit one CSV row per sweep value.
    RunSweep(RunSweepArgs),
    /// Run a single trial and print a full text report of every stage.
    RunTrial(RunTrialArgs),
    /// Sweep the collision threshold over the false-alarm and mis-detection
    /// scenarios.
    SweepEta(SweepEtaArgs),
    /// Calibrate the baseline detector threshold factor per SNR.
    CalibrateFlm(CalibrateFlmArgs),
    /// Synthesize one slot and dump the DFT outputs as text.
    DumpObservation(DumpArgs),
    /// Print the resolved configuration in config-file format.
    PrintConfig(ConfigArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Path to a flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set snr_db=16 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepVarArg {
    /// SNR in dB (alias: snr).
    #[value(alias = "snr")]
    SnrDb,
    EpsMax,
    K,
    Eta,
}

#[derive(Clone, Copy, ValueEnum)]
enum CollisionModeArg {
    Distinct,
    Shared,
}

impl From<CollisionModeArg> for CollisionMode {
    fn from(value: CollisionModeArg) -> Self {
        match value {
            CollisionModeArg::Distinct => CollisionMode::DistinctCodes,
            CollisionModeArg::Shared => CollisionMode::ForceSharedCode,
        }
    }
}

#[derive(Args)]
struct RunSweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Swept variable.
    #[arg(long, value_enum)]
    sweep: SweepVarArg,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Active users per subchannel.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Trials per sweep point.
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    /// Master seed (overrides the config seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = available parallelism).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, value_enum, default_value_t = CollisionModeArg::Distinct)]
    collision_mode: CollisionModeArg,
    /// Also run the baseline detector with this threshold factor and append
    /// its columns.
    #[arg(long)]
    flm_alpha: Option<f64>,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RunTrialArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Master seed (overrides the config seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Trial stream index under the master seed.
    #[arg(long, default_value_t = 0)]
    stream: u64,
    #[arg(long, value_enum, default_value_t = CollisionModeArg::Distinct)]
    collision_mode: CollisionModeArg,
    /// Also run the baseline detector with this threshold factor.
    #[arg(long)]
    flm_alpha: Option<f64>,
}

#[derive(Args)]
struct SweepEtaArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated threshold values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Trials per scenario.
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateFlmArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated SNR values (dB) to calibrate at.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Noise-only trials per SNR.
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    /// Target false-alarm probability per code.
    #[arg(long, default_value_t = 0.01)]
    target_pfa: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    stream: u64,
    #[arg(long, value_enum, default_value_t = CollisionModeArg::Distinct)]
    collision_mode: CollisionModeArg,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn resolve_config(args: &ConfigArgs, seed: Option<u64>) -> Result<ScenarioConfig, RangingError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                RangingError::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            ScenarioConfig::from_text(&text)?
        }
        None => ScenarioConfig::default(),
    };
    for pair in &args.set {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            RangingError::Config(format!("--set expects key=value, got `{pair}`"))
        })?;
        cfg.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(output: &Option<PathBuf>, content: &str) -> anyhow::Result<()> {
    match output {
        Some(path) => fs::write(path, content)
            .map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display())),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::RunSweep(args) => {
            let cfg = resolve_config(&args.config, args.seed)?;
            let spec = SweepSpec {
                variable: match args.sweep {
                    SweepVarArg::SnrDb => SweepVariable::SnrDb,
                    SweepVarArg::EpsMax => SweepVariable::EpsMax,
                    SweepVarArg::K => SweepVariable::UserCount,
                    SweepVarArg::Eta => SweepVariable::Eta,
                },
                values: args.values,
                trials: args.trials,
                base: cfg,
                users: args.k,
                collision_mode: args.collision_mode.into(),
                flm_alpha: args.flm_alpha,
            };
            let rows = run_sweep(&spec, args.workers)?;
            emit(&args.output, &render_sweep_csv(&spec, &rows))
        }
        Command::RunTrial(args) => {
            let cfg = resolve_config(&args.config, args.seed)?;
            let outcome = run_trial(
                &cfg,
                args.k,
                args.collision_mode.into(),
                cfg.seed,
                args.stream,
                args.flm_alpha,
            )?;
            print!(
                "{}",
                render_trial_report(&cfg, &outcome, cfg.seed, args.stream)
            );
            Ok(())
        }
        Command::SweepEta(args) => {
            let cfg = resolve_config(&args.config, args.seed)?;
            let rows = run_eta_sweep(&cfg, &args.values, args.trials, args.workers)?;
            emit(&args.output, &render_eta_csv(&cfg, args.trials, &rows))
        }
        Command::CalibrateFlm(args) => {
            let cfg = resolve_config(&args.config, args.seed)?;
            if !(args.target_pfa > 0.0 && args.target_pfa < 1.0) {
                return Err(RangingError::Config("target_pfa must lie in (0, 1)".into()).into());
            }
            let codebook = Codebook::build(&cfg)?;
            let mut out = String::new();
            out.push_str(&format!(
                "# config: {} | trials={} target_pfa={} master_seed={}\n",
                cfg.summary(),
                args.trials,
                args.target_pfa,
                cfg.seed
            ));
            out.push_str("snr_db,alpha\n");
            for &snr in &args.values {
                let mut point = cfg.clone();
                point.snr_db = snr;
                point.validate()?;
                if point.noise_variance() == 0.0 {
                    return Err(RangingError::Config(
                        "calibration needs finite SNR (noise-only trials)".into(),
                    )
                    .into());
                }
                let alpha =
                    calibrate_alpha(&point, &codebook, args.trials, args.target_pfa, point.seed);
                out.push_str(&format!("{snr},{alpha}\n"));
            }
            emit(&args.output, &out)
        }
        Command::DumpObservation(args) => {
            let cfg = resolve_config(&args.config, args.seed)?;
            let mut rng = TrialRng::from_master(cfg.seed, args.stream);
            let users = draw_users(&cfg, args.k, args.collision_mode.into(), &mut rng)?;
            let obs = synthesize(&cfg, &users, &mut rng);
            let mut out = format!(
                "# config: {} | k={} stream={} master_seed={}\n",
                cfg.summary(),
                args.k,
                args.stream,
                cfg.seed
            );
            out.push_str(&write_observation_text(&obs));
            emit(&args.output, &out)
        }
        Command::PrintConfig(args) => {
            let cfg = resolve_config(&args, None)?;
            print!("{}", cfg.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let config_class = err
                .downcast_ref::<RangingError>()
                .map(|e| matches!(e, RangingError::Config(_) | RangingError::Range(_)))
                .unwrap_or(false);
            if config_class {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
