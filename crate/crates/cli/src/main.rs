use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nrdz_core::harness::{
    execute, load_config_or_manifest, replay, ConfigSource, Experiment, ExperimentConfig, Manifest, MANIFEST_FILE,
};
use nrdz_core::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

/// Radio dynamic zone experiments: shadowing fields, Kriging REMs, leakage,
/// TDOA localization and spectrum compliance.
///
/// Without a subcommand, `--config` must point at a run manifest, which is
/// replayed into `--out` and checked against its recorded hashes.
#[derive(Debug, Parser)]
#[command(name = "nrdz", version)]
struct Cli {
    /// Experiment configuration or run manifest (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw one correlated shadowing field at the sensors and grid.
    SimulateField,
    /// Kriging and path-loss RMSE over the configured sweep grid.
    RmseSweep,
    /// Kriged and baseline maps from a sensor field CSV, or from a simulated one.
    Rem {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Leakage verdicts at IPARs from the true field and the Kriged map.
    Leakage {
        #[arg(long)]
        ipars: Option<PathBuf>,
    },
    /// Simulate TDOA measurements along the configured trajectory.
    TdoaSim,
    /// Localize every measurement set in a TDOA CSV.
    TdoaLocalize {
        #[arg(long)]
        input: PathBuf,
    },
    /// Localize and Kalman-track a TDOA CSV.
    Track {
        #[arg(long)]
        input: PathBuf,
    },
    /// Per band and hour thresholds from a sweep history CSV.
    ComplianceCalibrate {
        #[arg(long)]
        input: PathBuf,
    },
    /// Classify sweep records against a threshold profile.
    ComplianceClassify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        profile: PathBuf,
    },
    /// Geometric line-of-sight range for platform heights.
    Los {
        /// Single height in meters instead of the configured list.
        #[arg(long)]
        height: Option<f64>,
    },
    /// Check the configuration and report source placement.
    ValidateConfig,
}

impl Command {
    fn experiment(self) -> Option<Experiment> {
        Some(match self {
            Command::SimulateField => Experiment::SimulateField,
            Command::RmseSweep => Experiment::RmseSweep,
            Command::Rem { input } => Experiment::Rem { input },
            Command::Leakage { ipars } => Experiment::Leakage { ipars },
            Command::TdoaSim => Experiment::TdoaSim,
            Command::TdoaLocalize { input } => Experiment::TdoaLocalize { input },
            Command::Track { input } => Experiment::Track { input },
            Command::ComplianceCalibrate { input } => Experiment::ComplianceCalibrate { input },
            Command::ComplianceClassify { input, profile } => Experiment::ComplianceClassify { input, profile },
            Command::Los { height } => Experiment::Los { height_m: height },
            Command::ValidateConfig => return None,
        })
    }
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn report(out: &Path, m: &Manifest) {
    for (name, hash) in &m.artifacts {
        println!("{}  {}", &hash[..16], out.join(name).display());
    }
    println!("manifest: {}", out.join(MANIFEST_FILE).display());
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let source = match &cli.config {
        Some(path) => load_config_or_manifest(path)?,
        None => ConfigSource::Config(ExperimentConfig::default()),
    };
    let Some(command) = cli.command else {
        let ConfigSource::Manifest(manifest) = source else {
            return Err(Failure::Config(
                "no subcommand given and --config is not a run manifest".into(),
            ));
        };
        if cli.seed.is_some_and(|s| s != manifest.config.seed) {
            return Err(Failure::Config("--seed conflicts with the manifest being replayed".into()));
        }
        let m = replay(&manifest, &cli.out)?;
        report(&cli.out, &m);
        println!("replay matches the recorded run");
        return Ok(());
    };
    let mut cfg = match source {
        ConfigSource::Config(c) => c,
        ConfigSource::Manifest(m) => m.config,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match command.experiment() {
        None => {
            cfg.validate()?;
            let scene = cfg.scene(&cfg.base_cell())?;
            print!("{}", nrdz_core::geometry::validate_sources(&scene.layout, &scene.sources));
            println!(
                "sensors: {}, grid points: {}, sweep cells: {}",
                scene.sensors.len(),
                scene.grid.len(),
                cfg.sweep_cells().len()
            );
            println!("configuration ok");
        }
        Some(exp) => {
            let m = execute(&exp, &cfg, &cli.out)?;
            report(&cli.out, &m);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
