use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::runs::{localize_stream, run_leakage, simulate_trajectory, track_stream};
use super::sweep::{field_rows, fit_covariance, run_rmse_sweep, summarize, trial_rng, write_summary_csv, write_sweep_csv};
use crate::compliance::{calibrate, read_sweep_csv, run_compliance, write_classified_csv, write_events, BandTable, ThresholdProfile};
use crate::error::{Error, Result};
use crate::geometry::validate_sources;
use crate::kriging::{baseline_pathloss, detrend, rmse, KrigingOptions, KrigingPlan, SensorMeasurements};
use crate::leakage::{write_contour_csv, IparReceiver};
use crate::propagation::{FieldSampler, PowerField};
use crate::tdoa::{read_measurements_csv, write_fixes_csv, write_measurements_csv, write_track_csv};

pub const MANIFEST_FILE: &str = "manifest.toml";
const MANIFEST_VERSION: &str = "1";

/// One runnable experiment with its input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    SimulateField,
    RmseSweep,
    Rem {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        input: Option<PathBuf>,
    },
    Leakage {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ipars: Option<PathBuf>,
    },
    TdoaSim,
    TdoaLocalize {
        input: PathBuf,
    },
    Track {
        input: PathBuf,
    },
    ComplianceCalibrate {
        input: PathBuf,
    },
    ComplianceClassify {
        input: PathBuf,
        profile: PathBuf,
    },
    Los {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        height_m: Option<f64>,
    },
}

impl Experiment {
    pub fn inputs(&self) -> Vec<&Path> {
        match self {
            Experiment::Rem { input: Some(p) } | Experiment::Leakage { ipars: Some(p) } => vec![p.as_path()],
            Experiment::TdoaLocalize { input } | Experiment::Track { input } | Experiment::ComplianceCalibrate { input } => {
                vec![input.as_path()]
            }
            Experiment::ComplianceClassify { input, profile } => vec![input.as_path(), profile.as_path()],
            _ => Vec::new(),
        }
    }
}

/// Record of one run: enough to repeat it and check the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub experiment: Experiment,
    /// sha256 of each input file, keyed by path as given.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    /// sha256 of each output file, keyed by file name.
    pub artifacts: BTreeMap<String, String>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

pub enum ConfigSource {
    Config(ExperimentConfig),
    Manifest(Box<Manifest>),
}

/// Reads either a plain configuration or a run manifest.
pub fn load_config_or_manifest(path: &Path) -> Result<ConfigSource> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let value: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    if value.contains_key("experiment") && value.contains_key("artifacts") {
        Ok(ConfigSource::Manifest(Box::new(Manifest::from_toml(&text)?)))
    } else {
        Ok(ConfigSource::Config(ExperimentConfig::from_toml(&text)?))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

struct ArtifactWriter<'a> {
    dir: &'a Path,
    hashes: BTreeMap<String, String>,
}

impl ArtifactWriter<'_> {
    fn emit<F>(&mut self, name: &str, render: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        render(&mut buf)?;
        fs::write(self.dir.join(name), &buf).map_err(|e| Error::Io(format!("{name}: {e}")))?;
        self.hashes.insert(name.to_string(), sha256_hex(&buf));
        Ok(())
    }
}

fn write_rows<T: Serialize>(rows: &[T], w: &mut Vec<u8>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RmseRow {
    region: &'static str,
    rmse_kriging_db: f64,
    rmse_baseline_db: f64,
}

#[derive(Serialize)]
struct PointRow {
    t_s: f64,
    x_m: f64,
    y_m: f64,
    z_m: f64,
}

#[derive(Serialize)]
struct SensorRow {
    sensor_id: usize,
    x_m: f64,
    y_m: f64,
    z_m: f64,
}

#[derive(Serialize)]
struct LosRow {
    height_m: f64,
    earth_radius_m: f64,
    los_range_m: f64,
}

#[derive(Serialize)]
struct AgreementRow {
    ipars: usize,
    agreement: f64,
}

fn run_rem(cfg: &ExperimentConfig, input: Option<&Path>, out: &mut ArtifactWriter) -> Result<()> {
    let scene = cfg.scene(&cfg.base_cell())?;
    let targets = scene.targets();
    let (meas, truth) = match input {
        Some(path) => {
            let field = PowerField::read_csv(read_input(path)?.as_slice(), &scene.sources)?;
            let n = field.points.len();
            (SensorMeasurements::from_field_rows(&field, 0..n)?, None)
        }
        None => {
            let mut points = scene.sensors.clone();
            points.extend_from_slice(&targets);
            let field = FieldSampler::new(&scene.model, &points, &scene.sources)?.draw(&mut trial_rng(cfg.seed, 0));
            let n = scene.sensors.len();
            let truth = field_rows(&field, n..field.points.len());
            (SensorMeasurements::from_field_rows(&field, 0..n)?, Some(truth))
        }
    };
    let residuals = detrend(&meas, &scene.model)?;
    let fit = fit_covariance(cfg.regime, &residuals, &scene.model, &meas)?;
    let plan = KrigingPlan::new(
        &fit.apply_to(&scene.model),
        &meas.sensors,
        &targets,
        &meas.sources,
        &KrigingOptions::from(&cfg.kriging),
    )?;
    let rem = plan.apply(&residuals)?;
    let baseline = baseline_pathloss(&targets, &scene.sources, &scene.model)?;
    out.emit("rem_kriging.csv", |w| rem.write_csv(w))?;
    out.emit("rem_baseline.csv", |w| baseline.write_csv(w))?;
    if let Some(truth) = truth {
        let row = RmseRow {
            region: cfg.grid.region.tag(),
            rmse_kriging_db: rmse(&rem, &truth, &scene.region)?,
            rmse_baseline_db: rmse(&baseline, &truth, &scene.region)?,
        };
        out.emit("rem_rmse.csv", |w| write_rows(&[row], w))?;
    }
    Ok(())
}

fn run_experiment(exp: &Experiment, cfg: &ExperimentConfig, out: &mut ArtifactWriter) -> Result<()> {
    match exp {
        Experiment::SimulateField => {
            let scene = cfg.scene(&cfg.base_cell())?;
            let mut points = scene.sensors.clone();
            points.extend(scene.targets());
            let field = FieldSampler::new(&scene.model, &points, &scene.sources)?.draw(&mut trial_rng(cfg.seed, 0));
            let n = scene.sensors.len();
            out.emit("sources.csv", |w| validate_sources(&scene.layout, &scene.sources).write_csv(w))?;
            out.emit("sensors_field.csv", |w| field_rows(&field, 0..n).write_csv(w))?;
            out.emit("grid_field.csv", |w| field_rows(&field, n..field.points.len()).write_csv(w))?;
        }
        Experiment::RmseSweep => {
            let rows = run_rmse_sweep(cfg);
            out.emit("sweep.csv", |w| write_sweep_csv(&rows, w))?;
            out.emit("sweep_summary.csv", |w| write_summary_csv(&summarize(&rows), w))?;
        }
        Experiment::Rem { input } => run_rem(cfg, input.as_deref(), out)?,
        Experiment::Leakage { ipars } => {
            let ipars = match ipars {
                Some(path) => {
                    let layout = cfg.scene(&cfg.base_cell())?.layout;
                    Some(IparReceiver::read_csv(read_input(path)?.as_slice(), &layout)?)
                }
                None => None,
            };
            let res = run_leakage(cfg, ipars, 0)?;
            out.emit("ipars.csv", |w| IparReceiver::write_csv(&res.ipars, w))?;
            out.emit("leakage_true.csv", |w| res.true_report.write_csv(w))?;
            out.emit("leakage_rem.csv", |w| res.rem_report.write_csv(w))?;
            out.emit("leakage_contributions.csv", |w| res.rem_report.write_contributions_csv(w))?;
            out.emit("leakage_contour.csv", |w| write_contour_csv(&res.contour, w))?;
            let row = AgreementRow {
                ipars: res.ipars.len(),
                agreement: res.agreement,
            };
            out.emit("leakage_agreement.csv", |w| write_rows(&[row], w))?;
        }
        Experiment::TdoaSim => {
            let (sets, truth) = simulate_trajectory(cfg)?;
            let sensors: Vec<SensorRow> = cfg
                .tdoa
                .sensor_positions()
                .iter()
                .enumerate()
                .map(|(i, p)| SensorRow {
                    sensor_id: i,
                    x_m: p.x,
                    y_m: p.y,
                    z_m: p.z,
                })
                .collect();
            let truth: Vec<PointRow> = truth
                .iter()
                .map(|(t, p)| PointRow {
                    t_s: *t,
                    x_m: p.x,
                    y_m: p.y,
                    z_m: p.z,
                })
                .collect();
            out.emit("tdoa_sensors.csv", |w| write_rows(&sensors, w))?;
            out.emit("tdoa_measurements.csv", |w| write_measurements_csv(&sets, w))?;
            out.emit("tdoa_truth.csv", |w| write_rows(&truth, w))?;
        }
        Experiment::TdoaLocalize { input } | Experiment::Track { input } => {
            let sets = read_measurements_csv(
                read_input(input)?.as_slice(),
                &cfg.tdoa.sensor_positions(),
                cfg.tdoa.noise_dev_s,
            )?;
            let fixes = localize_stream(&sets, &cfg.tdoa.solve)?;
            out.emit("tdoa_fixes.csv", |w| write_fixes_csv(&fixes, w))?;
            if matches!(exp, Experiment::Track { .. }) {
                let states = track_stream(&fixes, cfg)?;
                out.emit("track.csv", |w| write_track_csv(&states, w))?;
            }
        }
        Experiment::ComplianceCalibrate { input } => {
            let records = read_sweep_csv(read_input(input)?.as_slice(), &cfg.compliance.span()?)?;
            let profile = calibrate(&records, &BandTable::builtin(), &cfg.compliance.calibration)?;
            out.emit("profile.csv", |w| profile.write_csv(w))?;
        }
        Experiment::ComplianceClassify { input, profile } => {
            let records = read_sweep_csv(read_input(input)?.as_slice(), &cfg.compliance.span()?)?;
            let profile = ThresholdProfile::read_csv(read_input(profile)?.as_slice(), &cfg.compliance.calibration)?;
            let (classified, events) =
                run_compliance(&records, &profile, &BandTable::builtin(), &cfg.compliance.authorized()?);
            out.emit("classified.csv", |w| write_classified_csv(&classified, w))?;
            out.emit("events.jsonl", |w| write_events(&events, w))?;
        }
        Experiment::Los { height_m } => {
            let r = cfg.los.earth_radius_m;
            let heights = match height_m {
                Some(h) => vec![*h],
                None => cfg.los.heights_m.clone(),
            };
            let rows = heights
                .iter()
                .map(|&h| {
                    Ok(LosRow {
                        height_m: h,
                        earth_radius_m: r,
                        los_range_m: super::los_range(h, r)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            out.emit("los.csv", |w| write_rows(&rows, w))?;
        }
    }
    Ok(())
}

/// Runs `exp` under `cfg`, writing artifacts and then the manifest into
/// `out_dir`. Artifacts written before a failure are left in place.
pub fn execute(exp: &Experiment, cfg: &ExperimentConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let mut inputs = BTreeMap::new();
    for path in exp.inputs() {
        inputs.insert(path.display().to_string(), sha256_hex(&read_input(path)?));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::Io(format!("{}: {e}", out_dir.display())))?;
    let mut writer = ArtifactWriter {
        dir: out_dir,
        hashes: BTreeMap::new(),
    };
    run_experiment(exp, cfg, &mut writer)?;
    let manifest = Manifest {
        version: MANIFEST_VERSION.to_string(),
        experiment: exp.clone(),
        inputs,
        artifacts: writer.hashes,
        config: cfg.clone(),
    };
    fs::write(out_dir.join(MANIFEST_FILE), manifest.to_toml()?)?;
    Ok(manifest)
}

/// Repeats the run recorded in `manifest` into `out_dir` and checks that
/// inputs and every artifact hash match.
pub fn replay(manifest: &Manifest, out_dir: &Path) -> Result<Manifest> {
    for (path, hash) in &manifest.inputs {
        let now = sha256_hex(&read_input(Path::new(path))?);
        if &now != hash {
            return Err(Error::ReplayMismatch(format!("input {path} changed since the recorded run")));
        }
    }
    let again = execute(&manifest.experiment, &manifest.config, out_dir)?;
    if again.artifacts != manifest.artifacts {
        let differing: Vec<&str> = manifest
            .artifacts
            .keys()
            .chain(again.artifacts.keys())
            .filter(|k| manifest.artifacts.get(*k) != again.artifacts.get(*k))
            .map(String::as_str)
            .collect();
        return Err(Error::ReplayMismatch(format!("artifacts differ: {}", differing.join(", "))));
    }
    Ok(again)
}
