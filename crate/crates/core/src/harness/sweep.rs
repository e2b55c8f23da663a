use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{Cell, ExperimentConfig, Regime, Scene};
use crate::error::{Error, Result};
use crate::kriging::{
    baseline_pathloss, detrend, fit_mle, fit_moments, rmse, FittedCovariance, KrigingOptions, KrigingPlan,
    MomentsOptions, RemEstimate, SensorMeasurements,
};
use crate::propagation::{FieldSampler, PowerField, ShadowingModel};

/// Random stream for one trial: common to every cell of a sweep.
pub fn trial_rng(master_seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub phi_delta_rad: f64,
    pub r0_m: f64,
    pub eta: f64,
    pub trial: usize,
    pub rmse_kriging_db: Option<f64>,
    pub rmse_baseline_db: Option<f64>,
    pub error: String,
}

/// Rows `range` of a field as a field of their own.
pub fn field_rows(field: &PowerField, range: std::ops::Range<usize>) -> PowerField {
    PowerField {
        points: field.points[range.clone()].to_vec(),
        sources: field.sources.clone(),
        power_db: field.power_db.rows(range.start, range.len()).into_owned(),
        shadowing_db: field.shadowing_db.rows(range.start, range.len()).into_owned(),
        seed: field.seed,
    }
}

/// Covariance estimate for one set of residuals under `regime`.
pub fn fit_covariance(
    regime: Regime,
    residuals: &nalgebra::DMatrix<f64>,
    scene_model: &ShadowingModel,
    meas: &SensorMeasurements,
) -> Result<FittedCovariance> {
    match regime {
        Regime::TrueParams => Ok(FittedCovariance::known(scene_model)),
        Regime::Moments => fit_moments(residuals, &meas.sensors, &meas.sources, &MomentsOptions::default()),
        Regime::Mle => {
            // moments start when available, configured values otherwise
            let init = fit_moments(residuals, &meas.sensors, &meas.sources, &MomentsOptions::default())
                .unwrap_or_else(|_| FittedCovariance::known(scene_model));
            fit_mle(residuals, &meas.sensors, &meas.sources, &init)
        }
    }
}

struct CellRunner<'a> {
    cfg: &'a ExperimentConfig,
    scene: Scene,
    sampler: FieldSampler,
    plan: Option<KrigingPlan>,
    baseline: RemEstimate,
    opts: KrigingOptions,
}

impl<'a> CellRunner<'a> {
    fn new(cfg: &'a ExperimentConfig, cell: &Cell) -> Result<Self> {
        let scene = cfg.scene(cell)?;
        let targets = scene.targets();
        let mut points = scene.sensors.clone();
        points.extend_from_slice(&targets);
        let sampler = FieldSampler::new(&scene.model, &points, &scene.sources)?;
        let opts = KrigingOptions::from(&cfg.kriging);
        let plan = match cfg.regime {
            Regime::TrueParams => Some(KrigingPlan::new(&scene.model, &scene.sensors, &targets, &scene.sources, &opts)?),
            _ => None,
        };
        let baseline = baseline_pathloss(&targets, &scene.sources, &scene.model)?;
        Ok(Self {
            cfg,
            scene,
            sampler,
            plan,
            baseline,
            opts,
        })
    }

    fn trial(&self, trial: usize) -> Result<(f64, f64)> {
        let field = self.sampler.draw(&mut trial_rng(self.cfg.seed, trial));
        let n = self.scene.sensors.len();
        let meas = SensorMeasurements::from_field_rows(&field, 0..n)?;
        let truth = field_rows(&field, n..field.points.len());
        let estimate = match &self.plan {
            Some(plan) => plan.predict(&meas)?,
            None => {
                let residuals = detrend(&meas, &self.scene.model)?;
                let fit = fit_covariance(self.cfg.regime, &residuals, &self.scene.model, &meas)?;
                let fitted = fit.apply_to(&self.scene.model);
                let plan = KrigingPlan::new(&fitted, &meas.sensors, &truth.points, &meas.sources, &self.opts)?;
                plan.apply(&residuals)?
            }
        };
        Ok((
            rmse(&estimate, &truth, &self.scene.region)?,
            rmse(&self.baseline, &truth, &self.scene.region)?,
        ))
    }
}

fn error_row(cell: &Cell, trial: usize, e: &Error) -> SweepRow {
    SweepRow {
        phi_delta_rad: cell.phi_delta_rad,
        r0_m: cell.r0_m,
        eta: cell.eta,
        trial,
        rmse_kriging_db: None,
        rmse_baseline_db: None,
        error: e.to_string(),
    }
}

/// All trials of the given cells, in cell order then trial order. Failures
/// become rows with an error message instead of aborting.
pub fn run_cells(cfg: &ExperimentConfig, cells: &[Cell]) -> Vec<SweepRow> {
    let mut rows = Vec::with_capacity(cells.len() * cfg.trials);
    for cell in cells {
        match CellRunner::new(cfg, cell) {
            Err(e) => rows.extend((0..cfg.trials).map(|t| error_row(cell, t, &e))),
            Ok(runner) => {
                let cell_rows: Vec<SweepRow> = (0..cfg.trials)
                    .into_par_iter()
                    .map(|t| match runner.trial(t) {
                        Ok((k, b)) => SweepRow {
                            phi_delta_rad: cell.phi_delta_rad,
                            r0_m: cell.r0_m,
                            eta: cell.eta,
                            trial: t,
                            rmse_kriging_db: Some(k),
                            rmse_baseline_db: Some(b),
                            error: String::new(),
                        },
                        Err(e) => error_row(cell, t, &e),
                    })
                    .collect();
                rows.extend(cell_rows);
            }
        }
    }
    rows
}

pub fn run_rmse_sweep(cfg: &ExperimentConfig) -> Vec<SweepRow> {
    run_cells(cfg, &cfg.sweep_cells())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Aggregates over the successful trials of one cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub phi_delta_rad: f64,
    pub r0_m: f64,
    pub eta: f64,
    pub trials_ok: usize,
    pub trials_failed: usize,
    pub mean_kriging_db: f64,
    pub stderr_kriging_db: f64,
    pub mean_baseline_db: f64,
    pub stderr_baseline_db: f64,
    /// Fraction of successful trials where Kriging beats the baseline.
    pub kriging_win_rate: f64,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One summary per cell, in first-appearance order.
pub fn summarize(rows: &[SweepRow]) -> Vec<CellSummary> {
    let mut out: Vec<CellSummary> = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let key = (rows[start].phi_delta_rad, rows[start].r0_m, rows[start].eta);
        let end = rows[start..]
            .iter()
            .position(|r| (r.phi_delta_rad, r.r0_m, r.eta) != key)
            .map_or(rows.len(), |k| start + k);
        let group = &rows[start..end];
        let ok: Vec<(f64, f64)> = group
            .iter()
            .filter_map(|r| Some((r.rmse_kriging_db?, r.rmse_baseline_db?)))
            .collect();
        let k: Vec<f64> = ok.iter().map(|p| p.0).collect();
        let b: Vec<f64> = ok.iter().map(|p| p.1).collect();
        let (mk, sk) = mean_stderr(&k);
        let (mb, sb) = mean_stderr(&b);
        let wins = ok.iter().filter(|(k, b)| k < b).count();
        out.push(CellSummary {
            phi_delta_rad: key.0,
            r0_m: key.1,
            eta: key.2,
            trials_ok: ok.len(),
            trials_failed: group.len() - ok.len(),
            mean_kriging_db: mk,
            stderr_kriging_db: sk,
            mean_baseline_db: mb,
            stderr_baseline_db: sb,
            kriging_win_rate: if ok.is_empty() { f64::NAN } else { wins as f64 / ok.len() as f64 },
        });
        start = end;
    }
    out
}

pub fn write_summary_csv<W: Write>(rows: &[CellSummary], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
