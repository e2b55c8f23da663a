use std::f64::consts::TAU;

use rand::Rng;

use super::config::{ExperimentConfig, Scene};
use super::sweep::{field_rows, fit_covariance, trial_rng};
use crate::error::Result;
use crate::kriging::{detrend, KrigingOptions, KrigingPlan, RemEstimate, SensorMeasurements};
use crate::leakage::{assess, leakage_contour, ContourPoint, IparReceiver, LeakageReport};
use crate::propagation::{FieldSampler, PowerField};
use crate::tdoa::{
    localize, simulate_tdoa, LocalizeFix, SolveMode, TdoaMeasurementSet, TrackState,
};
use crate::Point3;

/// Evenly spaced IPARs on a circle beyond the zone edge, offset by half a
/// step from the first sensor bearing, protecting the sources' carrier.
pub fn default_ipars(cfg: &ExperimentConfig, scene: &Scene) -> Result<Vec<IparReceiver>> {
    let l = &cfg.leakage;
    let radius = scene.layout.r0 + l.default_ipar_offset_m;
    let f = cfg.sources.frequency_hz;
    (0..l.default_ipar_count)
        .map(|k| {
            let theta = TAU * (k as f64 + 0.5) / l.default_ipar_count as f64;
            let o = scene.layout.origin;
            IparReceiver::new(
                format!("ipar-{k:02}"),
                Point3::new(o.x + radius * theta.cos(), o.y + radius * theta.sin(), o.z + cfg.grid.altitude_m),
                l.default_threshold_dbm,
                (0.5 * f, 1.5 * f),
                &scene.layout,
            )
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct LeakageOutcome {
    pub ipars: Vec<IparReceiver>,
    /// Verdicts from the simulated field itself.
    pub true_report: LeakageReport,
    /// Verdicts from the Kriged map with its confidence margin.
    pub rem_report: LeakageReport,
    pub agreement: f64,
    pub contour: Vec<ContourPoint>,
}

/// Field → sensor measurements → REM → IPAR assessment for one trial of the
/// base cell, alongside the assessment of the true field.
pub fn run_leakage(cfg: &ExperimentConfig, ipars: Option<Vec<IparReceiver>>, trial: usize) -> Result<LeakageOutcome> {
    let scene = cfg.scene(&cfg.base_cell())?;
    let ipars = match ipars {
        Some(v) => v,
        None => default_ipars(cfg, &scene)?,
    };
    let mut targets: Vec<Point3> = ipars.iter().map(|p| p.position).collect();
    targets.extend(scene.targets());
    let mut points = scene.sensors.clone();
    points.extend_from_slice(&targets);

    // co-located receivers share one sample
    let (unique, index) = dedup_points(&points);
    let sampler = FieldSampler::new(&scene.model, &unique, &scene.sources)?;
    let field = select_rows(&sampler.draw(&mut trial_rng(cfg.seed, trial)), &index);
    let n = scene.sensors.len();
    let meas = SensorMeasurements::from_field_rows(&field, 0..n)?;
    let truth = field_rows(&field, n..field.points.len());

    let residuals = detrend(&meas, &scene.model)?;
    let fit = fit_covariance(cfg.regime, &residuals, &scene.model, &meas)?;
    let plan = KrigingPlan::new(
        &fit.apply_to(&scene.model),
        &scene.sensors,
        &targets,
        &scene.sources,
        &KrigingOptions::from(&cfg.kriging),
    )?;
    let rem = plan.apply(&residuals)?;

    let k = cfg.leakage.k_sigma;
    let true_report = assess(&truth, &ipars, k)?;
    let rem_report = assess(&rem, &ipars, k)?;
    let agreement = true_report.agreement(&rem_report)?;
    let m = ipars.len();
    let grid_rem = RemEstimate {
        points: rem.points[m..].to_vec(),
        sources: rem.sources.clone(),
        pred_dbm: rem.pred_dbm.rows(m, rem.points.len() - m).into_owned(),
        variance_db2: rem.variance_db2.rows(m, rem.points.len() - m).into_owned(),
        method: rem.method,
    };
    let contour = leakage_contour(&grid_rem, cfg.leakage.contour_level_dbm, &scene.layout)?;
    Ok(LeakageOutcome {
        ipars,
        true_report,
        rem_report,
        agreement,
        contour,
    })
}

fn dedup_points(points: &[Point3]) -> (Vec<Point3>, Vec<usize>) {
    let mut unique: Vec<Point3> = Vec::new();
    let index = points
        .iter()
        .map(|p| match unique.iter().position(|q| q == p) {
            Some(i) => i,
            None => {
                unique.push(*p);
                unique.len() - 1
            }
        })
        .collect();
    (unique, index)
}

fn select_rows(field: &PowerField, index: &[usize]) -> PowerField {
    PowerField {
        points: index.iter().map(|&i| field.points[i]).collect(),
        sources: field.sources.clone(),
        power_db: field.power_db.select_rows(index),
        shadowing_db: field.shadowing_db.select_rows(index),
        seed: field.seed,
    }
}

fn random_source<R: Rng + ?Sized>(sensors: &[Point3], mode: &SolveMode, rng: &mut R) -> Point3 {
    let lo = sensors.iter().fold(Point3::from([f64::INFINITY; 3]), |a, p| a.inf(p));
    let hi = sensors.iter().fold(Point3::from([f64::NEG_INFINITY; 3]), |a, p| a.sup(p));
    let x = rng.random_range(lo.x..=hi.x);
    let y = rng.random_range(lo.y..=hi.y);
    let z = match mode {
        SolveMode::Planar { altitude } => *altitude,
        SolveMode::Spatial if hi.z > lo.z => rng.random_range(lo.z..=hi.z),
        SolveMode::Spatial => lo.z,
    };
    Point3::new(x, y, z)
}

/// Position errors of `trials` independent fixes for sources drawn uniformly
/// over the sensor bounding box.
pub fn localization_errors(
    sensors: &[Point3],
    mode: &SolveMode,
    noise_dev_s: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..trials)
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let src = random_source(sensors, mode, &mut rng);
            let meas = simulate_tdoa(&src, sensors, noise_dev_s, &mut rng)?;
            Ok((localize(&meas, mode, None)?.position - src).norm())
        })
        .collect()
}

pub type TimedSets = Vec<(f64, TdoaMeasurementSet)>;

/// Measurements along the configured trajectory with the true positions.
pub fn simulate_trajectory(cfg: &ExperimentConfig) -> Result<(TimedSets, Vec<(f64, Point3)>)> {
    let t = &cfg.tdoa;
    let sensors = t.sensor_positions();
    let truth = t.trajectory.samples();
    let sets = truth
        .iter()
        .enumerate()
        .map(|(k, (ts, p))| Ok((*ts, simulate_tdoa(p, &sensors, t.noise_dev_s, &mut trial_rng(cfg.seed, k))?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((sets, truth))
}

pub fn localize_stream(sets: &[(f64, TdoaMeasurementSet)], mode: &SolveMode) -> Result<Vec<(f64, LocalizeFix)>> {
    sets.iter().map(|(t, m)| Ok((*t, localize(m, mode, None)?))).collect()
}

/// Kalman track seeded from the first fix and updated with the rest.
pub fn track_stream(fixes: &[(f64, LocalizeFix)], cfg: &ExperimentConfig) -> Result<Vec<TrackState>> {
    let Some((t0, first)) = fixes.first() else {
        return Ok(Vec::new());
    };
    let init = TrackState::from_fix(*t0, first, cfg.tdoa.velocity_std);
    let mut states = vec![init.clone()];
    states.extend(crate::tdoa::track(&init, &fixes[1..], cfg.tdoa.process_noise)?);
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leakage::Verdict;
    use crate::propagation::ShadowingModel;

    fn analytic_level(cfg: &ExperimentConfig, ipar: &Point3) -> f64 {
        let scene = cfg.scene(&cfg.base_cell()).unwrap();
        let powers: Vec<f64> = scene
            .sources
            .iter()
            .map(|s| scene.model.mean_power(s, ipar).unwrap())
            .collect();
        crate::leakage::aggregate_power(&powers).unwrap()
    }

    #[test]
    fn leakage_analytic_thresholds() {
        let mut cfg = ExperimentConfig::default();
        cfg.model = ShadowingModel {
            sigma_db: 0.0,
            ..cfg.model
        };
        cfg.sources.count = 1;
        cfg.grid.n = 8;
        let scene = cfg.scene(&cfg.base_cell()).unwrap();
        let p = Point3::new(900.0, 30.0, 0.0);
        let level = analytic_level(&cfg, &p);
        let f = cfg.sources.frequency_hz;
        let safe = IparReceiver::new("safe", p, level + 5.0, (0.0, 2.0 * f), &scene.layout).unwrap();
        let hot = IparReceiver::new("hot", p, level - 1.0, (0.0, 2.0 * f), &scene.layout).unwrap();
        let out = run_leakage(&cfg, Some(vec![safe, hot]), 0).unwrap();
        for rep in [&out.true_report, &out.rem_report] {
            assert_eq!(rep.rows[0].verdict, Verdict::Safe);
            assert_eq!(rep.rows[1].verdict, Verdict::Violation);
            assert!((rep.rows[0].pred_dbm - level).abs() < 1e-9);
        }
        assert_eq!(out.agreement, 1.0);
    }

    #[test]
    fn default_ipars_are_outside() {
        let cfg = ExperimentConfig::default();
        let scene = cfg.scene(&cfg.base_cell()).unwrap();
        let ipars = default_ipars(&cfg, &scene).unwrap();
        assert_eq!(ipars.len(), 16);
        assert!(ipars.iter().all(|p| scene.layout.is_outside(&p.position)));
    }

    #[test]
    fn noiseless_localization_is_exact() {
        let cfg = ExperimentConfig::default();
        let errs = localization_errors(&cfg.tdoa.sensor_positions(), &cfg.tdoa.solve, 0.0, 20, 5).unwrap();
        assert!(errs.iter().all(|e| *e < 1e-3));
    }

    #[test]
    fn trajectory_pipeline() {
        let mut cfg = ExperimentConfig::default();
        cfg.tdoa.trajectory.steps = 10;
        let (sets, truth) = simulate_trajectory(&cfg).unwrap();
        assert_eq!(sets.len(), 10);
        let fixes = localize_stream(&sets, &cfg.tdoa.solve).unwrap();
        let states = track_stream(&fixes, &cfg).unwrap();
        assert_eq!(states.len(), 10);
        assert_eq!(states[9].timestamp, truth[9].0);
    }
}
