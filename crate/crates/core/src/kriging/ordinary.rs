use nalgebra::DMatrix;

use super::{detrend, FittedCovariance, RemEstimate, RemMethod, SensorMeasurements};
use crate::error::{Error, Result};
use crate::geometry::SourceSet;
use crate::linalg::bordered_lu;
use crate::propagation::{covariance_matrix, AngularFactors, PowerField, ShadowingModel};
use crate::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KrigingOptions {
    /// Pool every (sensor, source) residual into one system per target
    /// instead of solving each source separately.
    pub cross_source: bool,
    /// Measurement noise variance added to the sensor diagonal, dB².
    pub nugget_db2: f64,
}

/// Kriging weights for a fixed sensor layout, target set and covariance.
///
/// Building the plan is the expensive step; applying it to a new set of
/// residuals is a matrix product per source.
#[derive(Debug, Clone)]
pub struct KrigingPlan {
    model: ShadowingModel,
    sensors: Vec<Point3>,
    targets: Vec<Point3>,
    sources: SourceSet,
    trend: DMatrix<f64>,
    /// Per source, `|targets| × |observations|`.
    weights: Vec<DMatrix<f64>>,
    variance: DMatrix<f64>,
    cross_source: bool,
    jitter: f64,
}

fn cross_factor(a: &DMatrix<f64>, s: usize, b: &DMatrix<f64>, t: usize) -> f64 {
    (0..a.ncols()).map(|k| a[(s, k)] * b[(k, t)]).sum()
}

impl KrigingPlan {
    /// `model` carries the path-loss trend and the (fitted) covariance.
    pub fn new(
        model: &ShadowingModel,
        sensors: &[Point3],
        targets: &[Point3],
        sources: &SourceSet,
        opts: &KrigingOptions,
    ) -> Result<Self> {
        if sensors.is_empty() || targets.is_empty() || sources.is_empty() {
            return Err(Error::EmptyInput("kriging needs sensors, targets and sources"));
        }
        if !(opts.nugget_db2 >= 0.0 && opts.nugget_db2.is_finite()) {
            return Err(Error::InvalidModel("nugget must be non-negative".into()));
        }
        // weights do not depend on the covariance scale; without shadowing
        // they come from the correlation alone and the variance is zero
        let degenerate = model.sigma_db == 0.0;
        let model_w = if degenerate { model.with_sigma(1.0) } else { *model };
        let var = model_w.sigma_db * model_w.sigma_db;
        let full = covariance_matrix(&model_w, sensors, sources)?;
        let trend = PowerField::trend(model, targets, sources)?;
        let src = sources.positions();
        let ns = src.len();
        let n = sensors.len();
        let sensor_f = AngularFactors::new(sensors, &src, model.theta_corr)?;
        let target_f = AngularFactors::new(targets, &src, model.theta_corr)?;
        let dist: Vec<Vec<f64>> = targets
            .iter()
            .map(|p| sensors.iter().map(|q| model.distance_correlation(p, q)).collect())
            .collect();

        let solve = |cov: DMatrix<f64>, rhs: DMatrix<f64>| -> Result<(DMatrix<f64>, f64)> {
            let mut cov = cov;
            for i in 0..cov.nrows() {
                cov[(i, i)] += opts.nugget_db2;
            }
            let (lu, jitter) = bordered_lu(&cov, var)?;
            let sol = lu.solve(&rhs).ok_or(Error::SingularSystem)?;
            Ok((sol, jitter))
        };

        let mut weights = Vec::with_capacity(ns);
        let mut variance = DMatrix::zeros(targets.len(), ns);
        let mut max_jitter: f64 = 0.0;
        for s in 0..ns {
            let (cov, m) = if opts.cross_source {
                (full.clone(), n * ns)
            } else {
                let idx: Vec<usize> = (0..n).map(|i| i * ns + s).collect();
                (full.select_rows(&idx).select_columns(&idx), n)
            };
            let mut rhs = DMatrix::zeros(m + 1, targets.len());
            for (k, tf) in target_f.root.iter().enumerate() {
                for i in 0..n {
                    let d = var * dist[k][i];
                    if opts.cross_source {
                        for t in 0..ns {
                            rhs[(i * ns + t, k)] = d * cross_factor(tf, s, &sensor_f.root[i], t);
                        }
                    } else {
                        rhs[(i, k)] = d * cross_factor(tf, s, &sensor_f.root[i], s);
                    }
                }
                rhs[(m, k)] = 1.0;
            }
            let (sol, jitter) = solve(cov, rhs.clone())?;
            max_jitter = max_jitter.max(jitter);
            for k in 0..targets.len() {
                let wc: f64 = (0..m).map(|r| sol[(r, k)] * rhs[(r, k)]).sum();
                variance[(k, s)] = if degenerate { 0.0 } else { (var - wc - sol[(m, k)]).max(0.0) };
            }
            weights.push(sol.rows(0, m).transpose());
        }

        Ok(Self {
            model: *model,
            sensors: sensors.to_vec(),
            targets: targets.to_vec(),
            sources: sources.clone(),
            trend,
            weights,
            variance,
            cross_source: opts.cross_source,
            jitter: max_jitter,
        })
    }

    /// Weights for source index `s`, one row per target.
    pub fn weights(&self, s: usize) -> &DMatrix<f64> {
        &self.weights[s]
    }

    pub fn variance(&self) -> &DMatrix<f64> {
        &self.variance
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn targets(&self) -> &[Point3] {
        &self.targets
    }

    /// Prediction from shadowing residuals, `|sensors| × |sources|`.
    pub fn apply(&self, residuals: &DMatrix<f64>) -> Result<RemEstimate> {
        let ns = self.sources.len();
        if residuals.shape() != (self.sensors.len(), ns) {
            return Err(Error::GridMismatch(format!(
                "residuals are {:?}, plan expects ({}, {})",
                residuals.shape(),
                self.sensors.len(),
                ns
            )));
        }
        let stacked = if self.cross_source {
            // point-major, matching the covariance layout
            Some(nalgebra::DVector::from_iterator(
                residuals.len(),
                residuals.transpose().iter().copied(),
            ))
        } else {
            None
        };
        let mut pred = self.trend.clone();
        for s in 0..ns {
            let z = match &stacked {
                Some(v) => &self.weights[s] * v,
                None => &self.weights[s] * residuals.column(s),
            };
            for k in 0..self.targets.len() {
                pred[(k, s)] += z[k];
            }
        }
        Ok(RemEstimate {
            points: self.targets.clone(),
            sources: self.sources.clone(),
            pred_dbm: pred,
            variance_db2: self.variance.clone(),
            method: RemMethod::Kriging,
        })
    }

    /// Detrends `meas` with the plan's model and applies the weights.
    pub fn predict(&self, meas: &SensorMeasurements) -> Result<RemEstimate> {
        if meas.sensors != self.sensors {
            return Err(Error::GridMismatch("measurements come from other sensors".into()));
        }
        self.apply(&detrend(meas, &self.model)?)
    }
}

/// One-shot ordinary Kriging of `meas` onto `targets`.
pub fn krige(
    meas: &SensorMeasurements,
    targets: &[Point3],
    model: &ShadowingModel,
    fit: &FittedCovariance,
    opts: &KrigingOptions,
) -> Result<RemEstimate> {
    let fitted = fit.apply_to(model);
    KrigingPlan::new(&fitted, &meas.sensors, targets, &meas.sources, opts)?.predict(meas)
}

/// Trend-only map: deterministic path loss with the shadowing variance as
/// the uncertainty everywhere.
pub fn baseline_pathloss(
    targets: &[Point3],
    sources: &SourceSet,
    model: &ShadowingModel,
) -> Result<RemEstimate> {
    let pred = PowerField::trend(model, targets, sources)?;
    let var = model.sigma_db * model.sigma_db;
    Ok(RemEstimate {
        points: targets.to_vec(),
        sources: sources.clone(),
        variance_db2: DMatrix::from_element(pred.nrows(), pred.ncols(), var),
        pred_dbm: pred,
        method: RemMethod::PathlossBaseline,
    })
}
