//! Radio environment map reconstruction from sparse sensor measurements.
//!
//! Measurements are detrended against the known path-loss model, the
//! shadowing covariance is estimated from the residuals, and residuals are
//! interpolated by ordinary Kriging with the trend added back.

mod fit;
mod ordinary;

pub use fit::{fit_mle, fit_moments, Bin, FitDiagnostics, FitMethod, FittedCovariance, MomentsOptions};
pub use ordinary::{baseline_pathloss, krige, KrigingOptions, KrigingPlan};

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{SourceSet, ZoneLayout};
use crate::propagation::{PowerField, ShadowingModel};
use crate::Point3;

/// Per-(sensor, source) received power, with the transmitter metadata known to
/// the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorMeasurements {
    pub sensors: Vec<Point3>,
    pub sources: SourceSet,
    /// `|sensors| × |sources|`, dBm.
    pub power_dbm: DMatrix<f64>,
}

impl SensorMeasurements {
    pub fn new(sensors: Vec<Point3>, sources: SourceSet, power_dbm: DMatrix<f64>) -> Result<Self> {
        if sensors.is_empty() || sources.is_empty() {
            return Err(Error::EmptyInput("measurements need sensors and sources"));
        }
        if power_dbm.shape() != (sensors.len(), sources.len()) {
            return Err(Error::GridMismatch(format!(
                "power matrix is {:?}, expected ({}, {})",
                power_dbm.shape(),
                sensors.len(),
                sources.len()
            )));
        }
        if power_dbm.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidModel("measured powers must be finite".into()));
        }
        Ok(Self {
            sensors,
            sources,
            power_dbm,
        })
    }

    /// Rows `rows` of a field, read as sensor measurements.
    pub fn from_field_rows(field: &PowerField, rows: std::ops::Range<usize>) -> Result<Self> {
        let sensors = field.points[rows.clone()].to_vec();
        let power = field.power_db.rows(rows.start, rows.len()).into_owned();
        Self::new(sensors, field.sources.clone(), power)
    }
}

/// Shadowing residuals `measured − (tx − PL)`, `|sensors| × |sources|`.
pub fn detrend(meas: &SensorMeasurements, model: &ShadowingModel) -> Result<DMatrix<f64>> {
    let trend = PowerField::trend(model, &meas.sensors, &meas.sources)?;
    Ok(&meas.power_dbm - trend)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RemMethod {
    #[serde(rename = "kriging")]
    Kriging,
    #[serde(rename = "pathloss-baseline")]
    PathlossBaseline,
}

impl RemMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            RemMethod::Kriging => "kriging",
            RemMethod::PathlossBaseline => "pathloss-baseline",
        }
    }
}

/// Interpolated power and its variance per (point, source).
#[derive(Debug, Clone, PartialEq)]
pub struct RemEstimate {
    pub points: Vec<Point3>,
    pub sources: SourceSet,
    /// `|points| × |sources|`, dBm.
    pub pred_dbm: DMatrix<f64>,
    /// `|points| × |sources|`, dB².
    pub variance_db2: DMatrix<f64>,
    pub method: RemMethod,
}

#[derive(Serialize)]
struct RemRow {
    x_m: f64,
    y_m: f64,
    z_m: f64,
    source_id: u32,
    pred_dbm: f64,
    krig_var_db2: f64,
    method: &'static str,
}

impl RemEstimate {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for (i, p) in self.points.iter().enumerate() {
            for (s, src) in self.sources.iter().enumerate() {
                out.serialize(RemRow {
                    x_m: p.x,
                    y_m: p.y,
                    z_m: p.z,
                    source_id: src.id,
                    pred_dbm: self.pred_dbm[(i, s)],
                    krig_var_db2: self.variance_db2[(i, s)],
                    method: self.method.tag(),
                })?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Subset of evaluation points that enters an error metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    All,
    InsideZone(ZoneLayout),
    OutsideZone(ZoneLayout),
    /// Points whose radial distance is within `half_width` of the zone boundary.
    BoundaryBand { layout: ZoneLayout, half_width: f64 },
}

impl Region {
    pub fn contains(&self, p: &Point3) -> bool {
        match self {
            Region::All => true,
            Region::InsideZone(l) => !l.is_outside(p),
            Region::OutsideZone(l) => l.is_outside(p),
            Region::BoundaryBand { layout, half_width } => {
                (layout.radial_distance(p) - layout.r0).abs() <= *half_width
            }
        }
    }
}

const POINT_MATCH_TOL: f64 = 1e-9;

/// Root mean squared prediction error over the (point, source) pairs whose
/// point falls in `region`.
pub fn rmse(estimate: &RemEstimate, truth: &PowerField, region: &Region) -> Result<f64> {
    if estimate.points.len() != truth.points.len() {
        return Err(Error::GridMismatch(format!(
            "{} estimated points vs {} true points",
            estimate.points.len(),
            truth.points.len()
        )));
    }
    let ids = |s: &SourceSet| s.iter().map(|x| x.id).collect::<Vec<_>>();
    if ids(&estimate.sources) != ids(&truth.sources) {
        return Err(Error::GridMismatch("source sets differ".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (p, q)) in estimate.points.iter().zip(&truth.points).enumerate() {
        if (p - q).norm() > POINT_MATCH_TOL {
            return Err(Error::GridMismatch(format!("point {i} differs")));
        }
        if !region.contains(p) {
            continue;
        }
        for s in 0..truth.sources.len() {
            let e = estimate.pred_dbm[(i, s)] - truth.power_db[(i, s)];
            sum += e * e;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyInput("region selects no evaluation points"));
    }
    Ok((sum / count as f64).sqrt())
}
