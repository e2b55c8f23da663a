//! Out-of-zone leakage checks against protected receivers.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{SourceSet, ZoneLayout};
use crate::kriging::RemEstimate;
use crate::propagation::PowerField;
use crate::Point3;

pub const DEFAULT_K_SIGMA: f64 = 2.0;
/// Width of the MARGINAL band below the threshold, dB.
pub const MARGINAL_BAND_DB: f64 = 3.0;
const POSITION_TOL: f64 = 1e-6;

/// Incumbent passive or active receiver outside the zone.
#[derive(Debug, Clone, PartialEq)]
pub struct IparReceiver {
    pub id: String,
    pub position: Point3,
    pub threshold_dbm: f64,
    /// Protected band `[low, high)`, Hz.
    pub band_hz: (f64, f64),
}

#[derive(Debug, Serialize, Deserialize)]
struct IparRow {
    ipar_id: String,
    x_m: f64,
    y_m: f64,
    z_m: f64,
    threshold_dbm: f64,
    band_low_hz: f64,
    band_high_hz: f64,
}

impl IparReceiver {
    pub fn new(
        id: impl Into<String>,
        position: Point3,
        threshold_dbm: f64,
        band_hz: (f64, f64),
        layout: &ZoneLayout,
    ) -> Result<Self> {
        let id = id.into();
        if !layout.is_outside(&position) {
            return Err(Error::InvalidModel(format!("IPAR {id} is not outside the zone")));
        }
        if !threshold_dbm.is_finite() {
            return Err(Error::InvalidModel(format!("IPAR {id} threshold must be finite")));
        }
        if !(band_hz.0 < band_hz.1) {
            return Err(Error::InvalidModel(format!("IPAR {id} band is empty")));
        }
        Ok(Self {
            id,
            position,
            threshold_dbm,
            band_hz,
        })
    }

    pub fn protects(&self, frequency_hz: f64) -> bool {
        frequency_hz >= self.band_hz.0 && frequency_hz < self.band_hz.1
    }

    /// Columns `ipar_id, x_m, y_m, z_m, threshold_dbm, band_low_hz, band_high_hz`.
    pub fn read_csv<R: Read>(r: R, layout: &ZoneLayout) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        for row in csv::Reader::from_reader(r).deserialize() {
            let row: IparRow = row?;
            out.push(Self::new(
                row.ipar_id,
                Point3::new(row.x_m, row.y_m, row.z_m),
                row.threshold_dbm,
                (row.band_low_hz, row.band_high_hz),
                layout,
            )?);
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(ipars: &[Self], w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for p in ipars {
            out.serialize(IparRow {
                ipar_id: p.id.clone(),
                x_m: p.position.x,
                y_m: p.position.y,
                z_m: p.position.z,
                threshold_dbm: p.threshold_dbm,
                band_low_hz: p.band_hz.0,
                band_high_hz: p.band_hz.1,
            })?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Incoherent sum of powers in dBm.
pub fn aggregate_power(per_source_dbm: &[f64]) -> Result<f64> {
    if per_source_dbm.is_empty() {
        return Err(Error::EmptyInput("aggregate_power needs at least one value"));
    }
    if per_source_dbm.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidModel("powers must be finite".into()));
    }
    // factor out the maximum to stay in range for very small powers
    let max = per_source_dbm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = per_source_dbm.iter().map(|x| 10f64.powf((x - max) / 10.0)).sum();
    Ok(max + 10.0 * sum.log10())
}

/// Power predictions per (point, source) with an uncertainty.
pub trait PowerMap {
    fn points(&self) -> &[Point3];
    fn sources(&self) -> &SourceSet;
    fn power_dbm(&self, point: usize, source: usize) -> f64;
    fn variance_db2(&self, point: usize, source: usize) -> f64;
}

impl PowerMap for RemEstimate {
    fn points(&self) -> &[Point3] {
        &self.points
    }
    fn sources(&self) -> &SourceSet {
        &self.sources
    }
    fn power_dbm(&self, point: usize, source: usize) -> f64 {
        self.pred_dbm[(point, source)]
    }
    fn variance_db2(&self, point: usize, source: usize) -> f64 {
        self.variance_db2[(point, source)]
    }
}

impl PowerMap for PowerField {
    fn points(&self) -> &[Point3] {
        &self.points
    }
    fn sources(&self) -> &SourceSet {
        &self.sources
    }
    fn power_dbm(&self, point: usize, source: usize) -> f64 {
        self.power_db[(point, source)]
    }
    fn variance_db2(&self, _: usize, _: usize) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Verdict {
    Safe,
    Marginal,
    Violation,
}

impl Verdict {
    pub fn tag(&self) -> &'static str {
        match self {
            Verdict::Safe => "SAFE",
            Verdict::Marginal => "MARGINAL",
            Verdict::Violation => "VIOLATION",
        }
    }

    pub fn decide(pred_dbm: f64, margin_db: f64, threshold_dbm: f64) -> Self {
        let upper = pred_dbm + margin_db;
        if upper > threshold_dbm {
            Verdict::Violation
        } else if upper <= threshold_dbm - MARGINAL_BAND_DB {
            Verdict::Safe
        } else {
            Verdict::Marginal
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    pub source_id: u32,
    pub power_dbm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IparAssessment {
    pub ipar_id: String,
    /// Aggregate in-band power; `-inf` when no source is in band.
    pub pred_dbm: f64,
    pub margin_db: f64,
    pub threshold_dbm: f64,
    pub verdict: Verdict,
    /// In-band sources, strongest first.
    pub contributions: Vec<Contribution>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LeakageReport {
    pub rows: Vec<IparAssessment>,
}

#[derive(Serialize)]
struct ReportRow<'a> {
    ipar_id: &'a str,
    pred_dbm: f64,
    margin_db: f64,
    threshold_dbm: f64,
    verdict: &'static str,
}

#[derive(Serialize)]
struct ContributionRow<'a> {
    ipar_id: &'a str,
    source_id: u32,
    power_dbm: f64,
}

impl LeakageReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(ReportRow {
                ipar_id: &r.ipar_id,
                pred_dbm: r.pred_dbm,
                margin_db: r.margin_db,
                threshold_dbm: r.threshold_dbm,
                verdict: r.verdict.tag(),
            })?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_contributions_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            for c in &r.contributions {
                out.serialize(ContributionRow {
                    ipar_id: &r.ipar_id,
                    source_id: c.source_id,
                    power_dbm: c.power_dbm,
                })?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Fraction of IPARs with the same verdict in both reports.
    pub fn agreement(&self, other: &LeakageReport) -> Result<f64> {
        if self.rows.len() != other.rows.len() || self.rows.is_empty() {
            return Err(Error::GridMismatch("reports cover different IPARs".into()));
        }
        let same = self
            .rows
            .iter()
            .zip(&other.rows)
            .filter(|(a, b)| a.verdict == b.verdict)
            .count();
        Ok(same as f64 / self.rows.len() as f64)
    }
}

fn locate(points: &[Point3], p: &Point3) -> Option<usize> {
    points.iter().position(|q| (q - p).norm() <= POSITION_TOL)
}

/// Verdict per IPAR from the map's in-band sources.
///
/// The confidence margin is `k_sigma` standard deviations of the aggregate,
/// propagated from the per-source variances with linear power shares as
/// weights.
pub fn assess<M: PowerMap + ?Sized>(map: &M, ipars: &[IparReceiver], k_sigma: f64) -> Result<LeakageReport> {
    if !(k_sigma >= 0.0) {
        return Err(Error::InvalidModel("k_sigma must be non-negative".into()));
    }
    let mut rows = Vec::with_capacity(ipars.len());
    for ipar in ipars {
        let i = locate(map.points(), &ipar.position)
            .ok_or_else(|| Error::MissingPrediction(format!("IPAR {}", ipar.id)))?;
        let mut contributions = Vec::new();
        let mut variances = Vec::new();
        for (s, src) in map.sources().iter().enumerate() {
            if ipar.protects(src.frequency_hz) {
                contributions.push(Contribution {
                    source_id: src.id,
                    power_dbm: map.power_dbm(i, s),
                });
                variances.push(map.variance_db2(i, s));
            }
        }
        let (pred_dbm, margin_db) = if contributions.is_empty() {
            (f64::NEG_INFINITY, 0.0)
        } else {
            let powers: Vec<f64> = contributions.iter().map(|c| c.power_dbm).collect();
            let agg = aggregate_power(&powers)?;
            let var: f64 = powers
                .iter()
                .zip(&variances)
                .map(|(p, v)| 10f64.powf((p - agg) / 10.0).powi(2) * v)
                .sum();
            (agg, k_sigma * var.sqrt())
        };
        contributions.sort_by(|a, b| b.power_dbm.total_cmp(&a.power_dbm).then(a.source_id.cmp(&b.source_id)));
        rows.push(IparAssessment {
            ipar_id: ipar.id.clone(),
            pred_dbm,
            margin_db,
            threshold_dbm: ipar.threshold_dbm,
            verdict: Verdict::decide(pred_dbm, margin_db, ipar.threshold_dbm),
            contributions,
        });
    }
    Ok(LeakageReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourPoint {
    pub position: Point3,
    pub agg_dbm: f64,
}

/// Outside-zone points whose aggregate power over all sources reaches `level_dbm`.
pub fn leakage_contour<M: PowerMap + ?Sized>(map: &M, level_dbm: f64, layout: &ZoneLayout) -> Result<Vec<ContourPoint>> {
    let ns = map.sources().len();
    let mut out = Vec::new();
    let mut powers = vec![0.0; ns];
    for (i, p) in map.points().iter().enumerate() {
        if !layout.is_outside(p) {
            continue;
        }
        for (s, v) in powers.iter_mut().enumerate() {
            *v = map.power_dbm(i, s);
        }
        let agg = aggregate_power(&powers)?;
        if agg >= level_dbm {
            out.push(ContourPoint { position: *p, agg_dbm: agg });
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct ContourRow {
    x_m: f64,
    y_m: f64,
    z_m: f64,
    agg_dbm: f64,
}

pub fn write_contour_csv<W: Write>(points: &[ContourPoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for c in points {
        out.serialize(ContourRow {
            x_m: c.position.x,
            y_m: c.position.y,
            z_m: c.position.z,
            agg_dbm: c.agg_dbm,
        })?;
    }
    out.flush()?;
    Ok(())
}
