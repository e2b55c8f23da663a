//! Log-distance path loss and jointly Gaussian (in dB) shadowing fields.
//!
//! Shadowing between location `p` for source `s` and location `q` for source
//! `t` is modelled as
//!
//! ```text
//! C[(p,s),(q,t)] = σ² · exp(-‖p − q‖ / d_c) · (A(p) · A(q))[s,t]
//! ```
//!
//! where `A(p)` is the symmetric square root of the angular correlation matrix
//! seen from `p`, `M(p)[s,t] = exp(-Δθ_p(s,t) / θ_c)`. At a single location the
//! cross-source correlation is exactly `M(p)`; for a single source it reduces to
//! the exponential auto-correlation. When `M` varies slowly over a decorrelation
//! distance the cross term is approximately the product of both factors. The
//! construction is a location-dependent coregionalization and is positive
//! semidefinite for any geometry.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_between, bearing, Source, SourceSet};
use crate::linalg::cholesky_jittered;
use crate::Point3;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadowingModel {
    /// Path-loss exponent.
    pub eta: f64,
    /// Shadowing standard deviation, dB.
    pub sigma_db: f64,
    /// Decorrelation distance, m.
    pub d_corr: f64,
    /// Decorrelation angle, rad.
    pub theta_corr: f64,
    /// Reference distance `d₀`, m.
    pub ref_distance: f64,
    /// Loss at `d₀`; free-space loss at the carrier frequency when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_loss_db: Option<f64>,
}

impl Default for ShadowingModel {
    fn default() -> Self {
        Self {
            eta: 3.0,
            sigma_db: 8.0,
            d_corr: 50.0,
            theta_corr: PI / 6.0,
            ref_distance: 1.0,
            ref_loss_db: None,
        }
    }
}

/// Free-space path loss `20·log10(4π d f / c)` in dB.
pub fn free_space_loss_db(distance: f64, frequency_hz: f64) -> f64 {
    20.0 * (4.0 * PI * distance * frequency_hz / SPEED_OF_LIGHT).log10()
}

impl ShadowingModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidModel(format!("{what} = {v}")));
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return bad("eta must be > 0, got", self.eta);
        }
        if !(self.sigma_db.is_finite() && self.sigma_db >= 0.0) {
            return bad("sigma_db must be >= 0, got", self.sigma_db);
        }
        if !(self.d_corr.is_finite() && self.d_corr > 0.0) {
            return bad("d_corr must be > 0, got", self.d_corr);
        }
        if !(self.theta_corr.is_finite() && self.theta_corr > 0.0) {
            return bad("theta_corr must be > 0, got", self.theta_corr);
        }
        if !(self.ref_distance.is_finite() && self.ref_distance > 0.0) {
            return bad("ref_distance must be > 0, got", self.ref_distance);
        }
        if let Some(l) = self.ref_loss_db {
            if !l.is_finite() {
                return bad("ref_loss_db must be finite, got", l);
            }
        }
        Ok(())
    }

    pub fn with_sigma(self, sigma_db: f64) -> Self {
        Self { sigma_db, ..self }
    }

    pub fn ref_loss(&self, frequency_hz: f64) -> f64 {
        self.ref_loss_db
            .unwrap_or_else(|| free_space_loss_db(self.ref_distance, frequency_hz))
    }

    /// `ref_loss + 10·η·log10(d / d₀)`; undefined below `d₀`.
    pub fn path_loss(&self, distance: f64, frequency_hz: f64) -> Result<f64> {
        if !(distance >= self.ref_distance) {
            return Err(Error::TooClose {
                distance,
                reference: self.ref_distance,
            });
        }
        Ok(self.ref_loss(frequency_hz) + 10.0 * self.eta * (distance / self.ref_distance).log10())
    }

    /// Mean received power of `source` at `p`, dBm.
    pub fn mean_power(&self, source: &Source, p: &Point3) -> Result<f64> {
        let d = (p - source.position).norm();
        Ok(source.tx_power_dbm - self.path_loss(d, source.frequency_hz)?)
    }

    pub fn distance_correlation(&self, a: &Point3, b: &Point3) -> f64 {
        (-(a - b).norm() / self.d_corr).exp()
    }
}

/// Angular correlation matrix `M(p)` of all sources seen from `p`.
pub fn angular_correlation(p: &Point3, sources: &[Point3], theta_corr: f64) -> Result<DMatrix<f64>> {
    let n = sources.len();
    if n == 1 {
        return Ok(DMatrix::identity(1, 1));
    }
    let bearings = sources
        .iter()
        .map(|s| bearing(p, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(n, n, |s, t| {
        if s == t {
            1.0
        } else {
            (-angle_between(bearings[s], bearings[t]) / theta_corr).exp()
        }
    }))
}

/// Symmetric square root of a symmetric PSD matrix, clamping round-off
/// negatives in the spectrum to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 1 {
        return DMatrix::from_element(1, 1, m[(0, 0)].max(0.0).sqrt());
    }
    let eig = SymmetricEigen::new(m.clone());
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&root) * v.transpose()
}

/// Angular structure at a set of locations: `M(p)` and its square root `A(p)`.
#[derive(Debug, Clone)]
pub struct AngularFactors {
    pub corr: Vec<DMatrix<f64>>,
    pub root: Vec<DMatrix<f64>>,
}

impl AngularFactors {
    pub fn new(points: &[Point3], sources: &[Point3], theta_corr: f64) -> Result<Self> {
        let mut corr = Vec::with_capacity(points.len());
        let mut root = Vec::with_capacity(points.len());
        for p in points {
            let m = angular_correlation(p, sources, theta_corr)?;
            root.push(psd_sqrt(&m));
            corr.push(m);
        }
        Ok(Self { corr, root })
    }

    /// Angular factor between `(i, s)` and `(j, t)`.
    pub fn factor(&self, i: usize, s: usize, j: usize, t: usize) -> f64 {
        if i == j {
            return self.corr[i][(s, t)];
        }
        let (a, b) = (&self.root[i], &self.root[j]);
        (0..a.ncols()).map(|k| a[(s, k)] * b[(k, t)]).sum()
    }
}

/// Shadowing correlation between `(point_a, src_a)` and `(point_b, src_b)`;
/// sources are indices into `sources`.
pub fn correlation(
    model: &ShadowingModel,
    point_a: &Point3,
    point_b: &Point3,
    src_a: usize,
    src_b: usize,
    sources: &[Point3],
) -> Result<f64> {
    let dist = model.distance_correlation(point_a, point_b);
    if sources.len() == 1 {
        return Ok(dist);
    }
    if point_a == point_b {
        if src_a == src_b {
            return Ok(1.0);
        }
        let m = angular_correlation(point_a, sources, model.theta_corr)?;
        return Ok(m[(src_a, src_b)]);
    }
    let f = AngularFactors::new(&[*point_a, *point_b], sources, model.theta_corr)?;
    Ok(dist * f.factor(0, src_a, 1, src_b))
}

fn check_distinct(points: &[Point3], sources: &SourceSet) -> Result<()> {
    let mut seen = HashSet::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        if !seen.insert([p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]) {
            return Err(Error::DuplicateSample {
                point: i,
                source_id: sources.iter().next().map_or(0, |s| s.id),
            });
        }
    }
    Ok(())
}

/// Full shadowing covariance (dB²) over `points × sources`, point-major:
/// row `i·S + s` is point `i` for source `s`. No jitter is applied here.
pub fn covariance_matrix(
    model: &ShadowingModel,
    points: &[Point3],
    sources: &SourceSet,
) -> Result<DMatrix<f64>> {
    model.validate()?;
    if points.is_empty() || sources.is_empty() {
        return Err(Error::EmptyInput("covariance needs points and sources"));
    }
    check_distinct(points, sources)?;
    let src = sources.positions();
    let ns = src.len();
    let factors = AngularFactors::new(points, &src, model.theta_corr)?;
    let var = model.sigma_db * model.sigma_db;
    let n = points.len() * ns;
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..points.len() {
        for j in i..points.len() {
            let d = model.distance_correlation(&points[i], &points[j]);
            for s in 0..ns {
                let t0 = if i == j { s } else { 0 };
                for t in t0..ns {
                    let c = var * d * factors.factor(i, s, j, t);
                    cov[(i * ns + s, j * ns + t)] = c;
                    cov[(j * ns + t, i * ns + s)] = c;
                }
            }
        }
    }
    Ok(cov)
}

/// Received power field for a set of sources at a set of locations.
///
/// `power_db[(i, s)] = tx_power(s) − path_loss(d(p_i, s)) + shadowing_db[(i, s)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerField {
    pub points: Vec<Point3>,
    pub sources: SourceSet,
    pub power_db: DMatrix<f64>,
    pub shadowing_db: DMatrix<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldRow {
    x_m: f64,
    y_m: f64,
    z_m: f64,
    source_id: u32,
    power_dbm: f64,
    shadowing_db: f64,
}

impl PowerField {
    /// Deterministic mean-power surface (`tx − PL`), `|points| × |sources|`.
    pub fn trend(model: &ShadowingModel, points: &[Point3], sources: &SourceSet) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(points.len(), sources.len());
        for (i, p) in points.iter().enumerate() {
            for (s, src) in sources.iter().enumerate() {
                m[(i, s)] = model.mean_power(src, p)?;
            }
        }
        Ok(m)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for (i, p) in self.points.iter().enumerate() {
            for (s, src) in self.sources.iter().enumerate() {
                out.serialize(FieldRow {
                    x_m: p.x,
                    y_m: p.y,
                    z_m: p.z,
                    source_id: src.id,
                    power_dbm: self.power_db[(i, s)],
                    shadowing_db: self.shadowing_db[(i, s)],
                })?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a field written by [`PowerField::write_csv`]. Source metadata is
    /// not part of the file and must be supplied.
    pub fn read_csv<R: Read>(r: R, sources: &SourceSet) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let rows = rdr
            .deserialize::<FieldRow>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let ns = sources.len();
        if ns == 0 || rows.len() % ns != 0 {
            return Err(Error::GridMismatch(format!(
                "{} rows is not a multiple of {} sources",
                rows.len(),
                ns
            )));
        }
        let np = rows.len() / ns;
        let mut points = Vec::with_capacity(np);
        let mut power_db = DMatrix::zeros(np, ns);
        let mut shadowing_db = DMatrix::zeros(np, ns);
        for (k, row) in rows.iter().enumerate() {
            let (i, s) = (k / ns, k % ns);
            if row.source_id != sources[s].id {
                return Err(Error::GridMismatch(format!(
                    "row {k}: expected source {}, found {}",
                    sources[s].id, row.source_id
                )));
            }
            let p = Point3::new(row.x_m, row.y_m, row.z_m);
            if s == 0 {
                points.push(p);
            } else if points[i] != p {
                return Err(Error::GridMismatch(format!("row {k}: point changed within a block")));
            }
            power_db[(i, s)] = row.power_dbm;
            shadowing_db[(i, s)] = row.shadowing_db;
        }
        Ok(Self {
            points,
            sources: sources.clone(),
            power_db,
            shadowing_db,
            seed: None,
        })
    }
}

/// Reusable sampler for one geometry and model: factorizes once, draws many.
///
/// Draws use the factor `G = diag(A(p_i)) · (L ⊗ I)` where `L` is the
/// Cholesky factor of the distance correlation matrix, so that `G Gᵀ` is the
/// covariance of [`covariance_matrix`] divided by `σ²`.
#[derive(Debug, Clone)]
pub struct FieldSampler {
    model: ShadowingModel,
    points: Vec<Point3>,
    sources: SourceSet,
    trend: DMatrix<f64>,
    chol: Option<DMatrix<f64>>,
    roots: Vec<DMatrix<f64>>,
    jitter: f64,
}

impl FieldSampler {
    pub fn new(model: &ShadowingModel, points: &[Point3], sources: &SourceSet) -> Result<Self> {
        model.validate()?;
        if points.is_empty() || sources.is_empty() {
            return Err(Error::EmptyInput("field needs points and sources"));
        }
        check_distinct(points, sources)?;
        let trend = PowerField::trend(model, points, sources)?;
        let src = sources.positions();
        let roots = AngularFactors::new(points, &src, model.theta_corr)?.root;
        let (chol, jitter) = if model.sigma_db > 0.0 {
            let n = points.len();
            let dist = DMatrix::from_fn(n, n, |i, j| {
                model.distance_correlation(&points[i], &points[j])
            });
            let (ch, jitter) = cholesky_jittered(&dist, 1.0)?;
            (Some(ch.unpack()), jitter)
        } else {
            (None, 0.0)
        };
        Ok(Self {
            model: *model,
            points: points.to_vec(),
            sources: sources.clone(),
            trend,
            chol,
            roots,
            jitter,
        })
    }

    /// Jitter added to the distance correlation diagonal (relative to σ²).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// Shadowing-only draw, `|points| × |sources|`, dB.
    pub fn draw_shadowing<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let (np, ns) = (self.points.len(), self.sources.len());
        let Some(l) = &self.chol else {
            return DMatrix::zeros(np, ns);
        };
        // row-major draw order so the stream layout is independent of nalgebra storage
        let mut z = DMatrix::zeros(np, ns);
        for i in 0..np {
            for k in 0..ns {
                z[(i, k)] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let y = l * z;
        let sigma = self.model.sigma_db;
        let mut out = DMatrix::zeros(np, ns);
        for i in 0..np {
            let a = &self.roots[i];
            for s in 0..ns {
                let mut acc = 0.0;
                for k in 0..ns {
                    acc += a[(s, k)] * y[(i, k)];
                }
                out[(i, s)] = sigma * acc;
            }
        }
        out
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> PowerField {
        let shadowing_db = self.draw_shadowing(rng);
        let power_db = &self.trend + &shadowing_db;
        PowerField {
            points: self.points.clone(),
            sources: self.sources.clone(),
            power_db,
            shadowing_db,
            seed: None,
        }
    }

    pub fn draw_seeded(&self, seed: u64) -> PowerField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PowerField {
            seed: Some(seed),
            ..self.draw(&mut rng)
        }
    }
}

/// One seeded draw of the received power field at `points`.
pub fn sample_field(
    model: &ShadowingModel,
    points: &[Point3],
    sources: &SourceSet,
    seed: u64,
) -> Result<PowerField> {
    Ok(FieldSampler::new(model, points, sources)?.draw_seeded(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Source;

    fn src(id: u32, x: f64, y: f64) -> Source {
        Source {
            id,
            position: Point3::new(x, y, 10.0),
            tx_power_dbm: 30.0,
            frequency_hz: 1e9,
        }
    }

    fn e_inv() -> f64 {
        (-1.0f64).exp()
    }

    #[test]
    fn path_loss_reference_identity() {
        let m = ShadowingModel {
            ref_loss_db: Some(40.0),
            ..Default::default()
        };
        assert_eq!(m.path_loss(1.0, 1e9).unwrap(), 40.0);
        let m4 = ShadowingModel { eta: 4.0, ..m };
        assert!((m4.path_loss(10.0, 1e9).unwrap() - 80.0).abs() < 1e-12);
        assert!(matches!(m.path_loss(0.5, 1e9), Err(Error::TooClose { .. })));
    }

    #[test]
    fn free_space_anchor() {
        // oracle: spell out 20·log10(4π d f / c) term by term
        let fspl = |d: f64| 20.0 * d.log10() + 20.0 * 1e9f64.log10() + 20.0 * (4.0 * PI / SPEED_OF_LIGHT).log10();
        let m = ShadowingModel {
            eta: 2.0,
            ..Default::default()
        };
        let at1 = m.path_loss(1.0, 1e9).unwrap();
        let at100 = m.path_loss(100.0, 1e9).unwrap();
        assert!((at1 - fspl(1.0)).abs() < 1e-9);
        assert!((at100 - fspl(100.0)).abs() < 1e-9);
        assert!((at1 - 32.45).abs() < 0.01);
        assert!((at100 - 72.45).abs() < 0.01);
    }

    #[test]
    fn model_validation() {
        assert!(ShadowingModel::default().validate().is_ok());
        for bad in [
            ShadowingModel { eta: 0.0, ..Default::default() },
            ShadowingModel { sigma_db: -1.0, ..Default::default() },
            ShadowingModel { d_corr: 0.0, ..Default::default() },
            ShadowingModel { theta_corr: 0.0, ..Default::default() },
            ShadowingModel { ref_distance: 0.0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::InvalidModel(_))));
        }
    }

    #[test]
    fn correlation_anchors() {
        let m = ShadowingModel::default();
        let one = [Point3::new(0.0, 0.0, 10.0)];
        let p = Point3::new(100.0, 0.0, 0.0);
        assert_eq!(correlation(&m, &p, &p, 0, 0, &one).unwrap(), 1.0);
        let q = Point3::new(100.0, 50.0, 0.0);
        assert!((correlation(&m, &p, &q, 0, 0, &one).unwrap() - e_inv()).abs() < 1e-15);

        // two sources seen θ_c apart from the origin
        let s = [
            Point3::new(100.0, 0.0, 0.0),
            Point3::new(100.0 * m.theta_corr.cos(), 100.0 * m.theta_corr.sin(), 0.0),
        ];
        let o = Point3::origin();
        assert!((correlation(&m, &o, &o, 0, 1, &s).unwrap() - e_inv()).abs() < 1e-12);
        assert_eq!(correlation(&m, &o, &o, 1, 1, &s).unwrap(), 1.0);
    }

    #[test]
    fn small_covariances() {
        let m = ShadowingModel::default();
        let one = SourceSet::new(vec![src(0, 0.0, 0.0)]).unwrap();
        let c = covariance_matrix(&m, &[Point3::new(100.0, 0.0, 0.0)], &one).unwrap();
        assert_eq!(c.as_slice(), &[64.0]);
        let pts = [Point3::new(100.0, 0.0, 0.0), Point3::new(150.0, 0.0, 0.0)];
        let c = covariance_matrix(&m, &pts, &one).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[64.0, 64.0 * e_inv(), 64.0 * e_inv(), 64.0]);
        assert!((c - expect).abs().max() < 1e-12);
    }

    #[test]
    fn duplicate_points_rejected() {
        let m = ShadowingModel::default();
        let one = SourceSet::new(vec![src(0, 0.0, 0.0)]).unwrap();
        let p = Point3::new(5.0, 5.0, 0.0);
        assert!(matches!(
            covariance_matrix(&m, &[p, p], &one),
            Err(Error::DuplicateSample { .. })
        ));
    }

    fn random_scene(seed: u64, np: usize) -> (Vec<Point3>, SourceSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<_> = (0..np)
            .map(|_| Point3::new(rng.random_range(-300.0..300.0), rng.random_range(-300.0..300.0), 0.0))
            .collect();
        let sources = SourceSet::new(
            (0..3)
                .map(|k| src(k, rng.random_range(-300.0..300.0), rng.random_range(-300.0..300.0)))
                .collect(),
        )
        .unwrap();
        (points, sources)
    }

    #[test]
    fn covariance_is_psd_on_random_scenes() {
        let m = ShadowingModel::default();
        for seed in 0..20 {
            let (points, sources) = random_scene(seed, 20);
            let c = covariance_matrix(&m, &points, &sources).unwrap();
            assert!((&c - c.transpose()).abs().max() <= 1e-12);
            let min = SymmetricEigen::new(c).eigenvalues.min();
            assert!(min >= -1e-8 * 64.0, "seed {seed}: min eigenvalue {min}");
        }
    }

    #[test]
    fn sampler_factor_reproduces_covariance() {
        // dual route: explicit covariance vs the structured factor G Gᵀ
        let m = ShadowingModel::default();
        let (points, sources) = random_scene(7, 12);
        let cov = covariance_matrix(&m, &points, &sources).unwrap();
        let sampler = FieldSampler::new(&m, &points, &sources).unwrap();
        let (np, ns) = (points.len(), sources.len());
        let l = sampler.chol.as_ref().unwrap();
        let mut g = DMatrix::zeros(np * ns, np * ns);
        for i in 0..np {
            for j in 0..=i {
                for s in 0..ns {
                    for k in 0..ns {
                        g[(i * ns + s, j * ns + k)] = m.sigma_db * sampler.roots[i][(s, k)] * l[(i, j)];
                    }
                }
            }
        }
        let back = &g * g.transpose();
        assert!((back - cov).abs().max() < 1e-9);
    }

    #[test]
    fn zero_sigma_gives_trend() {
        let m = ShadowingModel::default().with_sigma(0.0);
        let (points, sources) = random_scene(3, 10);
        let f = sample_field(&m, &points, &sources, 11).unwrap();
        assert!(f.shadowing_db.iter().all(|&x| x == 0.0));
        assert_eq!(f.power_db, PowerField::trend(&m, &points, &sources).unwrap());
    }

    #[test]
    fn seeded_draws_are_bit_identical() {
        let m = ShadowingModel::default();
        let (points, sources) = random_scene(5, 15);
        let a = sample_field(&m, &points, &sources, 99).unwrap();
        let b = sample_field(&m, &points, &sources, 99).unwrap();
        assert_eq!(a, b);
        let c = sample_field(&m, &points, &sources, 100).unwrap();
        assert_ne!(a.shadowing_db, c.shadowing_db);
        let resid = &a.power_db - (PowerField::trend(&m, &points, &sources).unwrap() + &a.shadowing_db);
        assert!(resid.abs().max() <= 1e-9);
    }

    #[test]
    fn field_too_close_to_source() {
        let m = ShadowingModel::default();
        let one = SourceSet::new(vec![src(0, 0.0, 0.0)]).unwrap();
        let r = sample_field(&m, &[Point3::new(0.0, 0.5, 10.0)], &one, 1);
        assert!(matches!(r, Err(Error::TooClose { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let m = ShadowingModel::default();
        let (points, sources) = random_scene(9, 6);
        let f = sample_field(&m, &points, &sources, 4).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x_m,y_m,z_m,source_id,power_dbm,shadowing_db\n"));
        assert_eq!(text.lines().count(), 1 + 6 * 3);
        let back = PowerField::read_csv(buf.as_slice(), &sources).unwrap();
        assert_eq!(back.points, f.points);
        assert_eq!(back.power_db, f.power_db);
        assert_eq!(back.shadowing_db, f.shadowing_db);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn correlation_symmetric_and_bounded(
                ax in -200.0f64..200.0, ay in -200.0f64..200.0,
                bx in -200.0f64..200.0, by in -200.0f64..200.0,
                s in 0usize..3, t in 0usize..3, seed in 0u64..1000,
            ) {
                let m = ShadowingModel::default();
                let (_, sources) = random_scene(seed, 1);
                let src = sources.positions();
                let a = Point3::new(ax, ay, 0.0);
                let b = Point3::new(bx, by, 0.0);
                let ab = correlation(&m, &a, &b, s, t, &src).unwrap();
                let ba = correlation(&m, &b, &a, t, s, &src).unwrap();
                prop_assert!((ab - ba).abs() < 1e-12);
                prop_assert!(ab.abs() <= 1.0 + 1e-12);
                if a != b || s != t {
                    // 1 only when both separations vanish
                    let sep = crate::geometry::azimuth_separation(&a, &src[s], &src[t]).unwrap();
                    prop_assert!(ab < 1.0 || sep == 0.0 && a == b);
                }
            }

            #[test]
            fn correlation_monotone_in_each_separation(d1 in 0.0f64..500.0, d2 in 0.0f64..500.0, th1 in 0.0f64..PI, th2 in 0.0f64..PI) {
                let m = ShadowingModel::default();
                let one = [Point3::new(0.0, 0.0, 10.0)];
                let o = Point3::new(1000.0, 0.0, 0.0);
                let c = |d: f64| correlation(&m, &o, &Point3::new(1000.0, d, 0.0), 0, 0, &one).unwrap();
                let (near, far) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
                prop_assert!(c(near) >= c(far));

                let at = |th: f64| [Point3::new(1.0, 0.0, 0.0), Point3::new(th.cos(), th.sin(), 0.0)];
                let o = Point3::origin();
                let (small, large) = if th1 <= th2 { (th1, th2) } else { (th2, th1) };
                let cs = correlation(&m, &o, &o, 0, 1, &at(small)).unwrap();
                let cl = correlation(&m, &o, &o, 0, 1, &at(large)).unwrap();
                prop_assert!(cs >= cl - 1e-15);
            }
        }
    }
}
