//! Time-difference-of-arrival localization and constant-velocity tracking.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x6, Matrix6, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::SPEED_OF_LIGHT;
use crate::Point3;

const MAX_ITER: usize = 50;
const STEP_TOL: f64 = 1e-9;
const MIN_RANGE: f64 = 1e-9;
const GRID_STARTS: usize = 8;
/// Floor on the measurement variance fed to the filter, m².
pub const MIN_FIX_VARIANCE: f64 = 1e-12;

/// Unknowns solved for by [`localize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SolveMode {
    /// Horizontal position at a known altitude; needs three sensors.
    Planar { altitude: f64 },
    /// Full 3D position; needs four non-coplanar sensors.
    Spatial,
}

/// TDOAs of sensors `1..n` relative to sensor 0, seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TdoaMeasurementSet {
    pub sensors: Vec<Point3>,
    pub tdoa_s: Vec<f64>,
    pub noise_dev_s: f64,
}

fn max_baseline(sensors: &[Point3]) -> f64 {
    let mut m: f64 = 0.0;
    for (i, a) in sensors.iter().enumerate() {
        for b in &sensors[i + 1..] {
            m = m.max((a - b).norm());
        }
    }
    m
}

/// Rejects layouts that cannot resolve a position in `mode`.
pub fn check_geometry(sensors: &[Point3], mode: &SolveMode) -> Result<()> {
    let (need, dims) = match mode {
        SolveMode::Planar { .. } => (3, 2),
        SolveMode::Spatial => (4, 3),
    };
    if sensors.len() < need {
        return Err(Error::BadGeometry(format!(
            "{} sensors, at least {need} required",
            sensors.len()
        )));
    }
    let n = sensors.len() as f64;
    let centroid = sensors.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let mut x = DMatrix::zeros(sensors.len(), dims);
    for (i, p) in sensors.iter().enumerate() {
        let d = p.coords - centroid;
        for k in 0..dims {
            x[(i, k)] = d[k];
        }
    }
    let sv = x.singular_values();
    let max = sv.max();
    if !(max > 0.0) || sv.min() <= 1e-9 * max {
        let what = if dims == 2 { "collinear" } else { "coplanar" };
        return Err(Error::BadGeometry(format!("sensors are {what}")));
    }
    Ok(())
}

impl TdoaMeasurementSet {
    pub fn new(sensors: Vec<Point3>, tdoa_s: Vec<f64>, noise_dev_s: f64) -> Result<Self> {
        if sensors.len() < 3 {
            return Err(Error::BadGeometry("fewer than three sensors".into()));
        }
        if tdoa_s.len() + 1 != sensors.len() {
            return Err(Error::InvalidRecord(format!(
                "{} TDOAs for {} sensors",
                tdoa_s.len(),
                sensors.len()
            )));
        }
        if !(noise_dev_s >= 0.0 && noise_dev_s.is_finite()) {
            return Err(Error::InvalidModel("noise deviation must be non-negative".into()));
        }
        let bound = max_baseline(&sensors) / SPEED_OF_LIGHT + 6.0 * noise_dev_s;
        if let Some(t) = tdoa_s.iter().find(|t| !(t.abs() <= bound * (1.0 + 1e-12))) {
            return Err(Error::InvalidRecord(format!(
                "TDOA {t:e} s exceeds the physical bound {bound:e} s"
            )));
        }
        Ok(Self {
            sensors,
            tdoa_s,
            noise_dev_s,
        })
    }
}

/// Noisy reference-relative TDOAs of a source at `source`.
pub fn simulate_tdoa<R: Rng + ?Sized>(
    source: &Point3,
    sensors: &[Point3],
    noise_dev_s: f64,
    rng: &mut R,
) -> Result<TdoaMeasurementSet> {
    check_geometry(sensors, &SolveMode::Planar { altitude: 0.0 })?;
    let noise = Normal::new(0.0, noise_dev_s)
        .map_err(|_| Error::InvalidModel("noise deviation must be non-negative".into()))?;
    let r0 = (source - sensors[0]).norm();
    let tdoa = sensors[1..]
        .iter()
        .map(|s| ((source - s).norm() - r0) / SPEED_OF_LIGHT + noise.sample(rng))
        .collect();
    TdoaMeasurementSet::new(sensors.to_vec(), tdoa, noise_dev_s)
}

pub fn simulate_tdoa_seeded(source: &Point3, sensors: &[Point3], noise_dev_s: f64, seed: u64) -> Result<TdoaMeasurementSet> {
    simulate_tdoa(source, sensors, noise_dev_s, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizeFix {
    pub position: Point3,
    /// Norm of the range-difference residuals at the solution, m.
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Position covariance from the Gauss–Newton normal matrix, m².
    pub covariance: Matrix3<f64>,
}

struct Problem<'a> {
    meas: &'a TdoaMeasurementSet,
    mode: SolveMode,
    ranges: Vec<f64>,
}

impl Problem<'_> {
    fn dims(&self) -> usize {
        match self.mode {
            SolveMode::Planar { .. } => 2,
            SolveMode::Spatial => 3,
        }
    }

    fn point(&self, x: &DVector<f64>) -> Point3 {
        match self.mode {
            SolveMode::Planar { altitude } => Point3::new(x[0], x[1], altitude),
            SolveMode::Spatial => Point3::new(x[0], x[1], x[2]),
        }
    }

    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = self.point(x);
        let s = &self.meas.sensors;
        let r0 = (p - s[0]).norm();
        DVector::from_fn(self.ranges.len(), |i, _| self.ranges[i] - ((p - s[i + 1]).norm() - r0))
    }

    fn cost(&self, x: &DVector<f64>) -> f64 {
        self.residuals(x).norm_squared()
    }

    /// Jacobian of the predicted range differences.
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let p = self.point(x);
        let s = &self.meas.sensors;
        let unit = |q: &Point3| {
            let d = p - q;
            d / d.norm().max(MIN_RANGE)
        };
        let u0 = unit(&s[0]);
        let d = self.dims();
        DMatrix::from_fn(self.ranges.len(), d, |i, k| unit(&s[i + 1])[k] - u0[k])
    }

    /// Closed-form start from the equations linearized in `(p, r₀)` by
    /// differencing against the reference sensor; needs one sensor more
    /// than the minimum.
    fn linear_start(&self) -> Option<DVector<f64>> {
        let s = &self.meas.sensors;
        let d = self.dims();
        if self.ranges.len() < d + 1 {
            return None;
        }
        let mut a = DMatrix::zeros(self.ranges.len(), d + 1);
        let mut b = DVector::zeros(self.ranges.len());
        for (i, &di) in self.ranges.iter().enumerate() {
            let q = s[i + 1] - s[0];
            let mut rhs = q.norm_squared() - di * di;
            for k in 0..d {
                a[(i, k)] = 2.0 * q[k];
            }
            if let SolveMode::Planar { altitude } = self.mode {
                rhs -= 2.0 * q.z * (altitude - s[0].z);
            }
            a[(i, d)] = 2.0 * di;
            b[i] = rhs;
        }
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        if !(svd.singular_values.min() > 1e-9 * smax) {
            return None;
        }
        let sol = svd.solve(&b, 1e-12 * smax).ok()?;
        let x = DVector::from_fn(d, |k, _| sol[k] + s[0][k]);
        x.iter().all(|v| v.is_finite()).then_some(x)
    }

    /// Lowest-cost local minima of a coarse grid over the padded sensor
    /// bounding box, best first.
    fn grid_starts(&self, count: usize) -> Vec<DVector<f64>> {
        let s = &self.meas.sensors;
        let lo = s.iter().fold(Vector3::repeat(f64::INFINITY), |a, p| a.inf(&p.coords));
        let hi = s.iter().fold(Vector3::repeat(f64::NEG_INFINITY), |a, p| a.sup(&p.coords));
        let extent = (hi - lo).xy().max().max(1.0);
        let pad = 0.5 * extent;
        let axis = |a: f64, b: f64, n: usize| -> Vec<f64> {
            (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
        };
        let xs = axis(lo.x - pad, hi.x + pad, 41);
        let ys = axis(lo.y - pad, hi.y + pad, 41);
        let zs = match self.mode {
            SolveMode::Planar { .. } => vec![0.0],
            SolveMode::Spatial => axis(lo.z - pad, hi.z + pad, 21),
        };
        let (nx, ny, nz) = (xs.len(), ys.len(), zs.len());
        let at = |i: usize, j: usize, k: usize| match self.mode {
            SolveMode::Planar { .. } => DVector::from_vec(vec![xs[i], ys[j]]),
            SolveMode::Spatial => DVector::from_vec(vec![xs[i], ys[j], zs[k]]),
        };
        let idx = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;
        let mut cost = vec![0.0; nx * ny * nz];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    cost[idx(i, j, k)] = self.cost(&at(i, j, k));
                }
            }
        }
        let near = |c: usize, n: usize| c.saturating_sub(1)..(c + 2).min(n);
        let mut minima = Vec::new();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let c = cost[idx(i, j, k)];
                    let is_min = near(k, nz).all(|kk| {
                        near(j, ny).all(|jj| near(i, nx).all(|ii| cost[idx(ii, jj, kk)] >= c))
                    });
                    if is_min {
                        minima.push((c, i, j, k));
                    }
                }
            }
        }
        minima.sort_by(|a, b| a.0.total_cmp(&b.0));
        minima.truncate(count);
        minima.into_iter().map(|(_, i, j, k)| at(i, j, k)).collect()
    }

    /// Gauss–Newton with step halving from `x`.
    fn refine(&self, mut x: DVector<f64>) -> (DVector<f64>, f64, bool, usize) {
        let mut cost = self.cost(&x);
        let mut converged = false;
        let mut iterations = 0;
        while iterations < MAX_ITER {
            iterations += 1;
            let j = self.jacobian(&x);
            let r = self.residuals(&x);
            let Some(ch) = (j.transpose() * &j).cholesky() else {
                break;
            };
            let mut step = ch.solve(&(j.transpose() * r));
            let tol = STEP_TOL * x.norm().max(1.0);
            let mut accepted = false;
            for _ in 0..40 {
                let trial = &x + &step;
                let c = self.cost(&trial);
                if c <= cost {
                    x = trial;
                    cost = c;
                    accepted = true;
                    break;
                }
                step *= 0.5;
                if step.norm() < tol {
                    break;
                }
            }
            if !accepted || step.norm() < tol {
                converged = true;
                break;
            }
        }
        (x, cost, converged, iterations)
    }
}

/// Least-squares position from reference-relative TDOAs.
///
/// Runs Gauss–Newton with step halving from `init`, or else from a
/// linearized closed-form estimate and the best local minima of a coarse grid
/// over the padded sensor bounding box, keeping the lowest-cost result. A fix that hits the iteration cap is
/// returned with `converged == false`.
pub fn localize(meas: &TdoaMeasurementSet, mode: &SolveMode, init: Option<Point3>) -> Result<LocalizeFix> {
    check_geometry(&meas.sensors, mode)?;
    let need = if matches!(mode, SolveMode::Planar { .. }) { 2 } else { 3 };
    if meas.tdoa_s.len() < need {
        return Err(Error::BadGeometry(format!(
            "{} TDOAs, at least {need} required",
            meas.tdoa_s.len()
        )));
    }
    let prob = Problem {
        meas,
        mode: *mode,
        ranges: meas.tdoa_s.iter().map(|t| t * SPEED_OF_LIGHT).collect(),
    };
    let starts = match init {
        Some(p) => vec![DVector::from_iterator(prob.dims(), p.coords.iter().copied().take(prob.dims()))],
        None => prob.linear_start().into_iter().chain(prob.grid_starts(GRID_STARTS)).collect(),
    };
    let (x, cost, converged, iterations) = starts
        .into_iter()
        .map(|x0| prob.refine(x0))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(Error::BadGeometry("no starting point".into()))?;

    let j = prob.jacobian(&x);
    let range_var = (meas.noise_dev_s * SPEED_OF_LIGHT).powi(2);
    let mut covariance = Matrix3::zeros();
    if let Some(inv) = (j.transpose() * &j).try_inverse() {
        for a in 0..prob.dims() {
            for b in 0..prob.dims() {
                covariance[(a, b)] = range_var * inv[(a, b)];
            }
        }
    }
    Ok(LocalizeFix {
        position: prob.point(&x),
        residual: cost.sqrt(),
        converged,
        iterations,
        covariance,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct MeasRow {
    t_s: f64,
    sensor_id: usize,
    tdoa_s: f64,
}

/// Measurement CSV rows (`t_s, sensor_id, tdoa_s`) grouped into one set per
/// timestamp. Rows for the reference sensor must carry a zero TDOA.
pub fn read_measurements_csv<R: Read>(
    r: R,
    sensors: &[Point3],
    noise_dev_s: f64,
) -> Result<Vec<(f64, TdoaMeasurementSet)>> {
    let mut groups: Vec<(f64, Vec<Option<f64>>)> = Vec::new();
    for row in csv::Reader::from_reader(r).deserialize() {
        let row: MeasRow = row?;
        if row.sensor_id >= sensors.len() {
            return Err(Error::InvalidRecord(format!("unknown sensor {}", row.sensor_id)));
        }
        if groups.last().map(|g| g.0) != Some(row.t_s) {
            if groups.last().is_some_and(|g| g.0 > row.t_s) {
                return Err(Error::InvalidRecord(format!("timestamp {} out of order", row.t_s)));
            }
            groups.push((row.t_s, vec![None; sensors.len()]));
        }
        let slot = &mut groups.last_mut().expect("group exists").1[row.sensor_id];
        if slot.is_some() {
            return Err(Error::InvalidRecord(format!(
                "sensor {} repeated at t = {}",
                row.sensor_id, row.t_s
            )));
        }
        *slot = Some(row.tdoa_s);
    }
    groups
        .into_iter()
        .map(|(t, vals)| {
            if vals[0].is_some_and(|v| v != 0.0) {
                return Err(Error::InvalidRecord(format!("reference TDOA must be 0 at t = {t}")));
            }
            let tdoa = vals[1..]
                .iter()
                .enumerate()
                .map(|(i, v)| v.ok_or_else(|| Error::InvalidRecord(format!("sensor {} missing at t = {t}", i + 1))))
                .collect::<Result<Vec<_>>>()?;
            Ok((t, TdoaMeasurementSet::new(sensors.to_vec(), tdoa, noise_dev_s)?))
        })
        .collect()
}

pub fn write_measurements_csv<W: Write>(sets: &[(f64, TdoaMeasurementSet)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (t, set) in sets {
        for (i, tdoa) in set.tdoa_s.iter().enumerate() {
            out.serialize(MeasRow {
                t_s: *t,
                sensor_id: i + 1,
                tdoa_s: *tdoa,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct FixRow {
    t_s: f64,
    x_m: f64,
    y_m: f64,
    z_m: f64,
    residual: f64,
    converged: bool,
}

pub fn write_fixes_csv<W: Write>(fixes: &[(f64, LocalizeFix)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (t, f) in fixes {
        out.serialize(FixRow {
            t_s: *t,
            x_m: f.position.x,
            y_m: f.position.y,
            z_m: f.position.z,
            residual: f.residual,
            converged: f.converged,
        })?;
    }
    out.flush()?;
    Ok(())
}

/// Straight-line constant-velocity source path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: [f64; 3],
    pub velocity: [f64; 3],
    pub dt: f64,
    pub steps: usize,
}

impl Trajectory {
    pub fn samples(&self) -> Vec<(f64, Point3)> {
        let start = Point3::from(self.start);
        let v = Vector3::from(self.velocity);
        (0..self.steps)
            .map(|k| {
                let t = k as f64 * self.dt;
                (t, start + v * t)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub position: Point3,
    pub velocity: Vector3<f64>,
    /// Over `(x, y, z, vx, vy, vz)`.
    pub covariance: Matrix6<f64>,
    pub timestamp: f64,
}

fn floored(cov: &Matrix3<f64>) -> Matrix3<f64> {
    let mut r = (cov + cov.transpose()) * 0.5;
    for k in 0..3 {
        r[(k, k)] = r[(k, k)].max(MIN_FIX_VARIANCE);
    }
    r
}

impl TrackState {
    /// State seeded from a first fix, at rest with velocity spread `velocity_std`.
    pub fn from_fix(timestamp: f64, fix: &LocalizeFix, velocity_std: f64) -> Self {
        let mut covariance = Matrix6::zeros();
        covariance.fixed_view_mut::<3, 3>(0, 0).copy_from(&floored(&fix.covariance));
        covariance
            .fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(Matrix3::identity() * velocity_std * velocity_std));
        Self {
            position: fix.position,
            velocity: Vector3::zeros(),
            covariance,
            timestamp,
        }
    }

    fn vector(&self) -> nalgebra::Vector6<f64> {
        let mut v = nalgebra::Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.position.coords);
        v.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        v
    }

    /// Constant-velocity prediction to `timestamp` with white acceleration of
    /// spectral level `process_noise` (m/s²).
    pub fn predict(&self, timestamp: f64, process_noise: f64) -> Result<Self> {
        let dt = timestamp - self.timestamp;
        if !(dt >= 0.0) {
            return Err(Error::InvalidRecord(format!(
                "fix at {timestamp} s precedes track time {} s",
                self.timestamp
            )));
        }
        let mut f = Matrix6::identity();
        f.fixed_view_mut::<3, 3>(0, 3).copy_from(&(Matrix3::identity() * dt));
        let q2 = process_noise * process_noise;
        let i3 = Matrix3::identity();
        let mut q = Matrix6::zeros();
        q.fixed_view_mut::<3, 3>(0, 0).copy_from(&(i3 * q2 * dt.powi(4) / 4.0));
        q.fixed_view_mut::<3, 3>(0, 3).copy_from(&(i3 * q2 * dt.powi(3) / 2.0));
        q.fixed_view_mut::<3, 3>(3, 0).copy_from(&(i3 * q2 * dt.powi(3) / 2.0));
        q.fixed_view_mut::<3, 3>(3, 3).copy_from(&(i3 * q2 * dt * dt));
        let x = f * self.vector();
        let p = f * self.covariance * f.transpose() + q;
        Ok(Self {
            position: Point3::new(x[0], x[1], x[2]),
            velocity: Vector3::new(x[3], x[4], x[5]),
            covariance: (p + p.transpose()) * 0.5,
            timestamp,
        })
    }

    /// Measurement update with a position fix, Joseph form.
    pub fn update(&self, fix: &LocalizeFix) -> Result<Self> {
        let mut h = Matrix3x6::zeros();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        let r = floored(&fix.covariance);
        let s: Matrix3<f64> = h * self.covariance * h.transpose() + r;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| Error::InvalidModel("innovation covariance is singular".into()))?;
        let k = self.covariance * h.transpose() * s_inv;
        let innov = fix.position.coords - self.position.coords;
        let x = self.vector() + k * innov;
        let a = Matrix6::identity() - k * h;
        let p = a * self.covariance * a.transpose() + k * r * k.transpose();
        Ok(Self {
            position: Point3::new(x[0], x[1], x[2]),
            velocity: Vector3::new(x[3], x[4], x[5]),
            covariance: (p + p.transpose()) * 0.5,
            timestamp: self.timestamp,
        })
    }
}

/// Filters a fix stream starting from `init`; one state per fix.
pub fn track(init: &TrackState, fixes: &[(f64, LocalizeFix)], process_noise: f64) -> Result<Vec<TrackState>> {
    let mut state = init.clone();
    let mut out = Vec::with_capacity(fixes.len());
    for (t, fix) in fixes {
        state = state.predict(*t, process_noise)?.update(fix)?;
        out.push(state.clone());
    }
    Ok(out)
}

#[derive(Serialize)]
struct TrackRow {
    t_s: f64,
    x_m: f64,
    y_m: f64,
    z_m: f64,
    vx_mps: f64,
    vy_mps: f64,
    vz_mps: f64,
    cov_trace: f64,
}

pub fn write_track_csv<W: Write>(states: &[TrackState], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in states {
        out.serialize(TrackRow {
            t_s: s.timestamp,
            x_m: s.position.x,
            y_m: s.position.y,
            z_m: s.position.z,
            vx_mps: s.velocity.x,
            vy_mps: s.velocity.y,
            vz_mps: s.velocity.z,
            cov_trace: s.covariance.trace(),
        })?;
    }
    out.flush()?;
    Ok(())
}

/// Corners of an axis-aligned square of side `aperture` centred on `center`.
pub fn square_sensors(center: &Point3, aperture: f64) -> Vec<Point3> {
    let h = aperture / 2.0;
    [(-h, -h), (h, -h), (h, h), (-h, h)]
        .iter()
        .map(|&(dx, dy)| Point3::new(center.x + dx, center.y + dy, center.z))
        .collect()
}
