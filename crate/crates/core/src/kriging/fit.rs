use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{azimuth_separation, SourceSet};
use crate::linalg::{cholesky_jittered, inv_quad, log_det};
use crate::propagation::{covariance_matrix, ShadowingModel};
use crate::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    Moments,
    MaxLikelihood,
    /// Parameters taken from the generating model.
    Known,
}

/// One separation bin of the empirical correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub lower: f64,
    pub upper: f64,
    pub mean_separation: f64,
    pub pairs: usize,
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostics {
    pub method: FitMethod,
    pub distance_bins: Vec<Bin>,
    pub angle_bins: Vec<Bin>,
    /// Weighted log-correlation SSE (moments) or log-likelihood (MLE).
    pub objective: f64,
    pub iterations: usize,
    /// θ_c could not be identified and holds the configured default.
    pub theta_defaulted: bool,
}

/// Estimated shadowing covariance parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedCovariance {
    pub sigma_db: f64,
    pub d_corr: f64,
    pub theta_corr: f64,
    pub diagnostics: FitDiagnostics,
}

impl FittedCovariance {
    pub fn known(model: &ShadowingModel) -> Self {
        Self {
            sigma_db: model.sigma_db,
            d_corr: model.d_corr,
            theta_corr: model.theta_corr,
            diagnostics: FitDiagnostics {
                method: FitMethod::Known,
                distance_bins: Vec::new(),
                angle_bins: Vec::new(),
                objective: 0.0,
                iterations: 0,
                theta_defaulted: false,
            },
        }
    }

    /// `base` with the covariance parameters replaced by the estimates.
    pub fn apply_to(&self, base: &ShadowingModel) -> ShadowingModel {
        ShadowingModel {
            sigma_db: self.sigma_db,
            d_corr: self.d_corr,
            theta_corr: self.theta_corr,
            ..*base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentsOptions {
    pub distance_bins: usize,
    pub angle_bins: usize,
    pub min_pairs_per_bin: usize,
    /// Bins at or below this correlation are left out of the fit.
    pub min_correlation: f64,
    pub min_sensor_pairs: usize,
    /// Reported θ_c when fewer than two sources are observed.
    pub default_theta_corr: f64,
}

impl Default for MomentsOptions {
    fn default() -> Self {
        Self {
            distance_bins: 10,
            angle_bins: 8,
            min_pairs_per_bin: 4,
            min_correlation: 0.05,
            min_sensor_pairs: 8,
            default_theta_corr: PI / 6.0,
        }
    }
}

fn check_shape(residuals: &DMatrix<f64>, sensors: &[Point3], sources: &SourceSet) -> Result<()> {
    if residuals.shape() != (sensors.len(), sources.len()) {
        return Err(Error::GridMismatch(format!(
            "residuals are {:?}, expected ({}, {})",
            residuals.shape(),
            sensors.len(),
            sources.len()
        )));
    }
    Ok(())
}

fn check_spread(residuals: &DMatrix<f64>) -> Result<f64> {
    let n = residuals.len() as f64;
    let mean = residuals.mean();
    let spread = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let scale = residuals.iter().map(|r| r * r).sum::<f64>() / n;
    if !(spread > 1e-12 * scale.max(1.0)) {
        return Err(Error::DegenerateResiduals(format!(
            "residuals have no spread (variance {spread:e})"
        )));
    }
    Ok(scale)
}

/// Equal-width bins over `[0, max]` of `(separation, product)` pairs.
fn bin_products(pairs: &[(f64, f64)], bins: usize, max: f64, var: f64, min_pairs: usize) -> Vec<Bin> {
    let width = max / bins as f64;
    let mut acc = vec![(0.0, 0.0, 0usize); bins];
    for &(h, prod) in pairs {
        let k = if width > 0.0 {
            ((h / width) as usize).min(bins - 1)
        } else {
            0
        };
        acc[k].0 += h;
        acc[k].1 += prod;
        acc[k].2 += 1;
    }
    acc.into_iter()
        .enumerate()
        .filter(|(_, (_, _, n))| *n >= min_pairs)
        .map(|(k, (hs, ps, n))| Bin {
            lower: k as f64 * width,
            upper: (k + 1) as f64 * width,
            mean_separation: hs / n as f64,
            pairs: n,
            correlation: ps / n as f64 / var,
        })
        .collect()
}

/// Weight of a bin in the log-correlation fit: the inverse delta-method
/// variance of `ln ρ̂`, `n ρ² / (1 + ρ²)`.
fn bin_weight(b: &Bin) -> f64 {
    let r2 = b.correlation * b.correlation;
    b.pairs as f64 * r2 / (1.0 + r2)
}

/// Weighted least squares of `ln ρ = −h / scale` through the origin.
/// Returns `(scale, weighted SSE)`.
fn fit_exponential(bins: &[Bin], floor: f64, what: &'static str) -> Result<(f64, f64)> {
    // leading run of bins above the floor; later bins are sampling noise
    let used: Vec<&Bin> = bins.iter().take_while(|b| b.correlation > floor).collect();
    if used.is_empty() {
        return Err(Error::NoPositiveCorrelation { what, floor });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for b in &used {
        let w = bin_weight(b);
        num += w * b.mean_separation * b.correlation.ln();
        den += w * b.mean_separation * b.mean_separation;
    }
    let slope = num / den;
    if !(slope < 0.0) || !slope.is_finite() {
        return Err(Error::NoPositiveCorrelation { what, floor });
    }
    let sse = used
        .iter()
        .map(|b| bin_weight(b) * (b.correlation.ln() - slope * b.mean_separation).powi(2))
        .sum();
    Ok((-1.0 / slope, sse))
}

/// Method-of-moments fit of σ, d_c and θ_c from shadowing residuals.
///
/// Same-source sensor pairs give the distance correlation, cross-source pairs
/// at the same sensor give the angular correlation. Residuals are taken as
/// zero-mean, so correlations are mean products over `σ̂²`.
pub fn fit_moments(
    residuals: &DMatrix<f64>,
    sensors: &[Point3],
    sources: &SourceSet,
    opts: &MomentsOptions,
) -> Result<FittedCovariance> {
    check_shape(residuals, sensors, sources)?;
    let n = sensors.len();
    let pair_count = n * n.saturating_sub(1) / 2;
    if pair_count < opts.min_sensor_pairs {
        return Err(Error::InsufficientPairs {
            found: pair_count,
            required: opts.min_sensor_pairs,
        });
    }
    let var = check_spread(residuals)?;
    let ns = sources.len();

    let mut dist_pairs = Vec::with_capacity(pair_count * ns);
    let mut max_h: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let h = (sensors[i] - sensors[j]).norm();
            max_h = max_h.max(h);
            for s in 0..ns {
                dist_pairs.push((h, residuals[(i, s)] * residuals[(j, s)]));
            }
        }
    }
    let distance_bins = bin_products(&dist_pairs, opts.distance_bins, max_h, var, opts.min_pairs_per_bin);
    let (d_corr, dist_sse) = fit_exponential(&distance_bins, opts.min_correlation, "decorrelation distance")?;

    let src = sources.positions();
    let (theta_corr, angle_bins, angle_sse, theta_defaulted) = if ns < 2 {
        (opts.default_theta_corr, Vec::new(), 0.0, true)
    } else {
        let mut angle_pairs = Vec::with_capacity(n * ns * (ns - 1) / 2);
        for (i, p) in sensors.iter().enumerate() {
            for s in 0..ns {
                for t in s + 1..ns {
                    let dtheta = azimuth_separation(p, &src[s], &src[t])?;
                    angle_pairs.push((dtheta, residuals[(i, s)] * residuals[(i, t)]));
                }
            }
        }
        let bins = bin_products(&angle_pairs, opts.angle_bins, PI, var, opts.min_pairs_per_bin);
        let (theta, sse) = fit_exponential(&bins, opts.min_correlation, "decorrelation angle")?;
        (theta, bins, sse, false)
    };

    Ok(FittedCovariance {
        sigma_db: var.sqrt(),
        d_corr,
        theta_corr,
        diagnostics: FitDiagnostics {
            method: FitMethod::Moments,
            distance_bins,
            angle_bins,
            objective: dist_sse + angle_sse,
            iterations: 0,
            theta_defaulted,
        },
    })
}

const MLE_MAX_ITER: usize = 200;
const MLE_STEP_TOL: f64 = 1e-4;
const MLE_INITIAL_STEP: f64 = 0.5;

/// Gaussian log-likelihood of the stacked residuals under `(σ, d_c, θ_c)`.
pub(crate) fn log_likelihood(
    residuals: &DMatrix<f64>,
    sensors: &[Point3],
    sources: &SourceSet,
    sigma: f64,
    d_corr: f64,
    theta_corr: f64,
) -> Result<f64> {
    let model = ShadowingModel {
        sigma_db: sigma,
        d_corr,
        theta_corr,
        ..Default::default()
    };
    let cov = covariance_matrix(&model, sensors, sources)?;
    let (ch, _) = cholesky_jittered(&cov, sigma * sigma)?;
    // covariance rows are point-major: i·S + s
    let ns = sources.len();
    let x = DVector::from_fn(residuals.len(), |k, _| residuals[(k / ns, k % ns)]);
    let n = x.len() as f64;
    Ok(-0.5 * (log_det(&ch) + inv_quad(&ch, &x) + n * (2.0 * PI).ln()))
}

/// Maximum-likelihood refinement of `init` by compass search in log-parameter
/// space. The returned likelihood is never below the one at `init`.
pub fn fit_mle(
    residuals: &DMatrix<f64>,
    sensors: &[Point3],
    sources: &SourceSet,
    init: &FittedCovariance,
) -> Result<FittedCovariance> {
    check_shape(residuals, sensors, sources)?;
    check_spread(residuals)?;
    if !(init.sigma_db > 0.0 && init.d_corr > 0.0 && init.theta_corr > 0.0) {
        return Err(Error::InvalidModel("MLE start must be strictly positive".into()));
    }
    // θ_c does not enter the likelihood with a single source
    let dims = if sources.len() < 2 { 2 } else { 3 };
    let eval = |x: &[f64; 3]| {
        log_likelihood(residuals, sensors, sources, x[0].exp(), x[1].exp(), x[2].exp())
    };

    let mut x = [init.sigma_db.ln(), init.d_corr.ln(), init.theta_corr.ln()];
    let mut best = eval(&x)?;
    let mut step = MLE_INITIAL_STEP;
    let mut iterations = 0;
    while iterations < MLE_MAX_ITER && step >= MLE_STEP_TOL {
        iterations += 1;
        let mut improved = false;
        for d in 0..dims {
            for dir in [1.0, -1.0] {
                let mut trial = x;
                trial[d] += dir * step;
                // unfactorizable trial points are simply not accepted
                if let Ok(ll) = eval(&trial) {
                    if ll > best {
                        best = ll;
                        x = trial;
                        improved = true;
                        break;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }

    Ok(FittedCovariance {
        sigma_db: x[0].exp(),
        d_corr: x[1].exp(),
        theta_corr: x[2].exp(),
        diagnostics: FitDiagnostics {
            method: FitMethod::MaxLikelihood,
            distance_bins: init.diagnostics.distance_bins.clone(),
            angle_bins: init.diagnostics.angle_bins.clone(),
            objective: best,
            iterations,
            theta_defaulted: dims == 2 && init.diagnostics.theta_defaulted,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_sensor_ring, ZoneLayout};
    use crate::propagation::FieldSampler;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ring_scene(n_src: usize) -> (Vec<Point3>, SourceSet) {
        let layout = ZoneLayout::new(500.0, 50.0, Point3::origin()).unwrap();
        let ring = build_sensor_ring(&layout, 2.0 * PI / 64.0, &[0.0]).unwrap();
        let sources = SourceSet::on_circle(&layout, n_src, 0.5, 10.0, 30.0, 1e9).unwrap();
        (ring.sensors, sources)
    }

    #[test]
    fn too_few_pairs() {
        let (sensors, sources) = ring_scene(2);
        let r = DMatrix::from_fn(4, 2, |i, j| (i + j) as f64);
        let err = fit_moments(&r, &sensors[..4], &sources, &MomentsOptions::default()).unwrap_err();
        assert_eq!(err, Error::InsufficientPairs { found: 6, required: 8 });
    }

    #[test]
    fn constant_residuals_are_degenerate() {
        let (sensors, sources) = ring_scene(4);
        let r = DMatrix::from_element(sensors.len(), 4, 3.0);
        assert!(matches!(
            fit_moments(&r, &sensors, &sources, &MomentsOptions::default()),
            Err(Error::DegenerateResiduals(_))
        ));
        let zero = DMatrix::zeros(sensors.len(), 4);
        let init = FittedCovariance::known(&ShadowingModel::default());
        assert!(matches!(
            fit_mle(&zero, &sensors, &sources, &init),
            Err(Error::DegenerateResiduals(_))
        ));
    }

    #[test]
    fn uncorrelated_bins_are_rejected() {
        let bins = [Bin {
            lower: 0.0,
            upper: 10.0,
            mean_separation: 5.0,
            pairs: 20,
            correlation: 0.01,
        }];
        let err = fit_exponential(&bins, 0.05, "decorrelation distance").unwrap_err();
        assert!(matches!(err, Error::NoPositiveCorrelation { .. }));
        // correlation above one means a non-decaying fit
        let rising = [Bin { correlation: 1.5, ..bins[0] }];
        assert!(fit_exponential(&rising, 0.05, "x").is_err());
    }

    #[test]
    fn single_source_defaults_theta() {
        let (sensors, sources) = ring_scene(1);
        let model = ShadowingModel::default();
        let sampler = FieldSampler::new(&model, &sensors, &sources).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = sampler.draw_shadowing(&mut rng);
        let fit = fit_moments(&r, &sensors, &sources, &MomentsOptions::default()).unwrap();
        assert!(fit.diagnostics.theta_defaulted);
        assert_eq!(fit.theta_corr, PI / 6.0);
        assert!(fit.diagnostics.angle_bins.is_empty());
    }

    #[test]
    fn exponential_fit_on_exact_bins() {
        let bins: Vec<Bin> = [10.0, 30.0, 60.0, 200.0]
            .iter()
            .map(|&h| Bin {
                lower: 0.0,
                upper: 0.0,
                mean_separation: h,
                pairs: 10,
                correlation: (-h / 42.0f64).exp(),
            })
            .collect();
        let (scale, sse) = fit_exponential(&bins, 0.05, "test").unwrap();
        assert!((scale - 42.0).abs() < 1e-9);
        assert!(sse < 1e-18);
    }

    #[test]
    fn mle_never_worse_than_start() {
        let (sensors, sources) = ring_scene(4);
        let model = ShadowingModel::default();
        let sampler = FieldSampler::new(&model, &sensors, &sources).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let r = sampler.draw_shadowing(&mut rng);
        let init = FittedCovariance {
            sigma_db: 5.0,
            d_corr: 120.0,
            theta_corr: 1.0,
            ..FittedCovariance::known(&model)
        };
        let ll0 = log_likelihood(&r, &sensors, &sources, 5.0, 120.0, 1.0).unwrap();
        let fit = fit_mle(&r, &sensors, &sources, &init).unwrap();
        assert!(fit.diagnostics.objective >= ll0);
        assert!(fit.diagnostics.iterations <= MLE_MAX_ITER);
        assert_eq!(fit.diagnostics.method, FitMethod::MaxLikelihood);
    }

    #[test]
    fn mle_stays_near_truth() {
        // 64 sensors × 4 sources, several independent draws pooled by median
        let (sensors, sources) = ring_scene(4);
        let model = ShadowingModel::default();
        let sampler = FieldSampler::new(&model, &sensors, &sources).unwrap();
        let init = FittedCovariance::known(&model);
        let mut est = (Vec::new(), Vec::new());
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let r = sampler.draw_shadowing(&mut rng);
            let fit = fit_mle(&r, &sensors, &sources, &init).unwrap();
            est.0.push(fit.sigma_db);
            est.1.push(fit.d_corr);
        }
        let med = |v: &mut Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        let (s, d) = (med(&mut est.0), med(&mut est.1));
        assert!((s / 8.0 - 1.0).abs() < 0.10, "sigma {s}");
        assert!((d / 50.0 - 1.0).abs() < 0.10, "d_corr {d}");
    }

    #[test]
    fn shape_mismatch() {
        let (sensors, sources) = ring_scene(2);
        let r = DMatrix::zeros(3, 2);
        assert!(matches!(
            fit_moments(&r, &sensors, &sources, &MomentsOptions::default()),
            Err(Error::GridMismatch(_))
        ));
    }
}
