//! Reproducible experiment runs: configuration, sweeps, end-to-end pipelines
//! and run manifests.

mod config;
mod manifest;
mod runs;
mod sweep;

pub use config::{
    Cell, ComplianceConfig, ExperimentConfig, GridConfig, KrigingOptionsConfig, LeakageConfig, LosConfig, Regime,
    RegionKind, RingConfig, Scene, SourceConfig, SweepConfig, TdoaConfig, ZoneConfig,
};
pub use manifest::{execute, load_config_or_manifest, replay, ConfigSource, Experiment, Manifest, MANIFEST_FILE};
pub use runs::{
    default_ipars, localization_errors, localize_stream, run_leakage, simulate_trajectory, track_stream,
    LeakageOutcome,
};
pub use sweep::{
    field_rows, fit_covariance, run_cells, run_rmse_sweep, summarize, trial_rng, write_summary_csv, write_sweep_csv,
    CellSummary, SweepRow,
};

use crate::error::{Error, Result};

/// Mean earth radius, m.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Geometric horizon distance `√(2·R·h + h²)` of a platform at `height`,
/// without refraction.
pub fn los_range(height: f64, earth_radius: f64) -> Result<f64> {
    if !(height >= 0.0) {
        return Err(Error::NegativeHeight(height));
    }
    if !(earth_radius > 0.0) {
        return Err(Error::InvalidModel("earth radius must be positive".into()));
    }
    Ok((2.0 * earth_radius * height + height * height).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn los_examples() {
        assert_eq!(los_range(0.0, EARTH_RADIUS_M).unwrap(), 0.0);
        assert!((los_range(1.0, EARTH_RADIUS_M).unwrap() - 3569.6).abs() < 0.1);
        // tangent-line construction: (R + h)·sin(acos(R / (R + h)))
        let h = 228.6;
        let oracle = (EARTH_RADIUS_M + h) * (EARTH_RADIUS_M / (EARTH_RADIUS_M + h)).acos().sin();
        assert!((los_range(h, EARTH_RADIUS_M).unwrap() - oracle).abs() < 1e-3);
        assert_eq!(los_range(-1.0, EARTH_RADIUS_M), Err(Error::NegativeHeight(-1.0)));
    }
}
