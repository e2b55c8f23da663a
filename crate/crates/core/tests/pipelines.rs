use nrdz_core::harness::{run_cells, run_leakage, summarize, ExperimentConfig, RegionKind};
use nrdz_core::propagation::ShadowingModel;

#[test]
fn baseline_error_matches_shadowing_spread() {
    let mut cfg = ExperimentConfig::default();
    cfg.grid.region = RegionKind::All;
    let s = summarize(&run_cells(&cfg, &[cfg.base_cell()])).remove(0);
    assert_eq!(s.trials_ok, 200);
    assert!((s.mean_baseline_db - 8.0).abs() < 0.5, "{}", s.mean_baseline_db);
}

#[test]
fn zero_shadowing_gives_zero_error() {
    let mut cfg = ExperimentConfig::default();
    cfg.trials = 5;
    cfg.model = ShadowingModel {
        sigma_db: 0.0,
        ..cfg.model
    };
    let s = summarize(&run_cells(&cfg, &[cfg.base_cell()])).remove(0);
    assert_eq!(s.mean_kriging_db, 0.0);
    assert_eq!(s.mean_baseline_db, 0.0);
}

#[test]
fn kriged_leakage_verdicts_agree_with_truth() {
    // the grid only feeds the contour; a coarse one keeps the draw small
    let mut cfg = ExperimentConfig::default();
    cfg.grid.n = 10;
    let trials = 200;
    let mean = (0..trials)
        .map(|t| run_leakage(&cfg, None, t).unwrap().agreement)
        .sum::<f64>()
        / trials as f64;
    assert!(mean >= 0.90, "mean agreement {mean:.3}");
}
