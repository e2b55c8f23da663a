use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compliance::{CalibrationOptions, FreqRange};
use crate::error::{Error, Result};
use crate::geometry::{build_sensor_ring, validate_sources, EvalGrid, SourceSet, ZoneLayout};
use crate::kriging::{KrigingOptions, Region};
use crate::propagation::ShadowingModel;
use crate::tdoa::{square_sensors, SolveMode, Trajectory};
use crate::Point3;

/// How the shadowing covariance is obtained before Kriging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    TrueParams,
    Moments,
    Mle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionKind {
    BoundaryBand,
    All,
    InsideZone,
    OutsideZone,
}

impl RegionKind {
    pub fn tag(&self) -> &'static str {
        match self {
            RegionKind::BoundaryBand => "boundary-band",
            RegionKind::All => "all",
            RegionKind::InsideZone => "inside-zone",
            RegionKind::OutsideZone => "outside-zone",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZoneConfig {
    pub r0_m: f64,
    pub r_guard_m: f64,
    pub origin: [f64; 3],
}

impl Default for ZoneConfig {
    fn default() -> Self {
        Self {
            r0_m: 500.0,
            r_guard_m: 50.0,
            origin: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RingConfig {
    /// Angular sensor spacing φ_Δ, rad.
    pub phi_delta_rad: f64,
    /// Sensor altitudes above the zone origin, m.
    pub altitudes_m: Vec<f64>,
}

impl Default for RingConfig {
    fn default() -> Self {
        Self {
            phi_delta_rad: PI / 8.0,
            altitudes_m: vec![0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    pub count: usize,
    /// Placement radius as a fraction of the core radius.
    pub radius_frac: f64,
    pub height_m: f64,
    pub tx_power_dbm: f64,
    pub frequency_hz: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            count: 4,
            radius_frac: 0.5,
            height_m: 10.0,
            tx_power_dbm: 30.0,
            frequency_hz: 1e9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Points per side.
    pub n: usize,
    /// Extent beyond `r0` on each side, m.
    pub margin_m: f64,
    pub altitude_m: f64,
    pub region: RegionKind,
    /// Half-width of the boundary band used for RMSE, m.
    pub band_half_width_m: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n: 40,
            margin_m: 50.0,
            altitude_m: 0.0,
            region: RegionKind::BoundaryBand,
            band_half_width_m: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub phi_delta_rad: Vec<f64>,
    pub r0_m: Vec<f64>,
    pub eta: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            phi_delta_rad: vec![PI / 16.0, PI / 8.0, PI / 4.0, PI / 2.0],
            r0_m: vec![250.0, 500.0, 1000.0],
            eta: vec![2.0, 3.0, 4.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeakageConfig {
    pub k_sigma: f64,
    pub contour_level_dbm: f64,
    /// Generated IPARs when no IPAR file is given.
    pub default_ipar_count: usize,
    /// Distance of generated IPARs beyond `r0`, m.
    pub default_ipar_offset_m: f64,
    pub default_threshold_dbm: f64,
}

impl Default for LeakageConfig {
    fn default() -> Self {
        Self {
            k_sigma: crate::leakage::DEFAULT_K_SIGMA,
            contour_level_dbm: -80.0,
            default_ipar_count: 16,
            default_ipar_offset_m: 500.0,
            default_threshold_dbm: -70.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TdoaConfig {
    /// Explicit sensor positions; a square of side `aperture_m` otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensors: Option<Vec<[f64; 3]>>,
    pub aperture_m: f64,
    pub center: [f64; 3],
    pub noise_dev_s: f64,
    pub solve: SolveMode,
    pub trajectory: Trajectory,
    /// White-acceleration level of the tracker, m/s².
    pub process_noise: f64,
    /// Initial velocity spread of the tracker, m/s.
    pub velocity_std: f64,
}

impl Default for TdoaConfig {
    fn default() -> Self {
        Self {
            sensors: None,
            aperture_m: 500.0,
            center: [0.0; 3],
            noise_dev_s: 33e-9,
            solve: SolveMode::Planar { altitude: 0.0 },
            trajectory: Trajectory {
                start: [-150.0, -100.0, 0.0],
                velocity: [1.5, 1.0, 0.0],
                dt: 1.0,
                steps: 200,
            },
            process_noise: 0.05,
            velocity_std: 10.0,
        }
    }
}

impl TdoaConfig {
    pub fn sensor_positions(&self) -> Vec<Point3> {
        match &self.sensors {
            Some(s) => s.iter().map(|&p| Point3::from(p)).collect(),
            None => square_sensors(&Point3::from(self.center), self.aperture_m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplianceConfig {
    pub calibration: CalibrationOptions,
    /// Authorized experiment ranges, MHz.
    pub authorized_mhz: Vec<[f64; 2]>,
    pub span_mhz: [f64; 2],
}

impl Default for ComplianceConfig {
    fn default() -> Self {
        Self {
            calibration: CalibrationOptions::default(),
            authorized_mhz: vec![[3300.0, 3500.0]],
            span_mhz: [100.0, 3000.0],
        }
    }
}

impl ComplianceConfig {
    pub fn authorized(&self) -> Result<Vec<FreqRange>> {
        self.authorized_mhz
            .iter()
            .map(|r| FreqRange::new(r[0] * 1e6, r[1] * 1e6))
            .collect()
    }

    pub fn span(&self) -> Result<FreqRange> {
        FreqRange::new(self.span_mhz[0] * 1e6, self.span_mhz[1] * 1e6)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LosConfig {
    pub earth_radius_m: f64,
    pub heights_m: Vec<f64>,
}

impl Default for LosConfig {
    fn default() -> Self {
        Self {
            earth_radius_m: super::EARTH_RADIUS_M,
            heights_m: vec![0.0, 1.0, 10.0, 50.0, 100.0, 228.6],
        }
    }
}

/// Everything an experiment run needs besides its input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    pub regime: Regime,
    pub zone: ZoneConfig,
    pub ring: RingConfig,
    pub sources: SourceConfig,
    pub model: ShadowingModel,
    pub grid: GridConfig,
    pub kriging: KrigingOptionsConfig,
    pub sweep: SweepConfig,
    pub leakage: LeakageConfig,
    pub tdoa: TdoaConfig,
    pub compliance: ComplianceConfig,
    pub los: LosConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KrigingOptionsConfig {
    pub cross_source: bool,
    pub nugget_db2: f64,
}

impl Default for KrigingOptionsConfig {
    fn default() -> Self {
        Self {
            cross_source: false,
            nugget_db2: 0.0,
        }
    }
}

impl From<&KrigingOptionsConfig> for KrigingOptions {
    fn from(c: &KrigingOptionsConfig) -> Self {
        KrigingOptions {
            cross_source: c.cross_source,
            nugget_db2: c.nugget_db2,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            trials: 200,
            regime: Regime::TrueParams,
            zone: ZoneConfig::default(),
            ring: RingConfig::default(),
            sources: SourceConfig::default(),
            model: ShadowingModel::default(),
            grid: GridConfig::default(),
            kriging: KrigingOptionsConfig::default(),
            sweep: SweepConfig::default(),
            leakage: LeakageConfig::default(),
            tdoa: TdoaConfig::default(),
            compliance: ComplianceConfig::default(),
            los: LosConfig::default(),
        }
    }
}

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub phi_delta_rad: f64,
    pub r0_m: f64,
    pub eta: f64,
}

/// Geometry and model of one sweep cell.
#[derive(Debug, Clone)]
pub struct Scene {
    pub cell: Cell,
    pub layout: ZoneLayout,
    pub model: ShadowingModel,
    pub sensors: Vec<Point3>,
    pub sources: SourceSet,
    pub grid: EvalGrid,
    pub region: Region,
}

impl Scene {
    pub fn targets(&self) -> Vec<Point3> {
        self.grid.points()
    }
}

fn config_err(context: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::Config(format!("{context}: {e}"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The cell described by the scalar zone, ring and model settings.
    pub fn base_cell(&self) -> Cell {
        Cell {
            phi_delta_rad: self.ring.phi_delta_rad,
            r0_m: self.zone.r0_m,
            eta: self.model.eta,
        }
    }

    /// Sweep cells in row order: φ_Δ outermost, then r0, then η.
    pub fn sweep_cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &phi in &self.sweep.phi_delta_rad {
            for &r0 in &self.sweep.r0_m {
                for &eta in &self.sweep.eta {
                    out.push(Cell {
                        phi_delta_rad: phi,
                        r0_m: r0,
                        eta,
                    });
                }
            }
        }
        out
    }

    pub fn scene(&self, cell: &Cell) -> Result<Scene> {
        let origin = Point3::from(self.zone.origin);
        let layout = ZoneLayout::new(cell.r0_m, self.zone.r_guard_m, origin)?;
        let model = ShadowingModel {
            eta: cell.eta,
            ..self.model
        };
        model.validate()?;
        let ring = build_sensor_ring(&layout, cell.phi_delta_rad, &self.ring.altitudes_m)?;
        let s = &self.sources;
        let sources = SourceSet::on_circle(&layout, s.count, s.radius_frac, s.height_m, s.tx_power_dbm, s.frequency_hz)?;
        let report = validate_sources(&layout, &sources);
        if !report.all_accepted() {
            return Err(Error::InvalidLayout(format!("source placement rejected:\n{report}")));
        }
        let grid = EvalGrid::square(
            &origin,
            cell.r0_m + self.grid.margin_m,
            self.grid.n,
            origin.z + self.grid.altitude_m,
        )?;
        let region = match self.grid.region {
            RegionKind::BoundaryBand => Region::BoundaryBand {
                layout,
                half_width: self.grid.band_half_width_m,
            },
            RegionKind::All => Region::All,
            RegionKind::InsideZone => Region::InsideZone(layout),
            RegionKind::OutsideZone => Region::OutsideZone(layout),
        };
        Ok(Scene {
            cell: *cell,
            layout,
            model,
            sensors: ring.sensors,
            sources,
            grid,
            region,
        })
    }

    /// Checks every setting that a run may touch; all failures are
    /// configuration errors.
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.ring.altitudes_m.is_empty() {
            return Err(Error::Config("ring needs at least one altitude".into()));
        }
        if !(self.grid.band_half_width_m > 0.0 && self.grid.margin_m >= 0.0) {
            return Err(Error::Config("grid band half-width must be positive and margin non-negative".into()));
        }
        if !(self.kriging.nugget_db2 >= 0.0) {
            return Err(Error::Config("nugget must be non-negative".into()));
        }
        self.scene(&self.base_cell()).map_err(config_err("base cell"))?;
        for cell in self.sweep_cells() {
            self.scene(&cell).map_err(config_err(&format!(
                "sweep cell (phi={}, r0={}, eta={})",
                cell.phi_delta_rad, cell.r0_m, cell.eta
            )))?;
        }
        if self.sweep.phi_delta_rad.is_empty() || self.sweep.r0_m.is_empty() || self.sweep.eta.is_empty() {
            return Err(Error::Config("sweep axes must be non-empty".into()));
        }
        if !(self.leakage.k_sigma >= 0.0 && self.leakage.default_ipar_offset_m > 0.0) {
            return Err(Error::Config("leakage k_sigma and IPAR offset must be positive".into()));
        }
        let t = &self.tdoa;
        if !(t.noise_dev_s >= 0.0 && t.trajectory.dt > 0.0 && t.process_noise >= 0.0 && t.velocity_std > 0.0) {
            return Err(Error::Config("tdoa noise, dt, process noise and velocity spread must be valid".into()));
        }
        crate::tdoa::check_geometry(&t.sensor_positions(), &t.solve).map_err(config_err("tdoa sensors"))?;
        self.compliance.calibration.validate()?;
        self.compliance.authorized()?;
        self.compliance.span()?;
        if !(self.los.earth_radius_m > 0.0) || self.los.heights_m.iter().any(|h| !(*h >= 0.0)) {
            return Err(Error::Config("LoS earth radius must be positive and heights non-negative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = ExperimentConfig::from_toml("trials = 5\n[model]\nsigma_db = 4.0\n").unwrap();
        assert_eq!(cfg.trials, 5);
        assert_eq!(cfg.model.sigma_db, 4.0);
        assert_eq!(cfg.model.d_corr, 50.0);
        assert_eq!(cfg.zone, ZoneConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(ExperimentConfig::from_toml("trails = 5\n"), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_settings() {
        let mut cfg = ExperimentConfig::default();
        cfg.trials = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = ExperimentConfig::default();
        cfg.sweep.phi_delta_rad.push(0.7);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = ExperimentConfig::default();
        cfg.sources.radius_frac = 1.5;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_cell_order() {
        let cfg = ExperimentConfig::default();
        let cells = cfg.sweep_cells();
        assert_eq!(cells.len(), 36);
        assert_eq!(cells[1].eta, 3.0);
        assert_eq!(cells[3].r0_m, 500.0);
        assert_eq!(cells[9].phi_delta_rad, PI / 8.0);
    }

    #[test]
    fn default_scene_shape() {
        let cfg = ExperimentConfig::default();
        let scene = cfg.scene(&cfg.base_cell()).unwrap();
        assert_eq!(scene.sensors.len(), 16);
        assert_eq!(scene.grid.len(), 1600);
        assert_eq!(scene.sources.len(), 4);
        assert!(scene.targets().iter().all(|p| (p.x.abs() - 550.0).abs() < 1e-9 || p.x.abs() < 550.0));
    }
}
