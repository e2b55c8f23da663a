//! Zone layout, sensor ring, transmitter placement and evaluation grids.
//!
//! The zone is a disk of radius `r0` around `origin`. Transmitters must sit in
//! the core disk of radius `r0 - r_guard`; the annulus `(r0 - r_guard, r0]` is
//! the guard area. Sensors are placed on the `r0` circle and are exempt from
//! the placement rule. Zone membership always uses the ground-projected
//! (horizontal) distance from the origin.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::Point3;

const SPACING_TOL: f64 = 1e-9;
const COINCIDENT_TOL: f64 = 1e-12;

/// Horizontal distance between two points.
pub fn horizontal_distance(a: &Point3, b: &Point3) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Bearing from `from` to `to` in the horizontal plane, in `(-π, π]`.
pub fn bearing(from: &Point3, to: &Point3) -> Result<f64> {
    let dx = to.x - from.x;
    let dy = to.y - from.y;
    if dx.hypot(dy) <= COINCIDENT_TOL {
        return Err(Error::DegenerateGeometry(format!(
            "point ({:.3}, {:.3}) coincides horizontally with the viewpoint",
            to.x, to.y
        )));
    }
    Ok(dy.atan2(dx))
}

/// Wrapped absolute difference of two bearings, in `[0, π]`.
pub fn angle_between(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        TAU - d
    } else {
        d
    }
}

/// Absolute horizontal angle between `src_a` and `src_b` as seen from `sensor`.
pub fn azimuth_separation(sensor: &Point3, src_a: &Point3, src_b: &Point3) -> Result<f64> {
    Ok(angle_between(bearing(sensor, src_a)?, bearing(sensor, src_b)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneLayout {
    pub r0: f64,
    pub r_guard: f64,
    pub origin: Point3,
}

impl ZoneLayout {
    pub fn new(r0: f64, r_guard: f64, origin: Point3) -> Result<Self> {
        let layout = Self {
            r0,
            r_guard,
            origin,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r0.is_finite() && self.r0 > 0.0) {
            return Err(Error::InvalidLayout(format!("r0 must be positive, got {}", self.r0)));
        }
        if !(self.r_guard > 0.0 && self.r_guard < self.r0) {
            return Err(Error::InvalidLayout(format!(
                "guard width must lie in (0, r0 = {}), got {}",
                self.r0, self.r_guard
            )));
        }
        if !(self.origin.x.is_finite() && self.origin.y.is_finite() && self.origin.z.is_finite()) {
            return Err(Error::InvalidLayout("origin must be finite".into()));
        }
        Ok(())
    }

    /// Radius of the core area where transmitters are allowed.
    pub fn r_core(&self) -> f64 {
        self.r0 - self.r_guard
    }

    /// Ground-projected distance of `p` from the zone origin.
    pub fn radial_distance(&self, p: &Point3) -> f64 {
        horizontal_distance(p, &self.origin)
    }

    pub fn is_outside(&self, p: &Point3) -> bool {
        self.radial_distance(p) > self.r0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorRing {
    pub angular_spacing: f64,
    pub altitudes: Vec<f64>,
    pub sensors: Vec<Point3>,
}

impl SensorRing {
    pub fn per_level(&self) -> usize {
        self.sensors.len() / self.altitudes.len()
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }
}

/// Number of sensors per level implied by an angular spacing, if it divides 2π.
pub fn sensors_per_level(angular_spacing: f64) -> Result<usize> {
    if !(angular_spacing.is_finite() && angular_spacing > 0.0 && angular_spacing <= TAU + SPACING_TOL)
    {
        return Err(Error::NonIntegralSpacing {
            spacing: angular_spacing,
            ratio: TAU / angular_spacing,
        });
    }
    let ratio = TAU / angular_spacing;
    let n = ratio.round();
    if (ratio - n).abs() > SPACING_TOL || n < 1.0 {
        return Err(Error::NonIntegralSpacing {
            spacing: angular_spacing,
            ratio,
        });
    }
    Ok(n as usize)
}

/// Places `2π/φ` sensors on the `r0` circle at every altitude level.
///
/// Sensors are ordered level by level; sensor `k` of a level sits at azimuth
/// `k·φ` measured from the +x axis.
pub fn build_sensor_ring(
    layout: &ZoneLayout,
    angular_spacing: f64,
    altitudes: &[f64],
) -> Result<SensorRing> {
    layout.validate()?;
    let n = sensors_per_level(angular_spacing)?;
    if altitudes.is_empty() {
        return Err(Error::InvalidLayout("at least one altitude level is required".into()));
    }
    if altitudes.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(Error::InvalidLayout("altitudes must be finite and non-negative".into()));
    }
    if altitudes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidLayout("altitudes must be strictly increasing".into()));
    }

    let mut sensors = Vec::with_capacity(n * altitudes.len());
    for &alt in altitudes {
        for k in 0..n {
            // k/n keeps the quarter points exact where the float allows it
            let theta = TAU * k as f64 / n as f64;
            sensors.push(Point3::new(
                layout.origin.x + layout.r0 * theta.cos(),
                layout.origin.y + layout.r0 * theta.sin(),
                layout.origin.z + alt,
            ));
        }
    }
    Ok(SensorRing {
        angular_spacing,
        altitudes: altitudes.to_vec(),
        sensors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Source {
    pub id: u32,
    pub position: Point3,
    pub tx_power_dbm: f64,
    pub frequency_hz: f64,
}

/// Ordered set of transmitters with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SourceSet {
    sources: Vec<Source>,
}

impl SourceSet {
    pub fn new(sources: Vec<Source>) -> Result<Self> {
        for (i, s) in sources.iter().enumerate() {
            if !s.tx_power_dbm.is_finite() {
                return Err(Error::InvalidLayout(format!("source {} has non-finite power", s.id)));
            }
            if !(s.frequency_hz.is_finite() && s.frequency_hz > 0.0) {
                return Err(Error::InvalidLayout(format!(
                    "source {} has non-positive frequency",
                    s.id
                )));
            }
            if sources[..i].iter().any(|o| o.id == s.id) {
                return Err(Error::InvalidLayout(format!("duplicate source id {}", s.id)));
            }
        }
        Ok(Self { sources })
    }

    /// `count` transmitters evenly spread in azimuth on a circle of radius
    /// `radius_frac · r_core`, raised `height` above the origin plane.
    pub fn on_circle(
        layout: &ZoneLayout,
        count: usize,
        radius_frac: f64,
        height: f64,
        tx_power_dbm: f64,
        frequency_hz: f64,
    ) -> Result<Self> {
        let radius = radius_frac * layout.r_core();
        let sources = (0..count)
            .map(|k| {
                let theta = TAU * k as f64 / count as f64;
                Source {
                    id: k as u32,
                    position: Point3::new(
                        layout.origin.x + radius * theta.cos(),
                        layout.origin.y + radius * theta.sin(),
                        layout.origin.z + height,
                    ),
                    tx_power_dbm,
                    frequency_hz,
                }
            })
            .collect();
        Self::new(sources)
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Source> {
        self.sources.iter()
    }

    pub fn as_slice(&self) -> &[Source] {
        &self.sources
    }

    pub fn positions(&self) -> Vec<Point3> {
        self.sources.iter().map(|s| s.position).collect()
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.sources.iter().position(|s| s.id == id)
    }
}

impl std::ops::Index<usize> for SourceSet {
    type Output = Source;
    fn index(&self, i: usize) -> &Source {
        &self.sources[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Accepted,
    RejectedInGuard,
    RejectedOutOfZone,
}

impl Placement {
    pub fn verdict(&self) -> &'static str {
        match self {
            Placement::Accepted => "ACCEPTED",
            _ => "REJECTED",
        }
    }

    pub fn reason(&self) -> &'static str {
        match self {
            Placement::Accepted => "",
            Placement::RejectedInGuard => "in-guard",
            Placement::RejectedOutOfZone => "out-of-zone",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceVerdict {
    pub source_id: u32,
    pub radius_m: f64,
    pub placement: Placement,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub entries: Vec<SourceVerdict>,
}

impl ValidationReport {
    pub fn all_accepted(&self) -> bool {
        self.entries.iter().all(|e| e.placement == Placement::Accepted)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["source_id", "radius_m", "verdict", "reason"])?;
        for e in &self.entries {
            out.write_record([
                e.source_id.to_string(),
                e.radius_m.to_string(),
                e.placement.verdict().to_string(),
                e.placement.reason().to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            match e.placement {
                Placement::Accepted => {
                    writeln!(f, "source {}: ACCEPTED (radius {:.3} m)", e.source_id, e.radius_m)?
                }
                p => writeln!(
                    f,
                    "source {}: REJECTED {} (radius {:.3} m)",
                    e.source_id,
                    p.reason(),
                    e.radius_m
                )?,
            }
        }
        Ok(())
    }
}

/// Classifies every source as accepted, in the guard annulus, or outside the zone.
pub fn validate_sources(layout: &ZoneLayout, sources: &SourceSet) -> ValidationReport {
    let r_core = layout.r_core();
    let entries = sources
        .iter()
        .map(|s| {
            let radius = layout.radial_distance(&s.position);
            let placement = if radius <= r_core {
                Placement::Accepted
            } else if radius <= layout.r0 {
                Placement::RejectedInGuard
            } else {
                Placement::RejectedOutOfZone
            };
            SourceVerdict {
                source_id: s.id,
                radius_m: radius,
                placement,
            }
        })
        .collect();
    ValidationReport { entries }
}

/// Cartesian evaluation grid at a fixed altitude, row-major (y outer, x inner).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalGrid {
    pub x_min: f64,
    pub y_min: f64,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
    pub altitude: f64,
}

impl EvalGrid {
    /// Grid covering `[x_min, x_max] × [y_min, y_max]` with the given spacing.
    pub fn from_bbox(
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
        spacing: f64,
        altitude: f64,
    ) -> Result<Self> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidLayout(format!("grid spacing must be positive, got {spacing}")));
        }
        if !(x_max >= x_min && y_max >= y_min) {
            return Err(Error::InvalidLayout("grid bounding box is inverted".into()));
        }
        // tolerate round-off so that an exact multiple includes the far edge
        let count = |span: f64| (span / spacing + 1e-9).floor() as usize + 1;
        Ok(Self {
            x_min,
            y_min,
            spacing,
            nx: count(x_max - x_min),
            ny: count(y_max - y_min),
            altitude,
        })
    }

    /// `n × n` grid spanning a square of half-width `half_width` centred on `center`.
    pub fn square(center: &Point3, half_width: f64, n: usize, altitude: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidLayout("square grid needs at least 2 points per side".into()));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidLayout("grid half-width must be positive".into()));
        }
        Ok(Self {
            x_min: center.x - half_width,
            y_min: center.y - half_width,
            spacing: 2.0 * half_width / (n - 1) as f64,
            nx: n,
            ny: n,
            altitude,
        })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, i: usize) -> Point3 {
        let (row, col) = (i / self.nx, i % self.nx);
        Point3::new(
            self.x_min + col as f64 * self.spacing,
            self.y_min + row as f64 * self.spacing,
            self.altitude,
        )
    }

    pub fn points(&self) -> Vec<Point3> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// `true` for every grid point outside the zone radius.
    pub fn outside_mask(&self, layout: &ZoneLayout) -> Vec<bool> {
        (0..self.len()).map(|i| layout.is_outside(&self.point(i))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn origin() -> Point3 {
        Point3::origin()
    }

    #[test]
    fn quarter_ring() {
        let layout = ZoneLayout::new(100.0, 20.0, origin()).unwrap();
        let ring = build_sensor_ring(&layout, FRAC_PI_2, &[0.0]).unwrap();
        let expected = [(100.0, 0.0), (0.0, 100.0), (-100.0, 0.0), (0.0, -100.0)];
        assert_eq!(ring.len(), 4);
        for (s, (x, y)) in ring.sensors.iter().zip(expected) {
            assert!((s.x - x).abs() < 1e-9 && (s.y - y).abs() < 1e-9 && s.z == 0.0, "{s:?}");
        }
    }

    #[test]
    fn single_sensor_ring() {
        let layout = ZoneLayout::new(100.0, 20.0, origin()).unwrap();
        let ring = build_sensor_ring(&layout, TAU, &[0.0]).unwrap();
        assert_eq!(ring.sensors, vec![Point3::new(100.0, 0.0, 0.0)]);
    }

    #[test]
    fn two_level_ring() {
        let layout = ZoneLayout::new(500.0, 50.0, origin()).unwrap();
        let ring = build_sensor_ring(&layout, PI / 8.0, &[0.0, 50.0]).unwrap();
        // enumerate instead of trusting 2π/φ × levels
        let mut per_level = std::collections::BTreeMap::new();
        for s in &ring.sensors {
            *per_level.entry(s.z.to_bits()).or_insert(0usize) += 1;
        }
        assert_eq!(ring.len(), 32);
        assert_eq!(per_level[&0f64.to_bits()], 16);
        assert_eq!(per_level[&50f64.to_bits()], 16);
        assert!(ring.sensors[16..].iter().all(|s| s.z == 50.0));
    }

    #[test]
    fn ring_rejects_bad_spacing_and_altitudes() {
        let layout = ZoneLayout::new(100.0, 20.0, origin()).unwrap();
        assert!(matches!(
            build_sensor_ring(&layout, 1.0, &[0.0]),
            Err(Error::NonIntegralSpacing { .. })
        ));
        assert!(matches!(
            build_sensor_ring(&layout, PI / 4.0 + 1e-7, &[0.0]),
            Err(Error::NonIntegralSpacing { .. })
        ));
        assert!(build_sensor_ring(&layout, PI / 4.0, &[0.0, 0.0]).is_err());
        assert!(build_sensor_ring(&layout, PI / 4.0, &[-1.0]).is_err());
        assert!(build_sensor_ring(&layout, PI / 4.0, &[]).is_err());
    }

    #[test]
    fn layout_invariants() {
        assert!(ZoneLayout::new(0.0, 1.0, origin()).is_err());
        assert!(ZoneLayout::new(100.0, 0.0, origin()).is_err());
        assert!(ZoneLayout::new(100.0, 100.0, origin()).is_err());
        assert!(matches!(
            ZoneLayout {
                r0: 10.0,
                r_guard: 20.0,
                origin: origin()
            }
            .validate(),
            Err(Error::InvalidLayout(_))
        ));
    }

    fn source_at(id: u32, radius: f64) -> Source {
        Source {
            id,
            position: Point3::new(radius * 0.6, radius * 0.8, 10.0),
            tx_power_dbm: 30.0,
            frequency_hz: 1e9,
        }
    }

    #[test]
    fn source_validation_classes() {
        let layout = ZoneLayout::new(100.0, 20.0, origin()).unwrap();
        let set = SourceSet::new(vec![source_at(0, 75.0), source_at(1, 90.0), source_at(2, 120.0)])
            .unwrap();
        let report = validate_sources(&layout, &set);
        let got: Vec<_> = report.entries.iter().map(|e| e.placement).collect();
        assert_eq!(
            got,
            vec![Placement::Accepted, Placement::RejectedInGuard, Placement::RejectedOutOfZone]
        );
        assert!(!report.all_accepted());

        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("source_id,radius_m,verdict,reason\n"));
        assert!(text.contains("1,90,REJECTED,in-guard"));
        assert!(report.to_string().contains("source 2: REJECTED out-of-zone"));
    }

    #[test]
    fn source_set_rejects_bad_entries() {
        let mut s = source_at(0, 10.0);
        s.frequency_hz = 0.0;
        assert!(SourceSet::new(vec![s]).is_err());
        assert!(SourceSet::new(vec![source_at(0, 1.0), source_at(0, 2.0)]).is_err());
    }

    #[test]
    fn azimuth_examples() {
        let o = origin();
        let a = azimuth_separation(&o, &Point3::new(1.0, 0.0, 0.0), &Point3::new(0.0, 1.0, 0.0));
        assert!((a.unwrap() - FRAC_PI_2).abs() < 1e-12);
        let b = azimuth_separation(&o, &Point3::new(1.0, 0.0, 0.0), &Point3::new(2.0, 0.0, 0.0));
        assert_eq!(b.unwrap(), 0.0);
        let c = azimuth_separation(
            &Point3::new(10.0, 0.0, 0.0),
            &Point3::new(0.0, 5.0, 0.0),
            &Point3::new(0.0, -5.0, 0.0),
        )
        .unwrap();
        assert!((c - 2.0 * (5.0f64 / 10.0).atan()).abs() < 1e-12);
        assert!((c - 0.9273).abs() < 1e-4);
        assert!(matches!(
            azimuth_separation(&o, &Point3::new(0.0, 0.0, 5.0), &Point3::new(1.0, 0.0, 0.0)),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn wrapped_angles() {
        assert!((angle_between(3.0, -3.0) - (TAU - 6.0)).abs() < 1e-12);
        assert_eq!(angle_between(0.5, 0.5), 0.0);
        assert!((angle_between(-PI, PI)).abs() < 1e-12);
    }

    #[test]
    fn grid_order_and_extent() {
        let g = EvalGrid::from_bbox(0.0, 20.0, 0.0, 10.0, 10.0, 1.5).unwrap();
        assert_eq!((g.nx, g.ny), (3, 2));
        let pts = g.points();
        assert_eq!(pts[0], Point3::new(0.0, 0.0, 1.5));
        assert_eq!(pts[1], Point3::new(10.0, 0.0, 1.5));
        assert_eq!(pts[3], Point3::new(0.0, 10.0, 1.5));
        assert!(EvalGrid::from_bbox(0.0, 1.0, 0.0, 1.0, 0.0, 0.0).is_err());

        let sq = EvalGrid::square(&origin(), 500.0, 40, 0.0).unwrap();
        assert_eq!(sq.len(), 1600);
        assert!((sq.point(1599).x - 500.0).abs() < 1e-9);
        let layout = ZoneLayout::new(500.0, 50.0, origin()).unwrap();
        let mask = sq.outside_mask(&layout);
        assert!(mask[0]);
        assert!(!mask[20 * 40 + 20]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sensors_on_circle(n in 1usize..64, r0 in 1.0f64..5000.0, ox in -1e3f64..1e3, oy in -1e3f64..1e3) {
                let layout = ZoneLayout::new(r0, r0 / 4.0, Point3::new(ox, oy, 0.0)).unwrap();
                let ring = build_sensor_ring(&layout, TAU / n as f64, &[0.0, 3.0]).unwrap();
                prop_assert_eq!(ring.len(), 2 * n);
                for s in &ring.sensors {
                    prop_assert!((layout.radial_distance(s) - r0).abs() <= 1e-9 * r0);
                }
                for (i, a) in ring.sensors.iter().enumerate() {
                    for b in &ring.sensors[i + 1..] {
                        prop_assert!((a - b).norm() > 1e-9);
                    }
                }
            }

            #[test]
            fn placement_partition(r in 0.0f64..300.0, guard in 1.0f64..99.0) {
                let layout = ZoneLayout::new(100.0, guard, origin()).unwrap();
                let set = SourceSet::new(vec![source_at(0, r)]).unwrap();
                let e = &validate_sources(&layout, &set).entries[0];
                prop_assert_eq!(e.placement == Placement::Accepted, e.radius_m <= 100.0 - guard);
                prop_assert_eq!(e.placement == Placement::RejectedOutOfZone, e.radius_m > 100.0);
            }

            #[test]
            fn azimuth_symmetric_and_rotation_invariant(
                sx in -50.0f64..50.0, sy in -50.0f64..50.0,
                ax in -100.0f64..100.0, ay in -100.0f64..100.0,
                bx in -100.0f64..100.0, by in -100.0f64..100.0,
                rot in -PI..PI,
            ) {
                let s = Point3::new(sx, sy, 0.0);
                let a = Point3::new(ax, ay, 3.0);
                let b = Point3::new(bx, by, -2.0);
                prop_assume!(horizontal_distance(&s, &a) > 1e-3 && horizontal_distance(&s, &b) > 1e-3);
                let ab = azimuth_separation(&s, &a, &b).unwrap();
                let ba = azimuth_separation(&s, &b, &a).unwrap();
                prop_assert!((ab - ba).abs() < 1e-12);
                prop_assert!((0.0..=PI).contains(&ab));
                let turn = |p: &Point3| {
                    let (dx, dy) = (p.x - s.x, p.y - s.y);
                    Point3::new(s.x + dx * rot.cos() - dy * rot.sin(), s.y + dx * rot.sin() + dy * rot.cos(), p.z)
                };
                let rotated = azimuth_separation(&s, &turn(&a), &turn(&b)).unwrap();
                prop_assert!((rotated - ab).abs() < 1e-9);
            }
        }
    }
}
