//! Spectrum-sweep compliance monitoring: band lookup, per-band thresholds,
//! and detection of unauthorized local transmissions.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_TABLE: &str = include_str!("../data/bands.toml");
const MHZ: f64 = 1e6;
const SECONDS_PER_DAY: f64 = 86_400.0;
const UNALLOCATED_BIN_HZ: f64 = 10e6;

/// Half-open frequency interval `[low, high)`, Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqRange {
    pub low_hz: f64,
    pub high_hz: f64,
}

impl FreqRange {
    pub fn new(low_hz: f64, high_hz: f64) -> Result<Self> {
        if !(low_hz.is_finite() && high_hz.is_finite() && low_hz < high_hz) {
            return Err(Error::Config(format!("invalid range [{low_hz}, {high_hz})")));
        }
        Ok(Self { low_hz, high_hz })
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.low_hz && f < self.high_hz
    }

    pub fn width(&self) -> f64 {
        self.high_hz - self.low_hz
    }
}

impl fmt::Display for FreqRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{} MHz", self.low_hz / MHZ, self.high_hz / MHZ)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Duplex {
    #[serde(rename = "FDD")]
    Fdd,
    #[serde(rename = "TDD")]
    Tdd,
    #[serde(rename = "n/a")]
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Cellular,
    Allocation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Uplink,
    Downlink,
    Both,
}

impl Direction {
    pub fn tag(&self) -> &'static str {
        match self {
            Direction::Uplink => "uplink",
            Direction::Downlink => "downlink",
            Direction::Both => "both",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandEntry {
    /// Band number for cellular rows, service name for allocations.
    pub name: String,
    pub duplex: Duplex,
    /// Operators or service label.
    pub label: String,
    pub origin: Origin,
    pub ranges: Vec<(Direction, FreqRange)>,
}

impl BandEntry {
    /// Human-readable annotation for a match in `direction`.
    pub fn annotation(&self, direction: Direction, range: &FreqRange) -> String {
        match self.origin {
            Origin::Cellular => format!("band {} {} {} ({})", self.name, direction.tag(), range, self.label),
            Origin::Allocation => format!("{} {}", self.name, range),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandMatch<'a> {
    pub entry: &'a BandEntry,
    pub direction: Direction,
    pub range: FreqRange,
}

impl BandMatch<'_> {
    pub fn annotation(&self) -> String {
        self.entry.annotation(self.direction, &self.range)
    }
}

#[derive(Deserialize)]
struct TableFile {
    version: String,
    #[serde(default)]
    cellular: Vec<CellularRow>,
    #[serde(default)]
    allocation: Vec<AllocationRow>,
}

#[derive(Deserialize)]
struct CellularRow {
    band: String,
    duplex: Duplex,
    uplink_mhz: [f64; 2],
    downlink_mhz: [f64; 2],
    operators: String,
}

#[derive(Deserialize)]
struct AllocationRow {
    name: String,
    ranges_mhz: Vec<[f64; 2]>,
}

fn mhz_range(r: [f64; 2]) -> Result<FreqRange> {
    FreqRange::new(r[0] * MHZ, r[1] * MHZ)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandTable {
    pub version: String,
    pub entries: Vec<BandEntry>,
}

impl BandTable {
    /// The shipped table of cellular bands and service allocations.
    pub fn builtin() -> Self {
        Self::from_toml(DEFAULT_TABLE).expect("bundled band table is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: TableFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut entries = Vec::with_capacity(file.cellular.len() + file.allocation.len());
        for row in file.cellular {
            let up = mhz_range(row.uplink_mhz)?;
            let down = mhz_range(row.downlink_mhz)?;
            let ranges = if up == down {
                vec![(Direction::Both, up)]
            } else {
                vec![(Direction::Uplink, up), (Direction::Downlink, down)]
            };
            entries.push(BandEntry {
                name: row.band,
                duplex: row.duplex,
                label: row.operators,
                origin: Origin::Cellular,
                ranges,
            });
        }
        for row in file.allocation {
            if row.ranges_mhz.is_empty() {
                return Err(Error::Config(format!("allocation {} has no ranges", row.name)));
            }
            let ranges = row
                .ranges_mhz
                .into_iter()
                .map(|r| Ok((Direction::Both, mhz_range(r)?)))
                .collect::<Result<Vec<_>>>()?;
            entries.push(BandEntry {
                label: row.name.clone(),
                name: row.name,
                duplex: Duplex::NotApplicable,
                origin: Origin::Allocation,
                ranges,
            });
        }
        Ok(Self {
            version: file.version,
            entries,
        })
    }

    /// Every (entry, range) containing `frequency_hz`, in table order.
    pub fn lookup(&self, frequency_hz: f64) -> Vec<BandMatch<'_>> {
        let mut out = Vec::new();
        for entry in &self.entries {
            for (direction, range) in &entry.ranges {
                if range.contains(frequency_hz) {
                    out.push(BandMatch {
                        entry,
                        direction: *direction,
                        range: *range,
                    });
                }
            }
        }
        out
    }

    /// Calibration key: the narrowest matching range, or a 10 MHz
    /// "unallocated" bin when nothing matches.
    pub fn band_key(&self, frequency_hz: f64) -> String {
        let best = self
            .lookup(frequency_hz)
            .into_iter()
            .min_by(|a, b| a.range.width().total_cmp(&b.range.width()).then_with(|| a.entry.name.cmp(&b.entry.name)));
        match best {
            Some(m) => format!("{} {}", m.entry.name, m.range),
            None => {
                let k = (frequency_hz / UNALLOCATED_BIN_HZ).floor();
                let r = FreqRange {
                    low_hz: k * UNALLOCATED_BIN_HZ,
                    high_hz: (k + 1.0) * UNALLOCATED_BIN_HZ,
                };
                format!("unallocated {r}")
            }
        }
    }
}

/// One spectrum-sweep observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub timestamp_utc_s: f64,
    pub freq_hz: f64,
    pub power_dbm: f64,
    pub node_id: u32,
}

pub fn default_sweep_span() -> FreqRange {
    FreqRange {
        low_hz: 100e6,
        high_hz: 3e9,
    }
}

impl SweepRecord {
    /// Checks the record lies in the closed sweep span and carries finite values.
    pub fn validate(&self, span: &FreqRange) -> Result<()> {
        if !(self.freq_hz >= span.low_hz && self.freq_hz <= span.high_hz) {
            return Err(Error::InvalidRecord(format!(
                "frequency {} Hz outside sweep span {span}",
                self.freq_hz
            )));
        }
        if !self.power_dbm.is_finite() || !self.timestamp_utc_s.is_finite() {
            return Err(Error::InvalidRecord(format!("non-finite value at {} Hz", self.freq_hz)));
        }
        Ok(())
    }
}

/// Sweep CSV with columns `timestamp_utc_s, freq_hz, power_dbm, node_id`.
pub fn read_sweep_csv<R: Read>(r: R, span: &FreqRange) -> Result<Vec<SweepRecord>> {
    let mut out = Vec::new();
    for (line, row) in csv::Reader::from_reader(r).deserialize().enumerate() {
        let rec: SweepRecord = row?;
        rec.validate(span)
            .map_err(|e| Error::InvalidRecord(format!("row {}: {e}", line + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_sweep_csv<W: Write>(records: &[SweepRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Single-pass mean and population variance.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationOptions {
    pub k: f64,
    pub delta_min_db: f64,
    pub min_count: u64,
    pub buckets_per_day: u32,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            k: 3.0,
            delta_min_db: 10.0,
            min_count: 30,
            buckets_per_day: 24,
        }
    }
}

impl CalibrationOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.k >= 0.0 && self.delta_min_db >= 0.0) {
            return Err(Error::Config("k and delta_min must be non-negative".into()));
        }
        if self.buckets_per_day == 0 || self.min_count == 0 {
            return Err(Error::Config("buckets_per_day and min_count must be positive".into()));
        }
        Ok(())
    }

    pub fn bucket(&self, timestamp_utc_s: f64) -> u32 {
        let width = SECONDS_PER_DAY / self.buckets_per_day as f64;
        ((timestamp_utc_s.rem_euclid(SECONDS_PER_DAY) / width) as u32).min(self.buckets_per_day - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandStats {
    pub count: u64,
    pub mean_dbm: f64,
    pub std_db: f64,
    /// `None` below the minimum calibration count.
    pub threshold_dbm: Option<f64>,
}

/// Thresholds per (band key, time-of-day bucket).
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdProfile {
    pub options: CalibrationOptions,
    pub entries: BTreeMap<(String, u32), BandStats>,
}

/// Builds per-band, per-bucket thresholds `mean + max(k·std, Δ_min)`.
pub fn calibrate<'a, I>(history: I, table: &BandTable, opts: &CalibrationOptions) -> Result<ThresholdProfile>
where
    I: IntoIterator<Item = &'a SweepRecord>,
{
    opts.validate()?;
    let mut acc: BTreeMap<(String, u32), RunningStats> = BTreeMap::new();
    let mut keys: BTreeMap<u64, String> = BTreeMap::new();
    for rec in history {
        let key = keys
            .entry(rec.freq_hz.to_bits())
            .or_insert_with(|| table.band_key(rec.freq_hz))
            .clone();
        acc.entry((key, opts.bucket(rec.timestamp_utc_s)))
            .or_default()
            .push(rec.power_dbm);
    }
    if acc.is_empty() {
        return Err(Error::EmptyInput("calibration history is empty"));
    }
    let entries = acc
        .into_iter()
        .map(|(key, s)| {
            let threshold = (s.count() >= opts.min_count)
                .then(|| s.mean() + (opts.k * s.std()).max(opts.delta_min_db));
            (
                key,
                BandStats {
                    count: s.count(),
                    mean_dbm: s.mean(),
                    std_db: s.std(),
                    threshold_dbm: threshold,
                },
            )
        })
        .collect();
    Ok(ThresholdProfile {
        options: *opts,
        entries,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileRow {
    band: String,
    bucket: u32,
    count: u64,
    mean_dbm: f64,
    std_db: f64,
    threshold_dbm: Option<f64>,
    status: String,
}

impl ThresholdProfile {
    pub fn threshold(&self, table: &BandTable, rec: &SweepRecord) -> Option<f64> {
        let key = (table.band_key(rec.freq_hz), self.options.bucket(rec.timestamp_utc_s));
        self.entries.get(&key).and_then(|s| s.threshold_dbm)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for ((band, bucket), s) in &self.entries {
            out.serialize(ProfileRow {
                band: band.clone(),
                bucket: *bucket,
                count: s.count,
                mean_dbm: s.mean_dbm,
                std_db: s.std_db,
                threshold_dbm: s.threshold_dbm,
                status: if s.threshold_dbm.is_some() { "CALIBRATED" } else { "UNCALIBRATED" }.into(),
            })?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a profile written by [`ThresholdProfile::write_csv`]; `opts`
    /// supplies the bucketing used at calibration time.
    pub fn read_csv<R: Read>(r: R, opts: &CalibrationOptions) -> Result<Self> {
        opts.validate()?;
        let mut entries = BTreeMap::new();
        for row in csv::Reader::from_reader(r).deserialize() {
            let row: ProfileRow = row?;
            if row.bucket >= opts.buckets_per_day {
                return Err(Error::InvalidRecord(format!(
                    "bucket {} outside 0..{}",
                    row.bucket, opts.buckets_per_day
                )));
            }
            entries.insert(
                (row.band, row.bucket),
                BandStats {
                    count: row.count,
                    mean_dbm: row.mean_dbm,
                    std_db: row.std_db,
                    threshold_dbm: row.threshold_dbm,
                },
            );
        }
        Ok(Self {
            options: *opts,
            entries,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Classification {
    #[serde(rename = "LOCAL_EXPERIMENTER")]
    LocalExperimenter,
    #[serde(rename = "INCUMBENT_OR_AMBIENT")]
    IncumbentOrAmbient,
    #[serde(rename = "UNCALIBRATED")]
    Uncalibrated,
}

impl Classification {
    pub fn tag(&self) -> &'static str {
        match self {
            Classification::LocalExperimenter => "LOCAL_EXPERIMENTER",
            Classification::IncumbentOrAmbient => "INCUMBENT_OR_AMBIENT",
            Classification::Uncalibrated => "UNCALIBRATED",
        }
    }
}

pub fn classify(rec: &SweepRecord, profile: &ThresholdProfile, table: &BandTable) -> Classification {
    match profile.threshold(table, rec) {
        None => Classification::Uncalibrated,
        Some(t) if rec.power_dbm > t => Classification::LocalExperimenter,
        Some(_) => Classification::IncumbentOrAmbient,
    }
}

/// An unauthorized local transmission.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplianceEvent {
    pub timestamp_utc_s: f64,
    pub freq_hz: f64,
    pub power_dbm: f64,
    pub threshold_dbm: f64,
    pub node_id: u32,
    pub bands: Vec<String>,
    pub verdict: Classification,
}

pub fn authorization_check(
    rec: &SweepRecord,
    profile: &ThresholdProfile,
    table: &BandTable,
    authorized: &[FreqRange],
) -> Option<ComplianceEvent> {
    let threshold = profile.threshold(table, rec)?;
    if rec.power_dbm <= threshold || authorized.iter().any(|r| r.contains(rec.freq_hz)) {
        return None;
    }
    Some(ComplianceEvent {
        timestamp_utc_s: rec.timestamp_utc_s,
        freq_hz: rec.freq_hz,
        power_dbm: rec.power_dbm,
        threshold_dbm: threshold,
        node_id: rec.node_id,
        bands: table.lookup(rec.freq_hz).iter().map(BandMatch::annotation).collect(),
        verdict: Classification::LocalExperimenter,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifiedRecord {
    pub timestamp_utc_s: f64,
    pub freq_hz: f64,
    pub power_dbm: f64,
    pub node_id: u32,
    pub band: String,
    pub threshold_dbm: Option<f64>,
    pub verdict: Classification,
}

/// Classifies every record and collects events ordered by time, then frequency.
pub fn run_compliance(
    records: &[SweepRecord],
    profile: &ThresholdProfile,
    table: &BandTable,
    authorized: &[FreqRange],
) -> (Vec<ClassifiedRecord>, Vec<ComplianceEvent>) {
    let classified = records
        .iter()
        .map(|r| ClassifiedRecord {
            timestamp_utc_s: r.timestamp_utc_s,
            freq_hz: r.freq_hz,
            power_dbm: r.power_dbm,
            node_id: r.node_id,
            band: table.band_key(r.freq_hz),
            threshold_dbm: profile.threshold(table, r),
            verdict: classify(r, profile, table),
        })
        .collect();
    let mut events: Vec<ComplianceEvent> = records
        .iter()
        .filter_map(|r| authorization_check(r, profile, table, authorized))
        .collect();
    events.sort_by(|a, b| {
        a.timestamp_utc_s
            .total_cmp(&b.timestamp_utc_s)
            .then(a.freq_hz.total_cmp(&b.freq_hz))
            .then(a.node_id.cmp(&b.node_id))
    });
    (classified, events)
}

pub fn write_classified_csv<W: Write>(rows: &[ClassifiedRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// One JSON object per line.
pub fn write_events<W: Write>(events: &[ComplianceEvent], mut w: W) -> Result<()> {
    for e in events {
        let line = serde_json::to_string(e).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn names(table: &BandTable, f: f64) -> Vec<String> {
        table.lookup(f).iter().map(|m| m.entry.name.clone()).collect()
    }

    #[test]
    fn table_shape() {
        let t = BandTable::builtin();
        assert_eq!(t.entries.iter().filter(|e| e.origin == Origin::Cellular).count(), 9);
        assert_eq!(t.entries.iter().filter(|e| e.origin == Origin::Allocation).count(), 16);
        assert_eq!(t.version, "1.0.0");
    }

    #[test]
    fn lookup_examples() {
        let t = BandTable::builtin();
        let m = t.lookup(740e6);
        let band12: Vec<_> = m.iter().filter(|m| m.entry.name == "12").collect();
        assert_eq!(band12.len(), 1);
        assert_eq!(band12[0].direction, Direction::Downlink);
        assert_eq!(band12[0].entry.label, "AT&T, T-Mobile");
        assert_eq!(band12[0].range, FreqRange::new(728e6, 746e6).unwrap());

        assert_eq!(names(&t, 2450e6), vec!["ISM", "Radiolocation"]);
        assert!(t.lookup(50e6).is_empty());

        let n41 = t.lookup(2500e6);
        assert!(n41.iter().any(|m| m.entry.name == "n41" && m.direction == Direction::Both));
        assert!(names(&t, 406.05e6).contains(&"Mobile satellite".to_string()));
        assert!(!names(&t, 406.1e6).contains(&"Mobile satellite".to_string()));
    }

    #[test]
    fn boundaries_are_half_open() {
        let t = BandTable::builtin();
        for e in &t.entries {
            for (_, r) in &e.ranges {
                assert!(t.lookup(r.low_hz).iter().any(|m| m.entry == e && m.range == *r));
                assert!(!t.lookup(r.high_hz).iter().any(|m| m.entry == e && m.range == *r));
            }
        }
    }

    #[test]
    fn band_keys() {
        let t = BandTable::builtin();
        // Radiolocation 2417-2483 is narrower than ISM 2400-2500
        assert_eq!(t.band_key(2450e6), "Radiolocation 2417-2483 MHz");
        assert_eq!(t.band_key(3050e6), "unallocated 3050-3060 MHz");
    }

    fn rec(t: f64, f: f64, p: f64) -> SweepRecord {
        SweepRecord {
            timestamp_utc_s: t,
            freq_hz: f,
            power_dbm: p,
            node_id: 1,
        }
    }

    #[test]
    fn threshold_examples() {
        let t = BandTable::builtin();
        let opts = CalibrationOptions::default();
        let flat: Vec<_> = (0..40).map(|i| rec(i as f64, 740e6, -90.0)).collect();
        let p = calibrate(&flat, &t, &opts).unwrap();
        assert!((p.threshold(&t, &flat[0]).unwrap() + 80.0).abs() < 1e-12);

        // ±4 around −90: mean −90, population std 4
        let spread: Vec<_> = (0..40)
            .map(|i| rec(i as f64, 740e6, if i % 2 == 0 { -86.0 } else { -94.0 }))
            .collect();
        let p = calibrate(&spread, &t, &opts).unwrap();
        assert!((p.threshold(&t, &spread[0]).unwrap() + 78.0).abs() < 1e-9);

        let r = |pw| rec(0.0, 740e6, pw);
        assert_eq!(classify(&r(-60.0), &p, &t), Classification::LocalExperimenter);
        assert_eq!(classify(&r(-85.0), &p, &t), Classification::IncumbentOrAmbient);
        assert_eq!(classify(&rec(0.0, 900e6, -10.0), &p, &t), Classification::Uncalibrated);
    }

    #[test]
    fn few_samples_are_uncalibrated() {
        let t = BandTable::builtin();
        let hist: Vec<_> = (0..29).map(|i| rec(i as f64, 740e6, -90.0)).collect();
        let p = calibrate(&hist, &t, &CalibrationOptions::default()).unwrap();
        assert_eq!(classify(&rec(0.0, 740e6, 0.0), &p, &t), Classification::Uncalibrated);
        assert!(authorization_check(&rec(0.0, 740e6, 0.0), &p, &t, &[]).is_none());
        assert!(calibrate(&[], &t, &CalibrationOptions::default()).is_err());
    }

    #[test]
    fn welford_matches_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dist = Normal::new(-90.0, 4.0).unwrap();
        let xs: Vec<f64> = (0..1_000_000).map(|_| dist.sample(&mut rng)).collect();
        let mut s = RunningStats::default();
        xs.iter().for_each(|&x| s.push(x));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(((s.mean() - mean) / mean).abs() < 1e-9);
        assert!(((s.std() - var.sqrt()) / var.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn diurnal_profile() {
        let t = BandTable::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut hist = Vec::new();
        for day in 0..10 {
            for minute in 0..(24 * 60) {
                let ts = day as f64 * SECONDS_PER_DAY + minute as f64 * 60.0;
                let hour = minute / 60;
                let level = if (6..18).contains(&hour) { -85.0 } else { -95.0 };
                hist.push(rec(ts, 740e6, level + noise.sample(&mut rng)));
            }
        }
        let p = calibrate(&hist, &t, &CalibrationOptions::default()).unwrap();
        let night = p.threshold(&t, &rec(2.0 * 3600.0, 740e6, 0.0)).unwrap();
        let day = p.threshold(&t, &rec(12.0 * 3600.0, 740e6, 0.0)).unwrap();
        assert!((day - night - 10.0).abs() < 0.5, "day {day} night {night}");
    }

    #[test]
    fn authorization_examples() {
        let t = BandTable::builtin();
        let hist: Vec<_> = (0..40)
            .flat_map(|i| [rec(i as f64, 740e6, -90.0), rec(i as f64, 3.4e9, -90.0)])
            .collect();
        let p = calibrate(&hist, &t, &CalibrationOptions::default()).unwrap();
        let auth = [FreqRange::new(3.3e9, 3.5e9).unwrap()];
        let ev = authorization_check(&rec(5.0, 740e6, -40.0), &p, &t, &auth).unwrap();
        assert!(ev.bands.iter().any(|b| b.starts_with("band 12 downlink")));
        assert!(authorization_check(&rec(5.0, 3.4e9, -40.0), &p, &t, &auth).is_none());
        assert!(authorization_check(&rec(5.0, 740e6, -85.0), &p, &t, &auth).is_none());

        let mut buf = Vec::new();
        write_events(&[ev], &mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(v["verdict"], "LOCAL_EXPERIMENTER");
        assert_eq!(v["freq_hz"], 740e6);
        assert_eq!(v["threshold_dbm"], -80.0);
    }

    #[test]
    fn events_sorted() {
        let t = BandTable::builtin();
        let hist: Vec<_> = (0..40).map(|i| rec(i as f64, 740e6, -90.0)).collect();
        let p = calibrate(&hist, &t, &CalibrationOptions::default()).unwrap();
        let recs = [rec(9.0, 741e6, 0.0), rec(3.0, 742e6, 0.0), rec(3.0, 740e6, 0.0)];
        let (classified, events) = run_compliance(&recs, &p, &t, &[]);
        assert_eq!(classified.len(), 3);
        let order: Vec<(f64, f64)> = events.iter().map(|e| (e.timestamp_utc_s, e.freq_hz)).collect();
        assert_eq!(order, vec![(3.0, 740e6), (3.0, 742e6), (9.0, 741e6)]);
    }

    #[test]
    fn csv_round_trips() {
        let t = BandTable::builtin();
        let hist: Vec<_> = (0..60).map(|i| rec(i as f64 * 1000.0, 700e6 + i as f64 * 1e6, -90.0 + (i % 7) as f64)).collect();
        let mut buf = Vec::new();
        write_sweep_csv(&hist, &mut buf).unwrap();
        assert!(buf.starts_with(b"timestamp_utc_s,freq_hz,power_dbm,node_id\n"));
        assert_eq!(read_sweep_csv(buf.as_slice(), &default_sweep_span()).unwrap(), hist);

        let opts = CalibrationOptions {
            min_count: 2,
            ..Default::default()
        };
        let p = calibrate(&hist, &t, &opts).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(ThresholdProfile::read_csv(buf.as_slice(), &opts).unwrap(), p);
    }

    #[test]
    fn out_of_span_rejected() {
        let text = "timestamp_utc_s,freq_hz,power_dbm,node_id\n0,5e7,-90,1\n";
        assert!(matches!(
            read_sweep_csv(text.as_bytes(), &default_sweep_span()),
            Err(Error::InvalidRecord(_))
        ));
    }

    proptest! {
        #[test]
        fn lookup_contains_query(f in 1e8f64..3e9) {
            let t = BandTable::builtin();
            for m in t.lookup(f) {
                prop_assert!(m.range.contains(f));
            }
        }

        #[test]
        fn classify_monotone_in_power(p in -150.0f64..0.0, dp in 0.0f64..50.0, f in 1e8f64..3e9) {
            let t = BandTable::builtin();
            let hist: Vec<_> = (0..40).map(|i| rec(i as f64, f, -90.0 + (i % 5) as f64)).collect();
            let prof = calibrate(&hist, &t, &CalibrationOptions::default()).unwrap();
            let lo = classify(&rec(0.0, f, p), &prof, &t);
            let hi = classify(&rec(0.0, f, p + dp), &prof, &t);
            prop_assert!(!(lo == Classification::LocalExperimenter && hi == Classification::IncumbentOrAmbient));
        }
    }
}
