//! CAN-style LKA telemetry: log parsing, lane deviation, detection quality,
//! episode segmentation and curation of failure/normal sets.

use std::collections::BTreeMap;
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Required leading columns of a telemetry CSV.
pub const TELEMETRY_HEADER: [&str; 10] = [
    "t_s",
    "v_mps",
    "d_left_m",
    "d_right_m",
    "lka_engaged",
    "detect_level",
    "lane_prob",
    "steer_angle_rad",
    "steer_torque_Nm",
    "kappa_inv_m",
];

/// Optional trailing context columns, stored without the `ctx_` prefix.
pub const CONTEXT_COLUMNS: [&str; 5] = ["ctx_weather", "ctx_lighting", "ctx_marking", "ctx_road_type", "ctx_surface"];

pub const ANOMALY_THRESHOLD_M: f64 = 0.25;
pub const CRITICAL_THRESHOLD_M: f64 = 0.65;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing or malformed header, expected `{}` followed by optional ctx_ columns", TELEMETRY_HEADER.join(","))]
    Header,
    #[error("row {row}: {reason}")]
    Parse { row: usize, reason: String },
    #[error("row {row}: timestamp {t} s is earlier than the previous row")]
    TimestampRegression { row: usize, t: f64 },
    #[error("log is empty")]
    Empty,
    #[error("detection level {0} is outside 0..=3")]
    DetectLevel(u8),
    #[error("no logs given")]
    NoLogs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    /// Timestamp [s].
    pub t: f64,
    /// Speed [m/s].
    pub v: f64,
    /// Signed offset of the left laneline [m], positive when in lane.
    pub d_left: f64,
    /// Signed offset of the right laneline [m], negative when in lane.
    pub d_right: f64,
    pub lka_engaged: bool,
    /// CAN lane detection level, 0..=3.
    pub detect_level: u8,
    /// Vision-model lane probability.
    pub lane_prob: f64,
    pub steer_angle: f64,
    pub steer_torque: f64,
    pub kappa: f64,
    /// Context tags keyed by column name without the `ctx_` prefix.
    #[serde(default)]
    pub context: BTreeMap<String, String>,
}

impl TelemetryRecord {
    /// Lane-centered, engaged, clear-detection record with no context.
    pub fn nominal(t: f64, v: f64) -> Self {
        Self {
            t,
            v,
            d_left: 1.8,
            d_right: -1.8,
            lka_engaged: true,
            detect_level: 1,
            lane_prob: 0.97,
            steer_angle: 0.0,
            steer_torque: 0.0,
            kappa: 0.0,
            context: BTreeMap::new(),
        }
    }

    /// Shifts both lanelines so the record reports `deviation` with a 3.6 m lane.
    pub fn with_deviation(mut self, deviation: f64) -> Self {
        self.d_left = 1.8 + deviation;
        self.d_right = -1.8 + deviation;
        self
    }

    pub fn deviation(&self) -> f64 {
        lane_deviation(self)
    }
}

/// Lateral offset of the lane center from the vehicle: `(d_left + d_right) / 2`.
pub fn lane_deviation(rec: &TelemetryRecord) -> f64 {
    (rec.d_left + rec.d_right) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleClass {
    Normal,
    Anomaly,
    Critical,
}

/// Classifies one sample: disengagement or `|d| > 0.65` is critical,
/// `|d| > 0.25` is an anomaly.
pub fn classify_deviation(deviation: f64, disengaged: bool) -> SampleClass {
    let d = deviation.abs();
    if disengaged || d > CRITICAL_THRESHOLD_M {
        SampleClass::Critical
    } else if d > ANOMALY_THRESHOLD_M {
        SampleClass::Anomaly
    } else {
        SampleClass::Normal
    }
}

/// Classifies `rec`, treating an engaged-to-disengaged transition from `prev`
/// as critical.
pub fn classify_sample(prev: Option<&TelemetryRecord>, rec: &TelemetryRecord) -> SampleClass {
    let dropped = prev.is_some_and(|p| p.lka_engaged) && !rec.lka_engaged;
    classify_deviation(lane_deviation(rec), dropped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionSource {
    VehicleCan,
    VisionModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionQuality {
    Normal,
    Ambiguous,
    Problematic,
    None,
    Special,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionStatus {
    pub source: DetectionSource,
    pub status: DetectionQuality,
}

pub fn detection_status_from_can(level: u8) -> Result<DetectionStatus, TelemetryError> {
    let status = match level {
        0 => DetectionQuality::None,
        1 => DetectionQuality::Normal,
        2 => DetectionQuality::Ambiguous,
        3 => DetectionQuality::Special,
        other => return Err(TelemetryError::DetectLevel(other)),
    };
    Ok(DetectionStatus { source: DetectionSource::VehicleCan, status })
}

pub fn detection_status_from_prob(p: f64) -> DetectionStatus {
    let status = if p >= 0.9 {
        DetectionQuality::Normal
    } else if p >= 0.8 {
        DetectionQuality::Ambiguous
    } else {
        DetectionQuality::Problematic
    };
    DetectionStatus { source: DetectionSource::VisionModel, status }
}

pub fn load_log(path: impl AsRef<Path>) -> Result<Vec<TelemetryRecord>, TelemetryError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| TelemetryError::Io { path: path.display().to_string(), source })?;
    parse_log(std::io::BufReader::new(file))
}

fn field(rec: &csv::StringRecord, idx: usize, row: usize, name: &str) -> Result<f64, TelemetryError> {
    let raw = rec.get(idx).unwrap_or("").trim();
    let v: f64 = raw
        .parse()
        .map_err(|_| TelemetryError::Parse { row, reason: format!("{name}: cannot parse `{raw}` as a number") })?;
    if !v.is_finite() {
        return Err(TelemetryError::Parse { row, reason: format!("{name} is not finite") });
    }
    Ok(v)
}

/// Parses a telemetry CSV. Rows are numbered from 1 after the header.
pub fn parse_log(reader: impl Read) -> Result<Vec<TelemetryRecord>, TelemetryError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
    let header = rdr.headers().map_err(|_| TelemetryError::Header)?.clone();
    if header.len() < TELEMETRY_HEADER.len() || header.iter().zip(TELEMETRY_HEADER).any(|(h, e)| h != e) {
        return Err(TelemetryError::Header);
    }
    let ctx: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .skip(TELEMETRY_HEADER.len())
        .map(|(i, h)| match h.strip_prefix("ctx_") {
            Some(key) if !key.is_empty() => Ok((i, key.to_string())),
            _ => Err(TelemetryError::Header),
        })
        .collect::<Result<_, _>>()?;

    let mut out: Vec<TelemetryRecord> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| TelemetryError::Parse { row, reason: e.to_string() })?;
        let t = field(&rec, 0, row, "t_s")?;
        let v = field(&rec, 1, row, "v_mps")?;
        let engaged = match rec.get(4).unwrap_or("") {
            "0" => false,
            "1" => true,
            other => return Err(TelemetryError::Parse { row, reason: format!("lka_engaged must be 0 or 1, got `{other}`") }),
        };
        let level: u8 = rec
            .get(5)
            .unwrap_or("")
            .parse()
            .map_err(|_| TelemetryError::Parse { row, reason: "detect_level must be an integer 0..=3".into() })?;
        if level > 3 {
            return Err(TelemetryError::Parse { row, reason: format!("detect_level {level} is outside 0..=3") });
        }
        let lane_prob = field(&rec, 6, row, "lane_prob")?;
        if !(0.0..=1.0).contains(&lane_prob) {
            return Err(TelemetryError::Parse { row, reason: format!("lane_prob {lane_prob} is outside [0, 1]") });
        }
        if v < 0.0 {
            return Err(TelemetryError::Parse { row, reason: "v_mps is negative".into() });
        }
        let context = ctx
            .iter()
            .filter_map(|(idx, key)| {
                let val = rec.get(*idx).unwrap_or("").trim();
                (!val.is_empty()).then(|| (key.clone(), val.to_string()))
            })
            .collect();
        let record = TelemetryRecord {
            t,
            v,
            d_left: field(&rec, 2, row, "d_left_m")?,
            d_right: field(&rec, 3, row, "d_right_m")?,
            lka_engaged: engaged,
            detect_level: level,
            lane_prob,
            steer_angle: field(&rec, 7, row, "steer_angle_rad")?,
            steer_torque: field(&rec, 8, row, "steer_torque_Nm")?,
            kappa: field(&rec, 9, row, "kappa_inv_m")?,
            context,
        };
        if let Some(prev) = out.last() {
            if record.t < prev.t {
                return Err(TelemetryError::TimestampRegression { row, t: record.t });
            }
        }
        out.push(record);
    }
    Ok(out)
}

/// Writes `records` as telemetry CSV, adding a `ctx_` column for every
/// context key present in any record.
pub fn write_log(records: &[TelemetryRecord], writer: impl std::io::Write) -> csv::Result<()> {
    let mut keys: Vec<&str> = records.iter().flat_map(|r| r.context.keys().map(String::as_str)).collect();
    keys.sort_unstable();
    keys.dedup();
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = TELEMETRY_HEADER.iter().map(|s| s.to_string()).collect();
    header.extend(keys.iter().map(|k| format!("ctx_{k}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.t.to_string(),
            r.v.to_string(),
            r.d_left.to_string(),
            r.d_right.to_string(),
            u8::from(r.lka_engaged).to_string(),
            r.detect_level.to_string(),
            r.lane_prob.to_string(),
            r.steer_angle.to_string(),
            r.steer_torque.to_string(),
            r.kappa.to_string(),
        ];
        row.extend(keys.iter().map(|k| r.context.get(*k).cloned().unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeKind {
    Deviation,
    Disengagement,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub kind: EpisodeKind,
    #[serde(rename = "t_start_s")]
    pub t_start: f64,
    #[serde(rename = "t_end_s")]
    pub t_end: f64,
    /// Largest `|lane deviation|` inside the episode [m].
    #[serde(rename = "peak_deviation_m")]
    pub peak_deviation: f64,
    pub critical: bool,
    /// Index range into the source log.
    #[serde(skip)]
    pub records: Range<usize>,
}

impl Episode {
    pub fn is_failure(&self) -> bool {
        self.kind != EpisodeKind::Normal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub deviation_threshold: f64,
    pub critical_threshold: f64,
    /// Failure windows separated by less than this many seconds are merged.
    pub min_gap: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self { deviation_threshold: ANOMALY_THRESHOLD_M, critical_threshold: CRITICAL_THRESHOLD_M, min_gap: 1.0 }
    }
}

fn make_episode(log: &[TelemetryRecord], kind: EpisodeKind, r: Range<usize>, cfg: &SegmentConfig) -> Episode {
    let peak = log[r.clone()].iter().map(|x| lane_deviation(x).abs()).fold(0.0, f64::max);
    let critical = match kind {
        EpisodeKind::Disengagement => true,
        EpisodeKind::Deviation => peak > cfg.critical_threshold,
        EpisodeKind::Normal => false,
    };
    Episode { kind, t_start: log[r.start].t, t_end: log[r.end - 1].t, peak_deviation: peak, critical, records: r }
}

/// Splits a log into deviation, disengagement and normal episodes that
/// together cover every record exactly once, in time order.
///
/// A disengagement runs from the engaged-to-disengaged transition until
/// re-engagement or the end of the log. Records that are disengaged before
/// the system first engages belong to normal episodes.
pub fn segment_episodes(log: &[TelemetryRecord], cfg: &SegmentConfig) -> Result<Vec<Episode>, TelemetryError> {
    let n = log.len();
    if n == 0 {
        return Err(TelemetryError::Empty);
    }
    let mut windows: Vec<(EpisodeKind, Range<usize>)> = Vec::new();

    let mut i = 1;
    while i < n {
        if log[i - 1].lka_engaged && !log[i].lka_engaged {
            let mut j = i;
            while j < n && !log[j].lka_engaged {
                j += 1;
            }
            windows.push((EpisodeKind::Disengagement, i..j));
            i = j;
        } else {
            i += 1;
        }
    }

    let mut i = 0;
    while i < n {
        let off = |k: usize| log[k].lka_engaged && lane_deviation(&log[k]).abs() > cfg.deviation_threshold;
        if off(i) {
            let mut j = i;
            while j < n && off(j) {
                j += 1;
            }
            windows.push((EpisodeKind::Deviation, i..j));
            i = j;
        } else {
            i += 1;
        }
    }
    windows.sort_by_key(|(_, r)| r.start);

    let mut merged: Vec<(EpisodeKind, Range<usize>)> = Vec::new();
    for (kind, r) in windows {
        match merged.last_mut() {
            Some((mk, mr)) if log[r.start].t - log[mr.end - 1].t < cfg.min_gap => {
                mr.end = mr.end.max(r.end);
                if kind == EpisodeKind::Disengagement {
                    *mk = EpisodeKind::Disengagement;
                }
            }
            _ => merged.push((kind, r)),
        }
    }

    let mut out = Vec::new();
    let mut cursor = 0;
    for (kind, r) in merged {
        if r.start > cursor {
            out.push(make_episode(log, EpisodeKind::Normal, cursor..r.start, cfg));
        }
        cursor = r.end;
        out.push(make_episode(log, kind, r, cfg));
    }
    if cursor < n {
        out.push(make_episode(log, EpisodeKind::Normal, cursor..n, cfg));
    }
    Ok(out)
}

/// An episode tagged with the index of the log it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedEpisode {
    pub log: usize,
    pub episode_index: usize,
    #[serde(flatten)]
    pub episode: Episode,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CuratedSet {
    pub failures: Vec<CuratedEpisode>,
    pub normals: Vec<CuratedEpisode>,
    pub warnings: Vec<String>,
}

/// Collects every failure episode and a seeded random sample of
/// `round(ratio * failures)` normal episodes.
pub fn curate(logs: &[Vec<Episode>], normal_sample_ratio: f64, seed: u64) -> Result<CuratedSet, TelemetryError> {
    if logs.is_empty() {
        return Err(TelemetryError::NoLogs);
    }
    let mut set = CuratedSet::default();
    let mut pool = Vec::new();
    for (li, eps) in logs.iter().enumerate() {
        for (ei, ep) in eps.iter().enumerate() {
            let c = CuratedEpisode { log: li, episode_index: ei, episode: ep.clone() };
            if ep.is_failure() {
                set.failures.push(c);
            } else {
                pool.push(c);
            }
        }
    }
    if set.failures.is_empty() {
        set.warnings.push("no failure episodes found".into());
    }
    if pool.is_empty() {
        set.warnings.push("no normal episodes available".into());
        return Ok(set);
    }
    let wanted = (normal_sample_ratio.max(0.0) * set.failures.len() as f64).round() as usize;
    if wanted > pool.len() {
        set.warnings.push(format!("wanted {wanted} normal episodes but only {} are available", pool.len()));
    }
    let take = wanted.min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, pool.len(), take).into_vec();
    picked.sort_unstable();
    set.normals = picked.into_iter().map(|i| pool[i].clone()).collect();
    Ok(set)
}
