//! Road centerline profiles: curvature, superelevation and posted speed sampled
//! along a longitudinal station axis.
//!
//! Sign conventions used throughout the crate: the lateral axis points left,
//! left-hand curves have positive curvature, and roll is positive when the
//! road is banked toward the curve center.

use std::io::Read;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Column header required in geometry CSV files.
pub const GEOMETRY_HEADER: [&str; 4] = ["x_m", "kappa_inv_m", "roll_rad", "posted_speed_mps"];

/// Fraction of the peak curvature magnitude that bounds the apex window.
pub const APEX_FRACTION: f64 = 0.6;

const MAX_ABS_KAPPA: f64 = 1.0;
const MAX_ABS_ROLL: f64 = 0.35;
const UNIFORM_SPREAD_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}: {reason}")]
    Parse { row: usize, reason: String },
    #[error("missing or malformed header, expected `{}`", GEOMETRY_HEADER.join(","))]
    Header,
    #[error("profile has fewer than 2 samples")]
    TooFewSamples,
    #[error("duplicate station x = {x} m")]
    DuplicateStation { x: f64 },
    #[error("stations not strictly increasing at index {index}")]
    NotIncreasing { index: usize },
    #[error("invalid sample at x = {x}: {reason}")]
    InvalidSample { x: f64, reason: String },
    #[error("invalid resampling step {dx} m for span {span} m")]
    InvalidStep { dx: f64, span: f64 },
    #[error("station spacing is not uniform (relative spread {spread:e})")]
    NonUniformSpacing { spread: f64 },
    #[error("invalid transition: {0}")]
    InvalidTransition(String),
    #[error("curvature series has no curve (max |kappa| is zero)")]
    NoCurvature,
}

/// One station along the centerline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationSample {
    /// Longitudinal station [m].
    pub x: f64,
    /// Signed curvature [1/m], left turn positive.
    pub kappa: f64,
    /// Superelevation angle [rad], positive toward the curve center.
    pub roll: f64,
    /// Posted speed limit [m/s].
    pub posted_speed: f64,
}

impl StationSample {
    pub fn new(x: f64, kappa: f64, roll: f64, posted_speed: f64) -> Self {
        Self { x, kappa, roll, posted_speed }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |reason: &str| GeometryError::InvalidSample { x: self.x, reason: reason.into() };
        if !self.x.is_finite() {
            return Err(bad("station is not finite"));
        }
        if !self.kappa.is_finite() || self.kappa.abs() >= MAX_ABS_KAPPA {
            return Err(bad("curvature must be finite with |kappa| < 1 1/m"));
        }
        if !self.roll.is_finite() || self.roll.abs() >= MAX_ABS_ROLL {
            return Err(bad("roll must be finite with |roll| < 0.35 rad"));
        }
        if !(self.posted_speed.is_finite() && self.posted_speed > 0.0) {
            return Err(bad("posted speed must be positive"));
        }
        Ok(())
    }
}

/// An ordered, validated sequence of station samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadProfile {
    name: String,
    samples: Vec<StationSample>,
}

impl RoadProfile {
    /// Builds a profile from samples that must already be strictly increasing in `x`.
    pub fn new(name: impl Into<String>, samples: Vec<StationSample>) -> Result<Self, GeometryError> {
        if samples.len() < 2 {
            return Err(GeometryError::TooFewSamples);
        }
        for s in &samples {
            s.validate()?;
        }
        for (i, w) in samples.windows(2).enumerate() {
            if w[1].x <= w[0].x {
                return Err(GeometryError::NotIncreasing { index: i + 1 });
            }
        }
        Ok(Self { name: name.into(), samples })
    }

    /// Sorts by station first; equal stations are rejected as duplicates.
    pub fn from_unsorted(
        name: impl Into<String>,
        mut samples: Vec<StationSample>,
    ) -> Result<Self, GeometryError> {
        for s in &samples {
            s.validate()?;
        }
        samples.sort_by(|a, b| a.x.total_cmp(&b.x));
        if let Some(w) = samples.windows(2).find(|w| w[0].x == w[1].x) {
            return Err(GeometryError::DuplicateStation { x: w[0].x });
        }
        Self::new(name, samples)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn samples(&self) -> &[StationSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn x_start(&self) -> f64 {
        self.samples[0].x
    }

    pub fn x_end(&self) -> f64 {
        self.samples[self.samples.len() - 1].x
    }

    pub fn span(&self) -> f64 {
        self.x_end() - self.x_start()
    }

    /// `(x, kappa)` pairs in station order.
    pub fn kappa_series(&self) -> Vec<(f64, f64)> {
        self.samples.iter().map(|s| (s.x, s.kappa)).collect()
    }

    /// Linear interpolation at station `x`; clamps to the end samples outside the span.
    pub fn sample_at(&self, x: f64) -> StationSample {
        let s = &self.samples;
        if x <= s[0].x {
            return StationSample { x, ..s[0] };
        }
        let last = s[s.len() - 1];
        if x >= last.x {
            return StationSample { x, ..last };
        }
        let hi = s.partition_point(|p| p.x <= x);
        let (a, b) = (s[hi - 1], s[hi]);
        let t = (x - a.x) / (b.x - a.x);
        let lerp = |u: f64, v: f64| u + (v - u) * t;
        StationSample {
            x,
            kappa: lerp(a.kappa, b.kappa),
            roll: lerp(a.roll, b.roll),
            posted_speed: lerp(a.posted_speed, b.posted_speed),
        }
    }

    /// Concatenates another profile after this one, shifting its stations so that
    /// its first sample coincides with this profile's last station.
    pub fn append(&self, next: &RoadProfile) -> Result<RoadProfile, GeometryError> {
        let shift = self.x_end() - next.x_start();
        let mut samples = self.samples.clone();
        samples.extend(next.samples.iter().skip(1).map(|s| StationSample { x: s.x + shift, ..*s }));
        RoadProfile::new(self.name.clone(), samples)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

/// Linear curvature ramp between two curvature values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionSpec {
    pub kappa_start: f64,
    pub kappa_end: f64,
    pub length: f64,
}

impl TransitionSpec {
    pub fn new(kappa_start: f64, kappa_end: f64, length: f64) -> Self {
        Self { kappa_start, kappa_end, length }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(GeometryError::InvalidTransition("length must be positive".into()));
        }
        for k in [self.kappa_start, self.kappa_end] {
            if !k.is_finite() || k.abs() >= MAX_ABS_KAPPA {
                return Err(GeometryError::InvalidTransition(format!("curvature {k} out of range")));
            }
        }
        Ok(())
    }

    /// Constant curvature gradient along the ramp [1/m²].
    pub fn gradient(&self) -> f64 {
        (self.kappa_end - self.kappa_start) / self.length
    }
}

/// Superelevation varying linearly over a transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollRamp {
    pub roll_start: f64,
    pub roll_end: f64,
}

/// Reads a geometry CSV file. The profile is named after the file stem.
pub fn load_profile(path: impl AsRef<Path>) -> Result<RoadProfile, GeometryError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| GeometryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_profile(file, &name)
}

/// Parses geometry CSV from any reader. Rows are numbered from 1 (first data row).
pub fn parse_profile(reader: impl Read, name: &str) -> Result<RoadProfile, GeometryError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(_) => return Err(GeometryError::TooFewSamples),
    };
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(GeometryError::TooFewSamples);
    }
    let mut cols = [0usize; 4];
    for (slot, want) in cols.iter_mut().zip(GEOMETRY_HEADER) {
        *slot = headers.iter().position(|h| h == want).ok_or(GeometryError::Header)?;
    }

    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| GeometryError::Parse { row, reason: e.to_string() })?;
        let mut vals = [0.0f64; 4];
        for (v, (&col, label)) in vals.iter_mut().zip(cols.iter().zip(GEOMETRY_HEADER)) {
            let raw = rec.get(col).ok_or_else(|| GeometryError::Parse {
                row,
                reason: format!("missing column {label}"),
            })?;
            let parsed: f64 = raw.parse().map_err(|_| GeometryError::Parse {
                row,
                reason: format!("{label}: cannot parse `{raw}`"),
            })?;
            if !parsed.is_finite() {
                return Err(GeometryError::Parse { row, reason: format!("{label} is not finite") });
            }
            *v = parsed;
        }
        let sample = StationSample::new(vals[0], vals[1], vals[2], vals[3]);
        sample
            .validate()
            .map_err(|e| GeometryError::Parse { row, reason: e.to_string() })?;
        samples.push(sample);
    }
    if samples.len() < 2 {
        return Err(GeometryError::TooFewSamples);
    }
    RoadProfile::from_unsorted(name, samples)
}

/// Writes a profile in the geometry CSV format.
pub fn write_profile(profile: &RoadProfile, writer: impl std::io::Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(GEOMETRY_HEADER)?;
    for s in profile.samples() {
        w.write_record(&[
            s.x.to_string(),
            s.kappa.to_string(),
            s.roll.to_string(),
            s.posted_speed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Resamples onto a uniform grid covering the full span.
///
/// The grid uses `ceil(span / dx)` intervals, so the realised spacing is the
/// largest value not exceeding `dx` that lands exactly on both endpoints.
pub fn resample_uniform(profile: &RoadProfile, dx: f64) -> Result<RoadProfile, GeometryError> {
    let span = profile.span();
    if !(dx.is_finite() && dx > 0.0) || dx > span * (1.0 + 1e-12) {
        return Err(GeometryError::InvalidStep { dx, span });
    }
    let intervals = ((span / dx) - 1e-9).ceil().max(1.0) as usize;
    let x0 = profile.x_start();
    let x1 = profile.x_end();
    let samples = (0..=intervals)
        .map(|i| {
            let x = if i == intervals { x1 } else { x0 + span * (i as f64) / (intervals as f64) };
            profile.sample_at(x)
        })
        .collect();
    RoadProfile::new(profile.name.clone(), samples)
}

/// Finite-difference derivative of `values` over uniformly spaced `xs`:
/// central differences inside, first-order one-sided differences at the ends.
pub fn uniform_gradient(xs: &[f64], values: &[f64]) -> Result<Vec<f64>, GeometryError> {
    let n = xs.len();
    if n < 2 || values.len() != n {
        return Err(GeometryError::TooFewSamples);
    }
    let steps: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = (xs[n - 1] - xs[0]) / (n - 1) as f64;
    let (lo, hi) = steps
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &h| (lo.min(h), hi.max(h)));
    let spread = (hi - lo) / mean;
    if spread > UNIFORM_SPREAD_TOL {
        return Err(GeometryError::NonUniformSpacing { spread });
    }
    let h = mean;
    let mut out = Vec::with_capacity(n);
    out.push((values[1] - values[0]) / h);
    for i in 1..n - 1 {
        out.push((values[i + 1] - values[i - 1]) / (2.0 * h));
    }
    out.push((values[n - 1] - values[n - 2]) / h);
    Ok(out)
}

/// `dkappa/dx` at every station of a uniformly sampled profile.
pub fn curvature_gradient(profile: &RoadProfile) -> Result<Vec<(f64, f64)>, GeometryError> {
    let xs: Vec<f64> = profile.samples.iter().map(|s| s.x).collect();
    let ks: Vec<f64> = profile.samples.iter().map(|s| s.kappa).collect();
    let grad = uniform_gradient(&xs, &ks)?;
    Ok(xs.into_iter().zip(grad).collect())
}

/// `droll/dx` at every station of a uniformly sampled profile.
pub fn roll_gradient(profile: &RoadProfile) -> Result<Vec<(f64, f64)>, GeometryError> {
    let xs: Vec<f64> = profile.samples.iter().map(|s| s.x).collect();
    let rs: Vec<f64> = profile.samples.iter().map(|s| s.roll).collect();
    let grad = uniform_gradient(&xs, &rs)?;
    Ok(xs.into_iter().zip(grad).collect())
}

/// Builds a clothoid (linear curvature ramp) starting at station 0.
pub fn build_clothoid_profile(
    spec: &TransitionSpec,
    dx: f64,
    roll: Option<RollRamp>,
    posted_speed: f64,
) -> Result<RoadProfile, GeometryError> {
    spec.validate()?;
    if !(dx.is_finite() && dx > 0.0) {
        return Err(GeometryError::InvalidStep { dx, span: spec.length });
    }
    let intervals = ((spec.length / dx) - 1e-9).ceil().max(1.0) as usize;
    let roll = roll.unwrap_or(RollRamp { roll_start: 0.0, roll_end: 0.0 });
    let samples = (0..=intervals)
        .map(|i| {
            let frac = i as f64 / intervals as f64;
            let x = if i == intervals { spec.length } else { spec.length * frac };
            let t = x / spec.length;
            StationSample {
                x,
                kappa: spec.kappa_start + (spec.kappa_end - spec.kappa_start) * t,
                roll: roll.roll_start + (roll.roll_end - roll.roll_start) * t,
                posted_speed,
            }
        })
        .collect();
    RoadProfile::new("clothoid", samples)
}

/// Piecewise-linear curve: straight approach, clothoid entry, constant arc,
/// clothoid exit and straight departure. Tangent and arc lengths may be zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveLayout {
    pub tangent_m: f64,
    pub spiral_m: f64,
    pub arc_m: f64,
    pub kappa: f64,
    pub roll: f64,
    pub posted_speed: f64,
}

impl CurveLayout {
    /// Profile sampled every `dx` metres.
    pub fn build(&self, name: &str, dx: f64) -> Result<RoadProfile, GeometryError> {
        if !(self.spiral_m > 0.0) || self.tangent_m < 0.0 || self.arc_m < 0.0 {
            return Err(GeometryError::InvalidTransition(
                "layout needs a positive spiral and non-negative tangent/arc lengths".into(),
            ));
        }
        let breaks = [
            (0.0, 0.0, 0.0),
            (self.tangent_m, 0.0, 0.0),
            (self.tangent_m + self.spiral_m, self.kappa, self.roll),
            (self.tangent_m + self.spiral_m + self.arc_m, self.kappa, self.roll),
            (self.tangent_m + 2.0 * self.spiral_m + self.arc_m, 0.0, 0.0),
            (2.0 * self.tangent_m + 2.0 * self.spiral_m + self.arc_m, 0.0, 0.0),
        ];
        let mut knots: Vec<StationSample> = Vec::new();
        for (x, k, r) in breaks {
            if knots.last().is_none_or(|p| x > p.x) {
                knots.push(StationSample::new(x, k, r, self.posted_speed));
            }
        }
        let skeleton = RoadProfile::new(name, knots)?;
        resample_uniform(&skeleton, dx)
    }

    pub fn total_length(&self) -> f64 {
        2.0 * (self.tangent_m + self.spiral_m) + self.arc_m
    }
}

/// Contiguous index range around the peak of `|kappa|` in which
/// `|kappa| >= 0.6 * max|kappa|`.
///
/// The window is the run containing the first occurrence of the peak, so a
/// single curve traversal yields its near-apex region.
pub fn extract_apex_window(kappa_series: &[(f64, f64)]) -> Result<Range<usize>, GeometryError> {
    let (peak_idx, peak) = kappa_series
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(bi, bv), (i, &(_, k))| if k.abs() > bv { (i, k.abs()) } else { (bi, bv) });
    if !(peak > 0.0) {
        return Err(GeometryError::NoCurvature);
    }
    let cut = APEX_FRACTION * peak;
    let inside = |i: usize| kappa_series[i].1.abs() >= cut;
    let mut lo = peak_idx;
    while lo > 0 && inside(lo - 1) {
        lo -= 1;
    }
    let mut hi = peak_idx + 1;
    while hi < kappa_series.len() && inside(hi) {
        hi += 1;
    }
    Ok(lo..hi)
}
