//! Rule-based attribution of failure episodes to perception, planning or
//! control, and co-occurrence statistics of contextual failure factors.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::VehicleCapability;
use crate::telemetry::{Episode, EpisodeKind, TelemetryRecord};

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosisError {
    #[error("normal episodes are not diagnosed")]
    NormalEpisode,
    #[error("episode window is empty")]
    EmptyWindow,
    #[error("need at least 2 records to estimate a torque rate, got {0}")]
    TooShort(usize),
    #[error("duplicate timestamp {t} s")]
    DuplicateTimestamp { t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Perception,
    Planning,
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Perception,
    Planning,
    Control,
    MultiFactor,
}

impl From<Component> for Category {
    fn from(c: Component) -> Self {
        match c {
            Component::Perception => Category::Perception,
            Component::Planning => Category::Planning,
            Component::Control => Category::Control,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub signal: String,
    pub value: f64,
    pub rule: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureLabel {
    pub category: Category,
    pub components: BTreeSet<Component>,
    pub evidence: Vec<Evidence>,
}

/// A diagnosis tied to its episode's position in the analysed log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDiagnosis {
    pub episode_id: usize,
    #[serde(flatten)]
    pub label: FailureLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosisConfig {
    /// Seconds of log before the episode included in the window.
    pub lead_in_s: f64,
    /// Perception fires when lane probability drops below this.
    pub perception_prob: f64,
    /// Median lane probability at or above this counts as clear detection.
    pub clear_prob: f64,
    /// Curvature [1/m] from which a curve is sharp enough to saturate control.
    pub kappa_ctrl: f64,
    /// Fraction of the torque and torque-rate limits treated as saturated.
    pub saturation_fraction: f64,
}

impl Default for DiagnosisConfig {
    fn default() -> Self {
        Self { lead_in_s: 1.0, perception_prob: 0.80, clear_prob: 0.90, kappa_ctrl: 0.006, saturation_fraction: 0.95 }
    }
}

/// Largest `|dT/dt|` over consecutive records [N·m/s].
pub fn torque_rate_estimate(window: &[TelemetryRecord]) -> Result<f64, DiagnosisError> {
    if window.len() < 2 {
        return Err(DiagnosisError::TooShort(window.len()));
    }
    let mut best = 0.0f64;
    for w in window.windows(2) {
        let dt = w[1].t - w[0].t;
        if dt == 0.0 {
            return Err(DiagnosisError::DuplicateTimestamp { t: w[1].t });
        }
        best = best.max(((w[1].steer_torque - w[0].steer_torque) / dt).abs());
    }
    Ok(best)
}

/// Same as [`torque_rate_estimate`] but skips repeated timestamps.
fn tolerant_torque_rate(window: &[TelemetryRecord]) -> f64 {
    window
        .windows(2)
        .filter(|w| w[1].t > w[0].t)
        .map(|w| ((w[1].steer_torque - w[0].steer_torque) / (w[1].t - w[0].t)).abs())
        .fold(0.0, f64::max)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// The episode's records plus the lead-in before it.
pub fn diagnosis_window(episode: &Episode, log: &[TelemetryRecord], lead_in_s: f64) -> Range<usize> {
    let end = episode.records.end.min(log.len());
    let mut start = episode.records.start.min(end);
    while start > 0 && log[start - 1].t >= episode.t_start - lead_in_s {
        start -= 1;
    }
    start..end
}

fn is_merge_tag(value: &str) -> bool {
    let v = value.to_ascii_lowercase();
    v.contains("merge") || v.contains("diverge")
}

/// Attributes a failure episode to one or more LKA components.
///
/// All rules are evaluated before the category is chosen. The planning rule
/// is a diagnosis of exclusion and is marked heuristic in the evidence. When
/// no rule fires, detection was neither clear nor clearly failing, and the
/// episode is attributed to perception.
pub fn diagnose(
    episode: &Episode,
    log: &[TelemetryRecord],
    cap: &VehicleCapability,
    cfg: &DiagnosisConfig,
) -> Result<FailureLabel, DiagnosisError> {
    if episode.kind == EpisodeKind::Normal {
        return Err(DiagnosisError::NormalEpisode);
    }
    let window = &log[diagnosis_window(episode, log, cfg.lead_in_s)];
    if window.is_empty() {
        return Err(DiagnosisError::EmptyWindow);
    }

    let mut components = BTreeSet::new();
    let mut evidence = Vec::new();

    let min_prob = window.iter().map(|r| r.lane_prob).fold(f64::INFINITY, f64::min);
    let med_prob = median(window.iter().map(|r| r.lane_prob).collect());
    let bad_level = window.iter().find(|r| r.detect_level == 0 || r.detect_level == 2).map(|r| r.detect_level);
    if min_prob < cfg.perception_prob {
        components.insert(Component::Perception);
        evidence.push(Evidence {
            signal: "lane_prob_min".into(),
            value: min_prob,
            rule: format!("perception: lane_prob < {}", cfg.perception_prob),
        });
    }
    if let Some(level) = bad_level {
        components.insert(Component::Perception);
        evidence.push(Evidence {
            signal: "detect_level".into(),
            value: level as f64,
            rule: "perception: detect_level in {0, 2}".into(),
        });
    }

    let clear = med_prob >= cfg.clear_prob;
    let kappa_max = window.iter().map(|r| r.kappa.abs()).fold(0.0, f64::max);
    let torque_max = window.iter().map(|r| r.steer_torque.abs()).fold(0.0, f64::max);
    let rate_max = tolerant_torque_rate(window);
    let torque_sat = torque_max >= cfg.saturation_fraction * cap.t_max;
    let rate_sat = rate_max >= cfg.saturation_fraction * cap.dt_dt_max;
    if clear && kappa_max >= cfg.kappa_ctrl && (torque_sat || rate_sat) {
        components.insert(Component::Control);
        evidence.push(Evidence {
            signal: "kappa_max".into(),
            value: kappa_max,
            rule: format!("control: |kappa| >= {}", cfg.kappa_ctrl),
        });
        if torque_sat {
            evidence.push(Evidence {
                signal: "steer_torque_max".into(),
                value: torque_max,
                rule: format!("control: |T| >= {} t_max", cfg.saturation_fraction),
            });
        }
        if rate_sat {
            evidence.push(Evidence {
                signal: "torque_rate_max".into(),
                value: rate_max,
                rule: format!("control: |dT/dt| >= {} dt_dt_max", cfg.saturation_fraction),
            });
        }
    }

    let merge = window.iter().any(|r| r.context.values().any(|v| is_merge_tag(v)));
    if clear && (components.is_empty() || merge) {
        components.insert(Component::Planning);
        let rule = if merge {
            "planning (heuristic): merge/diverge tag with clear detection"
        } else {
            "planning (heuristic): clear detection, control not saturated"
        };
        evidence.push(Evidence { signal: "lane_prob_median".into(), value: med_prob, rule: rule.into() });
    }

    if components.is_empty() {
        components.insert(Component::Perception);
        evidence.push(Evidence {
            signal: "lane_prob_median".into(),
            value: med_prob,
            rule: format!("perception: detection not clear (median < {})", cfg.clear_prob),
        });
    }

    let category = if components.len() >= 2 {
        Category::MultiFactor
    } else {
        (*components.iter().next().expect("non-empty")).into()
    };
    Ok(FailureLabel { category, components, evidence })
}

const BENIGN: [&str; 17] = [
    "", "clear", "sunny", "day", "daylight", "good", "normal", "dry", "none", "highway", "freeway", "urban",
    "rural", "straight", "paved", "smooth", "n/a",
];

/// Normalises one context value to a factor name, or `None` if it is benign.
pub fn factor_name(value: &str) -> Option<String> {
    let v = value.trim().to_ascii_lowercase().replace([' ', '-'], "_");
    if BENIGN.contains(&v.as_str()) {
        return None;
    }
    Some(match v.as_str() {
        "faded" => "faded_markings".into(),
        "missing" => "missing_markings".into(),
        _ if is_merge_tag(&v) => "merge_diverge".into(),
        _ => v,
    })
}

/// Contextual factors present in the diagnosis window of an episode. Adds
/// `sharp_curve` when the window reaches `kappa_ctrl`.
pub fn episode_factors(episode: &Episode, log: &[TelemetryRecord], cfg: &DiagnosisConfig) -> BTreeSet<String> {
    let window = &log[diagnosis_window(episode, log, cfg.lead_in_s)];
    let mut out: BTreeSet<String> =
        window.iter().flat_map(|r| r.context.values()).filter_map(|v| factor_name(v)).collect();
    if window.iter().any(|r| r.kappa.abs() >= cfg.kappa_ctrl) {
        out.insert("sharp_curve".into());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FactorTally {
    pub single_counts: BTreeMap<String, usize>,
    /// Pairs and triples of co-occurring factors, each sorted by name.
    pub combo_counts: BTreeMap<Vec<String>, usize>,
    pub category_counts: BTreeMap<Category, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountEntry {
    pub factors: Vec<String>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyReport {
    pub single: Vec<CountEntry>,
    pub combinations: Vec<CountEntry>,
    pub categories: BTreeMap<Category, usize>,
}

fn sorted_entries<'a>(it: impl Iterator<Item = (Vec<String>, usize)> + 'a) -> Vec<CountEntry> {
    let mut v: Vec<CountEntry> = it.map(|(factors, count)| CountEntry { factors, count }).collect();
    v.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.factors.len().cmp(&b.factors.len())).then_with(|| a.factors.cmp(&b.factors)));
    v
}

impl FactorTally {
    /// Entries ordered by count, highest first.
    pub fn report(&self) -> TallyReport {
        TallyReport {
            single: sorted_entries(self.single_counts.iter().map(|(k, &c)| (vec![k.clone()], c))),
            combinations: sorted_entries(self.combo_counts.iter().map(|(k, &c)| (k.clone(), c))),
            categories: self.category_counts.clone(),
        }
    }

    /// CSV `kind,factors,count`, with combination members joined by `+`.
    pub fn write_csv(&self, writer: impl std::io::Write) -> csv::Result<()> {
        let r = self.report();
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["kind", "factors", "count"])?;
        for e in &r.single {
            w.write_record(["single", &e.factors.join("+"), &e.count.to_string()])?;
        }
        for e in &r.combinations {
            let kind = if e.factors.len() == 2 { "pair" } else { "triple" };
            w.write_record([kind, &e.factors.join("+"), &e.count.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Counts each factor and every co-occurring pair and triple across labelled
/// failure episodes.
pub fn tally_factors(labeled: &[(FailureLabel, BTreeSet<String>)]) -> FactorTally {
    let mut t = FactorTally::default();
    for (label, tags) in labeled {
        *t.category_counts.entry(label.category).or_default() += 1;
        let f: Vec<&String> = tags.iter().collect();
        for a in &f {
            *t.single_counts.entry((*a).clone()).or_default() += 1;
        }
        for i in 0..f.len() {
            for j in i + 1..f.len() {
                *t.combo_counts.entry(vec![f[i].clone(), f[j].clone()]).or_default() += 1;
                for k in j + 1..f.len() {
                    *t.combo_counts.entry(vec![f[i].clone(), f[j].clone(), f[k].clone()]).or_default() += 1;
                }
            }
        }
    }
    t
}
