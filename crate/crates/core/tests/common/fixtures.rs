//! Hand-built telemetry fixtures shared by the diagnosis and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use lka_core::telemetry::TelemetryRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fixture {
    /// Lane probability dips to 0.6 during a 0.4 m deviation to the right.
    Perception,
    /// Clear detection, kappa 0.009, torque pinned at t_max, 1.2 m to the right.
    Control,
    /// Clear detection, gentle curve, merge section, 0.4 m to the left.
    Planning,
    /// Control conditions plus a lane probability dip.
    PerceptionAndControl,
}

/// 8 s at 10 Hz: 3 s nominal, a 2 s triangular deviation, 3 s nominal.
/// Failure conditions cover 2 s to 5 s. `t_max` is the torque limit used to
/// pin the steering torque.
pub fn failure_log(kind: Fixture, t_max: f64) -> Vec<TelemetryRecord> {
    let (peak, kappa, prob, pinned, merge) = match kind {
        Fixture::Perception => (-0.4, 0.001, 0.6, false, false),
        Fixture::Control => (-1.2, 0.009, 0.97, true, false),
        Fixture::Planning => (0.4, 0.001, 0.97, false, true),
        Fixture::PerceptionAndControl => (-0.8, 0.009, 0.6, true, false),
    };
    (0..80)
        .map(|i| {
            let t = i as f64 * 0.1;
            let u = ((t - 4.0).abs() / 1.0).min(1.0);
            let mut r = TelemetryRecord::nominal(t, 27.0).with_deviation(peak * (1.0 - u));
            if (2.0..=5.0).contains(&t) {
                r.kappa = kappa;
                r.steer_torque = if pinned { t_max } else { 0.4 };
                if merge {
                    r.context.insert("road_type".into(), "merge".into());
                }
            }
            if (3.5..=4.2).contains(&t) && prob < 0.9 {
                r.lane_prob = prob;
            }
            r
        })
        .collect()
}

fn tags(list: &[&str]) -> BTreeSet<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Ten hand-tagged failure episodes.
pub fn tally_fixture() -> Vec<BTreeSet<String>> {
    vec![
        tags(&["faded"]),
        tags(&["faded", "rain"]),
        tags(&["sharp_curve"]),
        tags(&["faded", "low_contrast"]),
        tags(&["faded", "low_contrast", "sharp_curve"]),
        tags(&["low_contrast", "night"]),
        tags(&["faded", "sharp_curve"]),
        tags(&["rain", "night"]),
        tags(&["faded", "low_contrast", "rain"]),
        tags(&[]),
    ]
}

/// Counts for [`tally_fixture`], worked out by hand.
pub fn tally_fixture_expected() -> (BTreeMap<String, usize>, BTreeMap<Vec<String>, usize>) {
    let singles = [("faded", 6), ("rain", 3), ("sharp_curve", 3), ("low_contrast", 4), ("night", 2)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    let combos = [
        (vec!["faded", "rain"], 2),
        (vec!["faded", "low_contrast"], 3),
        (vec!["faded", "sharp_curve"], 2),
        (vec!["low_contrast", "sharp_curve"], 1),
        (vec!["low_contrast", "night"], 1),
        (vec!["night", "rain"], 1),
        (vec!["low_contrast", "rain"], 1),
        (vec!["faded", "low_contrast", "sharp_curve"], 1),
        (vec!["faded", "low_contrast", "rain"], 1),
    ]
    .into_iter()
    .map(|(k, v)| (k.into_iter().map(String::from).collect(), v))
    .collect();
    (singles, combos)
}
