//! Geometry design checks for torque-limited lane keeping: minimum radius,
//! transition length, superelevation gradient and advisory speed, plus a
//! station-by-station audit of a whole profile.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{torque_rate_simplified, VehicleCapability, G};
use crate::geometry::{curvature_gradient, resample_uniform, roll_gradient, GeometryError, RoadProfile};

/// Station spacing used by [`audit_profile`].
pub const AUDIT_DX: f64 = 1.0;

const REL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("speed must be positive and finite, got {0}")]
    InvalidSpeed(f64),
    #[error("superelevation {roll} rad leaves no torque authority (t_max/k_a + g*roll <= 0)")]
    OverBanked { roll: f64 },
    #[error("torque rate limit must be positive, got {0}")]
    InvalidRateLimit(f64),
    #[error("budget fraction must lie in (0, 1], got {0}")]
    InvalidBudget(f64),
    #[error("no curvature or curvature gradient given, speed is unconstrained")]
    Unconstrained,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    R1,
    R2,
    R3,
    R4,
}

impl Rule {
    pub const ALL: [Rule; 4] = [Rule::R1, Rule::R2, Rule::R3, Rule::R4];

    pub fn label(self) -> &'static str {
        match self {
            Rule::R1 => "R1",
            Rule::R2 => "R2",
            Rule::R3 => "R3",
            Rule::R4 => "R4",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Advisory,
    Violation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditFinding {
    pub rule: Rule,
    #[serde(rename = "x_start_m")]
    pub x_start: f64,
    #[serde(rename = "x_end_m")]
    pub x_end: f64,
    pub severity: Severity,
    pub required: f64,
    pub actual: f64,
    pub unit: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RuleCounts {
    #[serde(rename = "R1")]
    pub r1: usize,
    #[serde(rename = "R2")]
    pub r2: usize,
    #[serde(rename = "R3")]
    pub r3: usize,
    #[serde(rename = "R4")]
    pub r4: usize,
    pub violations: usize,
    pub advisories: usize,
}

impl RuleCounts {
    pub fn from_findings(findings: &[AuditFinding]) -> Self {
        let mut c = RuleCounts::default();
        for f in findings {
            match f.rule {
                Rule::R1 => c.r1 += 1,
                Rule::R2 => c.r2 += 1,
                Rule::R3 => c.r3 += 1,
                Rule::R4 => c.r4 += 1,
            }
            match f.severity {
                Severity::Violation => c.violations += 1,
                Severity::Advisory => c.advisories += 1,
            }
        }
        c
    }

    pub fn get(&self, rule: Rule) -> usize {
        match rule {
            Rule::R1 => self.r1,
            Rule::R2 => self.r2,
            Rule::R3 => self.r3,
            Rule::R4 => self.r4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub profile_name: String,
    pub capability_name: String,
    /// Fixed audit speed, or `None` when each station used its posted speed.
    #[serde(rename = "speed_used_mps")]
    pub speed_used: Option<f64>,
    pub findings: Vec<AuditFinding>,
    pub summary: RuleCounts,
}

impl AuditReport {
    pub fn has_violations(&self) -> bool {
        self.summary.violations > 0
    }

    pub fn findings_for(&self, rule: Rule) -> impl Iterator<Item = &AuditFinding> {
        self.findings.iter().filter(move |f| f.rule == rule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "v_mps")]
pub enum SpeedMode {
    Posted,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    pub budget_fraction: f64,
    pub merge_gap_m: f64,
    pub g: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self { budget_fraction: 0.5, merge_gap_m: 5.0, g: G }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuperelevationCheck {
    pub passed: bool,
    /// `|k_a * v * g * droll/dx|` [N·m/s].
    pub demand: f64,
    /// `budget_fraction * dt_dt_max` [N·m/s].
    pub limit: f64,
    /// `limit - demand`, negative on failure.
    pub margin: f64,
}

fn check_speed(v: f64) -> Result<(), RuleError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(RuleError::InvalidSpeed(v))
    }
}

/// Radius below which the steering angle limit is exceeded. Zero when the
/// angle limit is a quarter turn or more.
pub fn angle_bound_radius(cap: &VehicleCapability) -> f64 {
    if cap.delta_max >= std::f64::consts::FRAC_PI_2 {
        0.0
    } else {
        cap.wheelbase / cap.delta_max.tan()
    }
}

/// Minimum curve radius at speed `v`: the larger of the torque-limited and
/// steering-angle-limited radii.
pub fn min_radius(cap: &VehicleCapability, v: f64, roll: f64, g: f64) -> Result<f64, RuleError> {
    check_speed(v)?;
    let authority = cap.t_max / cap.k_a + g * roll;
    if !(authority > 0.0) {
        return Err(RuleError::OverBanked { roll });
    }
    Ok((v * v / authority).max(angle_bound_radius(cap)))
}

/// Clothoid length that keeps the torque rate at `dt_dt_max` while curvature
/// changes by `delta_kappa`.
pub fn min_transition_length(cap: &VehicleCapability, v: f64, delta_kappa: f64) -> Result<f64, RuleError> {
    check_speed(v)?;
    if !(cap.dt_dt_max > 0.0) {
        return Err(RuleError::InvalidRateLimit(cap.dt_dt_max));
    }
    Ok(cap.k_a * v.powi(3) * delta_kappa.abs() / cap.dt_dt_max)
}

pub fn check_superelevation_gradient(
    cap: &VehicleCapability,
    v: f64,
    droll_dx: f64,
    budget_fraction: f64,
    g: f64,
) -> Result<SuperelevationCheck, RuleError> {
    if !(budget_fraction > 0.0 && budget_fraction <= 1.0) {
        return Err(RuleError::InvalidBudget(budget_fraction));
    }
    let demand = (cap.k_a * v * g * droll_dx).abs();
    let limit = budget_fraction * cap.dt_dt_max;
    Ok(SuperelevationCheck { passed: demand <= limit, demand, limit, margin: limit - demand })
}

/// Highest speed satisfying both the torque bound at `kappa_max` and the torque
/// rate bound at `dkappa_dx_max`.
pub fn advisory_speed(
    cap: &VehicleCapability,
    kappa_max: f64,
    dkappa_dx_max: f64,
    roll: f64,
    g: f64,
) -> Result<f64, RuleError> {
    let kappa_max = kappa_max.abs();
    let dkappa_dx_max = dkappa_dx_max.abs();
    if kappa_max == 0.0 && dkappa_dx_max == 0.0 {
        return Err(RuleError::Unconstrained);
    }
    let v_torque = if kappa_max > 0.0 {
        let authority = cap.t_max / cap.k_a + g * roll;
        if !(authority > 0.0) {
            return Err(RuleError::OverBanked { roll });
        }
        (authority / kappa_max).sqrt()
    } else {
        f64::INFINITY
    };
    let v_rate = if dkappa_dx_max > 0.0 {
        (cap.dt_dt_max / (cap.k_a * dkappa_dx_max)).cbrt()
    } else {
        f64::INFINITY
    };
    Ok(v_torque.min(v_rate))
}

struct StationHit {
    x: f64,
    required: f64,
    actual: f64,
    /// How far past the limit this station is; the worst station of a run is reported.
    excess: f64,
}

fn merge_runs(hits: Vec<StationHit>, gap: f64) -> Vec<(f64, f64, StationHit)> {
    let mut runs: Vec<(f64, f64, StationHit)> = Vec::new();
    for hit in hits {
        match runs.last_mut() {
            Some((_, end, worst)) if hit.x - *end <= gap + 1e-9 => {
                *end = hit.x;
                if hit.excess > worst.excess {
                    *worst = hit;
                }
            }
            _ => runs.push((hit.x, hit.x, hit)),
        }
    }
    runs
}

/// Audits every station of `profile` (resampled to 1 m) against R1..R3 and
/// attaches an R4 advisory speed to each stretch that violates R1 or R2.
pub fn audit_profile(
    cap: &VehicleCapability,
    profile: &RoadProfile,
    speed_mode: SpeedMode,
    cfg: &AuditConfig,
) -> Result<AuditReport, RuleError> {
    if let SpeedMode::Fixed(v) = speed_mode {
        check_speed(v)?;
    }
    if !(cfg.budget_fraction > 0.0 && cfg.budget_fraction <= 1.0) {
        return Err(RuleError::InvalidBudget(cfg.budget_fraction));
    }
    if !(cap.dt_dt_max > 0.0) {
        return Err(RuleError::InvalidRateLimit(cap.dt_dt_max));
    }
    let dx = AUDIT_DX.min(profile.span());
    let grid = resample_uniform(profile, dx)?;
    let dk = curvature_gradient(&grid)?;
    let dr = roll_gradient(&grid)?;
    let samples = grid.samples();
    let g = cfg.g;

    let mut r1 = Vec::new();
    let mut r2 = Vec::new();
    let mut r3 = Vec::new();
    let mut flagged = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let v = match speed_mode {
            SpeedMode::Posted => s.posted_speed,
            SpeedMode::Fixed(v) => v,
        };
        let mut hit = false;

        let k = s.kappa.abs();
        if k > 0.0 {
            let radius = 1.0 / k;
            let required = match min_radius(cap, v, s.roll, g) {
                Ok(r) => Some(r),
                Err(RuleError::OverBanked { .. }) => None,
                Err(e) => return Err(e),
            };
            match required {
                Some(req) if radius * (1.0 + REL_TOL) < req => {
                    r1.push(StationHit { x: s.x, required: req, actual: radius, excess: req / radius });
                    hit = true;
                }
                None => {
                    let req = angle_bound_radius(cap);
                    r1.push(StationHit { x: s.x, required: req, actual: radius, excess: f64::MAX });
                    hit = true;
                }
                _ => {}
            }
        }

        let demand = torque_rate_simplified(cap, v, dk[i].1.abs());
        if demand > cap.dt_dt_max * (1.0 + REL_TOL) {
            r2.push(StationHit { x: s.x, required: cap.dt_dt_max, actual: demand, excess: demand / cap.dt_dt_max });
            hit = true;
        }

        let sup = check_superelevation_gradient(cap, v, dr[i].1, cfg.budget_fraction, g)?;
        if sup.demand > sup.limit * (1.0 + REL_TOL) {
            r3.push(StationHit { x: s.x, required: sup.limit, actual: sup.demand, excess: sup.demand / sup.limit });
        }

        if hit {
            flagged.push((i, v));
        }
    }

    let gap = cfg.merge_gap_m;
    let mut findings = Vec::new();
    for (x0, x1, w) in merge_runs(r1, gap) {
        findings.push(AuditFinding {
            rule: Rule::R1,
            x_start: x0,
            x_end: x1,
            severity: Severity::Violation,
            required: w.required,
            actual: w.actual,
            unit: "m".into(),
            message: format!(
                "curve radius {:.1} m is below the minimum {:.1} m at x = {:.1} m",
                w.actual, w.required, w.x
            ),
        });
    }
    for (x0, x1, w) in merge_runs(r2, gap) {
        findings.push(AuditFinding {
            rule: Rule::R2,
            x_start: x0,
            x_end: x1,
            severity: Severity::Violation,
            required: w.required,
            actual: w.actual,
            unit: "N·m/s".into(),
            message: format!(
                "transition demands torque rate {:.3} N·m/s, limit {:.3} N·m/s (peak at x = {:.1} m)",
                w.actual, w.required, w.x
            ),
        });
    }
    for (x0, x1, w) in merge_runs(r3, gap) {
        findings.push(AuditFinding {
            rule: Rule::R3,
            x_start: x0,
            x_end: x1,
            severity: Severity::Violation,
            required: w.required,
            actual: w.actual,
            unit: "N·m/s".into(),
            message: format!(
                "roll gradient term {:.3} N·m/s exceeds budget {:.3} N·m/s (peak at x = {:.1} m)",
                w.actual, w.required, w.x
            ),
        });
    }

    let advisory_hits: Vec<StationHit> = flagged
        .iter()
        .map(|&(i, v)| StationHit { x: samples[i].x, required: 0.0, actual: v, excess: v })
        .collect();
    for (x0, x1, w) in merge_runs(advisory_hits, gap) {
        let idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].x >= x0 && samples[i].x <= x1).collect();
        let kmax = idx.iter().map(|&i| samples[i].kappa.abs()).fold(0.0, f64::max);
        let dkmax = idx.iter().map(|&i| dk[i].1.abs()).fold(0.0, f64::max);
        let roll = idx.iter().map(|&i| samples[i].roll).fold(f64::INFINITY, f64::min);
        let (required, message) = match advisory_speed(cap, kmax, dkmax, roll, g) {
            Ok(va) => (va, format!("post an advisory speed of {:.1} m/s ({:.0} mph) or lower", va, va / 0.44704)),
            Err(RuleError::OverBanked { .. }) => (0.0, "superelevation leaves no torque authority, no speed is adequate".into()),
            Err(RuleError::Unconstrained) => continue,
            Err(e) => return Err(e),
        };
        findings.push(AuditFinding {
            rule: Rule::R4,
            x_start: x0,
            x_end: x1,
            severity: Severity::Advisory,
            required,
            actual: w.actual,
            unit: "m/s".into(),
            message,
        });
    }

    findings.sort_by(|a, b| a.x_start.total_cmp(&b.x_start).then(a.rule.cmp(&b.rule)));
    let summary = RuleCounts::from_findings(&findings);
    Ok(AuditReport {
        profile_name: profile.name().to_string(),
        capability_name: cap.name.clone(),
        speed_used: match speed_mode {
            SpeedMode::Posted => None,
            SpeedMode::Fixed(v) => Some(v),
        },
        findings,
        summary,
    })
}
