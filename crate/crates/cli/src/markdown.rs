use std::fmt::Write;

use lka_core::deviation::LinearFit;
use lka_core::dynamics::VehicleCapability;
use lka_core::geometry::RoadProfile;
use lka_core::readiness::{ImportanceReport, Metrics, OutcomeClass};
use lka_core::rules::{angle_bound_radius, AuditConfig, AuditReport, Rule};

const MPH: f64 = 0.44704;

/// Speed at which the rule text is evaluated: the fixed audit speed, or the
/// highest posted speed of the profile.
fn reference_speed(report: &AuditReport, profile: &RoadProfile) -> f64 {
    report.speed_used.unwrap_or_else(|| profile.samples().iter().map(|s| s.posted_speed).fold(0.0, f64::max))
}

/// Audit report with the rule text evaluated for this road and vehicle.
pub fn audit_markdown(
    report: &AuditReport,
    cap: &VehicleCapability,
    profile: &RoadProfile,
    cfg: &AuditConfig,
) -> String {
    let v = reference_speed(report, profile);
    let g = cfg.g;
    let kmax = profile.samples().iter().map(|s| s.kappa.abs()).fold(0.0, f64::max);
    let authority = cap.t_max / cap.k_a;
    let r_torque = v * v / authority;
    let r_angle = angle_bound_radius(cap);
    let l_per_kappa = cap.k_a * v.powi(3) / cap.dt_dt_max;
    let droll_limit = cfg.budget_fraction * cap.dt_dt_max / (cap.k_a * v * g);

    let mut s = String::new();
    let _ = writeln!(s, "# Geometry audit: {}\n", report.profile_name);
    let _ = writeln!(s, "Vehicle capability `{}`:\n", report.capability_name);
    let _ = writeln!(s, "| k_a [N·m/(m/s²)] | T_max [N·m] | dT/dt max [N·m/s] | δ_max [rad] | L [m] |");
    let _ = writeln!(s, "|---|---|---|---|---|");
    let _ = writeln!(s, "| {} | {} | {} | {} | {} |\n", cap.k_a, cap.t_max, cap.dt_dt_max, cap.delta_max, cap.wheelbase);
    match report.speed_used {
        Some(v) => {
            let _ = writeln!(s, "Audit speed: {v:.2} m/s ({:.1} mph) at every station.\n", v / MPH);
        }
        None => {
            let _ = writeln!(s, "Audit speed: posted speed at each station (highest {v:.2} m/s, {:.1} mph).\n", v / MPH);
        }
    }

    let _ = writeln!(s, "## Rules at {v:.2} m/s\n");
    let _ = writeln!(
        s,
        "- **R1 minimum radius.** R ≥ max(v² / (T_max/k_a + g·φ), L / tan δ_max). \
         On a flat curve: max({:.2} / {:.3}, {:.2} / tan {:.3}) = max({:.1}, {:.1}) = {:.1} m.",
        v * v,
        authority,
        cap.wheelbase,
        cap.delta_max,
        r_torque,
        r_angle,
        r_torque.max(r_angle)
    );
    let _ = writeln!(
        s,
        "- **R2 minimum transition length.** L_s ≥ k_a·v³·|Δκ| / (dT/dt)_max = {:.1} m per 1/m of curvature change{}.",
        l_per_kappa,
        if kmax > 0.0 {
            format!("; entering this road's sharpest curve (κ = {kmax:.5} 1/m) needs {:.1} m", l_per_kappa * kmax)
        } else {
            String::new()
        }
    );
    let _ = writeln!(
        s,
        "- **R3 superelevation gradient.** |k_a·v·g·dφ/dx| ≤ {} × (dT/dt)_max = {:.3} N·m/s, i.e. |dφ/dx| ≤ {:.6} rad/m.",
        cfg.budget_fraction,
        cfg.budget_fraction * cap.dt_dt_max,
        droll_limit
    );
    let _ = writeln!(
        s,
        "- **R4 advisory speed.** Where R1 or R2 fails, v_adv = min(√((T_max/k_a + g·φ)/|κ|max), ∛((dT/dt)_max/(k_a·|dκ/dx|max)))\
         {}.\n",
        if kmax > 0.0 {
            format!("; for the sharpest flat curve the torque bound alone gives {:.2} m/s", (authority / kmax).sqrt())
        } else {
            String::new()
        }
    );

    let c = &report.summary;
    let _ = writeln!(s, "## Findings\n");
    let _ = writeln!(
        s,
        "{} violation(s), {} advisory finding(s): R1 {}, R2 {}, R3 {}, R4 {}.\n",
        c.violations,
        c.advisories,
        c.get(Rule::R1),
        c.get(Rule::R2),
        c.get(Rule::R3),
        c.get(Rule::R4)
    );
    if report.findings.is_empty() {
        let _ = writeln!(s, "The geometry satisfies every rule.");
        return s;
    }
    let _ = writeln!(s, "| Rule | From [m] | To [m] | Severity | Required | Actual | Unit | Note |");
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|");
    for f in &report.findings {
        let _ = writeln!(
            s,
            "| {} | {:.1} | {:.1} | {} | {:.4} | {:.4} | {} | {} |",
            f.rule.label(),
            f.x_start,
            f.x_end,
            match f.severity {
                lka_core::rules::Severity::Violation => "violation",
                lka_core::rules::Severity::Advisory => "advisory",
            },
            f.required,
            f.actual,
            f.unit,
            f.message.replace('|', "/")
        );
    }
    s
}

pub fn fit_markdown(title: &str, fit: &LinearFit) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "## {title}\n");
    let _ = writeln!(s, "| slope [m²] | intercept [m] | R² | n |");
    let _ = writeln!(s, "|---|---|---|---|");
    let _ = writeln!(s, "| {:.4} | {:.4} | {:.4} | {} |\n", fit.slope, fit.intercept, fit.r_squared, fit.n);
    let r = LinearFit::REFERENCE;
    let _ = writeln!(
        s,
        "Field reference: deviation = {} κ + {} (R² = {}).\n",
        r.slope, r.intercept, r.r_squared
    );
    s
}

pub fn metrics_markdown(metrics: &Metrics, importance: Option<&ImportanceReport>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "## Readiness classifier\n");
    let _ = writeln!(s, "Held-out accuracy {:.4} over {} segments.\n", metrics.accuracy, metrics.n);
    let _ = writeln!(s, "| class | precision | recall |");
    let _ = writeln!(s, "|---|---|---|");
    for c in OutcomeClass::ALL {
        let _ = writeln!(s, "| {} | {:.4} | {:.4} |", c.name(), metrics.precision[c.index()], metrics.recall[c.index()]);
    }
    s.push('\n');
    if let Some(imp) = importance {
        let _ = writeln!(s, "| feature | importance |");
        let _ = writeln!(s, "|---|---|");
        for f in &imp.ranked {
            let _ = writeln!(s, "| {} | {:.4} |", f.feature, f.score);
        }
        s.push('\n');
    }
    s
}
