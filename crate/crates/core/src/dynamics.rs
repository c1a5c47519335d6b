//! Steering-torque demand along a road and a torque-limited lane-keeping
//! simulator.
//!
//! Torque is modelled as proportional to the lateral acceleration the road
//! demands, `T = k_a (v^2 kappa - g roll)`. Its spatial and temporal
//! derivatives give the torque-rate demand that a transition curve places on
//! the steering actuator.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{extract_apex_window, CurveLayout, RoadProfile};

/// Standard gravity [m/s²].
pub const G: f64 = 9.81;

const SAT_EPS: f64 = 1e-9;
const DIVERGENCE_LIMIT_M: f64 = 10.0;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid vehicle capability: {0}")]
    InvalidCapability(String),
    #[error("invalid simulation setup: {0}")]
    InvalidSetup(String),
    #[error("simulation diverged at t = {t:.2} s (lateral offset {offset:.2} m)")]
    Diverged { t: f64, offset: f64 },
    #[error("simulation never reached the apex window of the profile")]
    ApexNotReached,
}

/// Actuation limits of a lane keeping system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleCapability {
    #[serde(default)]
    pub name: String,
    /// Torque per unit lateral acceleration [N·m per m/s²].
    pub k_a: f64,
    /// Maximum steering torque [N·m].
    pub t_max: f64,
    /// Maximum torque rate [N·m/s].
    pub dt_dt_max: f64,
    /// Maximum road-wheel angle [rad].
    pub delta_max: f64,
    /// Wheelbase [m].
    pub wheelbase: f64,
}

impl Default for VehicleCapability {
    /// A generic passenger car limited to 3 m/s² of lateral acceleration and
    /// 2.5 m/s³ of lateral jerk.
    fn default() -> Self {
        Self {
            name: "generic".into(),
            k_a: 1.0,
            t_max: 3.0,
            dt_dt_max: 2.5,
            delta_max: 0.5,
            wheelbase: 2.9,
        }
    }
}

impl VehicleCapability {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let fields = [
            ("k_a", self.k_a),
            ("t_max", self.t_max),
            ("dt_dt_max", self.dt_dt_max),
            ("delta_max", self.delta_max),
            ("wheelbase", self.wheelbase),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(DynamicsError::InvalidCapability(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Largest lateral acceleration the torque limit can command [m/s²].
    pub fn max_lateral_acceleration(&self) -> f64 {
        self.t_max / self.k_a
    }
}

/// `a_lat = v^2 kappa - g roll`.
pub fn lateral_acceleration(v: f64, kappa: f64, roll: f64, g: f64) -> f64 {
    v * v * kappa - g * roll
}

/// Torque needed to produce `a_lat`; not clamped.
pub fn steering_torque(cap: &VehicleCapability, a_lat: f64) -> f64 {
    cap.k_a * a_lat
}

/// `dT/dx` [N·m/m] for speed, curvature and roll all varying along the road.
pub fn torque_rate_spatial(
    cap: &VehicleCapability,
    v: f64,
    dv_dx: f64,
    kappa: f64,
    dkappa_dx: f64,
    droll_dx: f64,
    g: f64,
) -> f64 {
    cap.k_a * (2.0 * v * dv_dx * kappa + v * v * dkappa_dx - g * droll_dx)
}

/// `dT/dt` [N·m/s] with longitudinal acceleration `a_x = v dv/dx`.
pub fn torque_rate_temporal(
    cap: &VehicleCapability,
    v: f64,
    a_x: f64,
    kappa: f64,
    dkappa_dx: f64,
    droll_dx: f64,
    g: f64,
) -> f64 {
    v * cap.k_a * (2.0 * a_x * kappa + v * v * dkappa_dx - g * droll_dx)
}

/// `dT/dt ≈ k_a v^3 dkappa/dx` at constant speed on a flat-banked road.
pub fn torque_rate_simplified(cap: &VehicleCapability, v: f64, dkappa_dx: f64) -> f64 {
    cap.k_a * v * v * v * dkappa_dx
}

/// Kinematic bicycle road-wheel angle for curvature `kappa`.
pub fn required_steering_angle(cap: &VehicleCapability, kappa: f64) -> f64 {
    (cap.wheelbase * kappa).atan()
}

/// PD gains of the lateral-error feedback [N·m/m], [N·m·s/m].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    pub kp: f64,
    pub kd: f64,
}

impl ControllerGains {
    /// Gains given per unit torque gain, so the closed loop is
    /// `e'' + kd_unit e' + kp_unit e = 0` regardless of `k_a`.
    pub fn per_unit(cap: &VehicleCapability, kp_unit: f64, kd_unit: f64) -> Self {
        Self { kp: kp_unit * cap.k_a, kd: kd_unit * cap.k_a }
    }

    /// kp = 2.0, kd = 1.5 per unit `k_a`.
    pub fn nominal(cap: &VehicleCapability) -> Self {
        Self::per_unit(cap, 2.0, 1.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub v: f64,
    pub gains: ControllerGains,
    pub dt: f64,
    pub duration: f64,
    pub g: f64,
}

impl SimConfig {
    /// Nominal setup that drives the whole profile at `v` with `dt = 0.01 s`.
    pub fn covering(cap: &VehicleCapability, profile: &RoadProfile, v: f64) -> Self {
        Self {
            v,
            gains: ControllerGains::nominal(cap),
            dt: 0.01,
            duration: profile.span() / v,
            g: G,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub t: f64,
    /// Station [m].
    pub x: f64,
    /// Signed offset from lane center [m], left positive.
    pub lateral_offset: f64,
    pub lateral_velocity: f64,
    /// Applied steering torque [N·m].
    pub torque: f64,
    pub v: f64,
    /// Road curvature at `x` [1/m].
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub trace: Vec<SimState>,
    /// Mean lateral offset over the apex window [m].
    pub steady_state_deviation: f64,
    /// Fraction of steps where the torque or torque-rate limit was active.
    pub saturated_fraction: f64,
}

impl SimResult {
    pub fn max_abs_offset(&self) -> f64 {
        self.trace.iter().map(|s| s.lateral_offset.abs()).fold(0.0, f64::max)
    }

    /// Writes the trace as `t_s,x_m,lateral_offset_m,torque_Nm,kappa_inv_m`.
    pub fn write_trace_csv(&self, writer: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t_s", "x_m", "lateral_offset_m", "torque_Nm", "kappa_inv_m"])?;
        for s in &self.trace {
            w.write_record(&[
                format!("{:.4}", s.t),
                format!("{:.4}", s.x),
                format!("{:.6}", s.lateral_offset),
                format!("{:.6}", s.torque),
                format!("{:.8}", s.kappa),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Closed-loop lane keeping along `profile` at constant speed.
///
/// Lateral error follows `e'' = T / k_a - v^2 kappa + g roll`. The controller
/// commands `T_cmd = -kp e - kd e' + k_a (v^2 kappa - g roll)`; the applied
/// torque tracks it subject to `|dT/dt| <= dt_dt_max` and `|T| <= t_max`.
/// Integration is semi-implicit Euler starting centred with zero torque.
///
/// The steady-state deviation is averaged over the stations of the profile's
/// apex window, or over the whole run for a straight road.
pub fn simulate_lka_tracking(
    cap: &VehicleCapability,
    profile: &RoadProfile,
    cfg: &SimConfig,
) -> Result<SimResult, DynamicsError> {
    cap.validate()?;
    if !(cfg.dt > 0.0 && cfg.dt <= 0.1) {
        return Err(DynamicsError::InvalidSetup(format!("dt must lie in (0, 0.1], got {}", cfg.dt)));
    }
    if !(cfg.v.is_finite() && cfg.v > 0.0) {
        return Err(DynamicsError::InvalidSetup("speed must be positive".into()));
    }
    if !(cfg.duration.is_finite() && cfg.duration > 0.0) {
        return Err(DynamicsError::InvalidSetup("duration must be positive".into()));
    }

    let steps = (cfg.duration / cfg.dt).round() as usize;
    let v = cfg.v;
    let max_step = cap.dt_dt_max * cfg.dt;
    let mut x = profile.x_start();
    let (mut e, mut e_dot, mut torque) = (0.0f64, 0.0f64, 0.0f64);
    let mut trace = Vec::with_capacity(steps + 1);
    let mut saturated = 0usize;

    let road = profile.sample_at(x);
    trace.push(SimState { t: 0.0, x, lateral_offset: e, lateral_velocity: e_dot, torque, v, kappa: road.kappa });

    for step in 1..=steps {
        let road = profile.sample_at(x);
        let demand = v * v * road.kappa - cfg.g * road.roll;
        let command = -cfg.gains.kp * e - cfg.gains.kd * e_dot + cap.k_a * demand;

        let delta = command - torque;
        let limited = delta.clamp(-max_step, max_step);
        let mut next = torque + limited;
        let mut hit = (delta - limited).abs() > SAT_EPS * (1.0 + delta.abs());
        if next.abs() > cap.t_max {
            next = next.clamp(-cap.t_max, cap.t_max);
            hit = true;
        } else if next.abs() >= cap.t_max * (1.0 - SAT_EPS) && command.abs() > cap.t_max {
            hit = true;
        }
        torque = next;
        if hit {
            saturated += 1;
        }

        let e_ddot = torque / cap.k_a - demand;
        e_dot += e_ddot * cfg.dt;
        e += e_dot * cfg.dt;
        x += v * cfg.dt;
        let t = step as f64 * cfg.dt;

        if !e.is_finite() || e.abs() > DIVERGENCE_LIMIT_M {
            return Err(DynamicsError::Diverged { t, offset: e });
        }
        let kappa = profile.sample_at(x).kappa;
        trace.push(SimState { t, x, lateral_offset: e, lateral_velocity: e_dot, torque, v, kappa });
        if x > profile.x_end() {
            break;
        }
    }

    let steady_state_deviation = match extract_apex_window(&profile.kappa_series()) {
        Ok(window) => {
            let s = profile.samples();
            let (xa, xb) = (s[window.start].x, s[window.end - 1].x);
            let inside: Vec<f64> = trace
                .iter()
                .filter(|st| st.x >= xa && st.x <= xb)
                .map(|st| st.lateral_offset)
                .collect();
            if inside.is_empty() {
                return Err(DynamicsError::ApexNotReached);
            }
            inside.iter().sum::<f64>() / inside.len() as f64
        }
        Err(_) => trace.iter().map(|s| s.lateral_offset).sum::<f64>() / trace.len() as f64,
    };
    let n_steps = trace.len().saturating_sub(1).max(1);
    Ok(SimResult {
        trace,
        steady_state_deviation,
        saturated_fraction: saturated as f64 / n_steps as f64,
    })
}

/// Curvature sweep over a short curve entered through a clothoid, driven at
/// constant speed. The defaults keep the torque-rate limit active through the
/// apex, which makes the steady-state drift proportional to curvature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurvatureSweep {
    pub v: f64,
    pub kappas: Vec<f64>,
    pub tangent_m: f64,
    pub spiral_m: f64,
    pub arc_m: f64,
    pub roll: f64,
    pub dx: f64,
    pub dt: f64,
    /// PD gains per unit `k_a`.
    pub kp_unit: f64,
    pub kd_unit: f64,
    pub g: f64,
}

impl Default for CurvatureSweep {
    fn default() -> Self {
        Self {
            v: 24.0,
            kappas: (1..=6).map(|i| 0.002 * i as f64).collect(),
            tangent_m: 50.0,
            spiral_m: 8.0,
            arc_m: 0.0,
            roll: 0.0,
            dx: 1.0,
            dt: 0.01,
            kp_unit: 2.0,
            kd_unit: 1.5,
            g: G,
        }
    }
}

impl CurvatureSweep {
    pub fn layout(&self, kappa: f64) -> CurveLayout {
        CurveLayout {
            tangent_m: self.tangent_m,
            spiral_m: self.spiral_m,
            arc_m: self.arc_m,
            kappa,
            roll: self.roll,
            posted_speed: self.v,
        }
    }

    pub fn config(&self, cap: &VehicleCapability, profile: &RoadProfile) -> SimConfig {
        SimConfig {
            v: self.v,
            gains: ControllerGains::per_unit(cap, self.kp_unit, self.kd_unit),
            dt: self.dt,
            duration: profile.span() / self.v,
            g: self.g,
        }
    }

    /// Simulates one curvature value of the sweep.
    pub fn run_one(&self, cap: &VehicleCapability, kappa: f64) -> Result<SimResult, DynamicsError> {
        let profile = self
            .layout(kappa)
            .build(&format!("sweep_{kappa}"), self.dx)
            .map_err(|e| DynamicsError::InvalidSetup(e.to_string()))?;
        simulate_lka_tracking(cap, &profile, &self.config(cap, &profile))
    }

    /// Runs every curvature in parallel; results keep the order of `kappas`.
    pub fn run(&self, cap: &VehicleCapability) -> Vec<SweepPoint> {
        self.kappas
            .par_iter()
            .map(|&kappa| match self.run_one(cap, kappa) {
                Ok(r) => SweepPoint {
                    kappa,
                    steady_state_deviation: Some(r.steady_state_deviation),
                    saturated_fraction: r.saturated_fraction,
                    max_abs_offset: r.max_abs_offset(),
                    error: None,
                },
                Err(e) => SweepPoint {
                    kappa,
                    steady_state_deviation: None,
                    saturated_fraction: 0.0,
                    max_abs_offset: 0.0,
                    error: Some(e.to_string()),
                },
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub kappa: f64,
    /// `None` when the run failed, see `error`.
    pub steady_state_deviation: Option<f64>,
    pub saturated_fraction: f64,
    pub max_abs_offset: f64,
    pub error: Option<String>,
}
