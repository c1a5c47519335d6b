//! Synthetic road-segment outcomes driven by a documented rule table.
//!
//! For a segment with curvature `kappa` and speed `v`:
//!
//! * The adverse weight `w` is the product of the multipliers of the
//!   segment's categorical levels, capped at `weight_cap`.
//! * The lateral deviation is
//!   `w * (base_offset + slope * kappa) + jump * s((kappa - knee) / width) + N(0, noise_sd)`,
//!   where `s` is the logistic function. The `jump` term models control
//!   saturation past the curvature knee.
//! * Segments with `w >= disengage_weight_min` disengage with probability
//!   `s((v - v_knee + shift * s((kappa - knee) / width)) / speed_width)`. The
//!   speed knee drops by `shift` on curves sharper than the curvature knee.
//! * Otherwise the class is deviation when the deviation is at least
//!   `deviation_threshold`, else normal.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::features::{Feature, FeatureVector, OutcomeClass};
use super::ReadinessError;

pub const GENERATOR_CONFIG_VERSION: u32 = 1;

/// 1 mph in m/s.
pub const MPH: f64 = 0.44704;

/// One value per level for each categorical feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTable {
    pub road_type: Vec<f64>,
    pub marking_condition: Vec<f64>,
    pub lighting: Vec<f64>,
    pub weather: Vec<f64>,
    pub surface: Vec<f64>,
}

impl LevelTable {
    pub fn get(&self, f: Feature) -> Option<&[f64]> {
        match f {
            Feature::RoadType => Some(&self.road_type),
            Feature::MarkingCondition => Some(&self.marking_condition),
            Feature::Lighting => Some(&self.lighting),
            Feature::Weather => Some(&self.weather),
            Feature::Surface => Some(&self.surface),
            Feature::Kappa | Feature::Speed => None,
        }
    }

    fn get_mut(&mut self, f: Feature) -> Option<&mut Vec<f64>> {
        match f {
            Feature::RoadType => Some(&mut self.road_type),
            Feature::MarkingCondition => Some(&mut self.marking_condition),
            Feature::Lighting => Some(&mut self.lighting),
            Feature::Weather => Some(&mut self.weather),
            Feature::Surface => Some(&mut self.surface),
            Feature::Kappa | Feature::Speed => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub version: u32,
    /// Curvature magnitude range [1/m], sampled uniformly.
    pub kappa_range: [f64; 2],
    /// Speed range [m/s], sampled uniformly.
    pub speed_range: [f64; 2],
    /// Sampling weights of each categorical level.
    pub level_weights: LevelTable,
    /// Deviation multiplier of each categorical level.
    pub adverse_multipliers: LevelTable,
    pub weight_cap: f64,
    pub base_offset_m: f64,
    /// [m²]
    pub curvature_slope_m2: f64,
    pub control_knee_kappa: f64,
    pub control_knee_width: f64,
    pub control_knee_jump_m: f64,
    pub noise_sd_m: f64,
    pub deviation_threshold_m: f64,
    pub disengage_weight_min: f64,
    pub speed_knee_mps: f64,
    pub speed_knee_width_mps: f64,
    pub curve_speed_shift_mps: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            version: GENERATOR_CONFIG_VERSION,
            kappa_range: [0.0, 0.015],
            speed_range: [15.0, 38.0],
            level_weights: LevelTable {
                road_type: vec![0.4, 0.2, 0.15, 0.15, 0.1],
                marking_condition: vec![0.55, 0.2, 0.15, 0.1],
                lighting: vec![0.6, 0.1, 0.2, 0.1],
                weather: vec![0.65, 0.2, 0.07, 0.08],
                surface: vec![0.6, 0.15, 0.15, 0.1],
            },
            adverse_multipliers: LevelTable {
                road_type: vec![1.0, 1.0, 1.0, 1.0, 1.2],
                marking_condition: vec![1.0, 1.8, 1.6, 2.0],
                lighting: vec![1.0, 1.05, 1.15, 1.3],
                weather: vec![1.0, 1.3, 1.4, 1.2],
                surface: vec![1.0, 1.1, 1.1, 1.05],
            },
            weight_cap: 3.0,
            base_offset_m: 0.03,
            curvature_slope_m2: 8.327,
            control_knee_kappa: 0.006,
            control_knee_width: 0.0006,
            control_knee_jump_m: 0.25,
            noise_sd_m: 0.02,
            deviation_threshold_m: 0.25,
            disengage_weight_min: 2.0,
            speed_knee_mps: 60.7 * MPH,
            speed_knee_width_mps: 0.3,
            curve_speed_shift_mps: 1.0,
        }
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), ReadinessError> {
        let bad = |m: String| Err(ReadinessError::Generator(m));
        if self.version != GENERATOR_CONFIG_VERSION {
            return bad(format!("config version {} is not {GENERATOR_CONFIG_VERSION}", self.version));
        }
        for (name, r) in [("kappa_range", self.kappa_range), ("speed_range", self.speed_range)] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return bad(format!("{name} must be finite with lo <= hi"));
            }
        }
        if self.kappa_range[0] < 0.0 || self.speed_range[0] < 0.0 {
            return bad("kappa and speed ranges must be non-negative".into());
        }
        for f in &Feature::ALL[2..] {
            let n = f.levels().expect("categorical").len();
            let w = self.level_weights.get(*f).expect("categorical");
            let m = self.adverse_multipliers.get(*f).expect("categorical");
            if w.len() != n || m.len() != n {
                return bad(format!("{} needs {n} level weights and multipliers", f.name()));
            }
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return bad(format!("{} level weights must be non-negative with a positive sum", f.name()));
            }
            if m.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return bad(format!("{} multipliers must be positive", f.name()));
            }
        }
        let positive = [
            ("weight_cap", self.weight_cap),
            ("control_knee_width", self.control_knee_width),
            ("speed_knee_width_mps", self.speed_knee_width_mps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive"));
            }
        }
        let finite = [
            self.base_offset_m,
            self.curvature_slope_m2,
            self.control_knee_kappa,
            self.control_knee_jump_m,
            self.deviation_threshold_m,
            self.disengage_weight_min,
            self.speed_knee_mps,
            self.curve_speed_shift_mps,
        ];
        if finite.iter().any(|v| !v.is_finite()) || !(self.noise_sd_m.is_finite() && self.noise_sd_m >= 0.0) {
            return bad("generator coefficients must be finite, noise_sd_m non-negative".into());
        }
        Ok(())
    }

    /// Restricts sampling of `feature` to a single level.
    pub fn pin_level(&mut self, feature: Feature, level: usize) {
        if let Some(w) = self.level_weights.get_mut(feature) {
            for (i, x) in w.iter_mut().enumerate() {
                *x = if i == level { 1.0 } else { 0.0 };
            }
        }
    }

    pub fn adverse_weight(&self, fv: &FeatureVector) -> f64 {
        Feature::ALL[2..]
            .iter()
            .map(|f| self.adverse_multipliers.get(*f).expect("categorical")[fv.get(*f) as usize])
            .product::<f64>()
            .min(self.weight_cap)
    }

    fn knee(&self, kappa: f64) -> f64 {
        logistic((kappa - self.control_knee_kappa) / self.control_knee_width)
    }

    /// Deviation magnitude before noise [m].
    pub fn expected_deviation(&self, fv: &FeatureVector) -> f64 {
        self.adverse_weight(fv) * (self.base_offset_m + self.curvature_slope_m2 * fv.kappa)
            + self.control_knee_jump_m * self.knee(fv.kappa)
    }

    pub fn disengage_probability(&self, fv: &FeatureVector) -> f64 {
        if self.adverse_weight(fv) < self.disengage_weight_min {
            return 0.0;
        }
        let knee = self.speed_knee_mps - self.curve_speed_shift_mps * self.knee(fv.kappa);
        logistic((fv.speed - knee) / self.speed_knee_width_mps)
    }
}

fn sample_range(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    r[0] + (r[1] - r[0]) * rng.random::<f64>()
}

/// `n` labelled segments, bit-identical for a fixed `seed` and config.
pub fn generate_synthetic(
    n: usize,
    seed: u64,
    cfg: &GeneratorConfig,
) -> Result<Vec<(FeatureVector, OutcomeClass)>, ReadinessError> {
    if n == 0 {
        return Err(ReadinessError::Generator("n must be positive".into()));
    }
    cfg.validate()?;
    let pick = |f: Feature| {
        WeightedIndex::new(cfg.level_weights.get(f).expect("categorical")).map_err(|e| ReadinessError::Generator(e.to_string()))
    };
    let road = pick(Feature::RoadType)?;
    let marking = pick(Feature::MarkingCondition)?;
    let lighting = pick(Feature::Lighting)?;
    let weather = pick(Feature::Weather)?;
    let surface = pick(Feature::Surface)?;
    let noise = Normal::new(0.0, cfg.noise_sd_m).map_err(|e| ReadinessError::Generator(e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let fv = FeatureVector {
            kappa: sample_range(&mut rng, cfg.kappa_range),
            speed: sample_range(&mut rng, cfg.speed_range),
            road_type: road.sample(&mut rng) as u8,
            marking_condition: marking.sample(&mut rng) as u8,
            lighting: lighting.sample(&mut rng) as u8,
            weather: weather.sample(&mut rng) as u8,
            surface: surface.sample(&mut rng) as u8,
        };
        let d = cfg.expected_deviation(&fv) + noise.sample(&mut rng);
        let u: f64 = rng.random();
        let class = if u < cfg.disengage_probability(&fv) {
            OutcomeClass::Disengagement
        } else if d >= cfg.deviation_threshold_m {
            OutcomeClass::Deviation
        } else {
            OutcomeClass::Normal
        };
        out.push((fv, class));
    }
    Ok(out)
}
