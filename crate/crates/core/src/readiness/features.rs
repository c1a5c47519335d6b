use serde::{Deserialize, Serialize};

use super::ReadinessError;

pub const ROAD_TYPES: [&str; 5] = ["highway", "arterial", "urban", "rural", "merge_diverge"];
pub const MARKING_CONDITIONS: [&str; 4] = ["good", "faded", "low_contrast", "missing"];
pub const LIGHTING: [&str; 4] = ["day", "dusk", "night", "glare"];
pub const WEATHER: [&str; 4] = ["clear", "rain", "snow", "fog"];
pub const SURFACES: [&str; 4] = ["good", "worn", "wet", "patched"];

/// Largest categorical enumeration supported by subset splitting.
pub const MAX_LEVELS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Kappa,
    Speed,
    RoadType,
    MarkingCondition,
    Lighting,
    Weather,
    Surface,
}

impl Feature {
    pub const ALL: [Feature; 7] = [
        Feature::Kappa,
        Feature::Speed,
        Feature::RoadType,
        Feature::MarkingCondition,
        Feature::Lighting,
        Feature::Weather,
        Feature::Surface,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Kappa => "kappa",
            Feature::Speed => "speed",
            Feature::RoadType => "road_type",
            Feature::MarkingCondition => "marking_condition",
            Feature::Lighting => "lighting",
            Feature::Weather => "weather",
            Feature::Surface => "surface",
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.name() == name)
    }

    /// Level names of a categorical feature, `None` for continuous ones.
    pub fn levels(self) -> Option<&'static [&'static str]> {
        match self {
            Feature::Kappa | Feature::Speed => None,
            Feature::RoadType => Some(&ROAD_TYPES),
            Feature::MarkingCondition => Some(&MARKING_CONDITIONS),
            Feature::Lighting => Some(&LIGHTING),
            Feature::Weather => Some(&WEATHER),
            Feature::Surface => Some(&SURFACES),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeClass {
    Normal = 0,
    Deviation = 1,
    Disengagement = 2,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 3] = [OutcomeClass::Normal, OutcomeClass::Deviation, OutcomeClass::Disengagement];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<OutcomeClass> {
        OutcomeClass::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            OutcomeClass::Normal => "normal",
            OutcomeClass::Deviation => "deviation",
            OutcomeClass::Disengagement => "disengagement",
        }
    }

    pub fn from_name(name: &str) -> Option<OutcomeClass> {
        OutcomeClass::ALL.into_iter().find(|c| c.name() == name)
    }
}

pub const N_CLASSES: usize = 3;

/// Road and context description of one segment. Categorical fields hold
/// level codes into the enumerations of this module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Curvature magnitude [1/m].
    pub kappa: f64,
    /// [m/s]
    pub speed: f64,
    pub road_type: u8,
    pub marking_condition: u8,
    pub lighting: u8,
    pub weather: u8,
    pub surface: u8,
}

impl FeatureVector {
    /// Highway segment with good markings, daylight, clear weather, good surface.
    pub fn benign(kappa: f64, speed: f64) -> Self {
        Self { kappa, speed, road_type: 0, marking_condition: 0, lighting: 0, weather: 0, surface: 0 }
    }

    pub fn get(&self, f: Feature) -> f64 {
        match f {
            Feature::Kappa => self.kappa,
            Feature::Speed => self.speed,
            Feature::RoadType => self.road_type as f64,
            Feature::MarkingCondition => self.marking_condition as f64,
            Feature::Lighting => self.lighting as f64,
            Feature::Weather => self.weather as f64,
            Feature::Surface => self.surface as f64,
        }
    }

    pub fn to_row(&self) -> Vec<f64> {
        Feature::ALL.iter().map(|&f| self.get(f)).collect()
    }

    pub fn from_row(row: &[f64]) -> Result<Self, ReadinessError> {
        if row.len() != Feature::ALL.len() {
            return Err(ReadinessError::Schema(format!("expected {} features, got {}", Feature::ALL.len(), row.len())));
        }
        let code = |f: Feature| -> Result<u8, ReadinessError> {
            let v = row[f.index()];
            let n = f.levels().map_or(0, <[_]>::len);
            if v.fract() != 0.0 || v < 0.0 || v as usize >= n {
                return Err(ReadinessError::Schema(format!("{} code {v} outside 0..{n}", f.name())));
            }
            Ok(v as u8)
        };
        let fv = Self {
            kappa: row[0],
            speed: row[1],
            road_type: code(Feature::RoadType)?,
            marking_condition: code(Feature::MarkingCondition)?,
            lighting: code(Feature::Lighting)?,
            weather: code(Feature::Weather)?,
            surface: code(Feature::Surface)?,
        };
        fv.validate()?;
        Ok(fv)
    }

    pub fn validate(&self) -> Result<(), ReadinessError> {
        if !self.kappa.is_finite() || !self.speed.is_finite() {
            return Err(ReadinessError::Schema("kappa and speed must be finite".into()));
        }
        for f in &Feature::ALL[2..] {
            let n = f.levels().expect("categorical").len();
            if self.get(*f) as usize >= n {
                return Err(ReadinessError::Schema(format!("{} code {} outside 0..{n}", f.name(), self.get(*f))));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "levels")]
pub enum FeatureKind {
    Continuous,
    /// Codes `0..levels`.
    Categorical(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

/// Column layout shared by a dataset and the models trained on it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<FeatureSpec>,
}

impl Schema {
    /// The seven road/context features of [`FeatureVector`].
    pub fn readiness() -> Self {
        let features = Feature::ALL
            .iter()
            .map(|f| FeatureSpec {
                name: f.name().to_string(),
                kind: f.levels().map_or(FeatureKind::Continuous, |l| FeatureKind::Categorical(l.len())),
            })
            .collect();
        Self { features }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }
}

/// Rows of feature values with class labels (`0..3`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: Schema,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(schema: Schema, rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self, ReadinessError> {
        if rows.len() != labels.len() {
            return Err(ReadinessError::Schema("rows and labels differ in length".into()));
        }
        for spec in &schema.features {
            if let FeatureKind::Categorical(n) = spec.kind {
                if n == 0 || n > MAX_LEVELS {
                    return Err(ReadinessError::Schema(format!("{} has {n} levels, limit is {MAX_LEVELS}", spec.name)));
                }
            }
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(ReadinessError::Schema(format!("row {i} has {} values, schema has {}", row.len(), schema.len())));
            }
            for (v, spec) in row.iter().zip(&schema.features) {
                let ok = match spec.kind {
                    FeatureKind::Continuous => v.is_finite(),
                    FeatureKind::Categorical(n) => v.fract() == 0.0 && *v >= 0.0 && (*v as usize) < n,
                };
                if !ok {
                    return Err(ReadinessError::Schema(format!("row {i}: bad value {v} for {}", spec.name)));
                }
            }
        }
        if let Some(l) = labels.iter().find(|&&l| l >= N_CLASSES) {
            return Err(ReadinessError::Schema(format!("label {l} outside 0..{N_CLASSES}")));
        }
        Ok(Self { schema, rows, labels })
    }

    pub fn from_labeled(data: &[(FeatureVector, OutcomeClass)]) -> Self {
        Self {
            schema: Schema::readiness(),
            rows: data.iter().map(|(fv, _)| fv.to_row()).collect(),
            labels: data.iter().map(|(_, c)| c.index()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        let mut c = [0; N_CLASSES];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Splits off the last `fraction` of rows as a test set.
    pub fn split(&self, test_fraction: f64) -> (Dataset, Dataset) {
        let n_test = ((self.len() as f64) * test_fraction).round() as usize;
        let cut = self.len() - n_test.min(self.len());
        let part = |r: std::ops::Range<usize>| Dataset {
            schema: self.schema.clone(),
            rows: self.rows[r.clone()].to_vec(),
            labels: self.labels[r].to_vec(),
        };
        (part(0..cut), part(cut..self.len()))
    }
}
