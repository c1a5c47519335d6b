//! Roadway-readiness classifier: a bagged forest of CART trees predicting
//! normal operation, lane deviation or disengagement from road and context
//! features, with importance, partial dependence and a synthetic generator.

pub mod analysis;
pub mod features;
pub mod forest;
pub mod io;
pub mod metrics;
pub mod synthetic;
pub mod tree;

use thiserror::Error;

pub use analysis::{linear_grid, partial_dependence, steepest_rise, variable_importance, DependencePoint, ImportanceReport};
pub use features::{Dataset, Feature, FeatureKind, FeatureSpec, FeatureVector, OutcomeClass, Schema};
pub use forest::{train, Prediction, ReadinessModel, TrainParams, MODEL_FORMAT_VERSION};
pub use metrics::{evaluate, metrics_from_predictions, Metrics};
pub use synthetic::{generate_synthetic, GeneratorConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ReadinessError {
    #[error("training data is empty")]
    EmptyData,
    #[error("training data holds a single class")]
    SingleClass,
    #[error("{n} rows cannot fill two leaves of {min_leaf}")]
    TooFewRows { n: usize, min_leaf: usize },
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("invalid generator config: {0}")]
    Generator(String),
    #[error("model format version {found:?} is not supported (expected {expected})")]
    Version { found: Option<u64>, expected: u32 },
    #[error("cannot read model: {0}")]
    Model(String),
    #[error("row {row}: {reason}")]
    Parse { row: usize, reason: String },
}
