use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{Dataset, FeatureVector, OutcomeClass, Schema, N_CLASSES};
use super::tree::{Tree, TreeParams};
use super::ReadinessError;

/// Version written into serialized models; loading any other version fails.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `ceil(sqrt(F))`.
    pub feature_subsample: Option<usize>,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 8, min_leaf: 5, feature_subsample: None, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub seed: u64,
    pub n_train: usize,
    pub class_priors: [f64; N_CLASSES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadinessModel {
    pub format_version: u32,
    pub schema: Schema,
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub feature_subsample: usize,
    pub metadata: ModelMetadata,
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: OutcomeClass,
    pub probabilities: [f64; N_CLASSES],
}

/// Bootstrap that resamples each class separately, keeping class counts.
fn stratified_bootstrap(labels: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut by_class: [Vec<usize>; N_CLASSES] = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut out = Vec::with_capacity(labels.len());
    for members in &by_class {
        for _ in 0..members.len() {
            out.push(members[rng.random_range(0..members.len())]);
        }
    }
    out
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Trains a bagged forest of CART trees.
///
/// Bootstrap indices and per-tree seeds are drawn sequentially from one
/// seeded generator before trees grow in parallel, so the result depends
/// only on the data and `params`.
pub fn train(data: &Dataset, params: &TrainParams) -> Result<ReadinessModel, ReadinessError> {
    if data.is_empty() {
        return Err(ReadinessError::EmptyData);
    }
    let counts = data.class_counts();
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(ReadinessError::SingleClass);
    }
    if data.len() < 2 * params.min_leaf {
        return Err(ReadinessError::TooFewRows { n: data.len(), min_leaf: params.min_leaf });
    }
    if params.n_trees == 0 {
        return Err(ReadinessError::Params("n_trees must be positive".into()));
    }
    let f = data.schema.len();
    let mtry = params.feature_subsample.unwrap_or_else(|| (f as f64).sqrt().ceil() as usize);
    if mtry == 0 || mtry > f {
        return Err(ReadinessError::Params(format!("feature_subsample must lie in 1..={f}")));
    }
    let tree_params = TreeParams { max_depth: params.max_depth, min_leaf: params.min_leaf, mtry };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let plans: Vec<(Vec<usize>, u64)> =
        (0..params.n_trees).map(|_| (stratified_bootstrap(&data.labels, &mut rng), rng.random::<u64>())).collect();
    let trees: Vec<Tree> = plans
        .par_iter()
        .map(|(idx, seed)| Tree::fit(data, idx, &tree_params, &mut ChaCha8Rng::seed_from_u64(*seed)))
        .collect();

    let n = data.len() as f64;
    Ok(ReadinessModel {
        format_version: MODEL_FORMAT_VERSION,
        schema: data.schema.clone(),
        n_trees: params.n_trees,
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        feature_subsample: mtry,
        metadata: ModelMetadata {
            seed: params.seed,
            n_train: data.len(),
            class_priors: [counts[0] as f64 / n, counts[1] as f64 / n, counts[2] as f64 / n],
        },
        trees,
    })
}

impl ReadinessModel {
    /// Majority vote over trees; probabilities are the mean of normalised
    /// leaf histograms. Ties go to the earlier class.
    pub fn predict_row(&self, row: &[f64]) -> Prediction {
        let mut votes = [0.0; N_CLASSES];
        let mut probs = [0.0; N_CLASSES];
        for tree in &self.trees {
            let h = tree.leaf(row);
            let total: u32 = h.iter().sum();
            let hf: Vec<f64> = h.iter().map(|&c| c as f64).collect();
            votes[argmax(&hf)] += 1.0;
            if total > 0 {
                for c in 0..N_CLASSES {
                    probs[c] += h[c] as f64 / total as f64;
                }
            }
        }
        let s: f64 = probs.iter().sum();
        if s > 0.0 {
            for p in &mut probs {
                *p /= s;
            }
        }
        let class = OutcomeClass::from_index(argmax(&votes)).expect("class index");
        Prediction { class, probabilities: probs }
    }

    pub fn predict(&self, fv: &FeatureVector) -> Prediction {
        self.predict_row(&fv.to_row())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ReadinessError> {
        let probe: serde_json::Value = serde_json::from_str(text).map_err(|e| ReadinessError::Model(e.to_string()))?;
        let version = probe.get("format_version").and_then(|v| v.as_u64());
        if version != Some(MODEL_FORMAT_VERSION as u64) {
            return Err(ReadinessError::Version { found: version, expected: MODEL_FORMAT_VERSION });
        }
        serde_json::from_value(probe).map_err(|e| ReadinessError::Model(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReadinessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ReadinessError::Model(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
