//! CART classification tree with Gini impurity. Continuous features split on
//! a threshold, categorical features on a subset of levels found by
//! exhaustive search.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{Dataset, FeatureKind, N_CLASSES};

pub type Histogram = [u32; N_CLASSES];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "value")]
pub enum SplitRule {
    /// Left when `x <= threshold`.
    Threshold(f64),
    /// Left when bit `code` of the mask is set.
    Categories(u32),
}

impl SplitRule {
    pub fn goes_left(&self, x: f64) -> bool {
        match *self {
            SplitRule::Threshold(t) => x <= t,
            SplitRule::Categories(mask) => x >= 0.0 && x < 32.0 && mask & (1 << x as u32) != 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "node")]
pub enum Node {
    Split {
        feature: usize,
        rule: SplitRule,
        left: usize,
        right: usize,
        /// Weighted Gini decrease `n*G - n_l*G_l - n_r*G_r`.
        gain: f64,
    },
    Leaf {
        histogram: Histogram,
    },
}

/// Nodes stored flat; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried at each node.
    pub mtry: usize,
}

pub fn gini(h: &Histogram) -> f64 {
    let n: u32 = h.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - h.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn histogram(data: &Dataset, idx: &[usize]) -> Histogram {
    let mut h = [0u32; N_CLASSES];
    for &i in idx {
        h[data.labels[i]] += 1;
    }
    h
}

fn weighted(h: &Histogram) -> f64 {
    h.iter().sum::<u32>() as f64 * gini(h)
}

struct Candidate {
    feature: usize,
    rule: SplitRule,
    gain: f64,
}

fn best_threshold(data: &Dataset, idx: &[usize], feature: usize, parent: f64, min_leaf: usize) -> Option<Candidate> {
    let mut order: Vec<(f64, usize)> = idx.iter().map(|&i| (data.rows[i][feature], data.labels[i])).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = {
        let mut h = [0u32; N_CLASSES];
        for &(_, l) in &order {
            h[l] += 1;
        }
        h
    };
    let mut left = [0u32; N_CLASSES];
    let mut best: Option<Candidate> = None;
    let n = order.len();
    for k in 0..n - 1 {
        left[order[k].1] += 1;
        if order[k].0 == order[k + 1].0 || k + 1 < min_leaf || n - k - 1 < min_leaf {
            continue;
        }
        let mut right = total;
        for c in 0..N_CLASSES {
            right[c] -= left[c];
        }
        let gain = parent - weighted(&left) - weighted(&right);
        if best.as_ref().is_none_or(|b| gain > b.gain) {
            let t = 0.5 * (order[k].0 + order[k + 1].0);
            let t = if t < order[k + 1].0 { t } else { order[k].0 };
            best = Some(Candidate { feature, rule: SplitRule::Threshold(t), gain });
        }
    }
    best
}

fn best_subset(
    data: &Dataset,
    idx: &[usize],
    feature: usize,
    levels: usize,
    parent: f64,
    min_leaf: usize,
) -> Option<Candidate> {
    let mut per_level = vec![[0u32; N_CLASSES]; levels];
    for &i in idx {
        per_level[data.rows[i][feature] as usize][data.labels[i]] += 1;
    }
    let mut best: Option<Candidate> = None;
    // The highest level always goes right, so each partition is seen once.
    for mask in 1u32..(1 << (levels - 1)) {
        let mut left = [0u32; N_CLASSES];
        let mut right = [0u32; N_CLASSES];
        for (lvl, h) in per_level.iter().enumerate() {
            let side = if mask & (1 << lvl) != 0 { &mut left } else { &mut right };
            for c in 0..N_CLASSES {
                side[c] += h[c];
            }
        }
        let (nl, nr) = (left.iter().sum::<u32>() as usize, right.iter().sum::<u32>() as usize);
        if nl < min_leaf || nr < min_leaf {
            continue;
        }
        let gain = parent - weighted(&left) - weighted(&right);
        if best.as_ref().is_none_or(|b| gain > b.gain) {
            best = Some(Candidate { feature, rule: SplitRule::Categories(mask), gain });
        }
    }
    best
}

impl Tree {
    /// Grows a tree on the rows listed in `idx` (duplicates allowed).
    pub fn fit(data: &Dataset, idx: &[usize], params: &TreeParams, rng: &mut impl Rng) -> Tree {
        let mut tree = Tree { nodes: Vec::new() };
        tree.grow(data, idx.to_vec(), 0, params, rng);
        tree
    }

    fn grow(&mut self, data: &Dataset, idx: Vec<usize>, depth: usize, p: &TreeParams, rng: &mut impl Rng) -> usize {
        let id = self.nodes.len();
        let hist = histogram(data, &idx);
        self.nodes.push(Node::Leaf { histogram: hist });
        let pure = hist.iter().filter(|&&c| c > 0).count() <= 1;
        if depth >= p.max_depth || pure || idx.len() < 2 * p.min_leaf.max(1) {
            return id;
        }
        let parent = weighted(&hist);
        let n_features = data.schema.len();
        let tried = rand::seq::index::sample(rng, n_features, p.mtry.clamp(1, n_features)).into_vec();
        let mut best: Option<Candidate> = None;
        for f in tried {
            let cand = match data.schema.features[f].kind {
                FeatureKind::Continuous => best_threshold(data, &idx, f, parent, p.min_leaf.max(1)),
                FeatureKind::Categorical(levels) if levels >= 2 => {
                    best_subset(data, &idx, f, levels, parent, p.min_leaf.max(1))
                }
                FeatureKind::Categorical(_) => None,
            };
            if let Some(c) = cand {
                if best.as_ref().is_none_or(|b| c.gain > b.gain) {
                    best = Some(c);
                }
            }
        }
        let Some(split) = best.filter(|c| c.gain > 1e-12) else { return id };
        let (li, ri): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| split.rule.goes_left(data.rows[i][split.feature]));
        let left = self.grow(data, li, depth + 1, p, rng);
        let right = self.grow(data, ri, depth + 1, p, rng);
        self.nodes[id] = Node::Split { feature: split.feature, rule: split.rule, left, right, gain: split.gain };
        id
    }

    pub fn leaf(&self, row: &[f64]) -> &Histogram {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { histogram } => return histogram,
                Node::Split { feature, rule, left, right, .. } => {
                    at = if rule.goes_left(row[*feature]) { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, at: usize) -> usize {
            match &t.nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
            }
        }
        walk(self, 0)
    }

    /// Gini decrease per feature summed over this tree's splits.
    pub fn impurity_decrease(&self, n_features: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_features];
        for node in &self.nodes {
            if let Node::Split { feature, gain, .. } = node {
                out[*feature] += gain;
            }
        }
        out
    }

    /// Training count reaching each node, recomputed from the leaves.
    pub fn node_count(&self, at: usize) -> u32 {
        match &self.nodes[at] {
            Node::Leaf { histogram } => histogram.iter().sum(),
            Node::Split { left, right, .. } => self.node_count(*left) + self.node_count(*right),
        }
    }
}
