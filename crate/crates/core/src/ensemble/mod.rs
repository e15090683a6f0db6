//! Hard tree models: binary decision trees with class-distribution leaves,
//! weighted ensembles, the indicator walk and argmax prediction.
//!
//! Split convention: at an internal node the walk goes LEFT iff
//! `x[feature] > threshold` and RIGHT iff `x[feature] <= threshold`.

mod adaboost;
mod cart;
mod forest;
pub mod io;

pub use adaboost::{samme_weight, train_adaboost, train_adaboost_with, AdaBoostParams};
pub use cart::{train_cart, CartParams};
pub use forest::{train_random_forest, train_random_forest_with, ForestParams};
pub use io::{load_model, read_model_file, save_model, save_model_file, ModelFile, FORMAT_VERSION};

use serde::{Deserialize, Serialize};

use crate::dataio::Scaling;
use crate::error::{Error, Result};

/// Tolerance for leaf distributions summing to one.
pub const LEAF_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        /// taken when `x[feature] > threshold`
        left: usize,
        /// taken when `x[feature] <= threshold`
        right: usize,
    },
    Leaf {
        distribution: Vec<f64>,
    },
}

/// A binary tree stored as a flat node array; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    n_features: usize,
    n_classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathStep {
    pub node: usize,
    pub went_left: bool,
}

/// Result of the hard indicator walk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Activation {
    pub leaf: usize,
    pub path: Vec<PathStep>,
}

impl DecisionTree {
    /// Validate and build a tree. Every node other than the root must be
    /// referenced exactly once and be reachable from the root.
    pub fn new(nodes: Vec<Node>, n_features: usize, n_classes: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidModel("tree has no nodes".into()));
        }
        if n_classes < 1 {
            return Err(Error::InvalidModel("n_classes must be >= 1".into()));
        }
        let mut seen = vec![false; nodes.len()];
        seen[0] = true;
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            match &nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if *feature >= n_features {
                        return Err(Error::InvalidModel(format!(
                            "node {i}: feature index {feature} out of range for {n_features} features"
                        )));
                    }
                    if !threshold.is_finite() {
                        return Err(Error::InvalidModel(format!("node {i}: non-finite threshold")));
                    }
                    for &child in [left, right] {
                        if child >= nodes.len() {
                            return Err(Error::InvalidModel(format!(
                                "node {i}: child index {child} out of range"
                            )));
                        }
                        if seen[child] {
                            return Err(Error::InvalidModel(format!(
                                "node {child} is referenced more than once"
                            )));
                        }
                        seen[child] = true;
                        stack.push(child);
                    }
                }
                Node::Leaf { distribution } => {
                    if distribution.len() != n_classes {
                        return Err(Error::InvalidModel(format!(
                            "node {i}: leaf has {} classes, model has {n_classes}",
                            distribution.len()
                        )));
                    }
                    if distribution.iter().any(|p| !p.is_finite() || *p < 0.0) {
                        return Err(Error::InvalidModel(format!(
                            "node {i}: leaf distribution has negative or non-finite entries"
                        )));
                    }
                    let sum: f64 = distribution.iter().sum();
                    if (sum - 1.0).abs() > LEAF_SUM_TOL {
                        return Err(Error::InvalidModel(format!(
                            "node {i}: leaf distribution not normalized (sum {sum})"
                        )));
                    }
                }
            }
        }
        if let Some(orphan) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidModel(format!(
                "node {orphan} is unreachable from the root"
            )));
        }
        Ok(DecisionTree {
            nodes,
            n_features,
            n_classes,
        })
    }

    /// A tree that is a single leaf.
    pub fn leaf(distribution: Vec<f64>, n_features: usize) -> Result<Self> {
        let n_classes = distribution.len();
        Self::new(vec![Node::Leaf { distribution }], n_features, n_classes)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    /// Indices of all leaves in depth-first (left before right) order.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            match &self.nodes[i] {
                Node::Split { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
                Node::Leaf { .. } => out.push(i),
            }
        }
        out
    }

    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }

    /// Leaf distribution at node `i`; panics if `i` is not a leaf.
    pub fn distribution(&self, i: usize) -> &[f64] {
        match &self.nodes[i] {
            Node::Leaf { distribution } => distribution,
            Node::Split { .. } => panic!("node {i} is not a leaf"),
        }
    }

    /// Root-to-leaf path of internal nodes for every node (computed by search).
    pub fn path_to(&self, target: usize) -> Option<Vec<PathStep>> {
        fn go(t: &DecisionTree, i: usize, target: usize, path: &mut Vec<PathStep>) -> bool {
            if i == target {
                return true;
            }
            if let Node::Split { left, right, .. } = &t.nodes[i] {
                path.push(PathStep {
                    node: i,
                    went_left: true,
                });
                if go(t, *left, target, path) {
                    return true;
                }
                path.last_mut().unwrap().went_left = false;
                if go(t, *right, target, path) {
                    return true;
                }
                path.pop();
            }
            false
        }
        let mut path = Vec::new();
        go(self, 0, target, &mut path).then_some(path)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Index of the leaf activated by `x` (no dimension check).
    #[inline]
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] > *threshold { *left } else { *right },
                Node::Leaf { .. } => return i,
            }
        }
    }

    pub fn activated_leaf(&self, x: &[f64]) -> Result<Activation> {
        self.check_dim(x)?;
        let mut path = Vec::new();
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let went_left = x[*feature] > *threshold;
                    path.push(PathStep { node: i, went_left });
                    i = if went_left { *left } else { *right };
                }
                Node::Leaf { .. } => return Ok(Activation { leaf: i, path }),
            }
        }
    }

    /// `T(y|x)`: the activated leaf's distribution.
    pub fn predict_distribution(&self, x: &[f64]) -> Result<&[f64]> {
        self.check_dim(x)?;
        Ok(self.distribution(self.leaf_index(x)))
    }

    /// Features used by at least one split.
    pub fn used_features(&self) -> Vec<bool> {
        let mut used = vec![false; self.n_features];
        for n in &self.nodes {
            if let Node::Split { feature, .. } = n {
                used[*feature] = true;
            }
        }
        used
    }
}

/// Free-function form of [`DecisionTree::activated_leaf`].
pub fn activated_leaf(tree: &DecisionTree, x: &[f64]) -> Result<Activation> {
    tree.activated_leaf(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    SingleTree,
    RandomForest,
    AdaptiveBoosting,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::SingleTree => "single-tree",
            ModelKind::RandomForest => "random-forest",
            ModelKind::AdaptiveBoosting => "adaptive-boosting",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    trees: Vec<DecisionTree>,
    weights: Vec<f64>,
    kind: ModelKind,
    n_features: usize,
    n_classes: usize,
    pub feature_names: Vec<String>,
    pub scaling: Option<Scaling>,
}

/// Tolerance for random-forest weights equal to `1/M`.
const RF_WEIGHT_TOL: f64 = 1e-9;

impl TreeEnsemble {
    pub fn new(
        trees: Vec<DecisionTree>,
        weights: Vec<f64>,
        kind: ModelKind,
        feature_names: Vec<String>,
        scaling: Option<Scaling>,
    ) -> Result<Self> {
        let first = trees
            .first()
            .ok_or_else(|| Error::InvalidModel("ensemble has no trees".into()))?;
        let (n_features, n_classes) = (first.n_features, first.n_classes);
        if trees.len() != weights.len() {
            return Err(Error::InvalidModel(format!(
                "{} trees but {} weights",
                trees.len(),
                weights.len()
            )));
        }
        if trees
            .iter()
            .any(|t| t.n_features != n_features || t.n_classes != n_classes)
        {
            return Err(Error::InvalidModel(
                "trees disagree on n_features or n_classes".into(),
            ));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidModel("non-finite tree weight".into()));
        }
        match kind {
            ModelKind::SingleTree if trees.len() != 1 => {
                return Err(Error::InvalidModel("single-tree model must have exactly one tree".into()));
            }
            ModelKind::RandomForest => {
                let expect = 1.0 / trees.len() as f64;
                if weights.iter().any(|w| (w - expect).abs() > RF_WEIGHT_TOL) {
                    return Err(Error::InvalidModel(
                        "random-forest weights must all equal 1/M".into(),
                    ));
                }
            }
            _ => {}
        }
        if feature_names.len() != n_features {
            return Err(Error::InvalidModel(format!(
                "{} feature names for {n_features} features",
                feature_names.len()
            )));
        }
        if let Some(s) = &scaling {
            if s.min.len() != n_features || s.max.len() != n_features {
                return Err(Error::InvalidModel("scaling length differs from n_features".into()));
            }
            if s.min.iter().zip(&s.max).any(|(lo, hi)| !(lo < hi)) {
                return Err(Error::InvalidModel("scaling requires min < max per feature".into()));
            }
        }
        Ok(TreeEnsemble {
            trees,
            weights,
            kind,
            n_features,
            n_classes,
            feature_names,
            scaling,
        })
    }

    /// Wrap a single tree with weight 1.
    pub fn single(tree: DecisionTree, feature_names: Vec<String>, scaling: Option<Scaling>) -> Result<Self> {
        Self::new(vec![tree], vec![1.0], ModelKind::SingleTree, feature_names, scaling)
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Accumulate `sum_m w_m T_m(y|x)` into `scores` (no dimension check).
    #[inline]
    pub fn scores_into(&self, x: &[f64], scores: &mut [f64]) {
        scores.iter_mut().for_each(|s| *s = 0.0);
        for (tree, w) in self.trees.iter().zip(&self.weights) {
            let dist = tree.distribution(tree.leaf_index(x));
            for (s, p) in scores.iter_mut().zip(dist) {
                *s += w * p;
            }
        }
    }

    /// Hard label without allocation beyond a small score buffer.
    #[inline]
    pub fn predict_label(&self, x: &[f64]) -> usize {
        let mut buf = [0.0f64; 8];
        if self.n_classes <= buf.len() {
            let scores = &mut buf[..self.n_classes];
            self.scores_into(x, scores);
            argmax(scores)
        } else {
            let mut scores = vec![0.0; self.n_classes];
            self.scores_into(x, &mut scores);
            argmax(&scores)
        }
    }

    pub fn predict_hard(&self, x: &[f64]) -> Result<HardPrediction> {
        self.check_dim(x)?;
        let mut scores = vec![0.0; self.n_classes];
        self.scores_into(x, &mut scores);
        Ok(HardPrediction {
            label: argmax(&scores),
            scores,
        })
    }

    /// Fraction of rows whose hard label equals the given label.
    pub fn accuracy(&self, rows: &[Vec<f64>], labels: &[usize]) -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        let hits = rows
            .iter()
            .zip(labels)
            .filter(|(x, &y)| self.predict_label(x) == y)
            .count();
        hits as f64 / rows.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardPrediction {
    pub label: usize,
    pub scores: Vec<f64>,
}

pub fn predict_hard(ens: &TreeEnsemble, x: &[f64]) -> Result<HardPrediction> {
    ens.predict_hard(x)
}

/// Index of the maximum; the lowest index wins ties.
#[inline]
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
