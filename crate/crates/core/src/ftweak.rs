//! Feature Tweaking: push the instance onto the path of every leaf that
//! predicts a different class, `ε` past each threshold on the way, and keep
//! the closest candidate that flips the whole ensemble.

use serde::{Deserialize, Serialize};

use crate::distance::{dist, DistanceSpec};
use crate::ensemble::{argmax, DecisionTree, Node, TreeEnsemble};
use crate::error::{Error, Result};
use crate::focus::{select_best, CfResult};
use crate::par::{map_indexed, Parallelism};

pub const DEFAULT_EPSILONS: [f64; 4] = [0.001, 0.005, 0.01, 0.1];

#[derive(Debug, Clone, PartialEq)]
pub struct FtConfig {
    pub epsilon: f64,
    /// Distance used to pick among valid candidates.
    pub distance: DistanceSpec,
}

impl FtConfig {
    pub fn new(epsilon: f64, distance: DistanceSpec) -> Self {
        FtConfig { epsilon, distance }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        self.distance.validate()
    }
}

/// Leaves whose argmax class differs from `y_x`, in leaf order.
pub fn counter_leaves(tree: &DecisionTree, y_x: usize) -> Vec<usize> {
    tree.leaves()
        .into_iter()
        .filter(|&j| argmax(tree.distribution(j)) != y_x)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FtCandidate {
    pub tree: usize,
    pub leaf: usize,
    pub x: Vec<f64>,
    /// Whether the candidate actually reaches `leaf`; false when same-feature
    /// thresholds on the path sit closer together than `ε`.
    pub reaches_leaf: bool,
}

/// Copy of `x` moved `ε` past every threshold on the path to `leaf`; a later
/// node on the same feature overwrites an earlier one.
pub fn ft_candidate(tree: &DecisionTree, leaf: usize, x: &[f64], epsilon: f64) -> Result<(Vec<f64>, bool)> {
    if x.len() != tree.n_features() {
        return Err(Error::DimensionMismatch {
            expected: tree.n_features(),
            got: x.len(),
        });
    }
    let path = tree
        .path_to(leaf)
        .ok_or_else(|| Error::InvalidConfig(format!("node {leaf} is not in the tree")))?;
    let mut out = x.to_vec();
    for step in &path {
        if let Node::Split { feature, threshold, .. } = tree.node(step.node) {
            out[*feature] = if step.went_left {
                threshold + epsilon
            } else {
                threshold - epsilon
            };
        }
    }
    let reaches = tree.leaf_index(&out) == leaf;
    Ok((out, reaches))
}

/// Every candidate for `x`, tree by tree.
pub fn ft_candidates(ens: &TreeEnsemble, x: &[f64], y_x: usize, epsilon: f64) -> Result<Vec<FtCandidate>> {
    let mut out = Vec::new();
    for (m, tree) in ens.trees().iter().enumerate() {
        for leaf in counter_leaves(tree, y_x) {
            let (c, reaches_leaf) = ft_candidate(tree, leaf, x, epsilon)?;
            out.push(FtCandidate {
                tree: m,
                leaf,
                x: c,
                reaches_leaf,
            });
        }
    }
    Ok(out)
}

pub fn ft_explain(ens: &TreeEnsemble, x: &[f64], cfg: &FtConfig) -> Result<CfResult> {
    ft_explain_indexed(ens, x, cfg, 0)
}

fn ft_explain_indexed(ens: &TreeEnsemble, x: &[f64], cfg: &FtConfig, instance_index: usize) -> Result<CfResult> {
    ens.check_dim(x)?;
    cfg.validate()?;
    let exact = cfg.distance.exact();
    let y_x = ens.predict_label(x);
    let mut best: Option<(Vec<f64>, usize, f64)> = None;
    for cand in ft_candidates(ens, x, y_x, cfg.epsilon)? {
        let label = ens.predict_label(&cand.x);
        if label == y_x {
            continue;
        }
        let d = dist(&cfg.distance, x, &cand.x)?;
        if best.as_ref().map_or(true, |b| d < b.2) {
            best = Some((cand.x, label, d));
        }
    }
    let best = match best {
        Some((cf, label, _)) => {
            let d = dist(&exact, x, &cf)?;
            Some((cf, label, d))
        }
        None => None,
    };
    Ok(CfResult {
        instance_index,
        original: x.to_vec(),
        original_label: y_x,
        cf_label: best.as_ref().map(|b| b.1),
        distance: best.as_ref().map(|b| b.2),
        counterfactual: best.map(|b| b.0),
        found_at_iteration: None,
        trace: None,
    })
}

pub fn ft_batch(ens: &TreeEnsemble, rows: &[Vec<f64>], cfg: &FtConfig, par: Parallelism) -> Vec<Result<CfResult>> {
    map_indexed(rows, par, |i, x| ft_explain_indexed(ens, x, cfg, i))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonCell {
    pub epsilon: f64,
    pub coverage: f64,
    pub d_mean: Option<f64>,
    pub n_found: usize,
    pub n_instances: usize,
    pub n_errors: usize,
}

#[derive(Debug)]
pub struct EpsilonSweep {
    pub best_epsilon: f64,
    pub best_index: usize,
    pub cells: Vec<EpsilonCell>,
    /// Results for the winning `ε`.
    pub best_results: Vec<Result<CfResult>>,
}

/// Run FT for each `ε` and select by coverage, then mean distance.
pub fn epsilon_sweep(
    ens: &TreeEnsemble,
    rows: &[Vec<f64>],
    epsilons: &[f64],
    distance: &DistanceSpec,
    par: Parallelism,
) -> Result<EpsilonSweep> {
    if epsilons.is_empty() {
        return Err(Error::InvalidConfig("epsilon grid is empty".into()));
    }
    let mut cells = Vec::new();
    let mut all = Vec::new();
    for &epsilon in epsilons {
        let cfg = FtConfig::new(epsilon, distance.clone());
        cfg.validate()?;
        let results = ft_batch(ens, rows, &cfg, par);
        let dists: Vec<f64> = results
            .iter()
            .filter_map(|r| r.as_ref().ok().and_then(|c| c.distance))
            .collect();
        let n = results.len();
        cells.push(EpsilonCell {
            epsilon,
            coverage: if n == 0 { 0.0 } else { dists.len() as f64 / n as f64 },
            d_mean: (!dists.is_empty()).then(|| dists.iter().sum::<f64>() / dists.len() as f64),
            n_found: dists.len(),
            n_instances: n,
            n_errors: results.iter().filter(|r| r.is_err()).count(),
        });
        all.push(results);
    }
    let scores: Vec<(f64, Option<f64>)> = cells.iter().map(|c| (c.coverage, c.d_mean)).collect();
    let best_index = select_best(&scores).expect("non-empty");
    Ok(EpsilonSweep {
        best_epsilon: epsilons[best_index],
        best_index,
        best_results: all.swap_remove(best_index),
        cells,
    })
}
