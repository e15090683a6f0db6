//! Greedy Gini-impurity CART for classification.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DecisionTree, Node};
use crate::dataio::Dataset;
use crate::error::{Error, Result};

/// Minimum impurity decrease for a split to be accepted.
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features examined per split; `None` examines all of them.
    pub max_features: Option<usize>,
}

impl Default for CartParams {
    fn default() -> Self {
        CartParams {
            max_depth: 4,
            min_leaf: 1,
            max_features: None,
        }
    }
}

pub fn train_cart(train: &Dataset, max_depth: usize, min_leaf: usize, seed: u64) -> Result<DecisionTree> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let params = CartParams {
        max_depth,
        min_leaf,
        max_features: None,
    };
    let samples: Vec<usize> = (0..train.n_rows()).collect();
    let weights = vec![1.0; train.n_rows()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(fit_tree(
        &train.rows,
        &train.labels,
        train.n_classes(),
        samples,
        &weights,
        &params,
        &mut rng,
    ))
}

struct Builder<'a> {
    rows: &'a [Vec<f64>],
    labels: &'a [usize],
    weights: &'a [f64],
    n_classes: usize,
    n_features: usize,
    params: &'a CartParams,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    child_impurity: f64,
}

/// Fit a tree on `samples` (row indices, repeats allowed) with per-row weights.
pub(crate) fn fit_tree(
    rows: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    samples: Vec<usize>,
    weights: &[f64],
    params: &CartParams,
    rng: &mut ChaCha8Rng,
) -> DecisionTree {
    let n_features = rows.first().map_or(0, Vec::len);
    let mut b = Builder {
        rows,
        labels,
        weights,
        n_classes,
        n_features,
        params,
        nodes: Vec::new(),
    };
    b.grow(samples, 0, rng);
    DecisionTree::new(b.nodes, n_features, n_classes).expect("CART produces valid trees")
}

fn gini(counts: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total) * (c / total)).sum::<f64>()
}

impl Builder<'_> {
    fn class_weights(&self, samples: &[usize]) -> Vec<f64> {
        let mut counts = vec![0.0; self.n_classes];
        for &i in samples {
            counts[self.labels[i]] += self.weights[i];
        }
        counts
    }

    fn grow(&mut self, samples: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        let counts = self.class_weights(&samples);
        let total: f64 = counts.iter().sum();
        self.nodes.push(Node::Leaf {
            distribution: normalize(&counts, total),
        });

        let impurity = gini(&counts, total);
        if depth >= self.params.max_depth
            || impurity <= 0.0
            || samples.len() < 2 * self.params.min_leaf.max(1)
        {
            return id;
        }
        let Some(best) = self.best_split(&samples, impurity * total, rng) else {
            return id;
        };

        let (upper, lower): (Vec<usize>, Vec<usize>) = samples
            .into_iter()
            .partition(|&i| self.rows[i][best.feature] > best.threshold);
        let left = self.grow(upper, depth + 1, rng);
        let right = self.grow(lower, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    fn candidate_features(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        match self.params.max_features {
            Some(k) if k < self.n_features => {
                let mut f = sample(rng, self.n_features, k.max(1)).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..self.n_features).collect(),
        }
    }

    fn best_split(&self, samples: &[usize], parent: f64, rng: &mut ChaCha8Rng) -> Option<BestSplit> {
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<BestSplit> = None;
        let mut order = samples.to_vec();
        let total_counts = self.class_weights(samples);
        let total: f64 = total_counts.iter().sum();

        for feature in self.candidate_features(rng) {
            order.sort_by(|&a, &b| self.rows[a][feature].total_cmp(&self.rows[b][feature]));
            // sweep ascending: `low` = rows with value <= threshold
            let mut low = vec![0.0; self.n_classes];
            let mut low_w = 0.0;
            for k in 0..order.len() - 1 {
                let i = order[k];
                low[self.labels[i]] += self.weights[i];
                low_w += self.weights[i];
                let v = self.rows[i][feature];
                let next = self.rows[order[k + 1]][feature];
                if next <= v {
                    continue;
                }
                let n_low = k + 1;
                if n_low < min_leaf || order.len() - n_low < min_leaf {
                    continue;
                }
                let high_w = total - low_w;
                let (mut sq_low, mut sq_high) = (0.0, 0.0);
                for (t, l) in total_counts.iter().zip(&low) {
                    sq_low += l * l;
                    sq_high += (t - l) * (t - l);
                }
                // w * gini = w - sum(c^2) / w
                let child = (low_w - sq_low / low_w) + (high_w - sq_high / high_w);
                if parent - child <= MIN_GAIN {
                    continue;
                }
                if best.as_ref().map_or(true, |b| child < b.child_impurity) {
                    best = Some(BestSplit {
                        feature,
                        threshold: 0.5 * (v + next),
                        child_impurity: child,
                    });
                }
            }
        }
        best
    }
}

fn normalize(counts: &[f64], total: f64) -> Vec<f64> {
    if total <= 0.0 {
        return vec![1.0 / counts.len() as f64; counts.len()];
    }
    let mut d: Vec<f64> = counts.iter().map(|c| c / total).collect();
    // guard the unit-sum invariant against accumulated rounding
    let s: f64 = d.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        d.iter_mut().for_each(|p| *p /= s);
    }
    d
}
