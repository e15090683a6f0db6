//! SAMME boosting over weighted CART base learners.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cart::{fit_tree, CartParams};
use super::{argmax, ModelKind, TreeEnsemble};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::par::derive_seed;

/// Error floor used when a round classifies the training set perfectly.
const PERFECT_ERROR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaBoostParams {
    pub num_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
}

pub fn train_adaboost(train: &Dataset, num_trees: usize, max_depth: usize, seed: u64) -> Result<TreeEnsemble> {
    let params = AdaBoostParams {
        num_trees,
        max_depth,
        min_leaf: 1,
    };
    train_adaboost_with(train, &params, seed)
}

/// SAMME: round weight `log((1-err)/err) + log(K-1)`; misclassified rows are
/// up-weighted by `exp(weight)`. Stops early when a round reaches zero error
/// or stops beating chance. Stored tree weights are normalized to sum to 1,
/// which leaves every argmax unchanged.
pub fn train_adaboost_with(train: &Dataset, params: &AdaBoostParams, seed: u64) -> Result<TreeEnsemble> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if params.num_trees == 0 {
        return Err(Error::InvalidConfig("num_trees must be >= 1".into()));
    }
    let n = train.n_rows();
    let k = train.n_classes() as f64;
    let chance = 1.0 - 1.0 / k;
    let cart = CartParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        max_features: None,
    };

    let mut sample_w = vec![1.0 / n as f64; n];
    let mut trees = Vec::new();
    let mut alphas = Vec::new();
    for round in 0..params.num_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, round as u64));
        let tree = fit_tree(
            &train.rows,
            &train.labels,
            train.n_classes(),
            (0..n).collect(),
            &sample_w,
            &cart,
            &mut rng,
        );
        let miss: Vec<bool> = train
            .rows
            .iter()
            .zip(&train.labels)
            .map(|(x, &y)| argmax(tree.distribution(tree.leaf_index(x))) != y)
            .collect();
        let total: f64 = sample_w.iter().sum();
        let err = miss
            .iter()
            .zip(&sample_w)
            .filter(|(m, _)| **m)
            .map(|(_, w)| w)
            .sum::<f64>()
            / total;

        if err >= chance {
            if round == 0 {
                return Err(Error::NoBetterThanChance { error: err });
            }
            break;
        }
        let perfect = err <= 0.0;
        let e = err.max(PERFECT_ERROR);
        let alpha = ((1.0 - e) / e).ln() + (k - 1.0).ln();
        trees.push(tree);
        alphas.push(alpha);
        if perfect {
            break;
        }
        for (w, m) in sample_w.iter_mut().zip(&miss) {
            if *m {
                *w *= alpha.exp();
            }
        }
        let s: f64 = sample_w.iter().sum();
        sample_w.iter_mut().for_each(|w| *w /= s);
    }

    let sum: f64 = alphas.iter().sum();
    let weights = alphas.iter().map(|a| a / sum).collect();
    TreeEnsemble::new(
        trees,
        weights,
        ModelKind::AdaptiveBoosting,
        train.feature_names.clone(),
        train.scaling.clone(),
    )
}

/// Raw SAMME round weights for an error rate (exposed for tests and reports).
pub fn samme_weight(err: f64, n_classes: usize) -> f64 {
    let e = err.max(PERFECT_ERROR);
    ((1.0 - e) / e).ln() + ((n_classes as f64) - 1.0).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Dataset {
        Dataset {
            feature_names: (0..rows[0].len()).map(|i| format!("f{i}")).collect(),
            rows,
            labels,
            class_names: vec!["0".into(), "1".into()],
            scaling: None,
            warnings: vec![],
        }
    }

    #[test]
    fn separable_data_stops_after_one_round() {
        let xs = [0.1, 0.2, 0.3, 0.7, 0.8, 0.9];
        let d = ds(
            xs.iter().map(|&x| vec![x]).collect(),
            xs.iter().map(|&x| usize::from(x > 0.5)).collect(),
        );
        let ab = train_adaboost(&d, 10, 1, 0).unwrap();
        assert_eq!(ab.len(), 1);
        assert_eq!(ab.weights(), &[1.0]);
        assert!(samme_weight(0.0, 2) > 20.0);
        assert_eq!(ab.accuracy(&d.rows, &d.labels), 1.0);
    }

    #[test]
    fn weights_positive_and_boosting_helps() {
        // diagonal boundary: no single stump fits it
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|i| vec![(i % 10) as f64 / 10.0 + 0.05, (i / 10) as f64 / 10.0 + 0.05])
            .collect();
        let labels: Vec<usize> = rows
            .iter()
            .map(|r| usize::from(r[0] + r[1] > 1.0))
            .collect();
        let d = ds(rows, labels);
        let ab = train_adaboost(&d, 30, 1, 4).unwrap();
        assert!(ab.len() > 1);
        assert!(ab.weights().iter().all(|&w| w > 0.0));
        assert!((ab.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let stump = train_adaboost(&d, 1, 1, 4).unwrap();
        assert!(ab.accuracy(&d.rows, &d.labels) > stump.accuracy(&d.rows, &d.labels));
    }

    #[test]
    fn chance_level_first_learner_is_reported() {
        // identical inputs with balanced labels: no split is possible
        let d = ds(vec![vec![0.5]; 4], vec![0, 1, 0, 1]);
        assert!(matches!(
            train_adaboost(&d, 5, 2, 0),
            Err(Error::NoBetterThanChance { .. })
        ));
    }

    #[test]
    fn samme_weight_formula() {
        assert!((samme_weight(0.25, 2) - 3f64.ln()).abs() < 1e-15);
        assert!((samme_weight(0.25, 3) - (3f64.ln() + 2f64.ln())).abs() < 1e-15);
    }
}
