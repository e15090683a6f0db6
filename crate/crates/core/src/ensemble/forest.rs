use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cart::{fit_tree, CartParams};
use super::{ModelKind, TreeEnsemble};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::par::{derive_seed, map_range, Parallelism};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub num_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `floor(sqrt(n_features))`.
    pub max_features: Option<usize>,
    /// Draw a bootstrap sample per tree; when false every tree sees all rows.
    pub bootstrap: bool,
}

impl ForestParams {
    pub fn new(num_trees: usize, max_depth: usize) -> Self {
        ForestParams {
            num_trees,
            max_depth,
            min_leaf: 1,
            max_features: None,
            bootstrap: true,
        }
    }
}

pub fn train_random_forest(train: &Dataset, num_trees: usize, max_depth: usize, seed: u64) -> Result<TreeEnsemble> {
    train_random_forest_with(train, &ForestParams::new(num_trees, max_depth), seed, Parallelism::Auto)
}

/// Bagged CART trees. Tree `m` draws from its own RNG seeded with
/// `derive_seed(seed, m)`, so the model does not depend on `par`.
pub fn train_random_forest_with(
    train: &Dataset,
    params: &ForestParams,
    seed: u64,
    par: Parallelism,
) -> Result<TreeEnsemble> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if params.num_trees == 0 {
        return Err(Error::InvalidConfig("num_trees must be >= 1".into()));
    }
    let n = train.n_rows();
    let n_features = train.n_features();
    let max_features = params
        .max_features
        .unwrap_or_else(|| ((n_features as f64).sqrt().floor() as usize).max(1));
    let cart = CartParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        max_features: Some(max_features),
    };
    let weights = vec![1.0; n];

    let trees = map_range(params.num_trees, par, |m| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, m as u64));
        let mut samples: Vec<usize> = if params.bootstrap {
            (0..n).map(|_| rng.gen_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        samples.sort_unstable();
        fit_tree(
            &train.rows,
            &train.labels,
            train.n_classes(),
            samples,
            &weights,
            &cart,
            &mut rng,
        )
    });

    let w = 1.0 / params.num_trees as f64;
    TreeEnsemble::new(
        trees,
        vec![w; params.num_trees],
        ModelKind::RandomForest,
        train.feature_names.clone(),
        train.scaling.clone(),
    )
}
