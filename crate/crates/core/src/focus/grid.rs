use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{batch_generate, FocusConfig};
use crate::ensemble::TreeEnsemble;
use crate::error::{Error, Result};
use crate::par::Parallelism;
use crate::softmodel::SoftConfig;

/// Hyperparameter values to sweep; the full grid is their Cartesian product
/// in σ, τ, β, α order (α varies fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub sigma: Vec<f64>,
    pub tau: Vec<f64>,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            sigma: vec![1.0, 2.0, 4.0, 5.0, 6.0, 7.0, 10.0],
            tau: vec![1.0, 2.0, 3.0, 5.0, 6.0, 10.0],
            beta: vec![0.005, 0.01, 0.05],
            alpha: vec![0.001, 0.005],
        }
    }
}

impl Grid {
    pub fn single(sigma: f64, tau: f64, beta: f64, alpha: f64) -> Self {
        Grid {
            sigma: vec![sigma],
            tau: vec![tau],
            beta: vec![beta],
            alpha: vec![alpha],
        }
    }

    pub fn len(&self) -> usize {
        self.sigma.len() * self.tau.len() * self.beta.len() * self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(σ, τ, β, α)` for every cell in sweep order.
    pub fn cells(&self) -> Vec<(f64, f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.len());
        for &s in &self.sigma {
            for &t in &self.tau {
                for &b in &self.beta {
                    for &a in &self.alpha {
                        out.push((s, t, b, a));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub sigma: f64,
    pub tau: f64,
    pub beta: f64,
    pub alpha: f64,
    /// Fraction of instances with a valid counterfactual.
    pub coverage: f64,
    /// Mean exact distance over found counterfactuals.
    pub d_mean: Option<f64>,
    pub n_found: usize,
    pub n_instances: usize,
    pub n_errors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: FocusConfig,
    pub best_index: usize,
    pub cells: Vec<GridCell>,
}

/// Coverage descending, then mean distance ascending (missing last).
fn compare(a: (f64, Option<f64>), b: (f64, Option<f64>)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| a.1.unwrap_or(f64::INFINITY).total_cmp(&b.1.unwrap_or(f64::INFINITY)))
}

/// Winner among `(coverage, d_mean)` summaries; ties keep the earliest.
pub fn select_best(scores: &[(f64, Option<f64>)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.map_or(true, |b| compare(*s, scores[b]) == Ordering::Less) {
            best = Some(i);
        }
    }
    best
}

pub fn rank_cells(cells: &[GridCell]) -> Option<usize> {
    let scores: Vec<(f64, Option<f64>)> = cells.iter().map(|c| (c.coverage, c.d_mean)).collect();
    select_best(&scores)
}

pub fn summarize(sigma: f64, tau: f64, beta: f64, alpha: f64, results: &[Result<super::CfResult>]) -> GridCell {
    let n = results.len();
    let dists: Vec<f64> = results
        .iter()
        .filter_map(|r| r.as_ref().ok().and_then(|c| c.distance))
        .collect();
    let n_errors = results.iter().filter(|r| r.is_err()).count();
    GridCell {
        sigma,
        tau,
        beta,
        alpha,
        coverage: if n == 0 { 0.0 } else { dists.len() as f64 / n as f64 },
        d_mean: (!dists.is_empty()).then(|| dists.iter().sum::<f64>() / dists.len() as f64),
        n_found: dists.len(),
        n_instances: n,
        n_errors,
    }
}

/// Evaluate every grid cell on `rows` with `template`'s remaining settings.
pub fn grid_search(
    ens: &TreeEnsemble,
    rows: &[Vec<f64>],
    grid: &Grid,
    template: &FocusConfig,
    par: Parallelism,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("every grid axis needs at least one value".into()));
    }
    let configs: Vec<FocusConfig> = grid
        .cells()
        .into_iter()
        .map(|(sigma, tau, beta, alpha)| FocusConfig {
            soft: SoftConfig { sigma, tau },
            beta,
            alpha,
            record_trace: false,
            ..template.clone()
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let cells: Vec<GridCell> = configs
        .iter()
        .map(|c| {
            let results = batch_generate(ens, rows, c, par);
            summarize(c.soft.sigma, c.soft.tau, c.beta, c.alpha, &results)
        })
        .collect();
    let best_index = rank_cells(&cells).expect("grid is non-empty");
    Ok(GridResult {
        best: configs[best_index].clone(),
        best_index,
        cells,
    })
}
