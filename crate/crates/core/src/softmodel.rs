//! Differentiable relaxation of a tree ensemble.
//!
//! Each split is replaced by a sigmoid: the left edge (`x > θ`) carries
//! `sig(θ - x)` and the right edge carries `sig(x - θ)`, with
//! `sig(z) = 1 / (1 + exp(σ z))`. A leaf's activation is the product of the
//! edge factors on its path; products are accumulated in log space and
//! exponentiated once per leaf. Tree outputs are combined through a softmax
//! with temperature `τ`.

use crate::ensemble::{DecisionTree, Node, TreeEnsemble};
use crate::error::{Error, Result};

/// Log-activations below this are flushed to zero.
pub const LOG_FLUSH: f64 = -700.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftConfig {
    pub sigma: f64,
    pub tau: f64,
}

impl SoftConfig {
    pub fn new(sigma: f64, tau: f64) -> Result<Self> {
        let cfg = SoftConfig { sigma, tau };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("sigma must be positive and finite, got {}", self.sigma)));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidConfig(format!("tau must be positive and finite, got {}", self.tau)));
        }
        Ok(())
    }
}

/// `log(1 + exp(a))` without overflow.
#[inline]
fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

/// `sig(z) = 1 / (1 + exp(σ z))`.
#[inline]
pub fn sig(z: f64, sigma: f64) -> f64 {
    // the negative branch is the rounded complement of the positive one,
    // so sig(z) + sig(-z) == 1 holds in floating point
    let a = sigma * z;
    let e = (-a.abs()).exp();
    let small = e / (1.0 + e);
    if a >= 0.0 {
        small
    } else {
        1.0 - small
    }
}

/// `log sig(z, σ)`.
#[inline]
pub fn log_sig(z: f64, sigma: f64) -> f64 {
    -softplus(sigma * z)
}

/// Edge quantities for one split evaluated at `x_f`.
struct EdgePair {
    log_left: f64,
    log_right: f64,
    /// d/dx_f of log(left factor) = σ·sig(x - θ)
    d_left: f64,
    /// d/dx_f of log(right factor) = -σ·sig(θ - x)
    d_right: f64,
}

#[inline]
fn edge_pair(theta: f64, xf: f64, sigma: f64) -> EdgePair {
    // a = σ(θ - x); log left = -softplus(a), log right = -softplus(-a)
    let a = sigma * (theta - xf);
    let e = (-a.abs()).exp();
    let l1 = e.ln_1p();
    let inv = 1.0 / (1.0 + e);
    // logistic(a) = 1 / (1 + exp(-a))
    let (lg_pos, lg_neg) = if a >= 0.0 { (inv, e * inv) } else { (e * inv, inv) };
    EdgePair {
        log_left: -(a.max(0.0) + l1),
        log_right: -((-a).max(0.0) + l1),
        d_left: sigma * lg_pos,
        d_right: -sigma * lg_neg,
    }
}

/// Walks one tree, accumulating `Σ_j t_j D_j` and optionally its input gradient.
struct TreeWalk<'a> {
    tree: &'a DecisionTree,
    x: &'a [f64],
    sigma: f64,
    k: usize,
    n_features: usize,
    /// scale applied to gradient contributions (the tree weight)
    weight: f64,
    grad: Option<&'a mut [f64]>,
    acts: Option<&'a mut Vec<f64>>,
}

impl TreeWalk<'_> {
    fn push_zero_leaves(&mut self, node: usize) {
        if let Some(acts) = self.acts.as_deref_mut() {
            let mut stack = vec![node];
            while let Some(i) = stack.pop() {
                match self.tree.node(i) {
                    Node::Split { left, right, .. } => {
                        stack.push(*right);
                        stack.push(*left);
                    }
                    Node::Leaf { .. } => acts.push(0.0),
                }
            }
        }
    }

    /// Add the activation-weighted leaf distributions below `node` into `sums`.
    fn visit(&mut self, node: usize, log_act: f64, sums: &mut [f64], scratch: &mut [f64]) {
        if log_act < LOG_FLUSH {
            self.push_zero_leaves(node);
            return;
        }
        match self.tree.node(node) {
            Node::Leaf { distribution } => {
                let a = log_act.exp();
                for (s, p) in sums.iter_mut().zip(distribution) {
                    *s += a * p;
                }
                if let Some(acts) = self.acts.as_deref_mut() {
                    acts.push(a);
                }
            }
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let e = edge_pair(*threshold, self.x[*feature], self.sigma);
                let (child, rest) = scratch.split_at_mut(self.k);
                for (next, log_edge, d_edge) in [(*left, e.log_left, e.d_left), (*right, e.log_right, e.d_right)] {
                    child.iter_mut().for_each(|c| *c = 0.0);
                    self.visit(next, log_act + log_edge, child, rest);
                    if let Some(g) = self.grad.as_deref_mut() {
                        let scale = self.weight * d_edge;
                        for (y, c) in child.iter().enumerate() {
                            g[y * self.n_features + feature] += scale * c;
                        }
                    }
                    for (s, c) in sums.iter_mut().zip(child.iter()) {
                        *s += c;
                    }
                }
            }
        }
    }
}

fn check_dim(n_features: usize, x: &[f64]) -> Result<()> {
    if x.len() != n_features {
        return Err(Error::DimensionMismatch {
            expected: n_features,
            got: x.len(),
        });
    }
    Ok(())
}

/// Soft leaf activations `t_j(x)`, one per leaf in [`DecisionTree::leaves`] order.
pub fn soft_activations(tree: &DecisionTree, x: &[f64], cfg: &SoftConfig) -> Result<Vec<f64>> {
    check_dim(tree.n_features(), x)?;
    let k = tree.n_classes();
    let mut acts = Vec::new();
    let mut sums = vec![0.0; k];
    let mut scratch = vec![0.0; k * (tree.depth() + 1)];
    TreeWalk {
        tree,
        x,
        sigma: cfg.sigma,
        k,
        n_features: tree.n_features(),
        weight: 1.0,
        grad: None,
        acts: Some(&mut acts),
    }
    .visit(0, 0.0, &mut sums, &mut scratch);
    Ok(acts)
}

/// `T̃(y|x) = Σ_j t_j(x) T(y|j)`.
pub fn soft_tree_output(tree: &DecisionTree, x: &[f64], cfg: &SoftConfig) -> Result<Vec<f64>> {
    check_dim(tree.n_features(), x)?;
    let k = tree.n_classes();
    let mut sums = vec![0.0; k];
    let mut scratch = vec![0.0; k * (tree.depth() + 1)];
    TreeWalk {
        tree,
        x,
        sigma: cfg.sigma,
        k,
        n_features: tree.n_features(),
        weight: 1.0,
        grad: None,
        acts: None,
    }
    .visit(0, 0.0, &mut sums, &mut scratch);
    Ok(sums)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftOutput {
    /// `f̃(y|x)`
    pub probs: Vec<f64>,
    /// `T̃_m(y|x)` per tree, when requested.
    pub per_tree: Option<Vec<Vec<f64>>>,
    /// Soft leaf activations per tree, when requested.
    pub leaf_activations: Option<Vec<Vec<f64>>>,
}

/// Which optional parts of [`SoftOutput`] to fill.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OutputDetail {
    pub per_tree: bool,
    pub leaf_activations: bool,
}

/// In-place softmax of `tau * logits` with max subtraction.
pub fn softmax_into(scores: &[f64], tau: f64, out: &mut [f64]) {
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(tau * s));
    let mut z = 0.0;
    for (o, s) in out.iter_mut().zip(scores) {
        *o = (tau * s - max).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

pub fn soft_ensemble_output(ens: &TreeEnsemble, x: &[f64], cfg: &SoftConfig) -> Result<SoftOutput> {
    soft_ensemble_output_with(ens, x, cfg, OutputDetail::default())
}

pub fn soft_ensemble_output_with(
    ens: &TreeEnsemble,
    x: &[f64],
    cfg: &SoftConfig,
    detail: OutputDetail,
) -> Result<SoftOutput> {
    ens.check_dim(x)?;
    let k = ens.n_classes();
    let mut ws = SoftWorkspace::new(ens);
    let mut per_tree = detail.per_tree.then(Vec::new);
    let mut leaf_acts = detail.leaf_activations.then(Vec::new);
    let mut scores = vec![0.0; k];
    let mut tree_out = vec![0.0; k];
    for (tree, w) in ens.trees().iter().zip(ens.weights()) {
        tree_out.iter_mut().for_each(|t| *t = 0.0);
        let mut acts = Vec::new();
        TreeWalk {
            tree,
            x,
            sigma: cfg.sigma,
            k,
            n_features: ens.n_features(),
            weight: *w,
            grad: None,
            acts: leaf_acts.is_some().then_some(&mut acts),
        }
        .visit(0, 0.0, &mut tree_out, &mut ws.scratch);
        for (s, t) in scores.iter_mut().zip(&tree_out) {
            *s += w * t;
        }
        if let Some(p) = per_tree.as_mut() {
            p.push(tree_out.clone());
        }
        if let Some(l) = leaf_acts.as_mut() {
            l.push(acts);
        }
    }
    let mut probs = vec![0.0; k];
    softmax_into(&scores, cfg.tau, &mut probs);
    Ok(SoftOutput {
        probs,
        per_tree,
        leaf_activations: leaf_acts,
    })
}

/// Reusable buffers for repeated evaluations against one ensemble.
#[derive(Debug, Clone)]
pub struct SoftWorkspace {
    scratch: Vec<f64>,
    scores: Vec<f64>,
    probs: Vec<f64>,
    /// `∂s_y/∂x_i`, row-major `n_classes × n_features`
    score_grad: Vec<f64>,
}

impl SoftWorkspace {
    pub fn new(ens: &TreeEnsemble) -> Self {
        let k = ens.n_classes();
        let depth = ens.trees().iter().map(DecisionTree::depth).max().unwrap_or(0);
        SoftWorkspace {
            scratch: vec![0.0; k * (depth + 1)],
            scores: vec![0.0; k],
            probs: vec![0.0; k],
            score_grad: vec![0.0; k * ens.n_features()],
        }
    }

    /// Probabilities from the most recent evaluation.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Fill `ws.scores`, `ws.probs` and `ws.score_grad` (no dimension check).
fn forward_with_score_grad(ens: &TreeEnsemble, x: &[f64], cfg: &SoftConfig, ws: &mut SoftWorkspace) {
    let k = ens.n_classes();
    ws.scores.iter_mut().for_each(|s| *s = 0.0);
    ws.score_grad.iter_mut().for_each(|g| *g = 0.0);
    let mut tree_out = [0.0f64; 8];
    let mut heap;
    let tree_out: &mut [f64] = if k <= tree_out.len() {
        &mut tree_out[..k]
    } else {
        heap = vec![0.0; k];
        &mut heap
    };
    for (tree, w) in ens.trees().iter().zip(ens.weights()) {
        tree_out.iter_mut().for_each(|t| *t = 0.0);
        TreeWalk {
            tree,
            x,
            sigma: cfg.sigma,
            k,
            n_features: ens.n_features(),
            weight: *w,
            grad: Some(&mut ws.score_grad),
            acts: None,
        }
        .visit(0, 0.0, tree_out, &mut ws.scratch);
        for (s, t) in ws.scores.iter_mut().zip(tree_out.iter()) {
            *s += w * t;
        }
    }
    softmax_into(&ws.scores, cfg.tau, &mut ws.probs);
}

/// `f̃(class|x)` and its gradient written into `grad`. Allocation-free given
/// a workspace built for `ens`; used by the optimizer's inner loop.
pub fn class_prob_and_grad(
    ens: &TreeEnsemble,
    x: &[f64],
    cfg: &SoftConfig,
    class: usize,
    grad: &mut [f64],
    ws: &mut SoftWorkspace,
) -> f64 {
    let f = ens.n_features();
    forward_with_score_grad(ens, x, cfg, ws);
    let p = ws.probs[class];
    // ∂p_y/∂x_i = τ p_y (∂s_y/∂x_i - Σ_k p_k ∂s_k/∂x_i)
    for i in 0..f {
        let mean: f64 = ws.probs.iter().enumerate().map(|(c, pc)| pc * ws.score_grad[c * f + i]).sum();
        grad[i] = cfg.tau * p * (ws.score_grad[class * f + i] - mean);
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientTarget {
    Class(usize),
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputGradient {
    /// `∂f̃(y|x)/∂x` for one class.
    Class(Vec<f64>),
    /// Jacobian rows, one per class.
    Full(Vec<Vec<f64>>),
}

pub fn input_gradient(
    ens: &TreeEnsemble,
    x: &[f64],
    cfg: &SoftConfig,
    target: GradientTarget,
) -> Result<InputGradient> {
    ens.check_dim(x)?;
    let k = ens.n_classes();
    let f = ens.n_features();
    let mut ws = SoftWorkspace::new(ens);
    match target {
        GradientTarget::Class(c) => {
            if c >= k {
                return Err(Error::InvalidConfig(format!("class {c} out of range for {k} classes")));
            }
            let mut g = vec![0.0; f];
            class_prob_and_grad(ens, x, cfg, c, &mut g, &mut ws);
            Ok(InputGradient::Class(g))
        }
        GradientTarget::Full => {
            forward_with_score_grad(ens, x, cfg, &mut ws);
            let mean: Vec<f64> = (0..f)
                .map(|i| (0..k).map(|c| ws.probs[c] * ws.score_grad[c * f + i]).sum())
                .collect();
            let rows = (0..k)
                .map(|y| {
                    (0..f)
                        .map(|i| cfg.tau * ws.probs[y] * (ws.score_grad[y * f + i] - mean[i]))
                        .collect()
                })
                .collect();
            Ok(InputGradient::Full(rows))
        }
    }
}
