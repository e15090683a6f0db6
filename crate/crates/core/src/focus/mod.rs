//! Gradient-based counterfactual search over the soft relaxation.
//!
//! The loss at a candidate `x̄` for an instance `x` with hard label `y_x` is
//!
//! ```text
//! L(x̄) = 1[f(x̄) = y_x] · f̃(y_x | x̄) + β · d(x, x̄)
//! ```
//!
//! The indicator uses the hard model, the differentiable part the soft
//! model. Starting from `x̄ = x`, Adam runs for a fixed number of iterations
//! and the closest candidate that flips the hard prediction is kept.

mod adam;
mod grid;

pub use adam::{adam_step, adam_step_into, AdamParams, AdamState};
pub use grid::{grid_search, rank_cells, select_best, summarize, Grid, GridCell, GridResult};

use crate::dataio::Scaling;
use crate::distance::{dist, dist_gradient_into, DistanceSpec};
use crate::ensemble::TreeEnsemble;
use crate::error::{Error, Result};
use crate::par::{map_indexed, Parallelism};
use crate::softmodel::{class_prob_and_grad, SoftConfig, SoftWorkspace};

pub const DEFAULT_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct FocusConfig {
    pub soft: SoftConfig,
    pub beta: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub distance: DistanceSpec,
    pub adam: AdamParams,
    pub clamp_to_unit_box: bool,
    /// Recorded with the results; the search itself is deterministic and
    /// draws no random numbers.
    pub seed: u64,
    pub record_trace: bool,
}

impl FocusConfig {
    pub fn new(sigma: f64, tau: f64, beta: f64, alpha: f64, distance: DistanceSpec) -> Self {
        FocusConfig {
            soft: SoftConfig { sigma, tau },
            beta,
            alpha,
            iterations: DEFAULT_ITERATIONS,
            distance,
            adam: AdamParams::default(),
            clamp_to_unit_box: false,
            seed: 0,
            record_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.soft.validate()?;
        self.distance.validate()?;
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::InvalidConfig(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidConfig(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be >= 1".into()));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.b1) && (0.0..1.0).contains(&a.b2) && a.eps > 0.0) {
            return Err(Error::InvalidConfig("adam requires b1, b2 in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    /// Loss at the point the gradient was taken.
    pub loss: f64,
    /// Exact distance of the updated candidate.
    pub dist: f64,
    /// Whether the updated candidate flips the hard prediction.
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfResult {
    pub instance_index: usize,
    pub original: Vec<f64>,
    pub counterfactual: Option<Vec<f64>>,
    pub original_label: usize,
    pub cf_label: Option<usize>,
    /// Exact (unsmoothed) distance to the counterfactual.
    pub distance: Option<f64>,
    pub found_at_iteration: Option<usize>,
    pub trace: Option<Vec<TraceRecord>>,
}

impl CfResult {
    pub fn found(&self) -> bool {
        self.counterfactual.is_some()
    }

    pub fn delta(&self, scaling: Option<&Scaling>) -> Option<ExplanationDelta> {
        self.counterfactual
            .as_ref()
            .map(|cf| ExplanationDelta::new(&self.original, cf, scaling))
    }
}

/// `Δ = x̄ - x`, in scaled and optionally original units.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationDelta {
    pub scaled: Vec<f64>,
    pub original_units: Option<Vec<f64>>,
}

/// A difference `d` with `from + d == to` in floating point. This always
/// holds when the two values are within a factor of two of each other (the
/// subtraction is then exact); otherwise `from + d` is the closest
/// representable sum found within a few ulps.
fn exact_difference(from: f64, to: f64) -> f64 {
    let mut d = to - from;
    for _ in 0..8 {
        let r = from + d;
        if r == to {
            break;
        }
        // nudge by one ulp toward closing the gap
        d = if r < to { d.next_up() } else { d.next_down() };
    }
    d
}

impl ExplanationDelta {
    pub fn new(original: &[f64], counterfactual: &[f64], scaling: Option<&Scaling>) -> Self {
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, c)| exact_difference(*x, *c)).collect();
        ExplanationDelta {
            scaled: diff(original, counterfactual),
            original_units: scaling.map(|s| diff(&s.unscale(original), &s.unscale(counterfactual))),
        }
    }
}

/// Per-instance search state; buffers are reused across iterations.
struct Engine<'a> {
    ens: &'a TreeEnsemble,
    cfg: &'a FocusConfig,
    x: &'a [f64],
    y_x: usize,
    ws: SoftWorkspace,
    pred_grad: Vec<f64>,
    dist_grad: Vec<f64>,
}

impl<'a> Engine<'a> {
    fn new(ens: &'a TreeEnsemble, cfg: &'a FocusConfig, x: &'a [f64]) -> Self {
        let n = x.len();
        Engine {
            ens,
            cfg,
            x,
            y_x: ens.predict_label(x),
            ws: SoftWorkspace::new(ens),
            pred_grad: vec![0.0; n],
            dist_grad: vec![0.0; n],
        }
    }

    /// Hinge term; `hard` is the hard label at `xbar`.
    fn pred_loss(&mut self, xbar: &[f64], hard: usize) -> f64 {
        if hard != self.y_x {
            self.pred_grad.iter_mut().for_each(|g| *g = 0.0);
            return 0.0;
        }
        class_prob_and_grad(self.ens, xbar, &self.cfg.soft, self.y_x, &mut self.pred_grad, &mut self.ws)
    }

    /// Total loss; the gradient is left in `grad`.
    fn total_loss(&mut self, xbar: &[f64], hard: usize, grad: &mut [f64]) -> Result<f64> {
        let p = self.pred_loss(xbar, hard);
        let d = dist_gradient_into(&self.cfg.distance, self.x, xbar, &mut self.dist_grad)?;
        let beta = self.cfg.beta;
        for ((g, pg), dg) in grad.iter_mut().zip(&self.pred_grad).zip(&self.dist_grad) {
            *g = pg + beta * dg;
        }
        Ok(p + beta * d)
    }
}

/// `(value, gradient)` of the hinge prediction loss at `xbar`.
pub fn pred_loss(ens: &TreeEnsemble, cfg: &FocusConfig, x: &[f64], xbar: &[f64]) -> Result<(f64, Vec<f64>)> {
    ens.check_dim(x)?;
    ens.check_dim(xbar)?;
    let mut e = Engine::new(ens, cfg, x);
    let v = e.pred_loss(xbar, ens.predict_label(xbar));
    Ok((v, e.pred_grad))
}

/// `(value, gradient)` of the prediction loss plus `β` times the smoothed distance.
pub fn total_loss(ens: &TreeEnsemble, cfg: &FocusConfig, x: &[f64], xbar: &[f64]) -> Result<(f64, Vec<f64>)> {
    ens.check_dim(x)?;
    ens.check_dim(xbar)?;
    let mut e = Engine::new(ens, cfg, x);
    let mut g = vec![0.0; x.len()];
    let v = e.total_loss(xbar, ens.predict_label(xbar), &mut g)?;
    Ok((v, g))
}

pub fn generate_cf(ens: &TreeEnsemble, x: &[f64], cfg: &FocusConfig) -> Result<CfResult> {
    generate_cf_indexed(ens, x, cfg, 0)
}

fn generate_cf_indexed(ens: &TreeEnsemble, x: &[f64], cfg: &FocusConfig, instance_index: usize) -> Result<CfResult> {
    ens.check_dim(x)?;
    cfg.validate()?;
    let n = x.len();
    let exact = cfg.distance.exact();
    let mut engine = Engine::new(ens, cfg, x);
    let y_x = engine.y_x;

    let mut xbar = x.to_vec();
    let mut hard = y_x;
    let mut grad = vec![0.0; n];
    let mut delta = vec![0.0; n];
    let mut adam = AdamState::new(n);
    let mut trace = cfg.record_trace.then(|| Vec::with_capacity(cfg.iterations));
    let mut best: Option<(Vec<f64>, usize, f64, usize)> = None;

    for it in 1..=cfg.iterations {
        let loss = engine.total_loss(&xbar, hard, &mut grad)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { iteration: it });
        }
        adam_step_into(&mut adam, &grad, cfg.alpha, &cfg.adam, &mut delta);
        for (v, d) in xbar.iter_mut().zip(&delta) {
            *v += d;
            if cfg.clamp_to_unit_box {
                *v = v.clamp(0.0, 1.0);
            }
        }
        hard = ens.predict_label(&xbar);
        let valid = hard != y_x;
        let mut d_exact = f64::NAN;
        if valid || trace.is_some() {
            d_exact = dist(&exact, x, &xbar)?;
        }
        if valid && best.as_ref().map_or(true, |b| d_exact < b.2) {
            best = Some((xbar.clone(), hard, d_exact, it));
        }
        if let Some(t) = trace.as_mut() {
            t.push(TraceRecord {
                loss,
                dist: d_exact,
                valid,
            });
        }
    }

    let (counterfactual, cf_label, distance, found_at_iteration) = match best {
        Some((cf, label, d, it)) => (Some(cf), Some(label), Some(d), Some(it)),
        None => (None, None, None, None),
    };
    Ok(CfResult {
        instance_index,
        original: x.to_vec(),
        counterfactual,
        original_label: y_x,
        cf_label,
        distance,
        found_at_iteration,
        trace,
    })
}

/// Run [`generate_cf`] on every row; result `i` belongs to row `i`.
pub fn batch_generate(
    ens: &TreeEnsemble,
    rows: &[Vec<f64>],
    cfg: &FocusConfig,
    par: Parallelism,
) -> Vec<Result<CfResult>> {
    map_indexed(rows, par, |i, x| generate_cf_indexed(ens, x, cfg, i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::DistanceKind;
    use crate::ensemble::testing::{names, stump};
    use crate::ensemble::{DecisionTree, ModelKind};
    use crate::softmodel::soft_ensemble_output;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn euclid() -> DistanceSpec {
        DistanceSpec::new(DistanceKind::Euclidean)
    }

    fn single(t: DecisionTree) -> TreeEnsemble {
        let n = t.n_features();
        TreeEnsemble::single(t, names(n), None).unwrap()
    }

    /// left leaf (x > θ) is class 1, right leaf class 0
    fn step_model(theta: f64) -> TreeEnsemble {
        single(stump(1, 0, theta, &[0.0, 1.0], &[1.0, 0.0]))
    }

    /// Smallest |x̄ - x| on a grid of step `h` that changes the hard label.
    fn grid_oracle(ens: &TreeEnsemble, x: f64, h: f64) -> f64 {
        let y = ens.predict_label(&[x]);
        let mut k = 1.0;
        loop {
            for s in [1.0, -1.0] {
                if ens.predict_label(&[x + s * k * h]) != y {
                    return k * h;
                }
            }
            k += 1.0;
            assert!(k * h < 2.0, "no flip found");
        }
    }

    #[test]
    fn config_validation() {
        let ok = FocusConfig::new(1.0, 10.0, 0.05, 0.001, euclid());
        assert!(ok.validate().is_ok());
        let mut c = ok.clone();
        c.beta = 0.0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.alpha = -1.0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.iterations = 0;
        assert!(c.validate().is_err());
        let mut c = ok;
        c.distance = DistanceSpec::new(DistanceKind::Mahalanobis);
        assert!(matches!(c.validate(), Err(Error::MissingCovariance)));
    }

    #[test]
    fn loss_is_zero_once_flipped() {
        let ens = step_model(0.5);
        let cfg = FocusConfig::new(4.0, 2.0, 0.1, 0.01, euclid());
        let (v, g) = pred_loss(&ens, &cfg, &[0.3], &[0.7]).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![0.0]);
        let (v, g) = total_loss(&ens, &cfg, &[0.3], &[0.7]).unwrap();
        let d = (0.4f64 * 0.4 + 1e-10).sqrt();
        assert!((v - 0.1 * d).abs() < 1e-15);
        assert!((g[0] - 0.1 * 0.4 / d).abs() < 1e-12);
    }

    #[test]
    fn constant_model_loss() {
        let ens = single(DecisionTree::leaf(vec![0.3, 0.7], 2).unwrap());
        let cfg = FocusConfig::new(4.0, 3.0, 0.1, 0.01, euclid());
        let (v, g) = pred_loss(&ens, &cfg, &[0.3, 0.2], &[0.5, 0.5]).unwrap();
        let e0 = (3.0f64 * 0.3).exp();
        let e1 = (3.0f64 * 0.7).exp();
        assert!((v - e1 / (e0 + e1)).abs() < 1e-15);
        assert_eq!(g, vec![0.0, 0.0]);
        let r = generate_cf(&ens, &[0.3, 0.2], &FocusConfig { iterations: 50, ..cfg }).unwrap();
        assert!(r.counterfactual.is_none() && r.distance.is_none() && r.cf_label.is_none());
    }

    #[test]
    fn loss_at_origin() {
        let ens = step_model(0.5);
        let cfg = FocusConfig::new(4.0, 2.0, 0.1, 0.01, euclid());
        let x = [0.45];
        let (v, g) = total_loss(&ens, &cfg, &x, &x).unwrap();
        let (pv, pg) = pred_loss(&ens, &cfg, &x, &x).unwrap();
        let soft = soft_ensemble_output(&ens, &x, &cfg.soft).unwrap().probs[0];
        assert_eq!(pv, soft);
        assert!((v - (pv + 0.1 * 1e-5)).abs() < 1e-15);
        assert_eq!(g, pg);
        // class 0 mass sits at x <= θ, so the gradient is negative and Adam moves up
        assert!(pg[0] < 0.0);
    }

    #[test]
    fn depth_one_pred_loss_matches_finite_differences() {
        let ens = step_model(0.5);
        let cfg = FocusConfig::new(3.0, 2.0, 0.1, 0.01, euclid());
        let x = [0.2];
        for xb in [0.1, 0.25, 0.4, 0.48] {
            let (_, g) = pred_loss(&ens, &cfg, &x, &[xb]).unwrap();
            let h = 1e-5;
            let fd = (pred_loss(&ens, &cfg, &x, &[xb + h]).unwrap().0 - pred_loss(&ens, &cfg, &x, &[xb - h]).unwrap().0)
                / (2.0 * h);
            assert!((g[0] - fd).abs() / fd.abs() < 1e-4);
        }
    }

    #[test]
    fn simple_step_is_crossed_just_past_threshold() {
        let ens = step_model(0.5);
        let cfg = FocusConfig::new(10.0, 1.0, 0.05, 0.001, euclid());
        let r = generate_cf(&ens, &[0.3], &cfg).unwrap();
        let cf = r.counterfactual.clone().unwrap();
        assert!(cf[0] > 0.5);
        let oracle = grid_oracle(&ens, 0.3, 1e-4);
        let magnitude = (cf[0] - 0.3).abs();
        assert!(magnitude <= 10.0 * oracle, "{magnitude} vs {oracle}");
        assert!(cf[0] - 0.5 < 0.01);
        assert_eq!(r.cf_label, Some(1));
        assert_eq!(r.original_label, 0);
        assert_eq!(r.distance, Some(magnitude));
    }

    #[test]
    fn typical_config_is_accepted() {
        let cfg = FocusConfig::new(1.0, 10.0, 0.05, 0.001, euclid());
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.iterations, 1000);
        assert_eq!(cfg.adam, AdamParams { b1: 0.9, b2: 0.999, eps: 1e-8 });
        assert!(!cfg.clamp_to_unit_box);
    }

    #[test]
    fn clamp_keeps_candidates_in_box() {
        // the flip lies outside [0, 1]: only reachable unclamped
        let ens = step_model(0.98);
        let mut cfg = FocusConfig::new(5.0, 1.0, 0.01, 0.01, euclid());
        cfg.iterations = 400;
        cfg.clamp_to_unit_box = true;
        cfg.record_trace = true;
        let r = generate_cf(&ens, &[0.9], &cfg).unwrap();
        let cf = r.counterfactual.unwrap();
        assert!(cf[0] <= 1.0 && cf[0] > 0.98);
    }

    #[test]
    fn trace_best_distance_is_non_increasing() {
        let ens = step_model(0.5);
        let mut cfg = FocusConfig::new(2.0, 1.0, 0.2, 0.01, euclid());
        cfg.record_trace = true;
        let r = generate_cf(&ens, &[0.3], &cfg).unwrap();
        let trace = r.trace.as_ref().unwrap();
        assert_eq!(trace.len(), 1000);
        let mut best = f64::INFINITY;
        let mut bests = Vec::new();
        for t in trace {
            if t.valid {
                best = best.min(t.dist);
            }
            bests.push(best);
        }
        assert!(bests.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(r.distance, Some(best));
        let it = r.found_at_iteration.unwrap();
        assert_eq!(trace[it - 1].dist, best);
    }

    #[test]
    fn singular_distance_gradient_is_reported() {
        let ens = step_model(0.5);
        let cfg = FocusConfig::new(2.0, 1.0, 0.2, 0.01, euclid().with_smooth_eps(0.0));
        assert!(matches!(generate_cf(&ens, &[0.3], &cfg), Err(Error::SingularGradient)));
    }

    #[test]
    fn non_finite_is_reported_with_iteration() {
        let ens = step_model(0.5);
        let mut cfg = FocusConfig::new(2.0, 1.0, 0.2, 0.01, euclid());
        cfg.alpha = f64::MAX;
        cfg.iterations = 10;
        cfg.beta = 1e300;
        // validation passes; the run overflows
        assert!(cfg.validate().is_ok());
        match generate_cf(&ens, &[0.3], &cfg) {
            Err(Error::NonFinite { iteration }) => assert!(iteration >= 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn batch_preserves_order_and_is_thread_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trees: Vec<DecisionTree> = (0..6)
            .map(|i| stump(2, i % 2, rng.gen_range(0.2..0.8), &[0.2, 0.8], &[0.7, 0.3]))
            .collect();
        let ens = TreeEnsemble::new(trees, vec![1.0 / 6.0; 6], ModelKind::RandomForest, names(2), None).unwrap();
        let rows: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let mut cfg = FocusConfig::new(5.0, 3.0, 0.05, 0.01, euclid());
        cfg.iterations = 200;
        let a = batch_generate(&ens, &rows, &cfg, Parallelism::Sequential);
        let b = batch_generate(&ens, &rows, &cfg, Parallelism::Threads(8));
        assert_eq!(a.len(), 20);
        for (i, (ra, rb)) in a.iter().zip(&b).enumerate() {
            let (ra, rb) = (ra.as_ref().unwrap(), rb.as_ref().unwrap());
            assert_eq!(ra, rb);
            assert_eq!(ra.instance_index, i);
            assert_eq!(ra.original, rows[i]);
        }
        assert!(batch_generate(&ens, &[], &cfg, Parallelism::Auto).is_empty());
    }

    #[test]
    fn delta_reconstructs_counterfactual() {
        let s = Scaling {
            min: vec![3.8, 0.08],
            max: vec![14.2, 1.1],
        };
        let x = [0.1, 0.7];
        let cf = [0.3, 0.6999999];
        let d = ExplanationDelta::new(&x, &cf, Some(&s));
        for i in 0..2 {
            assert_eq!(x[i] + d.scaled[i], cf[i]);
        }
        let (xr, cr) = (s.unscale(&x), s.unscale(&cf));
        let raw = d.original_units.unwrap();
        for i in 0..2 {
            assert_eq!(xr[i] + raw[i], cr[i]);
        }
    }

    proptest! {
        #[test]
        fn exact_difference_closes_the_gap(a in 1e-6..1e3f64, r in 0.5..2.0f64, b in -1e3..1e3f64) {
            let near = a * r;
            prop_assert_eq!(a + exact_difference(a, near), near);
            prop_assert_eq!(-a + exact_difference(-a, -near), -near);
            let d = exact_difference(a, b);
            prop_assert!((a + d - b).abs() <= 2.0 * (d.abs() * f64::EPSILON).max(b.abs() * f64::EPSILON));
        }

        #[test]
        fn results_are_valid_and_best_tracked(
            thetas in proptest::collection::vec(0.1..0.9f64, 1..5),
            x in proptest::collection::vec(0.0..1.0f64, 2),
            sigma in 1.0..10.0f64,
        ) {
            let m = thetas.len();
            let trees: Vec<DecisionTree> = thetas
                .iter()
                .enumerate()
                .map(|(i, t)| stump(2, i % 2, *t, &[0.1, 0.9], &[0.9, 0.1]))
                .collect();
            let ens = TreeEnsemble::new(trees, vec![1.0; m], ModelKind::AdaptiveBoosting, names(2), None).unwrap();
            let mut cfg = FocusConfig::new(sigma, 5.0, 0.01, 0.01, euclid());
            cfg.iterations = 300;
            cfg.record_trace = true;
            let r = generate_cf(&ens, &x, &cfg).unwrap();
            prop_assert_eq!(r.original_label, ens.predict_label(&x));
            if let Some(cf) = &r.counterfactual {
                let label = ens.predict_hard(cf).unwrap().label;
                prop_assert_ne!(label, r.original_label);
                prop_assert_eq!(Some(label), r.cf_label);
                let d = dist(&cfg.distance.exact(), &x, cf).unwrap();
                prop_assert_eq!(r.distance, Some(d));
                let trace = r.trace.as_ref().unwrap();
                let min_valid = trace.iter().filter(|t| t.valid).map(|t| t.dist).fold(f64::INFINITY, f64::min);
                prop_assert_eq!(d, min_valid);
            }
            let again = generate_cf(&ens, &x, &cfg).unwrap();
            prop_assert_eq!(again, r);
        }
    }
}
