//! Distances between an instance `x` and a perturbed copy `x̄`, with
//! gradients with respect to `x̄`.
//!
//! Euclidean, Manhattan and Mahalanobis are smoothed by `smooth_eps` under
//! the square roots so they stay differentiable at `x = x̄`; with
//! `smooth_eps = 0` the plain formulas are recovered.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataio::CovarianceContext;
use crate::error::{Error, Result};

pub const DEFAULT_SMOOTH_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    Euclidean,
    Cosine,
    Manhattan,
    Mahalanobis,
}

impl DistanceKind {
    pub const ALL: [DistanceKind; 4] = [
        DistanceKind::Euclidean,
        DistanceKind::Cosine,
        DistanceKind::Manhattan,
        DistanceKind::Mahalanobis,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DistanceKind::Euclidean => "euclidean",
            DistanceKind::Cosine => "cosine",
            DistanceKind::Manhattan => "manhattan",
            DistanceKind::Mahalanobis => "mahalanobis",
        }
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DistanceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown distance `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceSpec {
    pub kind: DistanceKind,
    /// Required for Mahalanobis, ignored otherwise.
    pub covariance: Option<Arc<CovarianceContext>>,
    pub smooth_eps: f64,
}

impl DistanceSpec {
    pub fn new(kind: DistanceKind) -> Self {
        DistanceSpec {
            kind,
            covariance: None,
            smooth_eps: DEFAULT_SMOOTH_EPS,
        }
    }

    pub fn mahalanobis(cov: Arc<CovarianceContext>) -> Self {
        DistanceSpec {
            kind: DistanceKind::Mahalanobis,
            covariance: Some(cov),
            smooth_eps: DEFAULT_SMOOTH_EPS,
        }
    }

    pub fn with_smooth_eps(mut self, eps: f64) -> Self {
        self.smooth_eps = eps;
        self
    }

    /// The same distance with smoothing removed, used for reported values.
    pub fn exact(&self) -> Self {
        DistanceSpec {
            smooth_eps: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.smooth_eps >= 0.0 && self.smooth_eps.is_finite()) {
            return Err(Error::InvalidConfig("smooth_eps must be finite and >= 0".into()));
        }
        if self.kind == DistanceKind::Mahalanobis && self.covariance.is_none() {
            return Err(Error::MissingCovariance);
        }
        Ok(())
    }

    fn cov(&self, n: usize) -> Result<&CovarianceContext> {
        let c = self.covariance.as_deref().ok_or(Error::MissingCovariance)?;
        if c.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: c.dim(),
                got: n,
            });
        }
        Ok(c)
    }
}

fn check_dims(x: &[f64], xbar: &[f64]) -> Result<()> {
    if x.len() != xbar.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: xbar.len(),
        });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(spec: &DistanceSpec, x: &[f64], xbar: &[f64]) -> Result<f64> {
    check_dims(x, xbar)?;
    let eps = spec.smooth_eps;
    Ok(match spec.kind {
        DistanceKind::Euclidean => {
            let s: f64 = x.iter().zip(xbar).map(|(a, b)| (a - b) * (a - b)).sum();
            (s + eps).sqrt()
        }
        DistanceKind::Manhattan => x
            .iter()
            .zip(xbar)
            .map(|(a, b)| {
                let u = a - b;
                if eps == 0.0 {
                    u.abs()
                } else {
                    (u * u + eps).sqrt()
                }
            })
            .sum(),
        DistanceKind::Cosine => {
            let (nx, nb) = (norm(x), norm(xbar));
            if nx == 0.0 || nb == 0.0 {
                return Err(Error::ZeroNorm);
            }
            1.0 - dot(x, xbar) / (nx * nb)
        }
        DistanceKind::Mahalanobis => {
            let c = spec.cov(x.len())?;
            let u: Vec<f64> = x.iter().zip(xbar).map(|(a, b)| a - b).collect();
            // the quadratic form is >= 0 for an SPD inverse; clamp rounding noise
            (c.quad_form(&u).max(0.0) + eps).sqrt()
        }
    })
}

/// `∂ dist(x, x̄) / ∂x̄`.
pub fn dist_gradient(spec: &DistanceSpec, x: &[f64], xbar: &[f64]) -> Result<Vec<f64>> {
    let mut g = vec![0.0; x.len()];
    dist_gradient_into(spec, x, xbar, &mut g)?;
    Ok(g)
}

/// Like [`dist_gradient`], writing into `out`; returns the distance.
pub fn dist_gradient_into(spec: &DistanceSpec, x: &[f64], xbar: &[f64], out: &mut [f64]) -> Result<f64> {
    check_dims(x, xbar)?;
    let eps = spec.smooth_eps;
    match spec.kind {
        DistanceKind::Euclidean => {
            let s: f64 = x.iter().zip(xbar).map(|(a, b)| (a - b) * (a - b)).sum();
            let d = (s + eps).sqrt();
            if d == 0.0 {
                return Err(Error::SingularGradient);
            }
            for ((o, a), b) in out.iter_mut().zip(x).zip(xbar) {
                *o = (b - a) / d;
            }
            Ok(d)
        }
        DistanceKind::Manhattan => {
            let mut d = 0.0;
            for ((o, a), b) in out.iter_mut().zip(x).zip(xbar) {
                let v = b - a;
                let r = (v * v + eps).sqrt();
                d += r;
                // subgradient 0 at the kink when unsmoothed
                *o = if r == 0.0 { 0.0 } else { v / r };
            }
            Ok(d)
        }
        DistanceKind::Cosine => {
            let (nx, nb) = (norm(x), norm(xbar));
            if nx == 0.0 || nb == 0.0 {
                return Err(Error::ZeroNorm);
            }
            let ip = dot(x, xbar);
            // d = 1 - ip/(nx nb); ∂/∂x̄ = -(x/(nx nb) - ip x̄/(nx nb³))
            for ((o, a), b) in out.iter_mut().zip(x).zip(xbar) {
                *o = -(a / (nx * nb) - ip * b / (nx * nb * nb * nb));
            }
            Ok(1.0 - ip / (nx * nb))
        }
        DistanceKind::Mahalanobis => {
            let c = spec.cov(x.len())?;
            // u = x̄ - x; d = sqrt(uᵀ C⁻¹ u + eps); ∂d/∂x̄ = C⁻¹u / d
            let u: Vec<f64> = xbar.iter().zip(x).map(|(b, a)| b - a).collect();
            let ciu = c.apply_inverse(&u);
            let d = (dot(&u, &ciu).max(0.0) + eps).sqrt();
            if d == 0.0 {
                return Err(Error::SingularGradient);
            }
            for (o, v) in out.iter_mut().zip(&ciu) {
                *o = v / d;
            }
            Ok(d)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exact(kind: DistanceKind) -> DistanceSpec {
        DistanceSpec::new(kind).with_smooth_eps(0.0)
    }

    fn random_cov(n: usize, rng: &mut ChaCha8Rng) -> Arc<CovarianceContext> {
        let rows: Vec<Vec<f64>> = (0..5 * n)
            .map(|_| {
                let z: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
                // correlate neighbouring features
                (0..n).map(|i| z[i] + 0.5 * z[(i + 1) % n]).collect()
            })
            .collect();
        Arc::new(CovarianceContext::from_rows(&rows, 1e-6).unwrap())
    }

    #[test]
    fn names_round_trip() {
        for k in DistanceKind::ALL {
            assert_eq!(k.as_str().parse::<DistanceKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.as_str()));
        }
        assert!("l2".parse::<DistanceKind>().is_err());
    }

    #[test]
    fn identical_points_are_at_zero() {
        let x = [0.2, 0.7, 0.1];
        let ident = Arc::new(CovarianceContext::identity(3));
        assert_eq!(dist(&exact(DistanceKind::Euclidean), &x, &x).unwrap(), 0.0);
        assert_eq!(dist(&exact(DistanceKind::Manhattan), &x, &x).unwrap(), 0.0);
        assert_eq!(dist(&DistanceSpec::mahalanobis(ident).with_smooth_eps(0.0), &x, &x).unwrap(), 0.0);
        assert!(dist(&exact(DistanceKind::Cosine), &x, &x).unwrap().abs() < 1e-15);
    }

    #[test]
    fn orthogonal_unit_vectors() {
        let x = [1.0, 0.0];
        let y = [0.0, 1.0];
        assert_eq!(dist(&exact(DistanceKind::Euclidean), &x, &y).unwrap(), 2f64.sqrt());
        assert_eq!(dist(&exact(DistanceKind::Manhattan), &x, &y).unwrap(), 2.0);
        assert_eq!(dist(&exact(DistanceKind::Cosine), &x, &y).unwrap(), 1.0);
    }

    #[test]
    fn mahalanobis_identity_equals_euclidean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ident = Arc::new(CovarianceContext::identity(4));
        let m = DistanceSpec::mahalanobis(ident).with_smooth_eps(0.0);
        let e = exact(DistanceKind::Euclidean);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen()).collect();
            let y: Vec<f64> = (0..4).map(|_| rng.gen()).collect();
            assert!((dist(&m, &x, &y).unwrap() - dist(&e, &x, &y).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(dist(&exact(DistanceKind::Cosine), &[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm)));
        assert!(matches!(
            dist(&exact(DistanceKind::Mahalanobis), &[0.0], &[1.0]),
            Err(Error::MissingCovariance)
        ));
        assert!(matches!(exact(DistanceKind::Mahalanobis).validate(), Err(Error::MissingCovariance)));
        assert!(matches!(
            dist(&exact(DistanceKind::Euclidean), &[0.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        let x = [0.3, 0.4];
        assert!(matches!(
            dist_gradient(&exact(DistanceKind::Euclidean), &x, &x),
            Err(Error::SingularGradient)
        ));
        let ident = Arc::new(CovarianceContext::identity(2));
        assert!(matches!(
            dist_gradient(&DistanceSpec::mahalanobis(ident).with_smooth_eps(0.0), &x, &x),
            Err(Error::SingularGradient)
        ));
        assert!(DistanceSpec::new(DistanceKind::Euclidean).with_smooth_eps(-1.0).validate().is_err());
    }

    #[test]
    fn axis_gradient_of_euclidean() {
        let x = [0.3, 0.5, 0.9];
        let h = 1e-3;
        let xbar = [0.3 + h, 0.5, 0.9];
        let g = dist_gradient(&DistanceSpec::new(DistanceKind::Euclidean).with_smooth_eps(1e-12), &x, &xbar).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-5);
        assert_eq!(g[1], 0.0);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn manhattan_gradient_zero_at_kink() {
        let x = [0.3, 0.5];
        let xbar = [0.3, 0.9];
        let g = dist_gradient(&DistanceSpec::new(DistanceKind::Manhattan).with_smooth_eps(1e-8), &x, &xbar).unwrap();
        assert_eq!(g[0], 0.0);
        let g = dist_gradient(&exact(DistanceKind::Manhattan), &x, &xbar).unwrap();
        assert_eq!(g, vec![0.0, 1.0]);
    }

    #[test]
    fn smoothing_floor() {
        let x = [0.1, 0.2];
        let s = DistanceSpec::new(DistanceKind::Euclidean).with_smooth_eps(1e-10);
        assert!((dist(&s, &x, &x).unwrap() - 1e-5).abs() < 1e-18);
        assert_eq!(s.exact().smooth_eps, 0.0);
    }

    fn fd_gradient(spec: &DistanceSpec, x: &[f64], xbar: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..xbar.len())
            .map(|i| {
                let mut p = xbar.to_vec();
                let mut m = xbar.to_vec();
                p[i] += h;
                m[i] -= h;
                (dist(spec, x, &p).unwrap() - dist(spec, x, &m).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..50 {
            let n = 2 + trial % 4;
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            // keep every coordinate clear of the Manhattan kink
            let xbar: Vec<f64> = x
                .iter()
                .map(|v| v + rng.gen_range(0.05..0.3) * if rng.gen() { 1.0 } else { -1.0 })
                .collect();
            let mut specs: Vec<DistanceSpec> = [DistanceKind::Euclidean, DistanceKind::Cosine, DistanceKind::Manhattan]
                .into_iter()
                .map(DistanceSpec::new)
                .collect();
            specs.push(DistanceSpec::mahalanobis(random_cov(n, &mut rng)));
            for spec in specs {
                let a = dist_gradient(&spec, &x, &xbar).unwrap();
                let f = fd_gradient(&spec, &x, &xbar);
                let scale = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let err = a.iter().zip(&f).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
                assert!(err / scale < 1e-5, "{:?}: {a:?} vs {f:?}", spec.kind);
            }
        }
    }

    fn vecs(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            proptest::collection::vec(0.01..1.0f64, n),
            proptest::collection::vec(0.01..1.0f64, n),
        )
    }

    proptest! {
        #[test]
        fn nonnegative_and_symmetric((x, y) in vecs(4), eps in prop_oneof![Just(0.0), Just(1e-10), Just(1e-6)], seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut specs: Vec<DistanceSpec> = [DistanceKind::Euclidean, DistanceKind::Cosine, DistanceKind::Manhattan]
                .into_iter()
                .map(|k| DistanceSpec::new(k).with_smooth_eps(eps))
                .collect();
            specs.push(DistanceSpec::mahalanobis(random_cov(4, &mut rng)).with_smooth_eps(eps));
            for s in &specs {
                let a = dist(s, &x, &y).unwrap();
                let b = dist(s, &y, &x).unwrap();
                prop_assert!(a >= 0.0);
                prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
                let floor = dist(s, &x, &x).unwrap();
                if s.kind != DistanceKind::Cosine {
                    let terms = if s.kind == DistanceKind::Manhattan { 4.0 } else { 1.0 };
                    prop_assert!((floor - terms * eps.sqrt()).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn cosine_scale_invariant((x, y) in vecs(5), c in 0.01..100.0f64) {
            let s = exact(DistanceKind::Cosine);
            let scaled: Vec<f64> = y.iter().map(|v| c * v).collect();
            prop_assert!((dist(&s, &x, &y).unwrap() - dist(&s, &x, &scaled).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn mahalanobis_identity_is_exactly_euclidean((x, y) in vecs(3), eps in 0.0..1e-6f64) {
            let m = DistanceSpec::mahalanobis(Arc::new(CovarianceContext::identity(3))).with_smooth_eps(eps);
            let e = DistanceSpec::new(DistanceKind::Euclidean).with_smooth_eps(eps);
            prop_assert_eq!(dist(&m, &x, &y).unwrap(), dist(&e, &x, &y).unwrap());
        }
    }
}
