//! Evaluation metrics for counterfactual sets and two-tailed t-tests.
//!
//! All distances are recomputed from the stored vectors with the exact
//! (unsmoothed) distance; cached values in results are never trusted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cffile::Fingerprint;
use crate::distance::{dist, DistanceKind, DistanceSpec};
use crate::ensemble::TreeEnsemble;
use crate::error::{Error, Result};
use crate::focus::CfResult;

/// Variance floor applied to each sample in the t-tests.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanDistance {
    pub mean: f64,
    /// Number of results that had a counterfactual.
    pub n_found: usize,
}

fn exact_distance(spec: &DistanceSpec, r: &CfResult) -> Result<Option<f64>> {
    match &r.counterfactual {
        Some(cf) => Ok(Some(dist(&spec.exact(), &r.original, cf)?)),
        None => Ok(None),
    }
}

/// Mean exact distance over the results that found a counterfactual.
pub fn d_mean(results: &[CfResult], spec: &DistanceSpec) -> Result<MeanDistance> {
    let mut sum = 0.0;
    let mut n = 0;
    for r in results {
        if let Some(d) = exact_distance(spec, r)? {
            sum += d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyInput("no result has a counterfactual"));
    }
    Ok(MeanDistance {
        mean: sum / n as f64,
        n_found: n,
    })
}

/// Exact distances for instances where both methods found a counterfactual,
/// matched by `instance_index`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedDistance {
    pub instance_index: usize,
    pub ours: f64,
    pub baseline: f64,
}

fn index_results(results: &[CfResult]) -> Result<BTreeMap<usize, &CfResult>> {
    let mut map = BTreeMap::new();
    for r in results {
        if map.insert(r.instance_index, r).is_some() {
            return Err(Error::MismatchedInstance { index: r.instance_index });
        }
    }
    Ok(map)
}

pub fn overlap(ours: &[CfResult], baseline: &[CfResult], spec: &DistanceSpec) -> Result<Vec<PairedDistance>> {
    let a = index_results(ours)?;
    let b = index_results(baseline)?;
    let mut out = Vec::new();
    for (idx, ra) in &a {
        let Some(rb) = b.get(idx) else { continue };
        if ra.original != rb.original {
            return Err(Error::MismatchedInstance { index: *idx });
        }
        if let (Some(da), Some(db)) = (exact_distance(spec, ra)?, exact_distance(spec, rb)?) {
            out.push(PairedDistance {
                instance_index: *idx,
                ours: da,
                baseline: db,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyOverlap);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeMean {
    pub mean: f64,
    /// Pairs that entered the mean.
    pub n_used: usize,
    /// Pairs dropped because the baseline distance was zero.
    pub n_zero_baseline: usize,
}

/// Mean over the overlap of per-instance ratios `d_ours / d_baseline`.
pub fn d_rmean(ours: &[CfResult], baseline: &[CfResult], spec: &DistanceSpec) -> Result<RelativeMean> {
    d_rmean_pairs(&overlap(ours, baseline, spec)?)
}

pub fn d_rmean_pairs(pairs: &[PairedDistance]) -> Result<RelativeMean> {
    let mut sum = 0.0;
    let mut n = 0;
    let mut zeros = 0;
    for p in pairs {
        if p.baseline == 0.0 {
            zeros += 1;
            continue;
        }
        sum += p.ours / p.baseline;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyOverlap);
    }
    Ok(RelativeMean {
        mean: sum / n as f64,
        n_used: n,
        n_zero_baseline: zeros,
    })
}

/// Fraction of the overlap where ours is strictly closer.
pub fn pct_closer(ours: &[CfResult], baseline: &[CfResult], spec: &DistanceSpec) -> Result<f64> {
    pct_closer_pairs(&overlap(ours, baseline, spec)?)
}

pub fn pct_closer_pairs(pairs: &[PairedDistance]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyOverlap);
    }
    let closer = pairs.iter().filter(|p| p.ours < p.baseline).count();
    Ok(closer as f64 / pairs.len() as f64)
}

/// Fraction of results with a valid counterfactual. With a model, validity
/// is re-checked: the counterfactual's hard label must differ from the
/// original's.
pub fn coverage(results: &[CfResult], ens: Option<&TreeEnsemble>) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let valid = results
        .iter()
        .filter(|r| match (&r.counterfactual, ens) {
            (None, _) => false,
            (Some(_), None) => true,
            (Some(cf), Some(e)) => {
                e.check_dim(cf).is_ok()
                    && e.check_dim(&r.original).is_ok()
                    && e.predict_label(cf) != e.predict_label(&r.original)
            }
        })
        .count();
    valid as f64 / results.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    #[default]
    Welch,
    Paired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch's unequal-variance two-tailed t-test.
pub fn t_test_two_tailed(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::EmptyInput("t-test needs at least 2 values per sample"));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    if va == 0.0 && vb == 0.0 && ma == mb {
        return Ok(TTest {
            t: 0.0,
            df: (a.len() + b.len() - 2) as f64,
            p_value: 1.0,
        });
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let sa = va.max(VARIANCE_FLOOR) / na;
    let sb = vb.max(VARIANCE_FLOOR) / nb;
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(TTest {
        t,
        df,
        p_value: student_t_two_tailed(t, df),
    })
}

/// Paired two-tailed t-test on `a[i] - b[i]`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::EmptyInput("paired t-test needs at least 2 pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (m, v) = mean_var(&d);
    let df = (d.len() - 1) as f64;
    if v == 0.0 && m == 0.0 {
        return Ok(TTest { t: 0.0, df, p_value: 1.0 });
    }
    let t = m / (v.max(VARIANCE_FLOOR) / d.len() as f64).sqrt();
    Ok(TTest {
        t,
        df,
        p_value: student_t_two_tailed(t, df),
    })
}

pub fn t_test(kind: TestKind, a: &[f64], b: &[f64]) -> Result<TTest> {
    match kind {
        TestKind::Welch => t_test_two_tailed(a, b),
        TestKind::Paired => paired_t_test(a, b),
    }
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_tailed(t: f64, df: f64) -> f64 {
    if t.is_nan() || df.is_nan() {
        return f64::NAN;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(0.5 * df, 0.5, x)
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).abs().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)` for `a, b > 0`, `x` in `[0, 1]`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// One row of an evaluation: a method, optionally compared to a baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: Option<String>,
    pub model: Option<String>,
    pub distance: DistanceKind,
    pub method: Option<Fingerprint>,
    pub baseline: Option<Fingerprint>,
    pub n_instances: usize,
    pub n_found: usize,
    /// Mean over all found counterfactuals (absent when none were found).
    pub d_mean: Option<f64>,
    pub coverage: f64,
    pub baseline_n_found: Option<usize>,
    pub baseline_d_mean: Option<f64>,
    pub baseline_coverage: Option<f64>,
    /// Instances where both methods found a counterfactual.
    pub n_compared: Option<usize>,
    /// Both means restricted to the overlap.
    pub d_mean_overlap: Option<f64>,
    pub baseline_d_mean_overlap: Option<f64>,
    pub d_rmean: Option<f64>,
    pub n_zero_baseline: Option<usize>,
    pub pct_closer: Option<f64>,
    pub test: Option<TestKind>,
    pub t_statistic: Option<f64>,
    pub p_value: Option<f64>,
}

/// Build a report for `ours`, comparing with `baseline` when given.
pub fn evaluate(
    ours: &[CfResult],
    baseline: Option<&[CfResult]>,
    spec: &DistanceSpec,
    ens: Option<&TreeEnsemble>,
    test: TestKind,
) -> Result<EvalReport> {
    let found = |rs: &[CfResult]| -> Result<(usize, Option<f64>)> {
        match d_mean(rs, spec) {
            Ok(m) => Ok((m.n_found, Some(m.mean))),
            Err(Error::EmptyInput(_)) => Ok((0, None)),
            Err(e) => Err(e),
        }
    };
    let (n_found, mean) = found(ours)?;
    let mut report = EvalReport {
        dataset: None,
        model: None,
        distance: spec.kind,
        method: None,
        baseline: None,
        n_instances: ours.len(),
        n_found,
        d_mean: mean,
        coverage: coverage(ours, ens),
        baseline_n_found: None,
        baseline_d_mean: None,
        baseline_coverage: None,
        n_compared: None,
        d_mean_overlap: None,
        baseline_d_mean_overlap: None,
        d_rmean: None,
        n_zero_baseline: None,
        pct_closer: None,
        test: None,
        t_statistic: None,
        p_value: None,
    };
    if let Some(base) = baseline {
        let (bn, bm) = found(base)?;
        report.baseline_n_found = Some(bn);
        report.baseline_d_mean = bm;
        report.baseline_coverage = Some(coverage(base, ens));
        let pairs = overlap(ours, base, spec)?;
        let n = pairs.len() as f64;
        report.n_compared = Some(pairs.len());
        report.d_mean_overlap = Some(pairs.iter().map(|p| p.ours).sum::<f64>() / n);
        report.baseline_d_mean_overlap = Some(pairs.iter().map(|p| p.baseline).sum::<f64>() / n);
        match d_rmean_pairs(&pairs) {
            Ok(r) => {
                report.d_rmean = Some(r.mean);
                report.n_zero_baseline = Some(r.n_zero_baseline);
            }
            Err(Error::EmptyOverlap) => report.n_zero_baseline = Some(pairs.len()),
            Err(e) => return Err(e),
        }
        report.pct_closer = Some(pct_closer_pairs(&pairs)?);
        if pairs.len() >= 2 {
            let a: Vec<f64> = pairs.iter().map(|p| p.ours).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.baseline).collect();
            let tt = t_test(test, &a, &b)?;
            report.test = Some(test);
            report.t_statistic = Some(tt.t);
            report.p_value = Some(tt.p_value);
        }
    }
    Ok(report)
}
