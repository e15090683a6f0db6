//! On-disk formats for counterfactual sets and evaluation reports.
//!
//! A counterfactual file is a JSON array of records, one per instance, each
//! carrying the configuration fingerprint that produced it. Reports are a
//! JSON document plus a flat CSV table with one row per report.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::Scaling;
use crate::distance::{dist, DistanceKind, DistanceSpec};
use crate::error::{Error, Result};
use crate::evalstats::EvalReport;
use crate::focus::{CfResult, FocusConfig};
use crate::ftweak::FtConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Focus,
    FeatureTweaking,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Focus => "focus",
            Method::FeatureTweaking => "feature-tweaking",
        }
    }
}

/// Settings that produced a counterfactual set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub method: Method,
    pub sigma: Option<f64>,
    pub tau: Option<f64>,
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    pub iterations: Option<usize>,
    pub epsilon: Option<f64>,
    pub distance: DistanceKind,
    pub smooth_eps: f64,
    pub clamp_to_unit_box: bool,
    pub seed: u64,
    pub manifest_digest: Option<String>,
}

impl Fingerprint {
    pub fn focus(cfg: &FocusConfig) -> Self {
        Fingerprint {
            method: Method::Focus,
            sigma: Some(cfg.soft.sigma),
            tau: Some(cfg.soft.tau),
            beta: Some(cfg.beta),
            alpha: Some(cfg.alpha),
            iterations: Some(cfg.iterations),
            epsilon: None,
            distance: cfg.distance.kind,
            smooth_eps: cfg.distance.smooth_eps,
            clamp_to_unit_box: cfg.clamp_to_unit_box,
            seed: cfg.seed,
            manifest_digest: None,
        }
    }

    pub fn feature_tweaking(cfg: &FtConfig, seed: u64) -> Self {
        Fingerprint {
            method: Method::FeatureTweaking,
            sigma: None,
            tau: None,
            beta: None,
            alpha: None,
            iterations: None,
            epsilon: Some(cfg.epsilon),
            distance: cfg.distance.kind,
            smooth_eps: cfg.distance.smooth_eps,
            clamp_to_unit_box: false,
            seed,
            manifest_digest: None,
        }
    }

    pub fn with_digest(mut self, digest: impl Into<String>) -> Self {
        self.manifest_digest = Some(digest.into());
        self
    }
}

/// One instance in a counterfactual file. Vectors are in scaled units;
/// `delta_original_units` is present when the model carries scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfRecord {
    pub instance_index: usize,
    pub original: Vec<f64>,
    pub counterfactual: Option<Vec<f64>>,
    pub original_label: usize,
    pub cf_label: Option<usize>,
    pub distance: Option<f64>,
    pub found_at_iteration: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_original_units: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub fingerprint: Fingerprint,
}

impl CfRecord {
    /// Record for a finished search. The distance is recomputed exactly
    /// from the vectors under `spec`.
    pub fn from_result(r: &CfResult, spec: &DistanceSpec, scaling: Option<&Scaling>, fp: &Fingerprint) -> Result<Self> {
        let distance = match &r.counterfactual {
            Some(cf) => Some(dist(&spec.exact(), &r.original, cf)?),
            None => None,
        };
        let delta = r.delta(scaling);
        Ok(CfRecord {
            instance_index: r.instance_index,
            original: r.original.clone(),
            counterfactual: r.counterfactual.clone(),
            original_label: r.original_label,
            cf_label: r.cf_label,
            distance,
            found_at_iteration: r.found_at_iteration,
            delta: delta.as_ref().map(|d| d.scaled.clone()),
            delta_original_units: delta.and_then(|d| d.original_units),
            error: None,
            fingerprint: fp.clone(),
        })
    }

    /// Record for an instance whose search failed.
    pub fn failed(instance_index: usize, original: &[f64], original_label: usize, err: &Error, fp: &Fingerprint) -> Self {
        CfRecord {
            instance_index,
            original: original.to_vec(),
            counterfactual: None,
            original_label,
            cf_label: None,
            distance: None,
            found_at_iteration: None,
            delta: None,
            delta_original_units: None,
            error: Some(err.to_string()),
            fingerprint: fp.clone(),
        }
    }

    pub fn to_result(&self) -> CfResult {
        CfResult {
            instance_index: self.instance_index,
            original: self.original.clone(),
            counterfactual: self.counterfactual.clone(),
            original_label: self.original_label,
            cf_label: self.cf_label,
            distance: self.distance,
            found_at_iteration: self.found_at_iteration,
            trace: None,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, mut text: String) -> Result<()> {
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn cf_records_to_string(records: &[CfRecord]) -> Result<String> {
    Ok(serde_json::to_string_pretty(records)?)
}

pub fn write_cf_file(path: impl AsRef<Path>, records: &[CfRecord]) -> Result<()> {
    write_text(path.as_ref(), cf_records_to_string(records)?)
}

pub fn read_cf_file(path: impl AsRef<Path>) -> Result<Vec<CfRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidModel(format!("{}: not a counterfactual file: {e}", path.display())))
}

/// The fingerprint shared by every record, or an error if they differ.
pub fn common_fingerprint(records: &[CfRecord]) -> Result<Option<Fingerprint>> {
    let Some(first) = records.first() else { return Ok(None) };
    if records.iter().any(|r| r.fingerprint != first.fingerprint) {
        return Err(Error::InvalidModel("records carry different fingerprints".into()));
    }
    Ok(Some(first.fingerprint.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub manifest_digest: Option<String>,
    pub reports: Vec<EvalReport>,
}

pub fn write_report_json(path: impl AsRef<Path>, report: &ReportFile) -> Result<()> {
    write_text(path.as_ref(), serde_json::to_string_pretty(report)?)
}

pub const CSV_HEADER: [&str; 17] = [
    "dataset",
    "model",
    "distance",
    "method",
    "baseline",
    "n_instances",
    "n_found",
    "coverage",
    "baseline_coverage",
    "d_mean",
    "baseline_d_mean",
    "n_compared",
    "d_rmean",
    "pct_closer",
    "test",
    "p_value",
    "manifest_digest",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Flat table, one row per report.
pub fn report_csv_string(report: &ReportFile) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Csv {
        path: "<report>".into(),
        message: e.to_string(),
    };
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in &report.reports {
        let method = r.method.as_ref().map(|f| f.method.as_str());
        let baseline = r.baseline.as_ref().map(|f| f.method.as_str());
        let test = r.test.map(|t| match t {
            crate::evalstats::TestKind::Welch => "welch",
            crate::evalstats::TestKind::Paired => "paired",
        });
        let row = [
            r.dataset.clone().unwrap_or_default(),
            r.model.clone().unwrap_or_default(),
            r.distance.as_str().to_string(),
            opt(method),
            opt(baseline),
            r.n_instances.to_string(),
            r.n_found.to_string(),
            r.coverage.to_string(),
            opt(r.baseline_coverage),
            opt(r.d_mean),
            opt(r.baseline_d_mean),
            opt(r.n_compared),
            opt(r.d_rmean),
            opt(r.pct_closer),
            opt(test),
            opt(r.p_value),
            report.manifest_digest.clone().unwrap_or_default(),
        ];
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv {
        path: "<report>".into(),
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_report_csv(path: impl AsRef<Path>, report: &ReportFile) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, report_csv_string(report)?).map_err(|e| io_err(path, e))
}
