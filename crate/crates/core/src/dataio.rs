//! Tabular data ingestion, min-max scaling, the seeded 70/30 split and the
//! training-set covariance used by the Mahalanobis distance.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default ridge added to the covariance diagonal before inversion.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Fraction of rows assigned to the training split.
pub const TRAIN_FRACTION: f64 = 0.7;

/// Which CSV column holds the label.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

impl From<&str> for ColumnRef {
    fn from(s: &str) -> Self {
        ColumnRef::Name(s.to_string())
    }
}

impl From<usize> for ColumnRef {
    fn from(i: usize) -> Self {
        ColumnRef::Index(i)
    }
}

/// How raw label strings become class indices.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LabelRule {
    /// Every distinct value is a class. Values sort numerically when they all
    /// parse as numbers, lexicographically otherwise.
    #[default]
    Categorical,
    /// Binary task: class 1 iff the numeric label is `>= threshold`.
    AtLeast(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSpec {
    pub column: ColumnRef,
    pub rule: LabelRule,
}

impl LabelSpec {
    pub fn categorical(column: impl Into<ColumnRef>) -> Self {
        LabelSpec {
            column: column.into(),
            rule: LabelRule::Categorical,
        }
    }

    pub fn at_least(column: impl Into<ColumnRef>, threshold: f64) -> Self {
        LabelSpec {
            column: column.into(),
            rule: LabelRule::AtLeast(threshold),
        }
    }
}

/// Per-feature affine map `scaled = (v - min) / (max - min)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaling {
    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    pub fn scale(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
            .collect()
    }

    pub fn unscale(&self, scaled: &[f64]) -> Vec<f64> {
        scaled
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(v, (lo, hi))| lo + v * (hi - lo))
            .collect()
    }

    /// Convert a scaled-unit difference vector to original units.
    pub fn unscale_delta(&self, delta: &[f64]) -> Vec<f64> {
        delta
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(d, (lo, hi))| d * (hi - lo))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    /// `n_rows x n_features`.
    pub rows: Vec<Vec<f64>>,
    /// 0-based class per row.
    pub labels: Vec<usize>,
    /// Raw label value for each class index.
    pub class_names: Vec<String>,
    /// Present once `minmax_scale` has been applied.
    pub scaling: Option<Scaling>,
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows `indices` of this dataset, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            scaling: self.scaling.clone(),
            warnings: self.warnings.clone(),
        }
    }

    /// Rows converted back to original units (identity when unscaled).
    pub fn unscaled_rows(&self) -> Vec<Vec<f64>> {
        match &self.scaling {
            Some(s) => self.rows.iter().map(|r| s.unscale(r)).collect(),
            None => self.rows.clone(),
        }
    }
}

/// A parsed CSV: header plus string cells.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub records: Vec<Vec<String>>,
}

impl Table {
    pub fn column_index(&self, column: &ColumnRef) -> Option<usize> {
        match column {
            ColumnRef::Name(name) => self.headers.iter().position(|h| h == name),
            ColumnRef::Index(i) => (*i < self.headers.len()).then_some(*i),
        }
    }
}

pub fn read_table(path: impl AsRef<Path>) -> Result<Table> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let headers: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != headers.len() {
            return Err(Error::RaggedRow {
                // header is line 1
                line: i + 2,
                expected: headers.len(),
                got: rec.len(),
            });
        }
        records.push(rec.iter().map(str::to_string).collect());
    }
    Ok(Table { headers, records })
}

fn parse_number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Load an unscaled dataset. Non-numeric feature columns are dropped.
pub fn load_csv(path: impl AsRef<Path>, label: &LabelSpec) -> Result<Dataset> {
    let table = read_table(path)?;
    dataset_from_table(&table, label)
}

pub fn dataset_from_table(table: &Table, label: &LabelSpec) -> Result<Dataset> {
    let label_col = table.column_index(&label.column).ok_or_else(|| {
        Error::MissingLabelColumn(match &label.column {
            ColumnRef::Name(n) => n.clone(),
            ColumnRef::Index(i) => format!("#{i}"),
        })
    })?;
    if table.records.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let raw_labels: Vec<&str> = table.records.iter().map(|r| r[label_col].as_str()).collect();
    let (labels, class_names) = encode_labels(&raw_labels, label.rule)?;

    let mut warnings = Vec::new();
    let mut feature_cols = Vec::new();
    for (c, name) in table.headers.iter().enumerate() {
        if c == label_col {
            continue;
        }
        if table.records.iter().all(|r| parse_number(&r[c]).is_some()) {
            feature_cols.push(c);
        } else {
            warnings.push(format!("dropped non-numeric column `{name}`"));
        }
    }
    if feature_cols.is_empty() {
        return Err(Error::NoNumericFeatures);
    }
    let rows = table
        .records
        .iter()
        .map(|r| {
            feature_cols
                .iter()
                .map(|&c| parse_number(&r[c]).expect("checked numeric"))
                .collect()
        })
        .collect();

    Ok(Dataset {
        feature_names: feature_cols.iter().map(|&c| table.headers[c].clone()).collect(),
        rows,
        labels,
        class_names,
        scaling: None,
        warnings,
    })
}

fn encode_labels(raw: &[&str], rule: LabelRule) -> Result<(Vec<usize>, Vec<String>)> {
    match rule {
        LabelRule::AtLeast(threshold) => {
            let mut labels = Vec::with_capacity(raw.len());
            for s in raw {
                let v = parse_number(s).ok_or_else(|| {
                    Error::InvalidConfig(format!("label value `{s}` is not numeric"))
                })?;
                labels.push(usize::from(v >= threshold));
            }
            if labels.iter().collect::<BTreeSet<_>>().len() < 2 {
                return Err(Error::TooFewClasses);
            }
            Ok((
                labels,
                vec![format!("<{threshold}"), format!(">={threshold}")],
            ))
        }
        LabelRule::Categorical => {
            let distinct: BTreeSet<&str> = raw.iter().copied().collect();
            if distinct.len() < 2 {
                return Err(Error::TooFewClasses);
            }
            let mut names: Vec<&str> = distinct.into_iter().collect();
            if names.iter().all(|s| parse_number(s).is_some()) {
                names.sort_by(|a, b| parse_number(a).unwrap().total_cmp(&parse_number(b).unwrap()));
            }
            let labels = raw
                .iter()
                .map(|s| names.iter().position(|n| n == s).expect("label in set"))
                .collect();
            Ok((labels, names.into_iter().map(str::to_string).collect()))
        }
    }
}

/// Map every feature to [0,1]; constant columns are removed with a warning.
pub fn minmax_scale(ds: &Dataset) -> Dataset {
    let n_features = ds.n_features();
    let mut lo = vec![f64::INFINITY; n_features];
    let mut hi = vec![f64::NEG_INFINITY; n_features];
    for row in &ds.rows {
        for (j, &v) in row.iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let mut warnings = ds.warnings.clone();
    let mut keep = Vec::new();
    for j in 0..n_features {
        if hi[j] > lo[j] {
            keep.push(j);
        } else {
            warnings.push(format!("dropped constant column `{}`", ds.feature_names[j]));
        }
    }

    let rows = ds
        .rows
        .iter()
        .map(|row| {
            keep.iter()
                .map(|&j| ((row[j] - lo[j]) / (hi[j] - lo[j])).clamp(0.0, 1.0))
                .collect()
        })
        .collect();

    // Compose with an earlier scaling so metadata always maps back to original units.
    let (min, max) = match &ds.scaling {
        None => (
            keep.iter().map(|&j| lo[j]).collect(),
            keep.iter().map(|&j| hi[j]).collect(),
        ),
        Some(prev) => keep
            .iter()
            .map(|&j| {
                let range = prev.max[j] - prev.min[j];
                (prev.min[j] + lo[j] * range, prev.min[j] + hi[j] * range)
            })
            .unzip(),
    };

    Dataset {
        feature_names: keep.iter().map(|&j| ds.feature_names[j].clone()).collect(),
        rows,
        labels: ds.labels.clone(),
        class_names: ds.class_names.clone(),
        scaling: Some(Scaling { min, max }),
        warnings,
    }
}

/// Minimum row count accepted by [`split_70_30`].
pub const MIN_SPLIT_ROWS: usize = 10;

/// Seeded shuffled split into 70% train / 30% test.
///
/// Unstratified: `floor(0.7 n)` rows go to train. Stratified: each class
/// contributes `floor(0.7 n_c)` rows. Both parts keep the original row order.
pub fn split_70_30(ds: &Dataset, seed: u64, stratify: bool) -> Result<(Dataset, Dataset)> {
    let (train_idx, test_idx) = split_indices(ds, seed, stratify)?;
    Ok((ds.subset(&train_idx), ds.subset(&test_idx)))
}

pub fn split_indices(ds: &Dataset, seed: u64, stratify: bool) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = ds.n_rows();
    if n < MIN_SPLIT_ROWS {
        return Err(Error::TooFewRows {
            needed: MIN_SPLIT_ROWS,
            got: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut in_train = vec![false; n];
    if stratify {
        let mut quota: Vec<usize> = (0..ds.n_classes())
            .map(|c| {
                let count = ds.labels.iter().filter(|&&l| l == c).count();
                (count as f64 * TRAIN_FRACTION).floor() as usize
            })
            .collect();
        for &i in &order {
            let c = ds.labels[i];
            if quota[c] > 0 {
                quota[c] -= 1;
                in_train[i] = true;
            }
        }
    } else {
        let n_train = (n as f64 * TRAIN_FRACTION).floor() as usize;
        for &i in &order[..n_train] {
            in_train[i] = true;
        }
    }
    let (train, test): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| in_train[i]);
    Ok((train, test))
}

/// Sample covariance of the training rows and its ridge-regularized inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceContext {
    n: usize,
    /// Row-major sample covariance (divisor n-1), without the ridge.
    matrix: Vec<f64>,
    /// Row-major inverse of `matrix + ridge * I`.
    inverse: Vec<f64>,
    ridge: f64,
}

impl CovarianceContext {
    pub fn from_rows(rows: &[Vec<f64>], ridge: f64) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::TooFewRows {
                needed: 2,
                got: rows.len(),
            });
        }
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::InvalidConfig(format!("ridge must be >= 0, got {ridge}")));
        }
        let n = rows[0].len();
        let count = rows.len() as f64;
        let mut mean = vec![0.0; n];
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);

        let mut matrix = vec![0.0; n * n];
        for row in rows {
            for i in 0..n {
                let di = row[i] - mean[i];
                for j in i..n {
                    matrix[i * n + j] += di * (row[j] - mean[j]);
                }
            }
        }
        for i in 0..n {
            for j in i..n {
                let v = matrix[i * n + j] / (count - 1.0);
                matrix[i * n + j] = v;
                matrix[j * n + i] = v;
            }
        }
        Self::from_matrix(n, matrix, ridge)
    }

    /// Build from an explicit (symmetric) covariance matrix.
    pub fn from_matrix(n: usize, matrix: Vec<f64>, ridge: f64) -> Result<Self> {
        if matrix.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: matrix.len(),
            });
        }
        let mut reg = DMatrix::from_row_slice(n, n, &matrix);
        for i in 0..n {
            reg[(i, i)] += ridge;
        }
        let inv = reg
            .try_inverse()
            .ok_or(Error::SingularCovariance { ridge })?;
        let mut inverse = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                inverse[i * n + j] = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            }
        }
        if inverse.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularCovariance { ridge });
        }
        Ok(CovarianceContext {
            n,
            matrix,
            inverse,
            ridge,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut eye = vec![0.0; n * n];
        for i in 0..n {
            eye[i * n + i] = 1.0;
        }
        CovarianceContext {
            n,
            matrix: eye.clone(),
            inverse: eye,
            ridge: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn inverse(&self) -> &[f64] {
        &self.inverse
    }

    pub fn matrix_entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n + j]
    }

    pub fn inverse_entry(&self, i: usize, j: usize) -> f64 {
        self.inverse[i * self.n + j]
    }

    /// `C^-1 u`.
    pub fn apply_inverse(&self, u: &[f64]) -> Vec<f64> {
        self.inverse
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(u).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `u^T C^-1 u`.
    pub fn quad_form(&self, u: &[f64]) -> f64 {
        self.inverse
            .chunks_exact(self.n)
            .zip(u)
            .map(|(row, ui)| ui * row.iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }
}

pub fn covariance(train: &Dataset, ridge: f64) -> Result<CovarianceContext> {
    CovarianceContext::from_rows(&train.rows, ridge)
}

/// Extract and order the named feature columns from raw rows of `table`.
pub fn feature_matrix(table: &Table, feature_names: &[String]) -> Result<Vec<Vec<f64>>> {
    let cols = feature_names
        .iter()
        .map(|name| {
            table
                .headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingFeatureColumn(name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    table
        .records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            cols.iter()
                .map(|&c| {
                    parse_number(&rec[c]).ok_or_else(|| Error::NonNumeric {
                        row: i + 1,
                        column: table.headers[c].clone(),
                    })
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn toy(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Dataset {
        let n_features = rows[0].len();
        Dataset {
            feature_names: (0..n_features).map(|i| format!("f{i}")).collect(),
            rows,
            labels,
            class_names: vec!["0".into(), "1".into()],
            scaling: None,
            warnings: vec![],
        }
    }

    #[test]
    fn textual_columns_are_dropped() {
        let f = write_csv("a,b,label\n1,x,0\n2,y,1\n3,z,0\n");
        let ds = load_csv(f.path(), &LabelSpec::categorical("label")).unwrap();
        assert_eq!(ds.feature_names, vec!["a"]);
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.labels, vec![0, 1, 0]);
        assert_eq!(ds.warnings.len(), 1);
    }

    #[test]
    fn single_label_value_is_rejected() {
        let f = write_csv("a,label\n1,0\n2,0\n");
        let err = load_csv(f.path(), &LabelSpec::categorical("label")).unwrap_err();
        assert!(matches!(err, Error::TooFewClasses));
        assert_eq!(err.to_string(), "fewer than 2 classes in label column");
    }

    #[test]
    fn ragged_and_missing_inputs() {
        let f = write_csv("a,b,label\n1,2,0\n1,0\n");
        assert!(matches!(
            load_csv(f.path(), &LabelSpec::categorical("label")),
            Err(Error::RaggedRow { line: 3, .. })
        ));
        assert!(matches!(
            load_csv("/nonexistent/file.csv", &LabelSpec::categorical("label")),
            Err(Error::Io { .. })
        ));
        let f = write_csv("a,label\n1,0\n2,1\n");
        assert!(matches!(
            load_csv(f.path(), &LabelSpec::categorical("nope")),
            Err(Error::MissingLabelColumn(_))
        ));
        let f = write_csv("a,label\nx,0\ny,1\n");
        assert!(matches!(
            load_csv(f.path(), &LabelSpec::categorical(1usize)),
            Err(Error::NoNumericFeatures)
        ));
    }

    #[test]
    fn numeric_labels_sort_numerically_and_threshold_rule() {
        let f = write_csv("a,q\n1,10\n2,9\n3,7\n4,5\n");
        let ds = load_csv(f.path(), &LabelSpec::categorical("q")).unwrap();
        assert_eq!(ds.class_names, vec!["5", "7", "9", "10"]);
        assert_eq!(ds.labels, vec![3, 2, 1, 0]);
        let ds = load_csv(f.path(), &LabelSpec::at_least("q", 7.0)).unwrap();
        assert_eq!(ds.labels, vec![1, 1, 1, 0]);
        assert_eq!(ds.n_classes(), 2);
    }

    #[test]
    fn minmax_examples() {
        let ds = toy(
            vec![vec![2.0, 0.0, 5.0], vec![4.0, 1.0, 5.0], vec![6.0, 0.0, 5.0]],
            vec![0, 1, 0],
        );
        let s = minmax_scale(&ds);
        assert_eq!(s.feature_names, vec!["f0", "f1"]);
        let col0: Vec<f64> = s.rows.iter().map(|r| r[0]).collect();
        let col1: Vec<f64> = s.rows.iter().map(|r| r[1]).collect();
        assert_eq!(col0, vec![0.0, 0.5, 1.0]);
        assert_eq!(col1, vec![0.0, 1.0, 0.0]);
        assert!(s.warnings.iter().any(|w| w.contains("constant column `f2`")));
        let scaling = s.scaling.as_ref().unwrap();
        assert_eq!(scaling.min, vec![2.0, 0.0]);
        assert_eq!(scaling.max, vec![6.0, 1.0]);
    }

    #[test]
    fn rescaling_composes_metadata() {
        let ds = toy(
            vec![vec![2.0, 10.0], vec![4.0, 30.0], vec![6.0, 20.0]],
            vec![0, 1, 0],
        );
        let once = minmax_scale(&ds);
        let twice = minmax_scale(&once);
        assert_eq!(once.rows, twice.rows);
        assert_eq!(once.scaling, twice.scaling);
    }

    #[test]
    fn split_partition_and_determinism() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let ds = toy(rows, (0..10).map(|i| i % 2).collect());
        let (tr, te) = split_indices(&ds, 3, false).unwrap();
        assert_eq!(tr.len(), 7);
        assert_eq!(te.len(), 3);
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_indices(&ds, 3, false).unwrap(), (tr, te));
    }

    #[test]
    fn split_seed_changes_assignment() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let ds = toy(rows, (0..100).map(|i| i % 2).collect());
        let (a, _) = split_indices(&ds, 1, false).unwrap();
        let (b, _) = split_indices(&ds, 2, false).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn stratified_split_keeps_class_ratio() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i < 20)).collect();
        let ds = toy(rows, labels);
        let (tr, te) = split_70_30(&ds, 5, true).unwrap();
        assert_eq!(tr.labels.iter().filter(|&&l| l == 1).count(), 14);
        assert_eq!(tr.n_rows() + te.n_rows(), 100);
    }

    #[test]
    fn split_needs_ten_rows() {
        let ds = toy((0..9).map(|i| vec![i as f64]).collect(), vec![0, 1, 0, 1, 0, 1, 0, 1, 0]);
        assert!(matches!(
            split_70_30(&ds, 0, false),
            Err(Error::TooFewRows { needed: 10, got: 9 })
        ));
    }

    #[test]
    fn covariance_of_perfectly_correlated_pair() {
        // mean (0.5,0.5); deviations -0.5, 0.5, 0 => sum of squares 0.5, / (n-1)=2 => 0.25
        let rows = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.5, 0.5]];
        let cov = CovarianceContext::from_rows(&rows, 1e-6).unwrap();
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert!((cov.matrix_entry(i, j) - 0.25).abs() < 1e-15);
        }
        // (C + rI)^-1 for C = 0.25 * ones: closed form via eigen-decomposition
        let r = 1e-6;
        let diag = 0.5 * (1.0 / (0.5 + r) + 1.0 / r);
        let off = 0.5 * (1.0 / (0.5 + r) - 1.0 / r);
        assert!((cov.inverse_entry(0, 0) - diag).abs() / diag < 1e-6);
        assert!((cov.inverse_entry(0, 1) - off).abs() / off.abs() < 1e-6);
    }

    #[test]
    fn zero_covariance_inverse_is_scaled_identity() {
        let rows = vec![vec![0.3, 0.7, 0.1]; 5];
        let ridge = 1e-3;
        let cov = CovarianceContext::from_rows(&rows, ridge).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 / ridge } else { 0.0 };
                assert!((cov.inverse_entry(i, j) - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn covariance_is_symmetric_and_inverse_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        use rand::Rng;
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| {
                let a: f64 = rng.gen();
                let b: f64 = rng.gen();
                vec![a, 0.5 * a + 0.2 * b, b, rng.gen()]
            })
            .collect();
        let cov = CovarianceContext::from_rows(&rows, DEFAULT_RIDGE).unwrap();
        let n = cov.dim();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(cov.matrix_entry(i, j), cov.matrix_entry(j, i));
                let mut prod = 0.0;
                for k in 0..n {
                    let reg = cov.matrix_entry(k, j) + if k == j { cov.ridge() } else { 0.0 };
                    prod += cov.inverse_entry(i, k) * reg;
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((prod - expect).abs() < 1e-6, "({i},{j}) -> {prod}");
            }
        }
    }

    #[test]
    fn covariance_needs_two_rows() {
        assert!(matches!(
            CovarianceContext::from_rows(&[vec![1.0]], 1e-6),
            Err(Error::TooFewRows { .. })
        ));
    }

    #[test]
    fn feature_matrix_orders_and_checks_columns() {
        let f = write_csv("b,a,label\n1,2,0\n3,4,1\n");
        let t = read_table(f.path()).unwrap();
        let m = feature_matrix(&t, &["a".to_string(), "b".to_string()]).unwrap();
        assert_eq!(m, vec![vec![2.0, 1.0], vec![4.0, 3.0]]);
        assert!(matches!(
            feature_matrix(&t, &["zzz".to_string()]),
            Err(Error::MissingFeatureColumn(_))
        ));
    }

    proptest::proptest! {
        #[test]
        fn scale_then_unscale_round_trips(
            rows in proptest::collection::vec(
                proptest::collection::vec(-1e3f64..1e3, 3), 2..30)
        ) {
            let labels = (0..rows.len()).map(|i| i % 2).collect();
            let ds = toy(rows, labels);
            let s = minmax_scale(&ds);
            let scaling = s.scaling.clone().unwrap();
            for row in &s.rows {
                for v in row {
                    proptest::prop_assert!((0.0..=1.0).contains(v));
                }
            }
            // map retained columns back to their source columns
            let kept: Vec<usize> = s.feature_names.iter()
                .map(|n| ds.feature_names.iter().position(|m| m == n).unwrap())
                .collect();
            for (scaled, orig) in s.rows.iter().zip(&ds.rows) {
                let back = scaling.unscale(scaled);
                for (b, &j) in back.iter().zip(&kept) {
                    proptest::prop_assert!((b - orig[j]).abs() <= 1e-9 * (1.0 + orig[j].abs()));
                }
            }
        }
    }
}
