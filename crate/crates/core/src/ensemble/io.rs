//! JSON model files.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "kind": "random-forest",
//!   "n_features": 2,
//!   "n_classes": 2,
//!   "feature_names": ["a", "b"],
//!   "scaling": {"min": [0.0, 0.0], "max": [1.0, 1.0]},
//!   "weights": [0.5, 0.5],
//!   "trees": [{"nodes": [{"feature": 0, "threshold": 0.5, "left": 1, "right": 2},
//!                        {"distribution": [0.0, 1.0]},
//!                        {"distribution": [1.0, 0.0]}]}, ...]
//! }
//! ```
//!
//! Node 0 of each tree is its root. `scaling` may be `null`. Numbers are
//! written in shortest round-trip form, so save/load is bit-exact.
//!
//! Importing from other libraries: here `left` is the child taken when
//! `x[feature] > threshold`. Libraries that send `x <= threshold` to the left
//! child (scikit-learn, XGBoost, LightGBM) must swap `left` and `right` on
//! export. Thresholds must be expressed in the same scaled units as the
//! inputs the model will see.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DecisionTree, ModelKind, Node, TreeEnsemble};
use crate::dataio::Scaling;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub nodes: Vec<NodeRecord>,
}

/// On-disk representation of a [`TreeEnsemble`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub kind: ModelKind,
    pub n_features: usize,
    pub n_classes: usize,
    pub feature_names: Vec<String>,
    pub scaling: Option<Scaling>,
    pub weights: Vec<f64>,
    pub trees: Vec<TreeRecord>,
    /// Digest of the run manifest that produced this model, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_digest: Option<String>,
}

fn node_record(node: &Node) -> NodeRecord {
    match node {
        Node::Split {
            feature,
            threshold,
            left,
            right,
        } => NodeRecord {
            feature: Some(*feature),
            threshold: Some(*threshold),
            left: Some(*left),
            right: Some(*right),
            distribution: None,
        },
        Node::Leaf { distribution } => NodeRecord {
            feature: None,
            threshold: None,
            left: None,
            right: None,
            distribution: Some(distribution.clone()),
        },
    }
}

fn node_from_record(tree: usize, i: usize, r: NodeRecord) -> Result<Node> {
    match r {
        NodeRecord {
            feature: Some(feature),
            threshold: Some(threshold),
            left: Some(left),
            right: Some(right),
            distribution: None,
        } => Ok(Node::Split {
            feature,
            threshold,
            left,
            right,
        }),
        NodeRecord {
            feature: None,
            threshold: None,
            left: None,
            right: None,
            distribution: Some(distribution),
        } => Ok(Node::Leaf { distribution }),
        _ => Err(Error::InvalidModel(format!(
            "tree {tree} node {i}: expected either feature/threshold/left/right or distribution"
        ))),
    }
}

impl ModelFile {
    pub fn from_ensemble(ens: &TreeEnsemble) -> Self {
        ModelFile {
            format_version: FORMAT_VERSION,
            kind: ens.kind(),
            n_features: ens.n_features(),
            n_classes: ens.n_classes(),
            feature_names: ens.feature_names.clone(),
            scaling: ens.scaling.clone(),
            weights: ens.weights().to_vec(),
            trees: ens
                .trees()
                .iter()
                .map(|t| TreeRecord {
                    nodes: t.nodes().iter().map(node_record).collect(),
                })
                .collect(),
            manifest_digest: None,
        }
    }

    /// Parse a model document, checking the version before the schema.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(s)?;
        let version = value
            .get("format_version")
            .ok_or_else(|| Error::InvalidModel("missing format_version".into()))?;
        let found = version
            .as_u64()
            .ok_or_else(|| Error::InvalidModel("format_version must be a non-negative integer".into()))?;
        if found != u64::from(FORMAT_VERSION) {
            return Err(Error::VersionMismatch {
                found: u32::try_from(found).unwrap_or(u32::MAX),
                expected: FORMAT_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| Error::InvalidModel(e.to_string()))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    /// Validate every invariant and build the ensemble.
    pub fn into_ensemble(self) -> Result<TreeEnsemble> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let mut trees = Vec::with_capacity(self.trees.len());
        for (t, rec) in self.trees.into_iter().enumerate() {
            let nodes = rec
                .nodes
                .into_iter()
                .enumerate()
                .map(|(i, r)| node_from_record(t, i, r))
                .collect::<Result<Vec<_>>>()?;
            let tree = DecisionTree::new(nodes, self.n_features, self.n_classes)
                .map_err(|e| prefix_tree(t, e))?;
            trees.push(tree);
        }
        TreeEnsemble::new(trees, self.weights, self.kind, self.feature_names, self.scaling)
    }
}

fn prefix_tree(t: usize, e: Error) -> Error {
    match e {
        Error::InvalidModel(m) => Error::InvalidModel(format!("tree {t}: {m}")),
        other => other,
    }
}

pub fn save_model(ens: &TreeEnsemble, path: impl AsRef<Path>) -> Result<()> {
    save_model_file(&ModelFile::from_ensemble(ens), path)
}

pub fn save_model_file(file: &ModelFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, file.to_json_string()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_model_file(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let s = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ModelFile::from_json_str(&s)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TreeEnsemble> {
    read_model_file(path)?.into_ensemble()
}
