//! Decision trees, random forests, evaluation and model files.

pub mod eval;
pub mod forest;
pub mod tree;

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::{FeatureSchema, FeatureTable};

pub use eval::{
    class_index, cross_validate, f_score, fold_ranges, macro_f_score, one_core_per_window, ClassScore, CvParams, CvReport,
    EvalReport, FoldInfo, FoldOrder,
};
pub use forest::{tree_seed, ForestParams, RandomForest};
pub use tree::{gini, DecisionTree, Node, TreeParams};

pub const MODEL_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum MlError {
    #[error("no samples")]
    Empty,
    #[error("zero features")]
    NoFeatures,
    #[error("feature vector has {got} values, model expects {expected}")]
    Schema { expected: usize, got: usize },
    #[error("feature names do not match the model (hash {expected} vs {got})")]
    SchemaHash { expected: String, got: String },
    #[error("{n} samples cannot fill {k} folds")]
    TooFewSamples { n: usize, k: usize },
    #[error("model is not trained")]
    Untrained,
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn rank(raw: Vec<f64>, top_k: usize) -> Vec<(usize, f64)> {
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Vec::new();
    }
    let mut r: Vec<(usize, f64)> = raw.into_iter().enumerate().filter(|(_, v)| *v > 0.0).map(|(i, v)| (i, v / total)).collect();
    r.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    r.truncate(top_k);
    r
}

/// Features ranked by normalized Gini decrease, ties by index. Features
/// that never split are left out.
pub fn feature_importance(tree: &DecisionTree, top_k: usize) -> Result<Vec<(usize, f64)>, MlError> {
    if tree.nodes.is_empty() {
        return Err(MlError::Untrained);
    }
    Ok(rank(tree.raw_importance(), top_k))
}

pub fn forest_importance(forest: &RandomForest, top_k: usize) -> Result<Vec<(usize, f64)>, MlError> {
    if forest.trees.is_empty() {
        return Err(MlError::Untrained);
    }
    Ok(rank(forest.raw_importance(), top_k))
}

pub fn schema_hash(names: &[String]) -> String {
    let mut h = Sha256::new();
    for n in names {
        h.update(n.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// A trained forest together with everything needed to turn raw telemetry
/// into its input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub format: u32,
    pub schema_hash: String,
    pub classes: Vec<String>,
    pub schema: FeatureSchema,
    pub forest: RandomForest,
}

impl Model {
    /// Trains on every row of `table`.
    pub fn train(table: &FeatureTable, params: &ForestParams, exclude_ambiguous: bool) -> Result<Model, MlError> {
        let classes = table.classes();
        let rows: Vec<_> = table.rows.iter().filter(|r| !(exclude_ambiguous && r.ambiguous)).collect();
        let x: Vec<Vec<f64>> = rows.iter().map(|r| r.values.clone()).collect();
        let y: Vec<usize> = rows.iter().map(|r| class_index(&classes, &r.label)).collect::<Result<_, _>>()?;
        let forest = RandomForest::fit(&x, &y, classes.len(), params)?;
        Ok(Model {
            format: MODEL_FORMAT,
            schema_hash: schema_hash(&table.schema.names),
            classes,
            schema: table.schema.clone(),
            forest,
        })
    }

    pub fn check_names(&self, names: &[String]) -> Result<(), MlError> {
        let got = schema_hash(names);
        if got == self.schema_hash {
            Ok(())
        } else {
            Err(MlError::SchemaHash {
                expected: self.schema_hash.clone(),
                got,
            })
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<&str, MlError> {
        Ok(&self.classes[self.forest.predict(x)?])
    }

    /// Predictions for every row of `table`, after checking its schema.
    pub fn evaluate(&self, table: &FeatureTable) -> Result<EvalReport, MlError> {
        self.check_names(&table.schema.names)?;
        let mut classes = self.classes.clone();
        for c in table.classes() {
            if !classes.contains(&c) {
                classes.push(c);
            }
        }
        let mut y = Vec::new();
        let mut p = Vec::new();
        for r in &table.rows {
            y.push(class_index(&classes, &r.label)?);
            p.push(self.forest.predict(&r.values)?);
        }
        macro_f_score(&y, &p, &classes)
    }

    pub fn top_features(&self, k: usize) -> Result<Vec<(String, f64)>, MlError> {
        Ok(forest_importance(&self.forest, k)?
            .into_iter()
            .map(|(i, v)| (self.schema.names[i].clone(), v))
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), MlError> {
        let text = serde_json::to_string(self).map_err(|e| MlError::Format {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model, MlError> {
        let bad = |reason: String| MlError::Format {
            path: path.display().to_string(),
            reason,
        };
        let text = fs::read_to_string(path)?;
        let m: Model = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if m.format != MODEL_FORMAT {
            return Err(bad(format!("unsupported model format {}", m.format)));
        }
        if schema_hash(&m.schema.names) != m.schema_hash {
            return Err(bad("schema hash does not match feature names".into()));
        }
        if m.forest.n_features != m.schema.names.len() {
            return Err(bad("forest width does not match feature names".into()));
        }
        Ok(m)
    }
}
