//! Bootstrap-aggregated random forest.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{argmax, Columns, DecisionTree, TreeParams};
use super::MlError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// `None` means `floor(sqrt(F))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 30,
            max_depth: Some(20),
            min_samples_leaf: 1,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn features_for(&self, n_features: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (n_features as f64).sqrt().floor() as usize)
            .clamp(1, n_features.max(1))
    }
}

/// Seed of tree `i`.
pub fn tree_seed(seed: u64, i: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64 + 1);
    rng.random()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub tree_seeds: Vec<u64>,
    pub features_per_split: usize,
    pub n_features: usize,
    pub n_classes: usize,
}

impl RandomForest {
    pub fn fit(x: &[Vec<f64>], y: &[usize], n_classes: usize, params: &ForestParams) -> Result<Self, MlError> {
        if params.n_trees == 0 {
            return Err(MlError::Invalid("a forest needs at least one tree".into()));
        }
        let data = Columns::new(x, y, n_classes)?;
        let n = y.len();
        let nf = data.cols.len();
        let tp = TreeParams {
            max_depth: params.max_depth,
            min_samples_leaf: params.min_samples_leaf,
            max_features: Some(params.features_for(nf)),
        };
        let seeds: Vec<u64> = (0..params.n_trees).map(|i| tree_seed(params.seed, i)).collect();
        let trees = seeds
            .par_iter()
            .map(|&s| {
                let idx = if params.bootstrap {
                    let mut rng = ChaCha8Rng::seed_from_u64(s);
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                DecisionTree::fit_indices(&data, idx, &tp, s ^ 0x5eed)
            })
            .collect();
        Ok(RandomForest {
            trees,
            tree_seeds: seeds,
            features_per_split: tp.max_features.unwrap_or(nf),
            n_features: nf,
            n_classes,
        })
    }

    pub fn votes(&self, x: &[f64]) -> Result<Vec<usize>, MlError> {
        if x.len() != self.n_features {
            return Err(MlError::Schema {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let mut v = vec![0; self.n_classes];
        for t in &self.trees {
            v[argmax(t.leaf_for(x))] += 1;
        }
        Ok(v)
    }

    /// Majority vote; ties go to the smallest class index.
    pub fn predict(&self, x: &[f64]) -> Result<usize, MlError> {
        Ok(argmax(&self.votes(x)?))
    }

    pub fn predict_many(&self, x: &[Vec<f64>]) -> Result<Vec<usize>, MlError> {
        x.iter().map(|r| self.predict(r)).collect()
    }

    /// Mean of the per-tree normalized importances, renormalized.
    pub fn raw_importance(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.n_features];
        for t in &self.trees {
            let imp = t.raw_importance();
            let s: f64 = imp.iter().sum();
            if s > 0.0 {
                for (a, b) in total.iter_mut().zip(imp) {
                    *a += b / s;
                }
            }
        }
        total
    }
}
