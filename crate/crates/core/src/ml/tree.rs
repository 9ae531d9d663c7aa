//! CART decision tree with Gini impurity.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MlError;

pub fn gini(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// Smallest index among the maxima.
pub(crate) fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        /// Class distribution of the training samples reaching the leaf.
        dist: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Samples reaching the node times its Gini decrease.
        gain: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features tried per split; `None` tries all.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_samples_leaf: 1,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub n_features: usize,
    pub n_classes: usize,
    pub n_samples: usize,
}

/// Column-major training matrix.
pub(crate) struct Columns<'a> {
    pub cols: Vec<Vec<f64>>,
    pub y: &'a [usize],
    pub n_classes: usize,
}

impl<'a> Columns<'a> {
    pub fn new(x: &[Vec<f64>], y: &'a [usize], n_classes: usize) -> Result<Self, MlError> {
        let n_features = check_xy(x, y)?;
        if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
            return Err(MlError::Invalid(format!("label {bad} outside {n_classes} classes")));
        }
        let cols = (0..n_features).map(|f| x.iter().map(|r| r[f]).collect()).collect();
        Ok(Columns { cols, y, n_classes })
    }
}

pub(crate) fn check_xy(x: &[Vec<f64>], y: &[usize]) -> Result<usize, MlError> {
    if x.is_empty() {
        return Err(MlError::Empty);
    }
    if x.len() != y.len() {
        return Err(MlError::Invalid(format!("{} rows but {} labels", x.len(), y.len())));
    }
    let f = x[0].len();
    if f == 0 {
        return Err(MlError::NoFeatures);
    }
    for r in x {
        if r.len() != f {
            return Err(MlError::Schema { expected: f, got: r.len() });
        }
        if r.iter().any(|v| v.is_nan()) {
            return Err(MlError::Invalid("missing value in feature matrix".into()));
        }
    }
    Ok(f)
}

struct Best {
    feature: usize,
    threshold: f64,
    impurity: f64,
    split_at: usize,
}

impl DecisionTree {
    pub fn fit(x: &[Vec<f64>], y: &[usize], n_classes: usize, params: &TreeParams, seed: u64) -> Result<Self, MlError> {
        let data = Columns::new(x, y, n_classes)?;
        let idx: Vec<usize> = (0..y.len()).collect();
        Ok(Self::fit_indices(&data, idx, params, seed))
    }

    pub(crate) fn fit_indices(data: &Columns, idx: Vec<usize>, params: &TreeParams, seed: u64) -> Self {
        let mut tree = DecisionTree {
            nodes: Vec::new(),
            n_features: data.cols.len(),
            n_classes: data.n_classes,
            n_samples: idx.len(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = idx;
        tree.grow(data, &mut idx, 0, params, &mut rng);
        tree
    }

    fn counts(data: &Columns, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; data.n_classes];
        for &i in idx {
            c[data.y[i]] += 1;
        }
        c
    }

    fn grow(&mut self, data: &Columns, idx: &mut [usize], depth: usize, p: &TreeParams, rng: &mut ChaCha8Rng) -> usize {
        let counts = Self::counts(data, idx);
        let id = self.nodes.len();
        let n = idx.len() as f64;
        self.nodes.push(Node::Leaf {
            dist: counts.iter().map(|&c| c as f64 / n).collect(),
        });
        let impurity = gini(&counts);
        if impurity == 0.0 || p.max_depth.is_some_and(|d| depth >= d) || idx.len() < 2 * p.min_samples_leaf.max(1) {
            return id;
        }
        let Some(best) = self.best_split(data, idx, &counts, p, rng) else {
            return id;
        };
        idx.sort_by(|&a, &b| data.cols[best.feature][a].total_cmp(&data.cols[best.feature][b]));
        let (l, r) = idx.split_at_mut(best.split_at);
        let left = self.grow(data, l, depth + 1, p, rng);
        let right = self.grow(data, r, depth + 1, p, rng);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
            gain: n * (impurity - best.impurity),
        };
        id
    }

    /// Best split over a random subset of features. When the subset has no
    /// valid split the remaining features are tried in turn.
    fn best_split(&self, data: &Columns, idx: &[usize], counts: &[usize], p: &TreeParams, rng: &mut ChaCha8Rng) -> Option<Best> {
        let nf = data.cols.len();
        let mut order: Vec<usize> = (0..nf).collect();
        let mf = p.max_features.unwrap_or(nf).clamp(1, nf);
        if mf < nf {
            order.shuffle(rng);
        }
        let min_leaf = p.min_samples_leaf.max(1);
        let n = idx.len();
        let mut sorted = idx.to_vec();
        let mut best: Option<Best> = None;
        let mut left = vec![0usize; data.n_classes];
        for (tried, &f) in order.iter().enumerate() {
            if tried >= mf && best.is_some() {
                break;
            }
            let col = &data.cols[f];
            sorted.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
            left.iter_mut().for_each(|c| *c = 0);
            let mut right = counts.to_vec();
            for k in 1..n {
                let c = data.y[sorted[k - 1]];
                left[c] += 1;
                right[c] -= 1;
                let (lo, hi) = (col[sorted[k - 1]], col[sorted[k]]);
                if lo == hi || k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let imp = (k as f64 * gini(&left) + (n - k) as f64 * gini(&right)) / n as f64;
                if best.as_ref().is_none_or(|b| imp < b.impurity) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(Best {
                        feature: f,
                        threshold,
                        impurity: imp,
                        split_at: k,
                    });
                }
            }
        }
        best
    }

    pub fn leaf_for(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { dist } => return dist,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize, MlError> {
        if x.len() != self.n_features {
            return Err(MlError::Schema {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(argmax(self.leaf_for(x)))
    }

    pub fn depth(&self) -> usize {
        fn d(t: &DecisionTree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + d(t, *left).max(d(t, *right)),
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            d(self, 0)
        }
    }

    /// Unnormalized Gini decrease per feature.
    pub fn raw_importance(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.n_features];
        for n in &self.nodes {
            if let Node::Split { feature, gain, .. } = n {
                imp[*feature] += gain;
            }
        }
        imp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gini_values() {
        assert_eq!(gini(&[5, 5]), 0.5);
        assert_eq!(gini(&[7, 0]), 0.0);
    }

    #[test]
    fn pure_input_is_one_leaf() {
        let x = vec![vec![1.0], vec![2.0]];
        let t = DecisionTree::fit(&x, &[1, 1], 2, &TreeParams::default(), 0).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict(&[9.0]).unwrap(), 1);
    }

    #[test]
    fn zero_training_error_on_xor() {
        let x = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let y = [0, 1, 1, 0];
        let t = DecisionTree::fit(&x, &y, 2, &TreeParams::default(), 0).unwrap();
        for (r, c) in x.iter().zip(y) {
            assert_eq!(t.predict(r).unwrap(), c);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(DecisionTree::fit(&[vec![]], &[0], 1, &TreeParams::default(), 0), Err(MlError::NoFeatures)));
        let t = DecisionTree::fit(&[vec![1.0]], &[0], 1, &TreeParams::default(), 0).unwrap();
        assert!(matches!(t.predict(&[1.0, 2.0]), Err(MlError::Schema { .. })));
    }
}
