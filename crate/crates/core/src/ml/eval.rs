//! F-scores, confusion matrices and cross-validation.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forest::{ForestParams, RandomForest};
use super::MlError;
use crate::features::FeatureTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<String>,
    pub per_class: Vec<ClassScore>,
    /// Unweighted mean F over the classes present in the true labels.
    pub macro_f: f64,
    /// Support-weighted mean F.
    pub weighted_f: f64,
    pub accuracy: f64,
    /// `confusion[true][pred]`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn f_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn macro_f_score(y_true: &[usize], y_pred: &[usize], classes: &[String]) -> Result<EvalReport, MlError> {
    if y_true.is_empty() {
        return Err(MlError::Empty);
    }
    if y_true.len() != y_pred.len() {
        return Err(MlError::Invalid(format!("{} labels but {} predictions", y_true.len(), y_pred.len())));
    }
    let k = classes.len();
    if let Some(bad) = y_true.iter().chain(y_pred).find(|&&c| c >= k) {
        return Err(MlError::Invalid(format!("class index {bad} outside {k} classes")));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[t][p] += 1;
    }
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let tp = confusion[c][c] as f64;
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|r| r[c]).sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = if support == 0 { 0.0 } else { tp / support as f64 };
        per_class.push(ClassScore {
            label: classes[c].clone(),
            precision,
            recall,
            f_score: f_score(precision, recall),
            support,
        });
    }
    let present: Vec<&ClassScore> = per_class.iter().filter(|s| s.support > 0).collect();
    let n = y_true.len() as f64;
    let macro_f = present.iter().map(|s| s.f_score).sum::<f64>() / present.len() as f64;
    let weighted_f = present.iter().map(|s| s.f_score * s.support as f64).sum::<f64>() / n;
    let accuracy = (0..k).map(|c| confusion[c][c]).sum::<usize>() as f64 / n;
    Ok(EvalReport {
        classes: classes.to_vec(),
        per_class,
        macro_f,
        weighted_f,
        accuracy,
        confusion,
    })
}

impl EvalReport {
    pub fn class(&self, label: &str) -> Option<&ClassScore> {
        self.per_class.iter().find(|s| s.label == label)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,precision,recall,f_score,support\n");
        for c in &self.per_class {
            let _ = writeln!(s, "{},{:.6},{:.6},{:.6},{}", c.label, c.precision, c.recall, c.f_score, c.support);
        }
        let _ = writeln!(s, "macro,,,{:.6},", self.macro_f);
        let _ = writeln!(s, "weighted,,,{:.6},", self.weighted_f);
        let _ = writeln!(s, "accuracy,,,{:.6},", self.accuracy);
        s
    }

    pub fn render(&self) -> String {
        let w = self.classes.iter().map(String::len).max().unwrap_or(5).max(8);
        let mut s = format!("{:<w$} {:>9} {:>9} {:>9} {:>8}\n", "class", "precision", "recall", "f-score", "support");
        for c in &self.per_class {
            let _ = writeln!(s, "{:<w$} {:>9.4} {:>9.4} {:>9.4} {:>8}", c.label, c.precision, c.recall, c.f_score, c.support);
        }
        let _ = writeln!(s, "macro F {:.4}  weighted F {:.4}  accuracy {:.4}", self.macro_f, self.weighted_f, self.accuracy);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldOrder {
    Timestamp,
    Shuffled,
}

impl std::str::FromStr for FoldOrder {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "timestamp" => Ok(FoldOrder::Timestamp),
            "shuffled" => Ok(FoldOrder::Shuffled),
            _ => Err(format!("unknown order '{s}' (timestamp or shuffled)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvParams {
    pub folds: usize,
    pub order: FoldOrder,
    pub seed: u64,
    pub exclude_ambiguous: bool,
    pub forest: ForestParams,
}

impl Default for CvParams {
    fn default() -> Self {
        CvParams {
            folds: 5,
            order: FoldOrder::Timestamp,
            seed: 0,
            exclude_ambiguous: false,
            forest: ForestParams::default(),
        }
    }
}

/// Positions `[start, end)` in the ordered sample list plus the window-end
/// range they cover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldInfo {
    pub start: usize,
    pub end: usize,
    pub first_window: i64,
    pub last_window: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<EvalReport>,
    pub bounds: Vec<FoldInfo>,
    /// Pooled predictions of all folds.
    pub pooled: EvalReport,
    /// Mean of the per-fold macro F-scores.
    pub overall_f: f64,
}

/// `k` contiguous cuts of `0..n`.
pub fn fold_ranges(n: usize, k: usize) -> Vec<(usize, usize)> {
    (0..k).map(|i| (i * n / k, (i + 1) * n / k)).collect()
}

/// Picks one random core's row for every window end, in window order.
pub fn one_core_per_window(table: &FeatureTable, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut i = 0;
    while i < table.rows.len() {
        let end = table.rows[i].window_end;
        let mut j = i;
        while j < table.rows.len() && table.rows[j].window_end == end {
            j += 1;
        }
        out.push(rng.random_range(i..j));
        i = j;
    }
    out
}

pub fn class_index(classes: &[String], label: &str) -> Result<usize, MlError> {
    classes
        .iter()
        .position(|c| c == label)
        .ok_or_else(|| MlError::Invalid(format!("unknown class '{label}'")))
}

pub fn cross_validate(table: &FeatureTable, p: &CvParams) -> Result<CvReport, MlError> {
    if p.folds < 2 {
        return Err(MlError::Invalid("need at least 2 folds".into()));
    }
    let classes = table.classes();
    let mut picked: Vec<usize> = one_core_per_window(table, p.seed)
        .into_iter()
        .filter(|&i| !(p.exclude_ambiguous && table.rows[i].ambiguous))
        .collect();
    if picked.len() < p.folds {
        return Err(MlError::TooFewSamples { n: picked.len(), k: p.folds });
    }
    if p.order == FoldOrder::Shuffled {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        rng.set_stream(1);
        picked.shuffle(&mut rng);
    }
    let x: Vec<&[f64]> = picked.iter().map(|&i| table.rows[i].values.as_slice()).collect();
    let y: Vec<usize> = picked
        .iter()
        .map(|&i| class_index(&classes, &table.rows[i].label))
        .collect::<Result<_, _>>()?;
    let mut folds = Vec::new();
    let mut bounds = Vec::new();
    let mut pooled_true = Vec::new();
    let mut pooled_pred = Vec::new();
    for (a, b) in fold_ranges(picked.len(), p.folds) {
        let train_x: Vec<Vec<f64>> = x[..a].iter().chain(&x[b..]).map(|r| r.to_vec()).collect();
        let train_y: Vec<usize> = y[..a].iter().chain(&y[b..]).copied().collect();
        let forest = RandomForest::fit(&train_x, &train_y, classes.len(), &p.forest)?;
        let pred: Vec<usize> = x[a..b].iter().map(|r| forest.predict(r)).collect::<Result<_, _>>()?;
        folds.push(macro_f_score(&y[a..b], &pred, &classes)?);
        let ends = picked[a..b].iter().map(|&i| table.rows[i].window_end);
        bounds.push(FoldInfo {
            start: a,
            end: b,
            first_window: ends.clone().min().unwrap_or(0),
            last_window: ends.max().unwrap_or(0),
        });
        pooled_true.extend_from_slice(&y[a..b]);
        pooled_pred.extend(pred);
    }
    let overall_f = folds.iter().map(|f| f.macro_f).sum::<f64>() / folds.len() as f64;
    Ok(CvReport {
        pooled: macro_f_score(&pooled_true, &pooled_pred, &classes)?,
        folds,
        bounds,
        overall_f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perfect_and_partial() {
        let r = macro_f_score(&[0, 1, 2, 1], &[0, 1, 2, 1], &names(3)).unwrap();
        assert!(r.per_class.iter().all(|c| c.f_score == 1.0));
        let r = macro_f_score(&[0, 0, 1, 1], &[0, 1, 1, 1], &names(2)).unwrap();
        let a = &r.per_class[0];
        assert_eq!((a.precision, a.recall), (1.0, 0.5));
        assert!((a.f_score - 2.0 / 3.0).abs() < 1e-12);
        assert!(macro_f_score(&[], &[], &names(1)).is_err());
    }

    #[test]
    fn macro_skips_absent_classes() {
        let r = macro_f_score(&[0, 0], &[0, 1], &names(3)).unwrap();
        assert!((r.macro_f - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_class[1].f_score, 0.0);
    }

    #[test]
    fn contiguous_folds() {
        assert_eq!(fold_ranges(100, 5), vec![(0, 20), (20, 40), (40, 60), (60, 80), (80, 100)]);
    }
}
