use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forest::{train_forest, ForestParams};
use super::tree::{train_tree, CostMatrix, TrainingSet, TreeParams};
use super::{MatcherError, MatcherModel};
use crate::dataset::CorrespondenceDataset;
use crate::descriptor::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub coarse_max_splits: Vec<usize>,
    /// False-negative to false-positive cost ratios.
    pub coarse_cost_ratios: Vec<f64>,
    pub fine_n_trees: Vec<usize>,
    pub fine_max_splits: Vec<usize>,
    pub fine_cost_ratios: Vec<f64>,
    /// Forest features per split; `None` uses `ceil(sqrt(p + q))`.
    pub features_per_split: Option<usize>,
    /// Fraction of each class kept for training during the search.
    pub train_fraction: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            coarse_max_splits: vec![64, 256, 1024],
            coarse_cost_ratios: vec![1.0, 2.0, 5.0],
            fine_n_trees: vec![50, 100, 200],
            fine_max_splits: vec![256, 1024, 4096],
            fine_cost_ratios: vec![1.0],
            features_per_split: None,
            train_fraction: 0.8,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<(), MatcherError> {
        let bad = |m: &str| Err(MatcherError::InvalidParameter(m.into()));
        if self.coarse_max_splits.is_empty()
            || self.coarse_cost_ratios.is_empty()
            || self.fine_n_trees.is_empty()
            || self.fine_max_splits.is_empty()
            || self.fine_cost_ratios.is_empty()
        {
            return bad("every grid axis needs at least one value");
        }
        if self.fine_n_trees.contains(&0) {
            return bad("fine_n_trees values must be positive");
        }
        for &r in self.coarse_cost_ratios.iter().chain(&self.fine_cost_ratios) {
            CostMatrix::with_ratio(r).validate()?;
        }
        if self.features_per_split == Some(0) {
            return bad("features_per_split must be positive");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Validation metrics of one grid point at the 0.5 cut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageScore {
    pub max_splits: usize,
    pub cost_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_trees: Option<usize>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
    pub recall: f64,
    pub specificity: f64,
    pub precision: f64,
}

impl StageScore {
    fn from_predictions(predicted: &[bool], labels: &[bool], max_splits: usize, cost_ratio: f64, n_trees: Option<usize>) -> Self {
        let (mut tp, mut fp, mut tn, mut fneg) = (0, 0, 0, 0);
        for (&p, &l) in predicted.iter().zip(labels) {
            match (p, l) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fneg += 1,
            }
        }
        let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
        Self {
            max_splits,
            cost_ratio,
            n_trees,
            true_positives: tp,
            false_positives: fp,
            true_negatives: tn,
            false_negatives: fneg,
            recall: ratio(tp, fneg),
            specificity: ratio(tn, fp),
            precision: ratio(tp, fp),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub seed: u64,
    pub train_rows: usize,
    pub validation_rows: usize,
    pub coarse: Vec<StageScore>,
    pub coarse_winner: usize,
    /// Whether some coarse grid point rejected at least half the validation negatives.
    pub coarse_constraint_met: bool,
    /// Validation rows passed by the winning coarse tree, on which the fine grid is scored.
    pub fine_validation_rows: usize,
    pub fine: Vec<StageScore>,
    pub fine_winner: usize,
}

/// Seeded per-class shuffle; the first `fraction` of each class trains.
pub fn stratified_split(labels: &[bool], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = if n >= 2 {
            ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
        } else {
            n
        };
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn subset(rows: &[Vec<f32>], labels: &[bool], idx: &[usize]) -> (Vec<Vec<f32>>, Vec<bool>) {
    (idx.iter().map(|&i| rows[i].clone()).collect(), idx.iter().map(|&i| labels[i]).collect())
}

/// Coarse: best validation recall among grid points rejecting at least half
/// of the validation negatives (higher specificity, then grid order, breaks
/// ties); if none qualifies, the highest specificity. Fine: best precision on
/// the validation rows the winning coarse tree passes (all validation rows if
/// it passes none), ties by recall then grid order. Winners are retrained on
/// the whole dataset.
pub fn grid_search(
    dataset: &CorrespondenceDataset,
    grid: &GridConfig,
    seed: u64,
) -> Result<(MatcherModel, GridRecord), MatcherError> {
    grid.validate()?;
    let (rows, labels) = dataset.to_training();
    let n_pos = dataset.positives.len();
    let n_neg = dataset.negatives.len();
    if n_pos < 2 || n_neg < 2 {
        return Err(MatcherError::DegenerateData(format!(
            "grid search needs at least two rows per class, got {n_pos} positives and {n_neg} negatives"
        )));
    }
    let (train_idx, val_idx) = stratified_split(&labels, grid.train_fraction, derive_seed(seed, 0));
    let (train_rows, train_labels) = subset(&rows, &labels, &train_idx);
    let (val_rows, val_labels) = subset(&rows, &labels, &val_idx);
    let train = TrainingSet::new(&train_rows, &train_labels)?;

    let coarse_points: Vec<(usize, f64)> = grid
        .coarse_max_splits
        .iter()
        .flat_map(|&s| grid.coarse_cost_ratios.iter().map(move |&r| (s, r)))
        .collect();
    let tree_seed = derive_seed(seed, 1);
    let coarse_params = |(s, r): (usize, f64)| TreeParams {
        max_splits: s,
        cost: CostMatrix::with_ratio(r),
        features_per_split: None,
    };
    let coarse_trees = coarse_points
        .par_iter()
        .map(|&pt| train_tree(&train, &coarse_params(pt), &mut ChaCha8Rng::seed_from_u64(tree_seed)))
        .collect::<Result<Vec<_>, _>>()?;
    let coarse_scores: Vec<StageScore> = coarse_trees
        .iter()
        .zip(&coarse_points)
        .map(|(t, &(s, r))| {
            let pred: Vec<bool> = val_rows.iter().map(|x| t.predict_unchecked(x) > 0.5).collect();
            StageScore::from_predictions(&pred, &val_labels, s, r, None)
        })
        .collect();
    let constraint_met = coarse_scores.iter().any(|s| s.specificity >= 0.5);
    let coarse_winner = pick(&coarse_scores, |a, b| {
        if constraint_met {
            let ok = |s: &StageScore| s.specificity >= 0.5;
            (ok(a), a.recall, a.specificity) > (ok(b), b.recall, b.specificity)
        } else {
            a.specificity > b.specificity
        }
    });

    let winner_tree = &coarse_trees[coarse_winner];
    let passed: Vec<usize> = (0..val_rows.len())
        .filter(|&i| winner_tree.predict_unchecked(&val_rows[i]) > 0.5)
        .collect();
    let fine_val: Vec<usize> = if passed.is_empty() {
        (0..val_rows.len()).collect()
    } else {
        passed
    };
    let fine_points: Vec<(usize, usize, f64)> = grid
        .fine_n_trees
        .iter()
        .flat_map(|&n| {
            grid.fine_max_splits
                .iter()
                .flat_map(move |&s| grid.fine_cost_ratios.iter().map(move |&r| (n, s, r)))
        })
        .collect();
    let forest_seed = derive_seed(seed, 2);
    let forest_params = |(n, s, r): (usize, usize, f64)| ForestParams {
        n_trees: n,
        max_splits: s,
        features_per_split: grid.features_per_split,
        cost: CostMatrix::with_ratio(r),
        bootstrap: true,
        seed: forest_seed,
    };
    let mut fine_scores = Vec::with_capacity(fine_points.len());
    for &pt in &fine_points {
        let forest = train_forest(&train, &forest_params(pt))?;
        let pred: Vec<bool> = fine_val
            .iter()
            .map(|&i| forest.predict_unchecked(&val_rows[i]) > 0.5)
            .collect();
        let lab: Vec<bool> = fine_val.iter().map(|&i| val_labels[i]).collect();
        fine_scores.push(StageScore::from_predictions(&pred, &lab, pt.1, pt.2, Some(pt.0)));
    }
    let fine_winner = pick(&fine_scores, |a, b| (a.precision, a.recall) > (b.precision, b.recall));

    let full = TrainingSet::new(&rows, &labels)?;
    let coarse = train_tree(
        &full,
        &coarse_params(coarse_points[coarse_winner]),
        &mut ChaCha8Rng::seed_from_u64(tree_seed),
    )?;
    let fine = train_forest(&full, &forest_params(fine_points[fine_winner]))?;
    let record = GridRecord {
        seed,
        train_rows: train_idx.len(),
        validation_rows: val_idx.len(),
        coarse: coarse_scores,
        coarse_winner,
        coarse_constraint_met: constraint_met,
        fine_validation_rows: fine_val.len(),
        fine: fine_scores,
        fine_winner,
    };
    let metadata = serde_json::to_value(&record).map_err(|e| MatcherError::Format(e.to_string()))?;
    let model = MatcherModel::new(dataset.p, dataset.q, coarse, fine, metadata)?;
    Ok((model, record))
}

/// Index of the first element not beaten by any later one under `better`.
fn pick(scores: &[StageScore], better: impl Fn(&StageScore, &StageScore) -> bool) -> usize {
    let mut best = 0;
    for i in 1..scores.len() {
        if better(&scores[i], &scores[best]) {
            best = i;
        }
    }
    best
}
