use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::tree::{train_tree_on, CostMatrix, DecisionTree, TrainingSet, TreeParams};
use super::MatcherError;
use crate::descriptor::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_splits: usize,
    /// `None` draws `ceil(sqrt(d))` features per split.
    pub features_per_split: Option<usize>,
    pub cost: CostMatrix,
    pub bootstrap: bool,
    pub seed: u64,
}

impl ForestParams {
    pub fn new(n_trees: usize, max_splits: usize, seed: u64) -> Self {
        Self {
            n_trees,
            max_splits,
            features_per_split: None,
            cost: CostMatrix::default(),
            bootstrap: true,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub features_per_split: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

pub fn default_features_per_split(d: usize) -> usize {
    ((d as f64).sqrt().ceil() as usize).max(1)
}

fn tree_rng(seed: u64, t: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64))
}

fn bootstrap_sample(rng: &mut ChaCha8Rng, n: usize) -> Vec<u32> {
    (0..n).map(|_| rng.gen_range(0..n as u32)).collect()
}

/// Trees are trained independently from per-tree seeds, so the result does not
/// depend on thread scheduling.
pub fn train_forest(data: &TrainingSet, params: &ForestParams) -> Result<RandomForest, MatcherError> {
    if params.n_trees == 0 {
        return Err(MatcherError::InvalidParameter("n_trees must be at least 1".into()));
    }
    data.check_both_classes()?;
    let d = data.n_features();
    let mtry = params
        .features_per_split
        .unwrap_or_else(|| default_features_per_split(d))
        .clamp(1, d.max(1));
    let tree_params = TreeParams {
        max_splits: params.max_splits,
        cost: params.cost,
        features_per_split: Some(mtry),
    };
    let n = data.n_rows();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(params.seed, t);
            let samples = if params.bootstrap {
                bootstrap_sample(&mut rng, n)
            } else {
                (0..n as u32).collect()
            };
            train_tree_on(data, samples, &tree_params, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RandomForest {
        trees,
        features_per_split: mtry,
        bootstrap: params.bootstrap,
        seed: params.seed,
    })
}

impl RandomForest {
    pub fn n_features(&self) -> usize {
        self.trees[0].n_features
    }

    /// Mean of the per-tree leaf positive fractions.
    pub fn predict_confidence(&self, row: &[f32]) -> Result<f64, MatcherError> {
        if row.len() != self.n_features() {
            return Err(MatcherError::DimensionMismatch {
                expected: self.n_features(),
                found: row.len(),
            });
        }
        Ok(self.predict_unchecked(row))
    }

    pub(crate) fn predict_unchecked(&self, row: &[f32]) -> f64 {
        self.trees.iter().map(|t| t.predict_unchecked(row)).sum::<f64>() / self.trees.len() as f64
    }

    /// Accuracy at the 0.5 cut of each row's mean over trees whose bootstrap
    /// sample excluded it; rows in every bootstrap are skipped. `data` must be
    /// the training set.
    pub fn oob_accuracy(&self, data: &TrainingSet) -> Option<f64> {
        if !self.bootstrap {
            return None;
        }
        let n = data.n_rows();
        let mut sum = vec![0.0f64; n];
        let mut votes = vec![0u32; n];
        for (t, tree) in self.trees.iter().enumerate() {
            let mut in_bag = vec![false; n];
            for i in bootstrap_sample(&mut tree_rng(self.seed, t), n) {
                in_bag[i as usize] = true;
            }
            for i in (0..n).filter(|&i| !in_bag[i]) {
                sum[i] += tree.predict_unchecked(&data.row(i));
                votes[i] += 1;
            }
        }
        let scored: Vec<usize> = (0..n).filter(|&i| votes[i] > 0).collect();
        if scored.is_empty() {
            return None;
        }
        let correct = scored
            .iter()
            .filter(|&&i| (sum[i] / votes[i] as f64 > 0.5) == data.labels()[i])
            .count();
        Some(correct as f64 / scored.len() as f64)
    }
}
