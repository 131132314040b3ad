use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MatcherError;

/// Class weights applied to split impurity: a positive counts with the cost of
/// missing it, a negative with the cost of accepting it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    pub false_negative: f64,
    pub false_positive: f64,
}

impl Default for CostMatrix {
    fn default() -> Self {
        Self {
            false_negative: 1.0,
            false_positive: 1.0,
        }
    }
}

impl CostMatrix {
    pub fn with_ratio(ratio: f64) -> Self {
        Self {
            false_negative: ratio,
            false_positive: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), MatcherError> {
        if !(self.false_negative > 0.0 && self.false_positive > 0.0)
            || !self.false_negative.is_finite()
            || !self.false_positive.is_finite()
        {
            return Err(MatcherError::InvalidParameter(format!(
                "costs must be positive and finite, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Gini's diversity index of a node with the given class counts.
pub fn gini_index(r_pos: u64, r_neg: u64) -> f64 {
    let n = (r_pos + r_neg) as f64;
    2.0 * r_pos as f64 * r_neg as f64 / (n * n)
}

/// Impurity of a node weighted by its total class weight, `W * gini`, on
/// weighted counts.
#[inline]
fn weighted_impurity(wp: f64, wn: f64) -> f64 {
    let w = wp + wn;
    if w <= 0.0 {
        0.0
    } else {
        2.0 * wp * wn / w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    Internal {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        positives: u32,
        negatives: u32,
    },
}

impl TreeNode {
    pub fn leaf_fraction(&self) -> Option<f64> {
        match *self {
            TreeNode::Leaf {
                positives,
                negatives,
            } => {
                let n = positives + negatives;
                Some(if n == 0 { 0.0 } else { positives as f64 / n as f64 })
            }
            TreeNode::Internal { .. } => None,
        }
    }
}

/// Binary classification tree; nodes are stored in pre-order with the root first.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    pub n_features: usize,
    pub max_splits: usize,
    pub cost: CostMatrix,
}

/// Column-major training matrix.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    columns: Vec<Vec<f32>>,
    labels: Vec<bool>,
}

impl TrainingSet {
    pub fn new(rows: &[Vec<f32>], labels: &[bool]) -> Result<Self, MatcherError> {
        if rows.len() != labels.len() {
            return Err(MatcherError::InvalidParameter(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(MatcherError::DimensionMismatch {
                expected: d,
                found: rows.iter().map(Vec::len).find(|&l| l != d).unwrap_or(d),
            });
        }
        let columns = (0..d).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Ok(Self {
            columns,
            labels: labels.to_vec(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> Vec<f32> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub(crate) fn check_both_classes(&self) -> Result<(), MatcherError> {
        let pos = self.labels.iter().filter(|&&l| l).count();
        if pos == 0 || pos == self.labels.len() {
            return Err(MatcherError::DegenerateData(format!(
                "{pos} positives among {} rows; both classes are required",
                self.labels.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_splits: usize,
    pub cost: CostMatrix,
    /// Features drawn per split; `None` considers all.
    pub features_per_split: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct OpenLeaf {
    samples: Vec<u32>,
    split: Option<Split>,
    order: usize,
}

enum Building {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(Vec<u32>),
    Open(usize),
}

/// Gains within this relative margin are ties.
const GAIN_TIE_MARGIN: f64 = 1e-12;

pub fn train_tree(
    data: &TrainingSet,
    params: &TreeParams,
    rng: &mut ChaCha8Rng,
) -> Result<DecisionTree, MatcherError> {
    data.check_both_classes()?;
    let samples: Vec<u32> = (0..data.n_rows() as u32).collect();
    train_tree_on(data, samples, params, rng)
}

/// Best-first CART growth on a multiset of row indices.
pub(crate) fn train_tree_on(
    data: &TrainingSet,
    samples: Vec<u32>,
    params: &TreeParams,
    rng: &mut ChaCha8Rng,
) -> Result<DecisionTree, MatcherError> {
    params.cost.validate()?;
    let d = data.n_features();
    if d == 0 {
        return Err(MatcherError::DegenerateData("rows have no features".into()));
    }
    let mtry = params.features_per_split.unwrap_or(d).clamp(1, d);
    let mut build: Vec<Building> = Vec::new();
    let mut open: Vec<OpenLeaf> = Vec::new();
    let mut created = 0usize;
    let mut make_open = |samples: Vec<u32>, build: &mut Vec<Building>, open: &mut Vec<OpenLeaf>, rng: &mut ChaCha8Rng| {
        let split = best_split(data, &samples, params.cost, mtry, rng);
        build.push(Building::Open(open.len()));
        open.push(OpenLeaf {
            samples,
            split,
            order: created,
        });
        created += 1;
        build.len() - 1
    };
    make_open(samples, &mut build, &mut open, rng);
    let mut open_ids: Vec<usize> = vec![0];
    let mut splits = 0;
    while splits < params.max_splits {
        // Highest gain first; earlier-created leaves win ties.
        let mut pick: Option<(usize, f64, usize)> = None;
        for (pos, &bid) in open_ids.iter().enumerate() {
            let Building::Open(oi) = build[bid] else { unreachable!() };
            if let Some(s) = open[oi].split {
                let better = match pick {
                    None => true,
                    Some((_, g, order)) => {
                        let margin = GAIN_TIE_MARGIN * g.abs().max(s.gain.abs()).max(1e-300);
                        s.gain > g + margin || ((s.gain - g).abs() <= margin && open[oi].order < order)
                    }
                };
                if better {
                    pick = Some((pos, s.gain, open[oi].order));
                }
            }
        }
        let Some((pos, _, _)) = pick else { break };
        let bid = open_ids.swap_remove(pos);
        let Building::Open(oi) = build[bid] else { unreachable!() };
        let split = open[oi].split.unwrap();
        let column = &data.columns[split.feature];
        let (l, r): (Vec<u32>, Vec<u32>) = std::mem::take(&mut open[oi].samples)
            .into_iter()
            .partition(|&i| column[i as usize] as f64 <= split.threshold);
        let left = make_open(l, &mut build, &mut open, rng);
        let right = make_open(r, &mut build, &mut open, rng);
        build[bid] = Building::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        open_ids.push(left);
        open_ids.push(right);
        splits += 1;
    }
    for bid in open_ids {
        let Building::Open(oi) = build[bid] else { unreachable!() };
        build[bid] = Building::Leaf(std::mem::take(&mut open[oi].samples));
    }
    let mut nodes = Vec::with_capacity(build.len());
    emit_preorder(&build, 0, data.labels(), &mut nodes);
    Ok(DecisionTree {
        nodes,
        n_features: d,
        max_splits: params.max_splits,
        cost: params.cost,
    })
}

fn emit_preorder(build: &[Building], id: usize, labels: &[bool], out: &mut Vec<TreeNode>) -> u32 {
    let me = out.len();
    match &build[id] {
        Building::Leaf(samples) => {
            let positives = samples.iter().filter(|&&i| labels[i as usize]).count() as u32;
            out.push(TreeNode::Leaf {
                positives,
                negatives: samples.len() as u32 - positives,
            });
        }
        Building::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            out.push(TreeNode::Leaf {
                positives: 0,
                negatives: 0,
            });
            let l = emit_preorder(build, *left, labels, out);
            let r = emit_preorder(build, *right, labels, out);
            out[me] = TreeNode::Internal {
                feature: *feature as u32,
                threshold: *threshold,
                left: l,
                right: r,
            };
        }
        Building::Open(_) => unreachable!(),
    }
    me as u32
}

fn best_split(
    data: &TrainingSet,
    samples: &[u32],
    cost: CostMatrix,
    mtry: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Split> {
    let d = data.n_features();
    let features: Vec<usize> = if mtry < d {
        let mut f = sample(rng, d, mtry).into_vec();
        f.sort_unstable();
        f
    } else {
        (0..d).collect()
    };
    if samples.len() < 2 {
        return None;
    }
    let labels = data.labels();
    let pos = samples.iter().filter(|&&i| labels[i as usize]).count();
    if pos == 0 || pos == samples.len() {
        return None;
    }
    let (wp, wn) = (cost.false_negative, cost.false_positive);
    let total_p = pos as f64 * wp;
    let total_n = (samples.len() - pos) as f64 * wn;
    let parent = weighted_impurity(total_p, total_n);
    let margin = GAIN_TIE_MARGIN * parent.max(1e-300);
    let mut best: Option<Split> = None;
    let mut sorted: Vec<(f32, bool)> = Vec::with_capacity(samples.len());
    for f in features {
        let column = &data.columns[f];
        sorted.clear();
        sorted.extend(samples.iter().map(|&i| (column[i as usize], labels[i as usize])));
        sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let (mut lp, mut ln) = (0.0, 0.0);
        for k in 0..sorted.len() - 1 {
            if sorted[k].1 {
                lp += wp;
            } else {
                ln += wn;
            }
            let (a, b) = (sorted[k].0, sorted[k + 1].0);
            if a == b {
                continue;
            }
            let gain = parent - weighted_impurity(lp, ln) - weighted_impurity(total_p - lp, total_n - ln);
            if best.map_or(true, |s| gain > s.gain + margin) {
                best = Some(Split {
                    feature: f,
                    threshold: (a as f64 + b as f64) / 2.0,
                    gain,
                });
            }
        }
    }
    best
}

impl DecisionTree {
    pub fn n_splits(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Internal { .. }))
            .count()
    }

    pub(crate) fn leaf_of(&self, row: &[f32]) -> &TreeNode {
        let mut id = 0usize;
        loop {
            match &self.nodes[id] {
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if row[*feature as usize] as f64 <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                leaf => return leaf,
            }
        }
    }

    /// Positive fraction of the training samples in the leaf reached by `row`.
    pub fn predict_confidence(&self, row: &[f32]) -> Result<f64, MatcherError> {
        if row.len() != self.n_features {
            return Err(MatcherError::DimensionMismatch {
                expected: self.n_features,
                found: row.len(),
            });
        }
        Ok(self.predict_unchecked(row))
    }

    #[inline]
    pub(crate) fn predict_unchecked(&self, row: &[f32]) -> f64 {
        self.leaf_of(row).leaf_fraction().unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    fn params(max_splits: usize) -> TreeParams {
        TreeParams {
            max_splits,
            cost: CostMatrix::default(),
            features_per_split: None,
        }
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini_index(0, 5), 0.0);
        assert_eq!(gini_index(5, 5), 0.5);
        assert_eq!(gini_index(3, 1), 0.375);
    }

    proptest! {
        #[test]
        fn gini_properties(a in 0u64..500, b in 0u64..500) {
            prop_assume!(a + b > 0);
            let g = gini_index(a, b);
            prop_assert_eq!(g, gini_index(b, a));
            prop_assert!(g <= 0.5);
            prop_assert_eq!(g == 0.0, a == 0 || b == 0);
            if a == b {
                prop_assert_eq!(g, 0.5);
            }
        }
    }

    #[test]
    fn one_dimensional_split() {
        let rows: Vec<Vec<f32>> = (0..4).map(|i| vec![i as f32]).collect();
        let data = TrainingSet::new(&rows, &[false, false, true, true]).unwrap();
        let tree = train_tree(&data, &params(10), &mut rng()).unwrap();
        assert_eq!(tree.n_splits(), 1);
        match tree.nodes[0] {
            TreeNode::Internal { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert!(threshold > 1.0 && threshold < 2.0);
            }
            _ => panic!("root must split"),
        }
        for (r, &l) in rows.iter().zip(data.labels()) {
            assert_eq!(tree.predict_confidence(r).unwrap(), if l { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn xor_needs_three_splits() {
        let rows = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let labels = [false, true, true, false];
        let data = TrainingSet::new(&rows, &labels).unwrap();
        let tree = train_tree(&data, &params(3), &mut rng()).unwrap();
        assert!(tree.n_splits() <= 3);
        for (r, &l) in rows.iter().zip(&labels) {
            assert_eq!(tree.predict_confidence(r).unwrap() > 0.5, l);
        }
    }

    #[test]
    fn single_class_is_degenerate() {
        let data = TrainingSet::new(&[vec![0.0], vec![1.0]], &[true, true]).unwrap();
        assert!(matches!(
            train_tree(&data, &params(4), &mut rng()),
            Err(MatcherError::DegenerateData(_))
        ));
    }

    #[test]
    fn leaf_fraction_and_dimension_check() {
        let tree = DecisionTree {
            nodes: vec![TreeNode::Leaf {
                positives: 3,
                negatives: 1,
            }],
            n_features: 2,
            max_splits: 0,
            cost: CostMatrix::default(),
        };
        assert_eq!(tree.predict_confidence(&[0.0, 0.0]).unwrap(), 0.75);
        assert!(matches!(
            tree.predict_confidence(&[0.0]),
            Err(MatcherError::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn leaf_counts_cover_training_rows_and_respect_max_splits() {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f32>> = (0..300).map(|_| vec![r.gen(), r.gen(), r.gen()]).collect();
        let labels: Vec<bool> = rows.iter().map(|x| x[0] + 0.3 * x[1] > 0.6 || x[2] > 0.9).collect();
        let data = TrainingSet::new(&rows, &labels).unwrap();
        for max_splits in [0, 1, 5, 40] {
            let tree = train_tree(&data, &params(max_splits), &mut rng()).unwrap();
            assert!(tree.n_splits() <= max_splits);
            let total: u32 = tree
                .nodes
                .iter()
                .map(|n| match n {
                    TreeNode::Leaf { positives, negatives } => positives + negatives,
                    _ => 0,
                })
                .sum();
            assert_eq!(total, 300);
        }
    }

    /// Weighting positives by an integer cost must grow the same splits as
    /// repeating every positive row that many times.
    #[test]
    fn cost_weight_equals_row_duplication() {
        let mut r = ChaCha8Rng::seed_from_u64(21);
        let rows: Vec<Vec<f32>> = (0..120).map(|_| vec![r.gen(), r.gen()]).collect();
        let labels: Vec<bool> = rows.iter().map(|x| x[0] * x[1] > 0.3 || r.gen_bool(0.1)).collect();
        let data = TrainingSet::new(&rows, &labels).unwrap();
        let splits = |t: &DecisionTree| -> Vec<(u32, f64)> {
            t.nodes
                .iter()
                .filter_map(|n| match n {
                    TreeNode::Internal { feature, threshold, .. } => Some((*feature, *threshold)),
                    _ => None,
                })
                .collect()
        };
        let weighted = train_tree(
            &data,
            &TreeParams {
                cost: CostMatrix::with_ratio(3.0),
                ..params(12)
            },
            &mut rng(),
        )
        .unwrap();
        let duplicated: Vec<u32> = (0..120u32)
            .flat_map(|i| std::iter::repeat(i).take(if labels[i as usize] { 3 } else { 1 }))
            .collect();
        let plain = train_tree_on(&data, duplicated, &params(12), &mut rng()).unwrap();
        assert_eq!(splits(&weighted), splits(&plain));
        assert_ne!(splits(&weighted), splits(&train_tree(&data, &params(12), &mut rng()).unwrap()));
    }
}
