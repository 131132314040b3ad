//! Two-stage classifier over concatenated 3D/2D descriptor pairs: a single
//! cost-sensitive classification tree prefilters all pairs, a random forest
//! scores the survivors, and mutual best matches above 0.5 confidence are kept.

mod cascade;
mod forest;
mod grid;
mod io;
mod tree;

pub use cascade::{cascade_match, two_way_match, CascadeResult, ConfidenceTable, Match};
pub use forest::{default_features_per_split, train_forest, ForestParams, RandomForest};
pub use grid::{grid_search, stratified_split, GridConfig, GridRecord, StageScore};
pub use io::{read_model, write_model, CDM1_MAGIC, CDM1_VERSION};
pub use tree::{gini_index, train_tree, CostMatrix, DecisionTree, TrainingSet, TreeNode, TreeParams};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MatcherError {
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("expected {expected} features, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse tree and fine forest over rows laid out as `[desc3d (p), desc2d (q)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatcherModel {
    pub p: usize,
    pub q: usize,
    pub coarse: DecisionTree,
    pub fine: RandomForest,
    /// Training record (seeds, grid search scores).
    pub metadata: serde_json::Value,
}

impl MatcherModel {
    pub fn new(
        p: usize,
        q: usize,
        coarse: DecisionTree,
        fine: RandomForest,
        metadata: serde_json::Value,
    ) -> Result<Self, MatcherError> {
        for found in [coarse.n_features, fine.n_features()] {
            if found != p + q {
                return Err(MatcherError::DimensionMismatch {
                    expected: p + q,
                    found,
                });
            }
        }
        Ok(Self {
            p,
            q,
            coarse,
            fine,
            metadata,
        })
    }
}
