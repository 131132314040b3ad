//! Training corpus of labeled 3D/2D descriptor pairs.
//!
//! 3D keypoints are projected into each posed training image, occluded ones
//! are removed with a depth-block test against a depth map rendered from the
//! cloud, survivors are paired one-to-one with nearby 2D keypoints, and random
//! well-separated non-matching pairs are added as negatives.

mod assemble;
mod depth;
mod io;
mod matching;

pub use assemble::{assemble_dataset, assemble_from_features, DatasetConfig};
pub use depth::{
    build_depth_map, depth_block_filter, project_keypoints, DbfParams, DepthMap, ProjectedKeypoint,
    ProjectedKeypointSet,
};
pub use io::{read_dataset, write_dataset, CDS1_MAGIC};
pub use matching::{match_keypoints, sample_negatives, CorrespondencePair};

use thiserror::Error;

use crate::descriptor::Descriptor;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no positive correspondences were found")]
    EmptyDataset,
    #[error("found only {found} of {needed} negative pairs after {attempts} attempts")]
    PoolExhausted {
        needed: usize,
        found: usize,
        attempts: usize,
    },
    #[error("dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One labeled pair with the ids it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub desc3d: Descriptor,
    pub desc2d: Descriptor,
    pub keypoint3d_id: u32,
    pub keypoint2d_id: u32,
    pub image_id: u32,
}

impl DatasetRow {
    /// The 3D descriptor followed by the 2D descriptor.
    pub fn features(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(self.desc3d.len() + self.desc2d.len());
        v.extend_from_slice(self.desc3d.as_slice());
        v.extend_from_slice(self.desc2d.as_slice());
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceDataset {
    /// 3D descriptor length.
    pub p: usize,
    /// 2D descriptor length.
    pub q: usize,
    pub positives: Vec<DatasetRow>,
    pub negatives: Vec<DatasetRow>,
    /// Free-form record of how the dataset was produced.
    pub metadata: Option<serde_json::Value>,
}

impl CorrespondenceDataset {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Feature rows and labels, positives first.
    pub fn to_training(&self) -> (Vec<Vec<f32>>, Vec<bool>) {
        let x = self
            .positives
            .iter()
            .chain(&self.negatives)
            .map(DatasetRow::features)
            .collect();
        let y = std::iter::repeat(true)
            .take(self.positives.len())
            .chain(std::iter::repeat(false).take(self.negatives.len()))
            .collect();
        (x, y)
    }
}
