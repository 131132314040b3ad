use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::depth::{build_depth_map, depth_block_filter, project_keypoints, DbfParams};
use super::matching::{match_keypoints, sample_negatives};
use super::{CorrespondenceDataset, DatasetError, DatasetRow};
use crate::cloud::{extract_features_3d, Extract3DConfig, FeatureSet3D, PointCloud, SpatialIndex};
use crate::geometry::CameraView;
use crate::image::{extract_features_2d, Detect2DConfig, FeatureSet2D, Image, DESCRIPTOR_2D_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Maximum pixel distance of a positive pair.
    pub alpha: f64,
    /// Minimum 3D distance between a negative's 3D keypoint and the true match.
    pub beta: f64,
    /// Minimum 3D-descriptor distance between a negative's 3D keypoint and the true match.
    pub gamma: f64,
    pub tau: u32,
    pub depth_slack: f64,
    /// Negatives drawn per positive.
    pub negative_ratio: usize,
    pub seed: u64,
    pub detect2d: Detect2DConfig,
    pub extract3d: Extract3DConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            beta: 0.5,
            gamma: 0.3,
            tau: 5,
            depth_slack: 0.3,
            negative_ratio: 5,
            seed: 0,
            detect2d: Detect2DConfig::default(),
            extract3d: Extract3DConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidParameter(m));
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.beta >= 0.0) {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        if !(self.gamma >= 0.0) {
            return bad(format!("gamma must be non-negative, got {}", self.gamma));
        }
        DbfParams::new(self.tau, self.depth_slack)?;
        self.detect2d.validate().map_err(DatasetError::InvalidParameter)?;
        self.extract3d.validate().map_err(DatasetError::InvalidParameter)?;
        Ok(())
    }
}

/// Extracts features from the cloud and every image, then assembles.
pub fn assemble_dataset(
    images: &[(Image, CameraView)],
    cloud: &PointCloud,
    cfg: &DatasetConfig,
) -> Result<CorrespondenceDataset, DatasetError> {
    cfg.validate()?;
    let index = SpatialIndex::from_cloud(cloud);
    let features3d = extract_features_3d(cloud, &index, &cfg.extract3d);
    let views = images
        .par_iter()
        .map(|(img, view)| Ok((view.clone(), extract_features_2d(img, &cfg.detect2d)?)))
        .collect::<Result<Vec<_>, DatasetError>>()?;
    assemble_from_features(&views, cloud, &features3d, cfg)
}

/// Project, depth-block filter and match per image; concatenate positives in
/// image-id order; append sampled negatives.
pub fn assemble_from_features(
    views: &[(CameraView, FeatureSet2D)],
    cloud: &PointCloud,
    features3d: &FeatureSet3D,
    cfg: &DatasetConfig,
) -> Result<CorrespondenceDataset, DatasetError> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(DatasetError::InvalidParameter("at least one posed image is required".into()));
    }
    let mut order: Vec<usize> = (0..views.len()).collect();
    order.sort_by_key(|&i| views[i].0.image_id);
    if order.windows(2).any(|w| views[w[0]].0.image_id == views[w[1]].0.image_id) {
        return Err(DatasetError::InvalidParameter("duplicate image ids".into()));
    }
    let params = DbfParams::new(cfg.tau, cfg.depth_slack)?;
    let valid3d: Vec<bool> = features3d.descriptors.iter().map(|d| !d.is_zero()).collect();

    let per_image: Vec<Vec<DatasetRow>> = order
        .par_iter()
        .map(|&i| {
            let (view, feats) = &views[i];
            let dmap = build_depth_map(cloud, view);
            let mut projected = project_keypoints(&features3d.keypoints, view);
            projected.entries.retain(|e| valid3d[e.keypoint3d_id as usize]);
            let kept = depth_block_filter(&projected, &dmap, &params);
            let usable2d: Vec<usize> = (0..feats.len()).filter(|&j| !feats.descriptors[j].is_zero()).collect();
            let keys: Vec<_> = usable2d.iter().map(|&j| feats.keypoints[j]).collect();
            match_keypoints(&kept, &keys, cfg.alpha, view.image_id)
                .into_iter()
                .map(|m| {
                    let id2 = usable2d[m.keypoint2d_id as usize];
                    DatasetRow {
                        desc3d: features3d.descriptors[m.keypoint3d_id as usize].clone(),
                        desc2d: feats.descriptors[id2].clone(),
                        keypoint3d_id: m.keypoint3d_id,
                        keypoint2d_id: id2 as u32,
                        image_id: m.image_id,
                    }
                })
                .collect()
        })
        .collect();
    let positives: Vec<DatasetRow> = per_image.into_iter().flatten().collect();
    if positives.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let negatives = if cfg.negative_ratio == 0 {
        Vec::new()
    } else {
        sample_negatives(
            &positives,
            features3d,
            cfg.negative_ratio * positives.len(),
            cfg.beta,
            cfg.gamma,
            cfg.seed,
        )?
    };
    Ok(CorrespondenceDataset {
        p: features3d.descriptor_len(),
        q: views
            .iter()
            .find(|(_, f)| !f.is_empty())
            .map_or(DESCRIPTOR_2D_LEN, |(_, f)| f.descriptor_len()),
        positives,
        negatives,
        metadata: None,
    })
}
