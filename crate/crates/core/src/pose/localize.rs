use serde::{Deserialize, Serialize};

use super::{mlesac, refine_pose, Correspondence, MlesacConfig, PoseError, PoseEstimate, RefineConfig};
use crate::cloud::FeatureSet3D;
use crate::geometry::Intrinsics;
use crate::image::FeatureSet2D;
use crate::matcher::{cascade_match, two_way_match, MatcherModel};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeConfig {
    pub mlesac: MlesacConfig,
    pub refine: RefineConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub estimate: PoseEstimate,
    /// Two-way matches, indexed by the estimate's inlier ids.
    pub correspondences: Vec<Correspondence>,
    pub coarse_evaluations: usize,
    pub fine_evaluations: usize,
}

impl Localization {
    pub fn n_matches(&self) -> usize {
        self.correspondences.len()
    }

    pub fn n_inliers(&self) -> usize {
        self.estimate.inlier_ids.len()
    }
}

fn failed(e: PoseError) -> PoseError {
    PoseError::LocalizationFailed(Box::new(e))
}

/// Cascade scoring, two-way matching, MLESAC and refinement for one image.
pub fn localize(
    image: &FeatureSet2D,
    cloud: &FeatureSet3D,
    model: &MatcherModel,
    k: &Intrinsics,
    cfg: &LocalizeConfig,
) -> Result<Localization, PoseError> {
    if image.is_empty() || cloud.is_empty() {
        return Err(failed(PoseError::InsufficientCorrespondences {
            needed: 4,
            found: 0,
        }));
    }
    let scored = cascade_match(model, &image.descriptors, &cloud.descriptors).map_err(|e| failed(e.into()))?;
    let correspondences: Vec<Correspondence> = two_way_match(&scored.table)
        .iter()
        .map(|m| {
            let kp = &image.keypoints[m.id2d as usize];
            Correspondence {
                world: cloud.keypoints[m.id3d as usize].position,
                u: kp.u,
                v: kp.v,
                confidence: m.confidence,
            }
        })
        .collect();
    let coarse = mlesac(&correspondences, k, &cfg.mlesac).map_err(failed)?;
    let estimate = refine_pose(&coarse, &correspondences, k, &cfg.refine).map_err(failed)?;
    Ok(Localization {
        estimate,
        correspondences,
        coarse_evaluations: scored.coarse_evaluations,
        fine_evaluations: scored.fine_evaluations,
    })
}
