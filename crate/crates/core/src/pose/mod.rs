//! Camera pose from 2D-3D matches: P3P hypotheses scored by MLESAC, then
//! Levenberg-Marquardt refinement of the reprojection error on the inliers.

mod localize;
mod mlesac;
mod p3p;
mod refine;

pub use localize::{localize, LocalizeConfig, Localization};
pub use mlesac::{mlesac, mlesac_with_audit, mixture_cost, AuditEntry, MlesacConfig, MIN_SAMPLE_PIXEL_DISTANCE};
pub use p3p::{p3p_solve, MIN_TRIANGLE_AREA, P3P_SELF_CHECK_PX};
pub use refine::{
    apply_increment, refine_pose, refine_pose_with_history, reprojection_cost, reprojection_jacobian, RefineConfig,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{position_error, rotation_error_deg, Intrinsics, Pose, Vec3};
use crate::matcher::MatcherError;

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("degenerate minimal sample: {0}")]
    DegenerateConfiguration(String),
    #[error("no real P3P solution")]
    NoRealSolution,
    #[error("need at least {needed} correspondences, found {found}")]
    InsufficientCorrespondences { needed: usize, found: usize },
    #[error("every MLESAC sample was degenerate")]
    NoHypothesisFound,
    #[error("refinement diverged at iteration {iteration}")]
    RefinementDiverged { iteration: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Matcher(#[from] MatcherError),
    #[error("localization failed: {0}")]
    LocalizationFailed(Box<PoseError>),
}

/// A world point and the pixel it was matched to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub world: Vec3,
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub pose: Pose,
    /// Indices into the correspondence list with reprojection error within the inlier threshold.
    pub inlier_ids: Vec<usize>,
    /// Mean inlier reprojection error in pixels; 0 without inliers.
    pub mean_reprojection_error: f64,
    pub iterations_used: usize,
}

/// Reprojection error in pixels; infinite for points not in front of the camera.
pub fn reprojection_error(pose: &Pose, c: &Correspondence, k: &Intrinsics) -> f64 {
    p3p::reprojection_error(pose, c, k)
}

pub(crate) fn inliers_of(pose: &Pose, corrs: &[Correspondence], k: &Intrinsics, threshold: f64) -> (Vec<usize>, f64) {
    let mut ids = Vec::new();
    let mut sum = 0.0;
    for (i, c) in corrs.iter().enumerate() {
        let e = reprojection_error(pose, c, k);
        if e <= threshold {
            ids.push(i);
            sum += e;
        }
    }
    let mean = if ids.is_empty() { 0.0 } else { sum / ids.len() as f64 };
    (ids, mean)
}

/// Per-query localization record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRecord {
    pub image_id: u32,
    pub success: bool,
    pub rotation: Option<[f64; 9]>,
    pub translation: Option<[f64; 3]>,
    pub n_matches: usize,
    pub n_inliers: usize,
    pub mean_reproj_px: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub position_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rotation_error_deg: Option<f64>,
}

impl LocalizationRecord {
    /// Record of one query; errors against `ground_truth` are filled in on success.
    pub fn from_outcome(image_id: u32, outcome: &Result<Localization, PoseError>, ground_truth: Option<&Pose>) -> Self {
        match outcome {
            Ok(loc) => {
                let pose = &loc.estimate.pose;
                Self {
                    image_id,
                    success: true,
                    rotation: Some(pose.rotation_row_major()),
                    translation: Some([pose.translation.x, pose.translation.y, pose.translation.z]),
                    n_matches: loc.n_matches(),
                    n_inliers: loc.n_inliers(),
                    mean_reproj_px: Some(loc.estimate.mean_reprojection_error),
                    error: None,
                    position_error: ground_truth.map(|gt| position_error(&gt.center(), &pose.center())),
                    rotation_error_deg: ground_truth.map(|gt| rotation_error_deg(gt, pose)),
                }
            }
            Err(e) => Self {
                image_id,
                success: false,
                rotation: None,
                translation: None,
                n_matches: 0,
                n_inliers: 0,
                mean_reproj_px: None,
                error: Some(e.to_string()),
                position_error: None,
                rotation_error_deg: None,
            },
        }
    }
}
