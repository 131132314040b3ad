//! Point clouds: ingestion, spatial indexing, curvature keypoints and
//! rotation-invariant intensity-gradient descriptors.

mod features;
mod index;
mod keypoints;
mod ply;
mod rift;

pub use features::{read_features_3d, write_features_3d, FeatureSet3D, C3DF_MAGIC, C3DF_VERSION};
pub use index::SpatialIndex;
pub use keypoints::{
    detect_keypoints_3d, median_spacing, principal_curvature, DetectorParams3D, Keypoint3D,
};
pub use ply::{load_ply, read_ply, write_ply};
pub use rift::{compute_descriptor_3d, intensity_gradient, DescriptorParams3D, DESCRIPTOR_3D_LEN};

use crate::geometry::Vec3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("PLY parse error: {0}")]
    Parse(String),
    #[error("PLY vertex element lacks property `{0}`")]
    MissingProperty(&'static str),
    #[error("invalid point cloud: {0}")]
    Invalid(String),
    #[error("neighborhood has {found} points, need at least {needed}")]
    InsufficientNeighborhood { found: usize, needed: usize },
    #[error("feature file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub position: Vec3,
    /// Luminance in `[0, 1]`.
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<CloudPoint>,
}

impl PointCloud {
    /// Builds a cloud, checking that it is nonempty with finite positions and
    /// intensities in `[0, 1]`.
    pub fn new(points: Vec<CloudPoint>) -> Result<Self, CloudError> {
        if points.is_empty() {
            return Err(CloudError::Invalid("cloud has no points".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.position.iter().all(|v| v.is_finite()) {
                return Err(CloudError::Invalid(format!("point {i} has a non-finite position")));
            }
            if !(0.0..=1.0).contains(&p.intensity) {
                return Err(CloudError::Invalid(format!(
                    "point {i} intensity {} outside [0, 1]",
                    p.intensity
                )));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[CloudPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }

    /// Axis-aligned bounding box diagonal.
    pub fn diameter(&self) -> f64 {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.points {
            lo = lo.inf(&p.position);
            hi = hi.sup(&p.position);
        }
        (hi - lo).norm()
    }
}

/// Settings for 3D feature extraction. Scales and the gradient radius are
/// multiples of the cloud's median nearest-neighbor spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Extract3DConfig {
    pub scale_multipliers: Vec<f64>,
    pub response_threshold: f64,
    pub gradient_radius_multiplier: f64,
}

impl Default for Extract3DConfig {
    fn default() -> Self {
        Self {
            scale_multipliers: vec![2.0, 4.0, 8.0],
            response_threshold: 0.01,
            gradient_radius_multiplier: 2.0,
        }
    }
}

impl Extract3DConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.scale_multipliers.is_empty() {
            return Err("scale_multipliers must be nonempty".into());
        }
        if self
            .scale_multipliers
            .windows(2)
            .any(|w| !(w[0] < w[1]))
            || self.scale_multipliers.iter().any(|&s| !(s > 0.0))
        {
            return Err("scale_multipliers must be positive and strictly increasing".into());
        }
        if !(self.response_threshold >= 0.0) {
            return Err("response_threshold must be non-negative".into());
        }
        if !(self.gradient_radius_multiplier > 0.0) {
            return Err("gradient_radius_multiplier must be positive".into());
        }
        Ok(())
    }
}

/// Detects keypoints and describes them; degenerate (all-zero) descriptors are dropped.
pub fn extract_features_3d(
    cloud: &PointCloud,
    index: &SpatialIndex,
    cfg: &Extract3DConfig,
) -> FeatureSet3D {
    let spacing = median_spacing(cloud, index);
    let detector = DetectorParams3D {
        scales: cfg.scale_multipliers.iter().map(|m| m * spacing).collect(),
        response_threshold: cfg.response_threshold,
    };
    let describer = DescriptorParams3D {
        gradient_radius: cfg.gradient_radius_multiplier * spacing,
    };
    let keypoints = detect_keypoints_3d(cloud, index, &detector);
    let described: Vec<_> = keypoints
        .into_par_iter()
        .filter_map(|kp| {
            let d = compute_descriptor_3d(cloud, index, &kp, &describer).ok()?;
            (!d.is_zero()).then_some((kp, d))
        })
        .collect();
    let (keypoints, descriptors) = described.into_iter().unzip();
    FeatureSet3D {
        keypoints,
        descriptors,
    }
}
