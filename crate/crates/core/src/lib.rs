//! Localizing images in point clouds by learned cross-modal descriptor matching.
//!
//! The training path detects curvature keypoints with intensity-gradient
//! descriptors in the cloud and DoG keypoints with gradient-histogram
//! descriptors in posed images, pairs them by projecting 3D keypoints into each
//! image (with an occlusion filter over a point-cloud depth map), and trains a
//! two-stage classifier on concatenated descriptor pairs. The query path scores
//! all descriptor pairs with the classifier, keeps mutual best matches and
//! recovers the camera pose with P3P inside MLESAC followed by
//! Levenberg-Marquardt refinement.

pub mod cloud;
pub mod dataset;
pub mod descriptor;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod matcher;
pub mod pose;
pub mod synth;

pub use descriptor::Descriptor;
pub use geometry::{CameraView, Intrinsics, Pose, Projection, Vec3};
