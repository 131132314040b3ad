use crate::cloud::{Keypoint3D, PointCloud};
use crate::geometry::CameraView;

use super::DatasetError;

/// Per-pixel nearest depth of the cloud seen from one view; `+inf` where no
/// point lands.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<f64>,
}

impl DepthMap {
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.depth[y as usize * self.width as usize + x as usize]
    }

    /// Fraction of pixels with a finite depth.
    pub fn coverage(&self) -> f64 {
        self.depth.iter().filter(|d| d.is_finite()).count() as f64 / self.depth.len() as f64
    }
}

pub fn build_depth_map(cloud: &PointCloud, view: &CameraView) -> DepthMap {
    let (w, h) = (view.width, view.height);
    let mut depth = vec![f64::INFINITY; w as usize * h as usize];
    for p in cloud.points() {
        if let Some(proj) = view.project_visible(&p.position) {
            let idx = proj.v.floor() as usize * w as usize + proj.u.floor() as usize;
            if proj.depth < depth[idx] {
                depth[idx] = proj.depth;
            }
        }
    }
    DepthMap {
        width: w,
        height: h,
        depth,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedKeypoint {
    pub keypoint3d_id: u32,
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProjectedKeypointSet {
    pub entries: Vec<ProjectedKeypoint>,
}

/// Projects keypoints (ids are their indices) and keeps those inside the view.
pub fn project_keypoints(keys: &[Keypoint3D], view: &CameraView) -> ProjectedKeypointSet {
    let entries = keys
        .iter()
        .enumerate()
        .filter_map(|(id, kp)| {
            view.project_visible(&kp.position).map(|p| ProjectedKeypoint {
                keypoint3d_id: id as u32,
                u: p.u,
                v: p.v,
                depth: p.depth,
            })
        })
        .collect();
    ProjectedKeypointSet { entries }
}

/// Depth-block filter settings: block side `tau` in pixels (odd) and depth
/// tolerance `depth_slack` in scene units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbfParams {
    tau: u32,
    depth_slack: f64,
}

impl DbfParams {
    pub fn new(tau: u32, depth_slack: f64) -> Result<Self, DatasetError> {
        if tau == 0 || tau % 2 == 0 {
            return Err(DatasetError::InvalidParameter(format!(
                "tau must be odd and at least 1, got {tau}"
            )));
        }
        if !(depth_slack > 0.0) || !depth_slack.is_finite() {
            return Err(DatasetError::InvalidParameter(format!(
                "depth_slack must be positive, got {depth_slack}"
            )));
        }
        Ok(Self { tau, depth_slack })
    }

    pub fn tau(&self) -> u32 {
        self.tau
    }

    pub fn depth_slack(&self) -> f64 {
        self.depth_slack
    }
}

/// Keeps a keypoint iff its depth is at most the smallest finite depth in the
/// `tau x tau` block around its pixel plus the slack.
pub fn depth_block_filter(
    projected: &ProjectedKeypointSet,
    dmap: &DepthMap,
    params: &DbfParams,
) -> ProjectedKeypointSet {
    let half = (params.tau / 2) as i64;
    let (w, h) = (dmap.width as i64, dmap.height as i64);
    let entries = projected
        .entries
        .iter()
        .filter(|e| {
            let (px, py) = (e.u.floor() as i64, e.v.floor() as i64);
            let mut min = f64::INFINITY;
            for y in (py - half).max(0)..=(py + half).min(h - 1) {
                for x in (px - half).max(0)..=(px + half).min(w - 1) {
                    min = min.min(dmap.get(x as u32, y as u32));
                }
            }
            min.is_finite() && e.depth <= min + params.depth_slack
        })
        .copied()
        .collect();
    ProjectedKeypointSet { entries }
}
