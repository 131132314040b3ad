//! Pinhole camera model, rigid poses and the two localization error metrics.
//!
//! Poses map world points into the camera frame: `p_cam = R * p_world + T`.
//! Pixel coordinates are continuous with the top-left image corner at `(0, 0)`,
//! so the pixel with integer index `(i, j)` covers `[i, i+1) x [j, j+1)`.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Orthonormality tolerance for rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point lies on the principal plane (depth {0:e})")]
    DegenerateProjection(f64),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub skew: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            skew: 0.0,
        }
    }

    /// Checks focal lengths and that the principal point lies on a `width x height` sensor.
    pub fn validate(&self, width: u32, height: u32) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.skew]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::InvalidIntrinsics("non-finite parameter".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.cx < 0.0 || self.cx > width as f64 || self.cy < 0.0 || self.cy > height as f64 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} sensor",
                self.cx, self.cy, width, height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0,
        )
    }

    /// Maps a camera-frame point with nonzero z to pixels.
    #[inline]
    pub fn to_pixel(&self, cam: &Vec3) -> (f64, f64) {
        let x = cam.x / cam.z;
        let y = cam.y / cam.z;
        (self.fx * x + self.skew * y + self.cx, self.fy * y + self.cy)
    }

    /// Normalized image-plane coordinates `(x/z, y/z)` of a pixel.
    #[inline]
    pub fn to_normalized(&self, u: f64, v: f64) -> (f64, f64) {
        let y = (v - self.cy) / self.fy;
        let x = (u - self.cx - self.skew * y) / self.fx;
        (x, y)
    }

    /// Unit bearing vector through a pixel.
    pub fn bearing(&self, u: f64, v: f64) -> Vec3 {
        let (x, y) = self.to_normalized(u, v);
        Vec3::new(x, y, 1.0).normalize()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Validating constructor.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn from_axis_angle(axis_angle: Vec3, translation: Vec3) -> Self {
        Self {
            rotation: Rotation3::new(axis_angle).into_inner(),
            translation,
        }
    }

    /// Camera at `eye` looking at `target`; image y axis points roughly along `-up`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self, GeometryError> {
        let z = target - eye;
        if z.norm() < 1e-12 {
            return Err(GeometryError::InvalidPose("eye coincides with target".into()));
        }
        let z = z.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(GeometryError::InvalidPose("up vector parallel to view".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Ok(Self {
            rotation,
            translation: -(rotation * eye),
        })
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.translation.iter().all(|v| v.is_finite())
            || !self.rotation.iter().all(|v| v.is_finite())
        {
            return Err(GeometryError::InvalidPose("non-finite entry".into()));
        }
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        let det = self.rotation.determinant();
        if ortho > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidPose(format!(
                "rotation not orthonormal (|RtR-I|={ortho:e}, det={det})"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Camera-to-world transform.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Camera center in world coordinates, `-Rᵀ T`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }

    pub fn from_row_major(rotation: &[f64; 9], translation: &[f64; 3]) -> Result<Self, GeometryError> {
        Self::new(
            Matrix3::from_row_slice(rotation),
            Vec3::new(translation[0], translation[1], translation[2]),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Projects a world point; no frustum check.
pub fn project(point: &Vec3, pose: &Pose, k: &Intrinsics) -> Result<Projection, GeometryError> {
    let cam = pose.transform(point);
    if cam.z.abs() < 1e-12 {
        return Err(GeometryError::DegenerateProjection(cam.z));
    }
    let (u, v) = k.to_pixel(&cam);
    Ok(Projection { u, v, depth: cam.z })
}

/// Inverse of [`project`] for a known depth.
pub fn back_project(proj: &Projection, pose: &Pose, k: &Intrinsics) -> Vec3 {
    let (x, y) = k.to_normalized(proj.u, proj.v);
    let cam = Vec3::new(x * proj.depth, y * proj.depth, proj.depth);
    pose.rotation.transpose() * (cam - pose.translation)
}

/// Strict image-bounds and positive-depth test.
#[inline]
pub fn in_frustum(proj: &Projection, img_w: u32, img_h: u32) -> bool {
    proj.u > 0.0
        && proj.u < img_w as f64
        && proj.v > 0.0
        && proj.v < img_h as f64
        && proj.depth > 0.0
}

pub fn position_error(gt: &Vec3, est: &Vec3) -> f64 {
    (gt - est).norm()
}

/// Angle of the relative rotation `R_g R_eᵀ`, in degrees.
///
/// Equal to `(180/π)·acos((tr(R_g R_eᵀ) − 1)/2)` with the argument clamped to
/// `[−1, 1]`. Evaluated as `atan2(sin, cos)` with the sine taken from the
/// skew-symmetric part, which keeps full precision for angles near 0 and 180°.
pub fn rotation_error_deg(gt: &Pose, est: &Pose) -> f64 {
    relative_rotation_angle(&(gt.rotation * est.rotation.transpose())).to_degrees()
}

/// Rotation angle in radians of a rotation matrix.
pub fn relative_rotation_angle(m: &Matrix3<f64>) -> f64 {
    let cos = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let skew = Vec3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    let sin = (skew.norm() / 2.0).min(1.0);
    sin.atan2(cos)
}

/// A posed, calibrated image.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub image_id: u32,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
    pub width: u32,
    pub height: u32,
}

impl CameraView {
    pub fn project(&self, p: &Vec3) -> Result<Projection, GeometryError> {
        project(p, &self.pose, &self.intrinsics)
    }

    /// Projection if the point lands strictly inside the image in front of the camera.
    pub fn project_visible(&self, p: &Vec3) -> Option<Projection> {
        self.project(p)
            .ok()
            .filter(|proj| in_frustum(proj, self.width, self.height))
    }

    pub fn to_record(&self) -> ViewRecord {
        ViewRecord {
            image_id: self.image_id,
            rotation: Some(self.pose.rotation_row_major()),
            translation: Some([
                self.pose.translation.x,
                self.pose.translation.y,
                self.pose.translation.z,
            ]),
            fx: self.intrinsics.fx,
            fy: self.intrinsics.fy,
            cx: self.intrinsics.cx,
            cy: self.intrinsics.cy,
            skew: self.intrinsics.skew,
            width: self.width,
            height: self.height,
        }
    }
}

/// One entry of a pose file. Rotation and translation may be omitted when the
/// record only carries calibration (e.g. for a query image with unknown pose).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub image_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[f64; 9]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation: Option<[f64; 3]>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub skew: f64,
    pub width: u32,
    pub height: u32,
}

impl ViewRecord {
    pub fn intrinsics(&self) -> Result<Intrinsics, GeometryError> {
        let k = Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            skew: self.skew,
        };
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics("zero image dimension".into()));
        }
        k.validate(self.width, self.height)?;
        Ok(k)
    }

    pub fn pose(&self) -> Result<Option<Pose>, GeometryError> {
        match (&self.rotation, &self.translation) {
            (Some(r), Some(t)) => Pose::from_row_major(r, t).map(Some),
            (None, None) => Ok(None),
            _ => Err(GeometryError::InvalidPose(
                "rotation and translation must be given together".into(),
            )),
        }
    }

    pub fn to_view(&self) -> Result<CameraView, GeometryError> {
        let intrinsics = self.intrinsics()?;
        let pose = self
            .pose()?
            .ok_or_else(|| GeometryError::InvalidPose(format!("image {} has no pose", self.image_id)))?;
        Ok(CameraView {
            image_id: self.image_id,
            pose,
            intrinsics,
            width: self.width,
            height: self.height,
        })
    }
}
