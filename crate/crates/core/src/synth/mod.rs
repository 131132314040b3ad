//! Deterministic synthetic scenes: gridded surfaces with value-noise texture
//! and painted bump landmarks, a z-buffered point-splat renderer, and
//! benchmark bundles of rendered views with ground-truth poses.

mod bundle;
mod render;
mod texture;

pub use bundle::{make_benchmark, orbit_views, BenchmarkConfig, Manifest};
pub use render::{render_depth, render_view, RenderedView};
pub use texture::{fractal_noise, value_noise};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{CloudError, CloudPoint, PointCloud};
use crate::descriptor::derive_seed;
use crate::geometry::{CameraView, GeometryError, Intrinsics, Pose, Vec3};
use crate::image::ImageError;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// Closed room `[-x/2, x/2] x [-y/2, y/2] x [0, z]`, surfaces seen from inside.
    TexturedBoxRoom,
    /// One wall `x` wide and `y` high at depth `z` in front of the canonical camera.
    WallWithBumps,
    /// A wall `x` wide and `y` high at depth `2z`, with its left half hidden by
    /// a front wall at depth `z`.
    TwoWallOccluder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub layout: Layout,
    pub point_spacing: f64,
    /// Seed of the texture and landmark placement.
    pub seed: u64,
    pub extent: [f64; 3],
    /// Bump landmarks per square unit of surface.
    pub landmark_density: f64,
    pub bump_height: f64,
    /// Standard deviation of the Gaussian bump profile.
    pub bump_width: f64,
    /// Peak-to-peak amplitude of the background noise texture.
    pub texture_contrast: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::new(Layout::TexturedBoxRoom, 0.04, 0)
    }
}

impl SceneSpec {
    /// Layout defaults: a 4 x 4 x 3 room, a 3 x 2 wall at depth 3, or
    /// occluding walls 3 x 2 at depths 2 and 4.
    pub fn new(layout: Layout, point_spacing: f64, seed: u64) -> Self {
        let (extent, landmark_density) = match layout {
            Layout::TexturedBoxRoom => ([4.0, 4.0, 3.0], 4.0),
            Layout::WallWithBumps => ([3.0, 2.0, 3.0], 2.0),
            Layout::TwoWallOccluder => ([3.0, 2.0, 2.0], 0.0),
        };
        Self {
            layout,
            point_spacing,
            seed,
            extent,
            landmark_density,
            bump_height: 0.04,
            bump_width: 0.04,
            texture_contrast: 0.7,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if !(self.point_spacing > 0.0 && self.point_spacing.is_finite()) {
            return bad(format!("point_spacing must be positive, got {}", self.point_spacing));
        }
        if self.extent.iter().any(|&e| !(e > 10.0 * self.point_spacing && e.is_finite())) {
            return bad(format!("every extent must exceed 10 x point_spacing, got {:?}", self.extent));
        }
        if !(self.landmark_density >= 0.0) || !(self.bump_height >= 0.0) || !(self.bump_width > 0.0)
            || !(0.0..=1.0).contains(&self.texture_contrast)
        {
            return bad("landmark_density and bump_height must be non-negative, bump_width positive".into());
        }
        Ok(())
    }

    fn faces(&self) -> Vec<Face> {
        let [x, y, z] = self.extent;
        let (ex, ey, ez) = (Vec3::x(), Vec3::y(), Vec3::z());
        match self.layout {
            Layout::TexturedBoxRoom => {
                let c = |a: f64, b: f64, h: f64| Vec3::new(a, b, h);
                vec![
                    Face::new(c(-x / 2.0, -y / 2.0, 0.0), ex, ey, x, y, ez),
                    Face::new(c(-x / 2.0, -y / 2.0, z), ex, ey, x, y, -ez),
                    Face::new(c(-x / 2.0, -y / 2.0, 0.0), ey, ez, y, z, ex),
                    Face::new(c(x / 2.0, -y / 2.0, 0.0), ey, ez, y, z, -ex),
                    Face::new(c(-x / 2.0, -y / 2.0, 0.0), ex, ez, x, z, ey),
                    Face::new(c(-x / 2.0, y / 2.0, 0.0), ex, ez, x, z, -ey),
                ]
            }
            Layout::WallWithBumps => vec![Face::new(Vec3::new(-x / 2.0, -y / 2.0, z), ex, ey, x, y, -ez)],
            Layout::TwoWallOccluder => vec![
                Face::new(Vec3::new(-x / 2.0, -y / 2.0, 2.0 * z), ex, ey, x, y, -ez),
                Face::new(Vec3::new(-x / 2.0, -y / 2.0, z), ex, ey, x / 2.0, y, -ez),
            ],
        }
    }

    /// Number of points [`generate_scene`] produces: the product of the grid
    /// sizes `floor(side / spacing)` of each face, summed over faces.
    pub fn point_count(&self) -> usize {
        self.faces()
            .iter()
            .map(|f| grid_len(f.len_u, self.point_spacing) * grid_len(f.len_v, self.point_spacing))
            .sum()
    }

    /// Camera with identity orientation at the origin for the wall layouts,
    /// and at the room center looking along +x for the box room.
    pub fn canonical_view(&self, width: u32, height: u32, focal: f64) -> Result<CameraView, SynthError> {
        let pose = match self.layout {
            Layout::TexturedBoxRoom => {
                let c = Vec3::new(0.0, 0.0, self.extent[2] / 2.0);
                Pose::look_at(c, c + Vec3::x(), Vec3::z())?
            }
            _ => Pose::identity(),
        };
        Ok(CameraView {
            image_id: 0,
            pose,
            intrinsics: Intrinsics::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0),
            width,
            height,
        })
    }
}

fn grid_len(side: f64, spacing: f64) -> usize {
    (side / spacing + 1e-9).floor() as usize
}

/// A rectangular surface patch; `normal` points toward the viewer side.
#[derive(Debug, Clone, Copy)]
struct Face {
    origin: Vec3,
    axis_u: Vec3,
    axis_v: Vec3,
    len_u: f64,
    len_v: f64,
    normal: Vec3,
}

impl Face {
    fn new(origin: Vec3, axis_u: Vec3, axis_v: Vec3, len_u: f64, len_v: f64, normal: Vec3) -> Self {
        Self {
            origin,
            axis_u,
            axis_v,
            len_u,
            len_v,
            normal,
        }
    }
}

/// A bump with a painted radial intensity pattern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    /// Bump apex, a cloud point.
    pub apex: Vec3,
    /// Unit normal of the underlying surface, pointing toward the viewer side.
    pub normal: Vec3,
    face: usize,
    base: Vec3,
    spot_amplitude: f64,
    spot_sigma: f64,
    ring: Option<(f64, f64)>,
}

const RING_WIDTH: f64 = 0.025;
/// Bumps are truncated at this many standard deviations.
const BUMP_CUTOFF: f64 = 3.0;

impl Landmark {
    fn intensity(&self, d: f64) -> f64 {
        let mut v = self.spot_amplitude * (-d * d / (2.0 * self.spot_sigma * self.spot_sigma)).exp();
        if let Some((radius, amp)) = self.ring {
            let t = (d - radius) / RING_WIDTH;
            v += amp * (-0.5 * t * t).exp();
        }
        v
    }
}

fn bump_profile(d: f64, height: f64, width: f64) -> f64 {
    if d >= BUMP_CUTOFF * width {
        return 0.0;
    }
    let floor = (-0.5 * BUMP_CUTOFF * BUMP_CUTOFF).exp();
    height * ((-0.5 * d * d / (width * width)).exp() - floor) / (1.0 - floor)
}

fn place_landmarks(spec: &SceneSpec, faces: &[Face]) -> Vec<Landmark> {
    let s = spec.point_spacing;
    let margin = BUMP_CUTOFF * spec.bump_width + 2.0 * s;
    let min_sep = 2.0 * BUMP_CUTOFF * spec.bump_width + 0.1;
    let mut out = Vec::new();
    for (fi, f) in faces.iter().enumerate() {
        let (nu, nv) = (grid_len(f.len_u, s), grid_len(f.len_v, s));
        let inner = (f.len_u - 2.0 * margin).max(0.0) * (f.len_v - 2.0 * margin).max(0.0);
        let want = (spec.landmark_density * inner).round() as usize;
        if want == 0 {
            continue;
        }
        let (ou, ov) = (grid_offset(f.len_u, nu, s), grid_offset(f.len_v, nv, s));
        let lo_u = ((margin - ou) / s).ceil().max(0.0) as usize;
        let lo_v = ((margin - ov) / s).ceil().max(0.0) as usize;
        let hi_u = nu.saturating_sub(lo_u);
        let hi_v = nv.saturating_sub(lo_v);
        if hi_u <= lo_u || hi_v <= lo_v {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 1000 + fi as u64));
        let mut placed: Vec<Landmark> = Vec::new();
        for _ in 0..100 * want {
            if placed.len() == want {
                break;
            }
            let (i, j) = (rng.gen_range(lo_u..hi_u), rng.gen_range(lo_v..hi_v));
            let base = f.origin + f.axis_u * (ou + i as f64 * s) + f.axis_v * (ov + j as f64 * s);
            if placed.iter().any(|l| (l.base - base).norm() < min_sep) {
                continue;
            }
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let spot_amplitude = sign * rng.gen_range(0.3..0.45);
            let spot_sigma = rng.gen_range(0.035..0.07);
            let ring = rng
                .gen_bool(0.5)
                .then(|| (rng.gen_range(0.1..0.18), -0.7 * spot_amplitude));
            placed.push(Landmark {
                apex: base + f.normal * spec.bump_height,
                normal: f.normal,
                face: fi,
                base,
                spot_amplitude,
                spot_sigma,
                ring,
            });
        }
        out.extend(placed);
    }
    out
}

fn grid_offset(len: f64, n: usize, s: f64) -> f64 {
    (len - (n as f64 - 1.0) * s) / 2.0
}

/// Bump landmarks of the scene, in generation order.
pub fn scene_landmarks(spec: &SceneSpec) -> Result<Vec<Landmark>, SynthError> {
    spec.validate()?;
    Ok(place_landmarks(spec, &spec.faces()))
}

/// Samples every face on a centered square grid with the point spacing,
/// displaces grid points by the bump landmarks and colors them with
/// multi-octave value noise plus the landmarks' painted patterns.
pub fn generate_scene(spec: &SceneSpec) -> Result<PointCloud, SynthError> {
    spec.validate()?;
    let faces = spec.faces();
    let landmarks = place_landmarks(spec, &faces);
    let s = spec.point_spacing;
    let texture_seed = derive_seed(spec.seed, 1);
    let mut points = Vec::with_capacity(spec.point_count());
    for (fi, f) in faces.iter().enumerate() {
        let local: Vec<&Landmark> = landmarks.iter().filter(|l| l.face == fi).collect();
        let (nu, nv) = (grid_len(f.len_u, s), grid_len(f.len_v, s));
        let (ou, ov) = (grid_offset(f.len_u, nu, s), grid_offset(f.len_v, nv, s));
        for j in 0..nv {
            for i in 0..nu {
                let base = f.origin + f.axis_u * (ou + i as f64 * s) + f.axis_v * (ov + j as f64 * s);
                let mut intensity = 0.5 + spec.texture_contrast * (fractal_noise(texture_seed, &base) - 0.5);
                let mut lift = 0.0;
                for l in &local {
                    let d = (base - l.base).norm();
                    lift += bump_profile(d, spec.bump_height, spec.bump_width);
                    intensity += l.intensity(d);
                }
                points.push(CloudPoint {
                    position: base + f.normal * lift,
                    intensity: intensity.clamp(0.0, 1.0),
                });
            }
        }
    }
    Ok(PointCloud::new(points)?)
}
