use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_scene, render_depth, Layout, SceneSpec, SynthError};
use crate::cloud::{write_ply, PointCloud};
use crate::descriptor::derive_seed;
use crate::geometry::{CameraView, Intrinsics, Pose, Vec3, ViewRecord};
use crate::image::write_pgm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub scene: SceneSpec,
    pub n_train: usize,
    pub n_query: usize,
    /// Seed of the camera poses.
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub splat_radius_px: f64,
    /// Smallest fraction of covered pixels accepted for a view.
    pub min_coverage: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            n_train: 8,
            n_query: 4,
            seed: 0,
            width: 384,
            height: 288,
            focal: 180.0,
            splat_radius_px: 2.2,
            min_coverage: 0.3,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        self.scene.validate()?;
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.into()));
        if self.n_train == 0 || self.n_query == 0 {
            return bad("n_train and n_query must be at least 1");
        }
        if self.n_train + self.n_query > 1000 {
            return bad("at most 1000 views");
        }
        if self.width < 32 || self.height < 32 || !(self.focal > 0.0) {
            return bad("views must be at least 32 x 32 with positive focal length");
        }
        if !(self.splat_radius_px > 0.0) || !(0.0..=1.0).contains(&self.min_coverage) {
            return bad("splat_radius_px must be positive and min_coverage in [0, 1]");
        }
        Ok(())
    }
}

/// Split of a bundle's image ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub train: Vec<u32>,
    pub query: Vec<u32>,
    pub config: BenchmarkConfig,
}

const MAX_POSE_ATTEMPTS: u64 = 100;

fn sample_pose(cfg: &BenchmarkConfig, id: usize, attempt: u64) -> Result<Pose, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(cfg.seed, id as u64), attempt));
    let [x, y, z] = cfg.scene.extent;
    let (n_train, n_query) = (cfg.n_train as f64, cfg.n_query as f64);
    let step = std::f64::consts::TAU / n_train;
    let jitter = rng.gen_range(-0.25..0.25) * step;
    match cfg.scene.layout {
        Layout::TexturedBoxRoom => {
            let theta = if id < cfg.n_train {
                id as f64 * step
            } else {
                std::f64::consts::TAU * ((id - cfg.n_train) as f64 + 0.5) / n_query
            } + jitter;
            let radius = 0.2 * x.min(y) * rng.gen_range(0.9..1.1);
            let center = Vec3::new(0.0, 0.0, z / 2.0);
            let eye = center + Vec3::new(radius * theta.cos(), radius * theta.sin(), rng.gen_range(-0.1..0.1) * z);
            let target = center + Vec3::new(rng.gen_range(-0.05..0.05) * x, rng.gen_range(-0.05..0.05) * y, 0.0);
            Ok(Pose::look_at(eye, target, Vec3::z())?)
        }
        Layout::WallWithBumps | Layout::TwoWallOccluder => {
            let eye = Vec3::new(
                rng.gen_range(-0.1..0.1) * x,
                rng.gen_range(-0.1..0.1) * y,
                rng.gen_range(-0.1..0.1) * z,
            );
            let depth = if cfg.scene.layout == Layout::TwoWallOccluder { 2.0 * z } else { z };
            let target = Vec3::new(rng.gen_range(-0.1..0.1) * x, rng.gen_range(-0.1..0.1) * y, depth);
            Ok(Pose::look_at(eye, target, -Vec3::y())?)
        }
    }
}

/// Training views on an interior orbit around the scene center, evenly
/// spaced in angle and jittered; query views sit between them. A pose is
/// redrawn until its rendering covers `min_coverage` of the image.
pub fn orbit_views(cloud: &PointCloud, cfg: &BenchmarkConfig) -> Result<Vec<CameraView>, SynthError> {
    cfg.validate()?;
    let k = Intrinsics::new(cfg.focal, cfg.focal, cfg.width as f64 / 2.0, cfg.height as f64 / 2.0);
    (0..cfg.n_train + cfg.n_query)
        .into_par_iter()
        .map(|id| {
            for attempt in 0..MAX_POSE_ATTEMPTS {
                let view = CameraView {
                    image_id: id as u32,
                    pose: sample_pose(cfg, id, attempt)?,
                    intrinsics: k,
                    width: cfg.width,
                    height: cfg.height,
                };
                if render_depth(cloud.points(), &view, cfg.splat_radius_px).coverage() >= cfg.min_coverage {
                    return Ok(view);
                }
            }
            Err(SynthError::Format(format!(
                "no pose for view {id} reached coverage {}",
                cfg.min_coverage
            )))
        })
        .collect()
}

/// Writes `cloud.ply`, `images/NNN.pgm`, `poses.json` and `manifest.json`.
pub fn make_benchmark(cfg: &BenchmarkConfig, out_dir: &Path) -> Result<Manifest, SynthError> {
    cfg.validate()?;
    let cloud = generate_scene(&cfg.scene)?;
    let views = orbit_views(&cloud, cfg)?;
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir)?;
    let mut ply = BufWriter::new(File::create(out_dir.join("cloud.ply"))?);
    write_ply(&cloud, &mut ply)?;
    ply.flush()?;
    views.par_iter().try_for_each(|view| -> Result<(), SynthError> {
        let img = render_depth(cloud.points(), view, cfg.splat_radius_px).image;
        let mut out = BufWriter::new(File::create(images_dir.join(format!("{:03}.pgm", view.image_id)))?);
        write_pgm(&img, &mut out)?;
        out.flush()?;
        Ok(())
    })?;
    let records: Vec<ViewRecord> = views.iter().map(CameraView::to_record).collect();
    write_json(&out_dir.join("poses.json"), &records)?;
    let manifest = Manifest {
        train: (0..cfg.n_train as u32).collect(),
        query: (cfg.n_train as u32..(cfg.n_train + cfg.n_query) as u32).collect(),
        config: cfg.clone(),
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SynthError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| SynthError::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
