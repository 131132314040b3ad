//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cloudloc::cloud::PointCloud;
use cloudloc::pose::Correspondence;
use cloudloc::synth::{generate_scene, SceneSpec};
use cloudloc::{CameraView, Intrinsics, Pose, Vec3};

/// The default box room and a view from its center.
pub fn room() -> (PointCloud, CameraView) {
    let spec = SceneSpec::default();
    let cloud = generate_scene(&spec).expect("default scene is valid");
    let view = spec.canonical_view(384, 288, 180.0).expect("canonical view exists");
    (cloud, view)
}

/// `n` correspondences seen from a fixed pose, the first `n_out` with random pixels.
pub fn correspondences(n: usize, n_out: usize, noise: f64, seed: u64) -> (Intrinsics, Pose, Vec<Correspondence>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = Intrinsics::new(400.0, 400.0, 320.0, 240.0);
    let pose = Pose::from_axis_angle(Vec3::new(0.1, -0.2, 0.05), Vec3::new(0.3, -0.1, 0.5));
    let corrs = (0..n)
        .map(|i| {
            let (u, v) = (rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0));
            let z = rng.gen_range(3.0..10.0);
            let (x, y) = k.to_normalized(u, v);
            let world = pose.rotation.transpose() * (Vec3::new(x * z, y * z, z) - pose.translation);
            let (pu, pv) = if i < n_out {
                (rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0))
            } else {
                (u + rng.gen_range(-noise..=noise), v + rng.gen_range(-noise..=noise))
            };
            Correspondence {
                world,
                u: pu,
                v: pv,
                confidence: 1.0,
            }
        })
        .collect();
    (k, pose, corrs)
}
