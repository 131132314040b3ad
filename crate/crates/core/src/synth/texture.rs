use crate::descriptor::derive_seed;
use crate::geometry::Vec3;

const OCTAVES: usize = 4;
/// Lattice frequency of the coarsest octave, cycles per scene unit.
const BASE_FREQUENCY: f64 = 2.5;

fn lattice(seed: u64, x: i64, y: i64, z: i64) -> f64 {
    let key = (x as u64).wrapping_mul(0x8CB9_2BA7_2F3D_8DD7)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (z as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    (derive_seed(seed, key) >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Trilinearly interpolated lattice noise with smoothstep weights, in `[0, 1)`.
pub fn value_noise(seed: u64, p: &Vec3) -> f64 {
    let (fx, fy, fz) = (p.x.floor(), p.y.floor(), p.z.floor());
    let (x0, y0, z0) = (fx as i64, fy as i64, fz as i64);
    let (tx, ty, tz) = (smooth(p.x - fx), smooth(p.y - fy), smooth(p.z - fz));
    let mut acc = 0.0;
    for (dz, wz) in [(0, 1.0 - tz), (1, tz)] {
        for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
            for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
                acc += wx * wy * wz * lattice(seed, x0 + dx, y0 + dy, z0 + dz);
            }
        }
    }
    acc
}

/// Multi-octave value noise normalized to `[0, 1)`.
pub fn fractal_noise(seed: u64, p: &Vec3) -> f64 {
    let mut sum = 0.0;
    let mut norm = 0.0;
    let mut amp = 1.0;
    let mut freq = BASE_FREQUENCY;
    for o in 0..OCTAVES {
        sum += amp * value_noise(derive_seed(seed, o as u64), &(p * freq));
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}
