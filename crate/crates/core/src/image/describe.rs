use std::f64::consts::PI;

use rayon::prelude::*;

use super::detect::ScaleSpace;
use super::{Image, ImageError, Keypoint2D};
use crate::descriptor::Descriptor;

const CELLS: usize = 4;
const ORIENTATION_BINS: usize = 8;
pub const DESCRIPTOR_2D_LEN: usize = CELLS * CELLS * ORIENTATION_BINS;
const SAMPLES_PER_CELL: usize = 8;
const CELL_WIDTH_IN_SIGMAS: f64 = 3.0;
const CLIP: f64 = 0.2;
const MAX_OUTSIDE_FRACTION: f64 = 0.5;

/// 4x4 cells x 8 orientations over a square of side `12 * kp.scale` rotated to
/// the keypoint orientation.
pub fn compute_descriptor_2d(img: &Image, kp: &Keypoint2D) -> Result<Descriptor, ImageError> {
    descriptor_in(&ScaleSpace::build(img)?, kp)
}

pub fn describe_keypoints(ss: &ScaleSpace, kps: &[Keypoint2D]) -> Vec<Result<Descriptor, ImageError>> {
    kps.par_iter().map(|kp| descriptor_in(ss, kp)).collect()
}

/// Samples a regular grid in the keypoint frame with bilinear interpolation on
/// the Gaussian level nearest the keypoint scale.
pub(crate) fn descriptor_in(ss: &ScaleSpace, kp: &Keypoint2D) -> Result<Descriptor, ImageError> {
    let (o, s) = ss.level_for_scale(kp.scale);
    let level = &ss.octaves[o].gauss[s];
    let step = (1u64 << o) as f64;
    let (cx, cy) = ((kp.u - 0.5) / step, (kp.v - 0.5) / step);
    let cell = CELL_WIDTH_IN_SIGMAS * kp.scale / step;
    let (sin, cos) = kp.orientation.sin_cos();
    let (wmax, hmax) = (level.width as f64 - 0.5, level.height as f64 - 0.5);

    let n = CELLS * SAMPLES_PER_CELL;
    let mut hist = [0.0f64; DESCRIPTOR_2D_LEN];
    let mut outside = 0usize;
    let half = CELLS as f64 / 2.0;
    for a in 0..n {
        for b in 0..n {
            // Frame coordinates in cell units, both in (-2, 2).
            let fx = (b as f64 + 0.5) / SAMPLES_PER_CELL as f64 - half;
            let fy = (a as f64 + 0.5) / SAMPLES_PER_CELL as f64 - half;
            let x = cx + cell * (fx * cos - fy * sin);
            let y = cy + cell * (fx * sin + fy * cos);
            if x < -0.5 || y < -0.5 || x >= wmax || y >= hmax {
                outside += 1;
                continue;
            }
            let gx = level.bilinear(x + 1.0, y) - level.bilinear(x - 1.0, y);
            let gy = level.bilinear(x, y + 1.0) - level.bilinear(x, y - 1.0);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let weight = (-(fx * fx + fy * fy) / (2.0 * half * half)).exp() * mag;
            let angle = (gy.atan2(gx) - kp.orientation).rem_euclid(2.0 * PI);
            let ob = angle / (2.0 * PI) * ORIENTATION_BINS as f64;
            let rb = fy + half - 0.5;
            let cb = fx + half - 0.5;
            let (r0, c0, o0) = (rb.floor(), cb.floor(), ob.floor());
            let (dr, dc, dob) = (rb - r0, cb - c0, ob - o0);
            for (ri, wr) in [(r0 as isize, 1.0 - dr), (r0 as isize + 1, dr)] {
                if !(0..CELLS as isize).contains(&ri) {
                    continue;
                }
                for (ci, wc) in [(c0 as isize, 1.0 - dc), (c0 as isize + 1, dc)] {
                    if !(0..CELLS as isize).contains(&ci) {
                        continue;
                    }
                    for (oi, wo) in [(o0 as usize, 1.0 - dob), (o0 as usize + 1, dob)] {
                        let oi = oi % ORIENTATION_BINS;
                        let idx = (ri as usize * CELLS + ci as usize) * ORIENTATION_BINS + oi;
                        hist[idx] += weight * wr * wc * wo;
                    }
                }
            }
        }
    }
    let fraction = outside as f64 / (n * n) as f64;
    if fraction > MAX_OUTSIDE_FRACTION {
        return Err(ImageError::SupportOutOfBounds { fraction });
    }
    let first = Descriptor::from_histogram(&hist);
    if first.is_zero() {
        return Ok(first);
    }
    let clipped: Vec<f64> = first.as_slice().iter().map(|&v| (v as f64).min(CLIP)).collect();
    Ok(Descriptor::from_histogram(&clipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(x: f64, y: f64) -> f64 {
        let env = (-(x * x + y * y) / (2.0 * 22.0 * 22.0)).exp();
        0.5 + 0.35 * env * ((0.21 * x + 0.05 * y).sin() * (0.13 * y - 0.4).cos() + 0.3 * (0.08 * x * y / 10.0).sin())
    }

    /// Pattern centered on pixel-center coordinate `(64.5, 64.5)` rotated by `angle`.
    fn rotated_pattern(angle: f64, gain: f64, offset: f64) -> Image {
        let (s, c) = angle.sin_cos();
        Image::from_fn(129, 129, |x, y| {
            let (dx, dy) = (x as f64 + 0.5 - 64.5, y as f64 + 0.5 - 64.5);
            let (px, py) = (c * dx + s * dy, -s * dx + c * dy);
            (gain * pattern(px, py) + offset) as f32
        })
    }

    fn kp(orientation: f64) -> Keypoint2D {
        Keypoint2D {
            u: 64.5,
            v: 64.5,
            scale: 3.0,
            orientation,
        }
    }

    #[test]
    fn constant_patch_is_zero_sentinel() {
        let img = Image::from_fn(64, 64, |_, _| 0.3);
        let d = compute_descriptor_2d(&img, &Keypoint2D { u: 32.0, v: 32.0, scale: 2.0, orientation: 0.4 }).unwrap();
        assert!(d.is_zero());
        assert_eq!(d.len(), DESCRIPTOR_2D_LEN);
    }

    #[test]
    fn unit_norm_and_clipped() {
        let img = rotated_pattern(0.0, 1.0, 0.0);
        let ss = ScaleSpace::build(&img).unwrap();
        for (i, scale) in [1.7, 3.0, 6.5].into_iter().enumerate() {
            let k = Keypoint2D { scale, orientation: 0.3 * i as f64, ..kp(0.0) };
            let d = descriptor_in(&ss, &k).unwrap();
            assert!((d.norm() - 1.0).abs() < 1e-6);
            assert!(d.as_slice().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn clipping_bounds_components_before_renormalization() {
        let img = rotated_pattern(0.2, 1.0, 0.0);
        let ss = ScaleSpace::build(&img).unwrap();
        let d = descriptor_in(&ss, &kp(0.0)).unwrap();
        // Undo the final renormalization by dividing out the largest entry relative to 0.2.
        let max = d.as_slice().iter().cloned().fold(0.0f32, f32::max) as f64;
        let renorm = if max > 0.2 { max / 0.2 } else { 1.0 };
        for &v in d.as_slice() {
            assert!(v as f64 / renorm <= 0.2 + 1e-6);
        }
    }

    #[test]
    fn rotated_patch_matches_with_orientation_delta() {
        let base = compute_descriptor_2d(&rotated_pattern(0.0, 1.0, 0.0), &kp(0.3)).unwrap();
        for delta in [0.5, 1.2, 2.0, -2.7] {
            let turned = compute_descriptor_2d(&rotated_pattern(delta, 1.0, 0.0), &kp(0.3 + delta)).unwrap();
            let dist = base.distance(&turned);
            assert!(dist < 0.15, "delta {delta}: {dist}");
        }
    }

    #[test]
    fn invariant_to_affine_intensity() {
        let k = kp(0.7);
        let base = compute_descriptor_2d(&rotated_pattern(0.0, 1.0, 0.0), &k).unwrap();
        for (gain, offset) in [(0.5, 0.3), (0.8, 0.05), (1.05, -0.03)] {
            let other = compute_descriptor_2d(&rotated_pattern(0.0, gain, offset), &k).unwrap();
            assert!(base.distance(&other) < 1e-3, "gain {gain}");
        }
    }

    #[test]
    fn support_outside_image_rejected() {
        let img = rotated_pattern(0.0, 1.0, 0.0);
        let corner = Keypoint2D { u: 1.0, v: 1.0, scale: 4.0, orientation: 0.0 };
        assert!(matches!(
            compute_descriptor_2d(&img, &corner),
            Err(ImageError::SupportOutOfBounds { .. })
        ));
    }
}
