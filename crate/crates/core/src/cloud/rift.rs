//! RIFT-style descriptor: radial rings x gradient-orientation histogram, with
//! orientation measured against the outward radial direction so the result is
//! invariant to rotation about the keypoint normal.

use nalgebra::{Matrix2, SymmetricEigen, Vector2};

use super::keypoints::{covariance, Keypoint3D, MIN_NEIGHBORHOOD};
use super::{CloudError, PointCloud, SpatialIndex};
use crate::descriptor::Descriptor;
use crate::geometry::Vec3;

pub const RADIAL_BINS: usize = 4;
pub const ORIENTATION_BINS: usize = 8;
pub const DESCRIPTOR_3D_LEN: usize = RADIAL_BINS * ORIENTATION_BINS;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescriptorParams3D {
    /// Neighborhood radius for the per-point intensity gradient.
    pub gradient_radius: f64,
}

/// Intensity gradient at a point, restricted to the local tangent plane, by
/// least squares over the radius neighborhood. Returns the gradient and the
/// local unit normal; zero gradient when the neighborhood is too small or flat
/// in fewer than two directions.
pub fn intensity_gradient(
    cloud: &PointCloud,
    index: &SpatialIndex,
    point_id: usize,
    radius: f64,
) -> (Vec3, Vec3) {
    let pts = cloud.points();
    let nb = index.radius_query(&pts[point_id].position, radius);
    if nb.len() < 3 {
        return (Vec3::zeros(), Vec3::z());
    }
    let (cov, mean, _) = covariance(nb.iter().map(|&i| pts[i].position));
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let t1: Vec3 = eig.eigenvectors.column(order[0]).into_owned();
    let t2: Vec3 = eig.eigenvectors.column(order[1]).into_owned();
    let normal: Vec3 = eig.eigenvectors.column(order[2]).into_owned();

    let mean_i = nb.iter().map(|&i| pts[i].intensity).sum::<f64>() / nb.len() as f64;
    let mut a = Matrix2::zeros();
    let mut b = Vector2::zeros();
    for &i in &nb {
        let d = pts[i].position - mean;
        let x = Vector2::new(d.dot(&t1), d.dot(&t2));
        a += x * x.transpose();
        b += x * (pts[i].intensity - mean_i);
    }
    let scale = a.trace();
    if !(scale > 0.0) || a.determinant() <= 1e-12 * scale * scale {
        return (Vec3::zeros(), normal);
    }
    match a.try_inverse() {
        Some(inv) => {
            let g = inv * b;
            (t1 * g.x + t2 * g.y, normal)
        }
        None => (Vec3::zeros(), normal),
    }
}

/// 4 radial rings x 8 orientation bins over the support sphere of radius
/// `2 * kp.scale`. Each support point votes its gradient magnitude into the
/// ring of its distance and the bin of the unsigned angle between its gradient
/// and the radial direction in its tangent plane (linear interpolation between
/// orientation bins). The histogram is L2-normalized; a support without
/// intensity variation yields the all-zero sentinel.
pub fn compute_descriptor_3d(
    cloud: &PointCloud,
    index: &SpatialIndex,
    kp: &Keypoint3D,
    params: &DescriptorParams3D,
) -> Result<Descriptor, CloudError> {
    let support_radius = 2.0 * kp.scale;
    let support = index.radius_query(&kp.position, support_radius);
    if support.len() < MIN_NEIGHBORHOOD {
        return Err(CloudError::InsufficientNeighborhood {
            found: support.len(),
            needed: MIN_NEIGHBORHOOD,
        });
    }
    let pts = cloud.points();
    let mut hist = [0.0f64; DESCRIPTOR_3D_LEN];
    for &i in &support {
        let offset = pts[i].position - kp.position;
        let dist = offset.norm();
        if dist < 1e-12 {
            continue;
        }
        let (grad, normal) = intensity_gradient(cloud, index, i, params.gradient_radius);
        let mag = grad.norm();
        if mag == 0.0 {
            continue;
        }
        let radial = offset - normal * offset.dot(&normal);
        if radial.norm() < 1e-12 {
            continue;
        }
        let angle = radial.cross(&grad).norm().atan2(radial.dot(&grad));
        let ring = ((dist / support_radius * RADIAL_BINS as f64) as usize).min(RADIAL_BINS - 1);
        let pos = angle / std::f64::consts::PI * ORIENTATION_BINS as f64 - 0.5;
        let lo = pos.floor();
        let frac = pos - lo;
        let lo = lo as isize;
        for (bin, w) in [(lo, 1.0 - frac), (lo + 1, frac)] {
            let bin = bin.clamp(0, ORIENTATION_BINS as isize - 1) as usize;
            hist[ring * ORIENTATION_BINS + bin] += w * mag;
        }
    }
    Ok(Descriptor::from_histogram(&hist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::CloudPoint;
    use nalgebra::Rotation3;

    fn textured_patch(offset: f64, rotation: Option<Rotation3<f64>>) -> PointCloud {
        let mut pts = Vec::new();
        for i in -30..=30 {
            for j in -30..=30 {
                let (x, y) = (i as f64 * 0.02, j as f64 * 0.02);
                let z = 0.1 * (1.0 - (x * x + y * y).sqrt() / 0.3).max(0.0);
                let intensity = 0.3 + 0.2 * (7.0 * x + 2.0).sin() * (5.0 * y - 1.0).cos() + 0.1 * x + offset;
                let mut p = Vec3::new(x, y, z);
                if let Some(r) = rotation {
                    p = r * p;
                }
                pts.push(CloudPoint {
                    position: p,
                    intensity,
                });
            }
        }
        PointCloud::new(pts).unwrap()
    }

    fn describe(cloud: &PointCloud) -> Descriptor {
        let index = SpatialIndex::from_cloud(cloud);
        let kp = Keypoint3D {
            position: cloud.points()[30 * 61 + 30].position,
            scale: 0.151,
            response: 0.1,
        };
        compute_descriptor_3d(
            cloud,
            &index,
            &kp,
            &DescriptorParams3D {
                gradient_radius: 0.045,
            },
        )
        .unwrap()
    }

    #[test]
    fn constant_intensity_gives_zero_sentinel() {
        let mut pts = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                pts.push(CloudPoint {
                    position: Vec3::new(i as f64 * 0.05, j as f64 * 0.05, 0.0),
                    intensity: 0.7,
                });
            }
        }
        let cloud = PointCloud::new(pts).unwrap();
        let index = SpatialIndex::from_cloud(&cloud);
        let kp = Keypoint3D {
            position: cloud.points()[210].position,
            scale: 0.2,
            response: 0.1,
        };
        let d = compute_descriptor_3d(
            &cloud,
            &index,
            &kp,
            &DescriptorParams3D {
                gradient_radius: 0.11,
            },
        )
        .unwrap();
        assert!(d.is_zero());
        assert_eq!(d.len(), DESCRIPTOR_3D_LEN);
    }

    #[test]
    fn textured_support_is_unit_norm() {
        let d = describe(&textured_patch(0.0, None));
        assert!((d.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn invariant_to_rotation_about_normal() {
        let base = describe(&textured_patch(0.0, None));
        for angle in [0.4, 1.3, 2.9] {
            let rot = Rotation3::new(Vec3::z() * angle);
            let turned = describe(&textured_patch(0.0, Some(rot)));
            assert!(base.distance(&turned) < 1e-3, "angle {angle}");
        }
        // Any rigid rotation of the whole patch, not only about the normal.
        let rot = Rotation3::new(Vec3::new(0.5, -1.0, 0.3));
        assert!(base.distance(&describe(&textured_patch(0.0, Some(rot)))) < 1e-3);
    }

    #[test]
    fn invariant_to_intensity_offset() {
        let base = describe(&textured_patch(0.0, None));
        let shifted = describe(&textured_patch(0.25, None));
        assert!(base.distance(&shifted) < 1e-3);
    }

    #[test]
    fn small_support_rejected() {
        let cloud = PointCloud::new(
            (0..4)
                .map(|i| CloudPoint {
                    position: Vec3::new(i as f64, 0.0, 0.0),
                    intensity: 0.5,
                })
                .collect(),
        )
        .unwrap();
        let index = SpatialIndex::from_cloud(&cloud);
        let kp = Keypoint3D {
            position: Vec3::zeros(),
            scale: 0.1,
            response: 0.1,
        };
        assert!(matches!(
            compute_descriptor_3d(&cloud, &index, &kp, &DescriptorParams3D { gradient_radius: 0.1 }),
            Err(CloudError::InsufficientNeighborhood { .. })
        ));
    }
}
