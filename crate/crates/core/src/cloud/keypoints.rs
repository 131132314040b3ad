use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;

use super::{CloudError, PointCloud, SpatialIndex};
use crate::geometry::Vec3;

/// Fewest neighbors (including the query point) for a covariance estimate.
pub const MIN_NEIGHBORHOOD: usize = 5;

/// Relative margin a response must exceed its neighbors by to count as a
/// strict maximum; absorbs rounding noise on exactly symmetric surfaces.
const MAXIMUM_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint3D {
    pub position: Vec3,
    /// Support radius, scene units.
    pub scale: f64,
    pub response: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams3D {
    /// Neighborhood radii, strictly increasing.
    pub scales: Vec<f64>,
    pub response_threshold: f64,
}

pub(crate) fn covariance(points: impl Iterator<Item = Vec3> + Clone) -> (Matrix3<f64>, Vec3, usize) {
    let (sum, n) = points
        .clone()
        .fold((Vec3::zeros(), 0usize), |(s, n), p| (s + p, n + 1));
    let mean = sum / n.max(1) as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    (cov / n.max(1) as f64, mean, n)
}

/// Surface variation `λ_min / (λ₁ + λ₂ + λ₃)` of the radius neighborhood's
/// covariance, in `[0, 1/3]`.
pub fn principal_curvature(
    cloud: &PointCloud,
    index: &SpatialIndex,
    point_id: usize,
    radius: f64,
) -> Result<f64, CloudError> {
    let center = cloud.points()[point_id].position;
    let neighbors = index.radius_query(&center, radius);
    curvature_of(cloud, &neighbors)
}

fn curvature_of(cloud: &PointCloud, neighbors: &[usize]) -> Result<f64, CloudError> {
    if neighbors.len() < MIN_NEIGHBORHOOD {
        return Err(CloudError::InsufficientNeighborhood {
            found: neighbors.len(),
            needed: MIN_NEIGHBORHOOD,
        });
    }
    let pts = cloud.points();
    let (cov, _, _) = covariance(neighbors.iter().map(|&i| pts[i].position));
    let eig = SymmetricEigen::new(cov).eigenvalues;
    let total = eig.sum();
    if !(total > 0.0) {
        return Ok(0.0);
    }
    Ok((eig.min().max(0.0) / total).clamp(0.0, 1.0 / 3.0))
}

/// Median distance from each point to its nearest other point.
pub fn median_spacing(cloud: &PointCloud, index: &SpatialIndex) -> f64 {
    let mut d: Vec<f64> = cloud
        .points()
        .par_iter()
        .map(|p| {
            index
                .knn(&p.position, 2)
                .get(1)
                .map_or(0.0, |&(_, dist)| dist)
        })
        .collect();
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    *d.select_nth_unstable_by(mid, f64::total_cmp).1
}

/// Points whose curvature is a strict maximum over their radius neighborhood
/// at some scale, with response at or above the threshold.
///
/// Each point appears at most once, at the scale with its largest qualifying
/// response. Output is sorted by response descending, then position.
pub fn detect_keypoints_3d(
    cloud: &PointCloud,
    index: &SpatialIndex,
    params: &DetectorParams3D,
) -> Vec<Keypoint3D> {
    let n = cloud.len();
    let mut best: Vec<Option<(f64, f64)>> = vec![None; n];
    for &radius in &params.scales {
        let neighborhoods: Vec<Vec<usize>> = (0..n)
            .into_par_iter()
            .map(|i| index.radius_query(&cloud.points()[i].position, radius))
            .collect();
        let response: Vec<Option<f64>> = neighborhoods
            .par_iter()
            .map(|nb| curvature_of(cloud, nb).ok())
            .collect();
        let maxima: Vec<Option<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let c = response[i]?;
                if c < params.response_threshold || !(c > 0.0) {
                    return None;
                }
                let bar = c * (1.0 - MAXIMUM_MARGIN);
                let is_max = neighborhoods[i]
                    .iter()
                    .filter(|&&j| j != i)
                    .all(|&j| response[j].is_none_or(|cj| cj < bar));
                is_max.then_some(c)
            })
            .collect();
        for (slot, m) in best.iter_mut().zip(maxima) {
            if let Some(c) = m {
                if slot.is_none_or(|(prev, _)| c > prev) {
                    *slot = Some((c, radius));
                }
            }
        }
    }
    let mut keypoints: Vec<Keypoint3D> = best
        .into_iter()
        .enumerate()
        .filter_map(|(i, b)| {
            b.map(|(response, scale)| Keypoint3D {
                position: cloud.points()[i].position,
                scale,
                response,
            })
        })
        .collect();
    sort_keypoints(&mut keypoints);
    keypoints
}

pub(crate) fn sort_keypoints(kps: &mut [Keypoint3D]) {
    kps.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.position.x.total_cmp(&b.position.x))
            .then(a.position.y.total_cmp(&b.position.y))
            .then(a.position.z.total_cmp(&b.position.z))
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::CloudPoint;
    use nalgebra::Rotation3;

    fn cloud_of(points: Vec<Vec3>) -> PointCloud {
        PointCloud::new(
            points
                .into_iter()
                .map(|position| CloudPoint {
                    position,
                    intensity: 0.5,
                })
                .collect(),
        )
        .unwrap()
    }

    /// Eigenvalues of a symmetric 3x3 matrix by the trigonometric cubic solution.
    fn cubic_eigenvalues(m: &Matrix3<f64>) -> [f64; 3] {
        let p1 = m[(0, 1)].powi(2) + m[(0, 2)].powi(2) + m[(1, 2)].powi(2);
        let q = m.trace() / 3.0;
        let p2 = (m[(0, 0)] - q).powi(2) + (m[(1, 1)] - q).powi(2) + (m[(2, 2)] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        if p == 0.0 {
            return [q, q, q];
        }
        let b = (m - Matrix3::identity() * q) / p;
        let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        [e1, 3.0 * q - e1 - e3, e3]
    }

    fn plane(n: usize, spacing: f64) -> Vec<Vec3> {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(Vec3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
            }
        }
        pts
    }

    #[test]
    fn coplanar_points_have_zero_curvature() {
        let cloud = cloud_of(plane(10, 0.1)[..50].to_vec());
        let index = SpatialIndex::from_cloud(&cloud);
        let c = principal_curvature(&cloud, &index, 25, 0.25).unwrap();
        assert!(c.abs() < 1e-9);
    }

    #[test]
    fn sphere_patch_matches_cubic_oracle() {
        let radius = 5.0;
        let mut pts = Vec::new();
        for i in -10..=10 {
            for j in -10..=10 {
                let (x, y) = (i as f64 * 0.02, j as f64 * 0.02);
                pts.push(Vec3::new(x, y, (radius * radius - x * x - y * y).sqrt()));
            }
        }
        let cloud = cloud_of(pts);
        let index = SpatialIndex::from_cloud(&cloud);
        let id = 10 * 21 + 10;
        let r = 0.1;
        let c = principal_curvature(&cloud, &index, id, r).unwrap();
        let nb: Vec<Vec3> = cloud
            .points()
            .iter()
            .map(|p| p.position)
            .filter(|p| (p - cloud.points()[id].position).norm() <= r)
            .collect();
        let (cov, _, _) = covariance(nb.iter().copied());
        let ev = cubic_eigenvalues(&cov);
        let expected = ev.iter().cloned().fold(f64::INFINITY, f64::min) / ev.iter().sum::<f64>();
        assert!(c > 0.0 && c < 1.0 / 3.0);
        assert!((c - expected).abs() < 1e-9, "{c} vs {expected}");
    }

    #[test]
    fn small_neighborhood_rejected() {
        let cloud = cloud_of(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.1, 0.0, 0.0),
            Vec3::new(0.0, 0.1, 0.0),
            Vec3::new(0.1, 0.1, 0.0),
            Vec3::new(5.0, 5.0, 5.0),
        ]);
        let index = SpatialIndex::from_cloud(&cloud);
        assert!(matches!(
            principal_curvature(&cloud, &index, 0, 0.5),
            Err(CloudError::InsufficientNeighborhood { found: 4, .. })
        ));
    }

    fn bump_cloud() -> (Vec<Vec3>, Vec3) {
        let mut pts = Vec::new();
        let apex = Vec3::new(1.0, 1.0, 0.3);
        for i in 0..=40 {
            for j in 0..=40 {
                let (x, y) = (i as f64 * 0.05, j as f64 * 0.05);
                let d = (x - 1.0).abs().max((y - 1.0).abs());
                let z = (0.3 * (1.0 - d / 0.4)).max(0.0);
                pts.push(Vec3::new(x, y, z));
            }
        }
        (pts, apex)
    }

    fn params(spacing: f64) -> DetectorParams3D {
        DetectorParams3D {
            scales: vec![2.0 * spacing, 4.0 * spacing, 8.0 * spacing],
            response_threshold: 0.01,
        }
    }

    #[test]
    fn uniform_plane_has_no_keypoints() {
        let cloud = cloud_of(plane(30, 0.05));
        let index = SpatialIndex::from_cloud(&cloud);
        assert!(detect_keypoints_3d(&cloud, &index, &params(0.05)).is_empty());
    }

    #[test]
    fn pyramid_apex_is_detected_and_run_is_deterministic() {
        let (pts, apex) = bump_cloud();
        let cloud = cloud_of(pts);
        let index = SpatialIndex::from_cloud(&cloud);
        let spacing = median_spacing(&cloud, &index);
        assert!((spacing - 0.05).abs() < 1e-12);

        // Brute-force local-maximum scan at each scale.
        let mut oracle = Vec::new();
        for &r in &params(spacing).scales {
            let resp: Vec<Option<f64>> = (0..cloud.len())
                .map(|i| principal_curvature(&cloud, &index, i, r).ok())
                .collect();
            for i in 0..cloud.len() {
                let Some(c) = resp[i] else { continue };
                let p = cloud.points()[i].position;
                let strict = (0..cloud.len()).all(|j| {
                    j == i
                        || (cloud.points()[j].position - p).norm() > r
                        || resp[j].is_none_or(|cj| cj < c * (1.0 - MAXIMUM_MARGIN))
                });
                if strict && c >= 0.01 {
                    oracle.push(p);
                }
            }
        }
        assert!(oracle.iter().any(|p| (p - apex).norm() < 1e-12));

        let kps = detect_keypoints_3d(&cloud, &index, &params(spacing));
        assert!(kps.iter().any(|k| (k.position - apex).norm() < 1e-12));
        for k in &kps {
            assert!(oracle.iter().any(|p| (p - k.position).norm() < 1e-12));
            assert!(k.scale > 0.0);
        }
        assert!(kps.windows(2).all(|w| w[0].response >= w[1].response));
        assert_eq!(kps, detect_keypoints_3d(&cloud, &index, &params(spacing)));
    }

    #[test]
    fn detection_is_rigid_equivariant() {
        let (pts, _) = bump_cloud();
        let rot = Rotation3::new(Vec3::new(0.3, -0.7, 1.1));
        let t = Vec3::new(4.0, -2.0, 0.5);
        let moved: Vec<Vec3> = pts.iter().map(|p| rot * p + t).collect();
        let a = cloud_of(pts);
        let b = cloud_of(moved);
        let ia = SpatialIndex::from_cloud(&a);
        let ib = SpatialIndex::from_cloud(&b);
        // Radii off the lattice distances so inclusion never hinges on rounding.
        let p = DetectorParams3D {
            scales: vec![0.105, 0.205, 0.405],
            response_threshold: 0.01,
        };
        let ka = detect_keypoints_3d(&a, &ia, &p);
        let kb = detect_keypoints_3d(&b, &ib, &p);
        assert!(!ka.is_empty());
        assert_eq!(ka.len(), kb.len());
        for k in &ka {
            let target = rot * k.position + t;
            assert!(kb.iter().any(|q| (q.position - target).norm() < 1e-6));
        }
    }
}
