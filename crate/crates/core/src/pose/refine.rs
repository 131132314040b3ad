use nalgebra::{Matrix3, Rotation3, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use super::{inliers_of, Correspondence, PoseError, PoseEstimate};
use crate::geometry::{Intrinsics, Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub max_iterations: usize,
    /// Convergence bound on the norm of the (rotation, translation) increment.
    pub step_tolerance: f64,
    /// Inlier threshold applied to the refined pose.
    pub inlier_threshold_px: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            step_tolerance: 1e-10,
            inlier_threshold_px: 4.0,
        }
    }
}

const MAX_ESCALATIONS: usize = 10;
/// A rejected step whose relative cost change is below this is at the rounding floor.
const COST_FLOOR: f64 = 1e-12;

/// Updated pose `(exp(ω) R, T + δT)` for `delta = (ω, δT)`, re-orthonormalized.
pub fn apply_increment(pose: &Pose, delta: &[f64; 6]) -> Pose {
    let omega = Vec3::new(delta[0], delta[1], delta[2]);
    let r = Rotation3::new(omega).into_inner() * pose.rotation;
    Pose {
        rotation: orthonormalize(&r),
        translation: pose.translation + Vec3::new(delta[3], delta[4], delta[5]),
    }
}

fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let r = u * vt;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        u * vt
    } else {
        r
    }
}

/// Pixel residual `π(R X + T) − x` and its Jacobian with respect to
/// `(ω, δT)` at zero increment.
pub fn reprojection_jacobian(pose: &Pose, c: &Correspondence, k: &Intrinsics) -> ([f64; 2], [[f64; 6]; 2]) {
    let p = pose.transform(&c.world);
    let (u, v) = k.to_pixel(&p);
    let iz = 1.0 / p.z;
    let du = [k.fx * iz, k.skew * iz, -(k.fx * p.x + k.skew * p.y) * iz * iz];
    let dv = [0.0, k.fy * iz, -k.fy * p.y * iz * iz];
    // d(exp(ω) R X)/dω at 0 is −[R X]×.
    let rx = p - pose.translation;
    let dp_dw = -rx.cross_matrix();
    let mut j = [[0.0; 6]; 2];
    for (row, d) in [du, dv].iter().enumerate() {
        for col in 0..3 {
            j[row][col] = (0..3).map(|m| d[m] * dp_dw[(m, col)]).sum();
            j[row][3 + col] = d[col];
        }
    }
    ([u - c.u, v - c.v], j)
}

/// Sum of squared pixel residuals over `ids`; infinite if a point is not in front of the camera.
pub fn reprojection_cost(pose: &Pose, corrs: &[Correspondence], ids: &[usize], k: &Intrinsics) -> f64 {
    ids.iter()
        .map(|&i| {
            let p = pose.transform(&corrs[i].world);
            if p.z <= 0.0 {
                return f64::INFINITY;
            }
            let (u, v) = k.to_pixel(&p);
            (u - corrs[i].u).powi(2) + (v - corrs[i].v).powi(2)
        })
        .sum()
}

/// Levenberg-Marquardt on the initial inlier set; also returns the cost after
/// every accepted step, starting with the initial cost.
pub fn refine_pose_with_history(
    initial: &PoseEstimate,
    corrs: &[Correspondence],
    k: &Intrinsics,
    cfg: &RefineConfig,
) -> Result<(PoseEstimate, Vec<f64>), PoseError> {
    let ids = &initial.inlier_ids;
    if ids.len() < 4 {
        return Err(PoseError::InsufficientCorrespondences {
            needed: 4,
            found: ids.len(),
        });
    }
    let mut pose = initial.pose;
    let mut cost = reprojection_cost(&pose, corrs, ids, k);
    if !cost.is_finite() {
        return Err(PoseError::RefinementDiverged { iteration: 0 });
    }
    let mut history = vec![cost];
    let mut lambda = 1e-3;
    let mut iterations = 0;
    'outer: while iterations < cfg.max_iterations {
        iterations += 1;
        let mut jtj = SMatrix::<f64, 6, 6>::zeros();
        let mut jtr = SVector::<f64, 6>::zeros();
        for &i in ids {
            let (r, j) = reprojection_jacobian(&pose, &corrs[i], k);
            for row in 0..2 {
                let jr = SVector::<f64, 6>::from_row_slice(&j[row]);
                jtj += jr * jr.transpose();
                jtr += jr * r[row];
            }
        }
        let max_diag = (0..6).map(|d| jtj[(d, d)]).fold(0.0f64, f64::max);
        let mut escalations = 0;
        loop {
            let mut a = jtj;
            for d in 0..6 {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12 * max_diag);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&(-jtr))) else {
                lambda *= 10.0;
                escalations += 1;
                if escalations >= MAX_ESCALATIONS {
                    return Err(PoseError::RefinementDiverged { iteration: iterations });
                }
                continue;
            };
            if step.norm() < cfg.step_tolerance {
                break 'outer;
            }
            let delta: [f64; 6] = step.into();
            let candidate = apply_increment(&pose, &delta);
            let new_cost = reprojection_cost(&candidate, corrs, ids, k);
            if new_cost < cost {
                pose = candidate;
                cost = new_cost;
                history.push(cost);
                lambda = (lambda / 10.0).max(1e-12);
                break;
            }
            if (new_cost - cost).abs() <= COST_FLOOR * cost {
                break 'outer;
            }
            lambda *= 10.0;
            escalations += 1;
            if escalations >= MAX_ESCALATIONS {
                return Err(PoseError::RefinementDiverged { iteration: iterations });
            }
        }
    }
    let (inlier_ids, mean) = inliers_of(&pose, corrs, k, cfg.inlier_threshold_px);
    Ok((
        PoseEstimate {
            pose,
            inlier_ids,
            mean_reprojection_error: mean,
            iterations_used: iterations,
        },
        history,
    ))
}

pub fn refine_pose(
    initial: &PoseEstimate,
    corrs: &[Correspondence],
    k: &Intrinsics,
    cfg: &RefineConfig,
) -> Result<PoseEstimate, PoseError> {
    refine_pose_with_history(initial, corrs, k, cfg).map(|(e, _)| e)
}
