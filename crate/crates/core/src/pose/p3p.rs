use nalgebra::Matrix3;

use super::{Correspondence, PoseError};
use crate::geometry::{Intrinsics, Pose, Vec3};

/// Minimum world triangle area.
pub const MIN_TRIANGLE_AREA: f64 = 1e-9;
/// Largest reprojection error of a returned pose on its three points.
pub const P3P_SELF_CHECK_PX: f64 = 1e-6;

/// Quadratic in `u` whose coefficients are polynomials in `v` (ascending powers).
type QuadInU = [[f64; 3]; 3];

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, y) in b.iter().enumerate() {
        out[i] -= y;
    }
    out
}

fn poly_eval(p: &[f64], x: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Resultant in `u` of two quadratics `p2 u² + p1 u + p0` and `q2 u² + q1 u + q0`.
fn resultant(p: &QuadInU, q: &QuadInU) -> Vec<f64> {
    let [p0, p1, p2] = p;
    let [q0, q1, q2] = q;
    let a = poly_sub(&poly_mul(p2, q0), &poly_mul(p0, q2));
    let b = poly_sub(&poly_mul(p2, q1), &poly_mul(p1, q2));
    let c = poly_sub(&poly_mul(p1, q0), &poly_mul(p0, q1));
    poly_sub(&poly_mul(&a, &a), &poly_mul(&b, &c))
}

/// Real roots of a polynomial of degree at most 4 (ascending coefficients),
/// from companion-matrix eigenvalues polished by Newton steps.
fn real_roots(poly: &[f64]) -> Vec<f64> {
    let mut p = poly.to_vec();
    let scale = p.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    while p.len() > 1 && p.last().unwrap().abs() <= 1e-14 * scale {
        p.pop();
    }
    let deg = p.len() - 1;
    let candidates: Vec<f64> = match deg {
        0 => return Vec::new(),
        1 => vec![-p[0] / p[1]],
        _ => {
            let lead = p[deg];
            let mut m = nalgebra::DMatrix::<f64>::zeros(deg, deg);
            for i in 1..deg {
                m[(i, i - 1)] = 1.0;
            }
            for i in 0..deg {
                m[(i, deg - 1)] = -p[i] / lead;
            }
            m.complex_eigenvalues()
                .iter()
                .filter(|z| z.im.abs() <= 1e-5 * (1.0 + z.re.abs()))
                .map(|z| z.re)
                .collect()
        }
    };
    let dp: Vec<f64> = (1..p.len()).map(|i| p[i] * i as f64).collect();
    candidates
        .into_iter()
        .map(|mut x| {
            for _ in 0..8 {
                let d = poly_eval(&dp, x);
                if d == 0.0 {
                    break;
                }
                let step = poly_eval(&p, x) / d;
                if !step.is_finite() {
                    break;
                }
                x -= step;
                if step.abs() <= 1e-16 * (1.0 + x.abs()) {
                    break;
                }
            }
            x
        })
        .collect()
}

/// Newton polish of the depths on the three law-of-cosines equations.
fn polish_depths(d: &mut [f64; 3], cos: &[f64; 3], dist2: &[f64; 3]) {
    // Pairs (0,1), (0,2), (1,2) with cosines cos[k] and squared distances dist2[k].
    const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];
    let residual = |d: &[f64; 3]| -> [f64; 3] {
        let mut r = [0.0; 3];
        for (k, &(i, j)) in PAIRS.iter().enumerate() {
            r[k] = d[i] * d[i] + d[j] * d[j] - 2.0 * d[i] * d[j] * cos[k] - dist2[k];
        }
        r
    };
    let norm = |r: &[f64; 3]| r.iter().map(|x| x * x).sum::<f64>();
    let mut r = residual(d);
    for _ in 0..10 {
        let mut j = Matrix3::zeros();
        for (k, &(a, b)) in PAIRS.iter().enumerate() {
            j[(k, a)] = 2.0 * d[a] - 2.0 * d[b] * cos[k];
            j[(k, b)] = 2.0 * d[b] - 2.0 * d[a] * cos[k];
        }
        let Some(step) = j.lu().solve(&nalgebra::Vector3::new(r[0], r[1], r[2])) else {
            return;
        };
        let next = [d[0] - step[0], d[1] - step[1], d[2] - step[2]];
        let rn = residual(&next);
        if !(norm(&rn) < norm(&r)) {
            return;
        }
        *d = next;
        r = rn;
    }
}

fn triangle_frame(a: &Vec3, b: &Vec3, c: &Vec3) -> Option<Matrix3<f64>> {
    let e1 = (b - a).try_normalize(0.0)?;
    let e3 = (b - a).cross(&(c - a)).try_normalize(0.0)?;
    let e2 = e3.cross(&e1);
    Some(Matrix3::from_columns(&[e1, e2, e3]))
}

/// Rigid transform taking the world triangle onto the camera-frame triangle.
fn align(world: &[Vec3; 3], cam: &[Vec3; 3]) -> Option<Pose> {
    let fw = triangle_frame(&world[0], &world[1], &world[2])?;
    let fc = triangle_frame(&cam[0], &cam[1], &cam[2])?;
    let rotation = fc * fw.transpose();
    let cw = (world[0] + world[1] + world[2]) / 3.0;
    let cc = (cam[0] + cam[1] + cam[2]) / 3.0;
    Some(Pose {
        rotation,
        translation: cc - rotation * cw,
    })
}

pub(crate) fn reprojection_error(pose: &Pose, c: &Correspondence, k: &Intrinsics) -> f64 {
    let cam = pose.transform(&c.world);
    if cam.z <= 0.0 {
        return f64::INFINITY;
    }
    let (u, v) = k.to_pixel(&cam);
    ((u - c.u).powi(2) + (v - c.v).powi(2)).sqrt()
}

/// All camera poses reprojecting three world points onto their pixels.
///
/// With depths `dᵢ` along unit bearings and `d₂ = u d₁`, `d₃ = v d₁`, the
/// three law-of-cosines equations reduce to two quadratics in `u`; their
/// resultant is a quartic in `v`. Each real root gives depths, which are
/// polished and aligned to the world triangle. Poses failing the reprojection
/// self-check are dropped.
pub fn p3p_solve(
    c1: &Correspondence,
    c2: &Correspondence,
    c3: &Correspondence,
    k: &Intrinsics,
) -> Result<Vec<Pose>, PoseError> {
    let corr = [c1, c2, c3];
    let world = [c1.world, c2.world, c3.world];
    let area = 0.5 * (world[1] - world[0]).cross(&(world[2] - world[0])).norm();
    if !(area >= MIN_TRIANGLE_AREA) {
        return Err(PoseError::DegenerateConfiguration(format!("world triangle area {area:e}")));
    }
    let b = corr.map(|c| k.bearing(c.u, c.v));
    // Pairs (1,2), (1,3), (2,3).
    let cos = [b[0].dot(&b[1]), b[0].dot(&b[2]), b[1].dot(&b[2])];
    let dist2 = [
        (world[0] - world[1]).norm_squared(),
        (world[0] - world[2]).norm_squared(),
        (world[1] - world[2]).norm_squared(),
    ];
    let [c12, c13, c23] = cos;
    let [d12, d13, d23] = dist2;
    // d13 (u² + v² − 2uv c23) = d23 (1 + v² − 2v c13)
    let p: QuadInU = [
        [-d23, 2.0 * d23 * c13, d13 - d23],
        [0.0, -2.0 * d13 * c23, 0.0],
        [d13, 0.0, 0.0],
    ];
    // d13 (1 + u² − 2u c12) = d12 (1 + v² − 2v c13)
    let q: QuadInU = [
        [d13 - d12, 2.0 * d12 * c13, -d12],
        [-2.0 * d13 * c12, 0.0, 0.0],
        [d13, 0.0, 0.0],
    ];
    let quartic = resultant(&p, &q);
    let mut poses = Vec::new();
    for v in real_roots(&quartic) {
        if !(v > 0.0) {
            continue;
        }
        let denom = 1.0 + v * v - 2.0 * v * c13;
        if !(denom > 0.0) {
            continue;
        }
        let d1 = (d13 / denom).sqrt();
        // Both quadratics share their u² coefficient, so their difference is
        // linear in u. Near double roots that line is ill-conditioned, so both
        // roots of the second quadratic are tried as well.
        let lin = poly_eval(&p[1], v) - poly_eval(&q[1], v);
        let cst = poly_eval(&p[0], v) - poly_eval(&q[0], v);
        let mut us = Vec::with_capacity(3);
        if lin != 0.0 {
            us.push(-cst / lin);
        }
        let (a2, a1, a0) = (d13, poly_eval(&q[1], v), poly_eval(&q[0], v));
        let disc = a1 * a1 - 4.0 * a2 * a0;
        if disc >= 0.0 {
            let s = disc.sqrt();
            us.push((-a1 + s) / (2.0 * a2));
            us.push((-a1 - s) / (2.0 * a2));
        }
        for u in us {
            if !(u > 0.0) {
                continue;
            }
            let mut d = [d1, u * d1, v * d1];
            polish_depths(&mut d, &cos, &dist2);
            if d.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                continue;
            }
            let cam = [b[0] * d[0], b[1] * d[1], b[2] * d[2]];
            let Some(pose) = align(&world, &cam) else {
                continue;
            };
            let exact = corr
                .iter()
                .all(|c| reprojection_error(&pose, c, k) < P3P_SELF_CHECK_PX);
            let duplicate = poses.iter().any(|other: &Pose| {
                (other.rotation - pose.rotation).norm() < 1e-9
                    && (other.translation - pose.translation).norm() < 1e-9 * (1.0 + pose.translation.norm())
            });
            if exact && !duplicate {
                poses.push(pose);
            }
        }
    }
    if poses.is_empty() {
        return Err(PoseError::NoRealSolution);
    }
    Ok(poses)
}
