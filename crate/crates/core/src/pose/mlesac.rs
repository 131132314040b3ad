use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::p3p::{p3p_solve, reprojection_error};
use super::{inliers_of, Correspondence, PoseError, PoseEstimate};
use crate::geometry::{Intrinsics, Pose};

/// Minimum pixel distance between the three P3P sample points.
pub const MIN_SAMPLE_PIXEL_DISTANCE: f64 = 5.0;
const EM_STEPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlesacConfig {
    pub iterations: usize,
    pub inlier_threshold_px: f64,
    pub sigma_px: f64,
    pub seed: u64,
    /// Area over which outliers are uniform; `None` uses `4 cx cy`.
    pub outlier_area: Option<f64>,
}

impl Default for MlesacConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            inlier_threshold_px: 4.0,
            sigma_px: 1.0,
            seed: 0,
            outlier_area: None,
        }
    }
}

impl MlesacConfig {
    pub fn validate(&self) -> Result<(), PoseError> {
        let bad = |m: &str| Err(PoseError::InvalidParameter(m.into()));
        if self.iterations == 0 {
            return bad("iterations must be positive");
        }
        if !(self.inlier_threshold_px > 0.0) || !(self.sigma_px > 0.0) {
            return bad("inlier_threshold_px and sigma_px must be positive");
        }
        if let Some(a) = self.outlier_area {
            if !(a > 0.0 && a.is_finite()) {
                return bad("outlier_area must be positive");
            }
        }
        Ok(())
    }
}

/// One MLESAC iteration; `cost` is `None` when the sample was degenerate or unsolvable.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub iteration: usize,
    pub sample: [usize; 4],
    pub cost: Option<f64>,
    pub pose: Option<Pose>,
}

/// Negative log-likelihood of reprojection errors under a mixture of an
/// isotropic Gaussian (inliers) and a uniform density `1/area` (outliers).
/// The mixing weight is estimated by a few EM steps starting from 1/2.
pub fn mixture_cost(errors: &[f64], sigma: f64, area: f64) -> f64 {
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
    let gauss: Vec<f64> = errors
        .iter()
        .map(|e| if e.is_finite() { norm * (-e * e / (2.0 * sigma * sigma)).exp() } else { 0.0 })
        .collect();
    let outlier = 1.0 / area;
    let mut gamma = 0.5;
    for _ in 0..EM_STEPS {
        let mut sum = 0.0;
        for &g in &gauss {
            let pin = gamma * g;
            sum += pin / (pin + (1.0 - gamma) * outlier);
        }
        gamma = sum / gauss.len() as f64;
    }
    -gauss
        .iter()
        .map(|&g| (gamma * g + (1.0 - gamma) * outlier).ln())
        .sum::<f64>()
}

fn run_iteration(i: usize, corrs: &[Correspondence], k: &Intrinsics, cfg: &MlesacConfig, area: f64) -> AuditEntry {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
    let idx = sample(&mut rng, corrs.len(), 4).into_vec();
    let s = [idx[0], idx[1], idx[2], idx[3]];
    let mut entry = AuditEntry {
        iteration: i,
        sample: s,
        cost: None,
        pose: None,
    };
    let (a, b, c) = (&corrs[s[0]], &corrs[s[1]], &corrs[s[2]]);
    let close = |x: &Correspondence, y: &Correspondence| (x.u - y.u).hypot(x.v - y.v) < MIN_SAMPLE_PIXEL_DISTANCE;
    if close(a, b) || close(a, c) || close(b, c) {
        return entry;
    }
    let Ok(candidates) = p3p_solve(a, b, c, k) else {
        return entry;
    };
    let check = &corrs[s[3]];
    let mut best = candidates[0];
    let mut best_err = reprojection_error(&best, check, k);
    for cand in &candidates[1..] {
        let e = reprojection_error(cand, check, k);
        if e < best_err {
            best = *cand;
            best_err = e;
        }
    }
    let errors: Vec<f64> = corrs.iter().map(|c| reprojection_error(&best, c, k)).collect();
    entry.cost = Some(mixture_cost(&errors, cfg.sigma_px, area));
    entry.pose = Some(best);
    entry
}

/// MLESAC over P3P hypotheses; also returns the per-iteration audit log.
///
/// Iteration `i` draws its sample from a generator seeded with `seed + i`, so
/// the result does not depend on the worker count. The lowest-cost hypothesis
/// wins, earliest iteration on ties.
pub fn mlesac_with_audit(
    corrs: &[Correspondence],
    k: &Intrinsics,
    cfg: &MlesacConfig,
) -> Result<(PoseEstimate, Vec<AuditEntry>), PoseError> {
    cfg.validate()?;
    if corrs.len() < 4 {
        return Err(PoseError::InsufficientCorrespondences {
            needed: 4,
            found: corrs.len(),
        });
    }
    let area = cfg.outlier_area.unwrap_or(4.0 * k.cx * k.cy).max(1.0);
    let audit: Vec<AuditEntry> = (0..cfg.iterations)
        .into_par_iter()
        .map(|i| run_iteration(i, corrs, k, cfg, area))
        .collect();
    let mut best: Option<(f64, Pose)> = None;
    for e in &audit {
        if let (Some(c), Some(p)) = (e.cost, e.pose) {
            if best.map_or(true, |(bc, _)| c < bc) {
                best = Some((c, p));
            }
        }
    }
    let (_, pose) = best.ok_or(PoseError::NoHypothesisFound)?;
    let (inlier_ids, mean) = inliers_of(&pose, corrs, k, cfg.inlier_threshold_px);
    Ok((
        PoseEstimate {
            pose,
            inlier_ids,
            mean_reprojection_error: mean,
            iterations_used: cfg.iterations,
        },
        audit,
    ))
}

pub fn mlesac(corrs: &[Correspondence], k: &Intrinsics, cfg: &MlesacConfig) -> Result<PoseEstimate, PoseError> {
    mlesac_with_audit(corrs, k, cfg).map(|(e, _)| e)
}
