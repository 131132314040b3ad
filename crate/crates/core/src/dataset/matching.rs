use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatasetError, DatasetRow, ProjectedKeypointSet};
use crate::cloud::FeatureSet3D;
use crate::image::Keypoint2D;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrespondencePair {
    pub keypoint3d_id: u32,
    pub keypoint2d_id: u32,
    pub image_id: u32,
    pub pixel_distance: f64,
}

/// Pairs projections with 2D keypoints closer than `alpha` pixels, greedily by
/// ascending distance (ties by 3D id, then 2D id), each keypoint used once.
pub fn match_keypoints(
    filtered: &ProjectedKeypointSet,
    keys2d: &[Keypoint2D],
    alpha: f64,
    image_id: u32,
) -> Vec<CorrespondencePair> {
    let mut candidates = Vec::new();
    for e in &filtered.entries {
        for (j, k) in keys2d.iter().enumerate() {
            let d = (e.u - k.u).hypot(e.v - k.v);
            if d < alpha {
                candidates.push(CorrespondencePair {
                    keypoint3d_id: e.keypoint3d_id,
                    keypoint2d_id: j as u32,
                    image_id,
                    pixel_distance: d,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.pixel_distance
            .total_cmp(&b.pixel_distance)
            .then(a.keypoint3d_id.cmp(&b.keypoint3d_id))
            .then(a.keypoint2d_id.cmp(&b.keypoint2d_id))
    });
    let mut used3 = HashSet::new();
    let mut used2 = HashSet::new();
    candidates
        .into_iter()
        .filter(|c| {
            if used3.contains(&c.keypoint3d_id) || used2.contains(&c.keypoint2d_id) {
                return false;
            }
            used3.insert(c.keypoint3d_id);
            used2.insert(c.keypoint2d_id);
            true
        })
        .collect()
}

/// Draws `count` non-matching pairs by rejection sampling. A candidate joins
/// the 2D side of a random positive with a random 3D keypoint that lies at
/// least `beta` from the positive's 3D keypoint and whose descriptor differs
/// from it by at least `gamma`.
pub fn sample_negatives(
    positives: &[DatasetRow],
    features3d: &FeatureSet3D,
    count: usize,
    beta: f64,
    gamma: f64,
    seed: u64,
) -> Result<Vec<DatasetRow>, DatasetError> {
    if count == 0 {
        return Err(DatasetError::InvalidParameter("negative count must be positive".into()));
    }
    if positives.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let n3 = features3d.len();
    let attempts = 100 * count;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    if n3 > 0 {
        for _ in 0..attempts {
            if out.len() == count {
                break;
            }
            let row = &positives[rng.gen_range(0..positives.len())];
            let cand = rng.gen_range(0..n3);
            let truth = row.keypoint3d_id as usize;
            if cand == truth || truth >= n3 {
                continue;
            }
            let desc = &features3d.descriptors[cand];
            if desc.is_zero() {
                continue;
            }
            let spatial = (features3d.keypoints[cand].position - features3d.keypoints[truth].position).norm();
            if spatial < beta || desc.distance(&features3d.descriptors[truth]) < gamma {
                continue;
            }
            if !seen.insert((cand as u32, row.keypoint2d_id, row.image_id)) {
                continue;
            }
            out.push(DatasetRow {
                desc3d: desc.clone(),
                desc2d: row.desc2d.clone(),
                keypoint3d_id: cand as u32,
                keypoint2d_id: row.keypoint2d_id,
                image_id: row.image_id,
            });
        }
    }
    if out.len() < count {
        return Err(DatasetError::PoolExhausted {
            needed: count,
            found: out.len(),
            attempts,
        });
    }
    Ok(out)
}
