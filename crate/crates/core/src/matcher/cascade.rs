use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use super::{MatcherError, MatcherModel};
use crate::descriptor::Descriptor;

/// Sparse confidences keyed by (2D id, 3D id), sorted by 2D id then 3D id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfidenceTable {
    pub n2d: usize,
    pub n3d: usize,
    pub entries: Vec<(u32, u32, f64)>,
}

impl ConfidenceTable {
    /// Dense table with every entry present.
    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n3d = rows.first().map_or(0, Vec::len);
        let entries = rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, &c)| (i as u32, j as u32, c)))
            .collect();
        Self {
            n2d: rows.len(),
            n3d,
            entries,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeResult {
    pub table: ConfidenceTable,
    pub coarse_evaluations: usize,
    pub fine_evaluations: usize,
}

/// Scores every (2D, 3D) pair with the coarse tree and passes pairs above 0.5
/// to the forest. Zero-sentinel descriptors take no part.
pub fn cascade_match(
    model: &MatcherModel,
    descs2d: &[Descriptor],
    descs3d: &[Descriptor],
) -> Result<CascadeResult, MatcherError> {
    for (descs, expected) in [(descs2d, model.q), (descs3d, model.p)] {
        if let Some(d) = descs.iter().find(|d| d.len() != expected) {
            return Err(MatcherError::DimensionMismatch {
                expected,
                found: d.len(),
            });
        }
    }
    let valid3d: Vec<usize> = (0..descs3d.len()).filter(|&j| !descs3d[j].is_zero()).collect();
    let coarse_calls = AtomicUsize::new(0);
    let fine_calls = AtomicUsize::new(0);
    let entries: Vec<(u32, u32, f64)> = descs2d
        .par_iter()
        .enumerate()
        .filter(|(_, d)| !d.is_zero())
        .flat_map_iter(|(i, d2)| {
            let mut row = vec![0.0f32; model.p + model.q];
            row[model.p..].copy_from_slice(d2.as_slice());
            let mut out = Vec::new();
            for &j in &valid3d {
                row[..model.p].copy_from_slice(descs3d[j].as_slice());
                coarse_calls.fetch_add(1, Ordering::Relaxed);
                if model.coarse.predict_unchecked(&row) > 0.5 {
                    fine_calls.fetch_add(1, Ordering::Relaxed);
                    out.push((i as u32, j as u32, model.fine.predict_unchecked(&row)));
                }
            }
            out.into_iter()
        })
        .collect();
    Ok(CascadeResult {
        table: ConfidenceTable {
            n2d: descs2d.len(),
            n3d: descs3d.len(),
            entries,
        },
        coarse_evaluations: coarse_calls.into_inner(),
        fine_evaluations: fine_calls.into_inner(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub id2d: u32,
    pub id3d: u32,
    pub confidence: f64,
}

/// Mutual best pairs of the table with confidence above 0.5. Ties in a row or
/// column go to the lowest id.
pub fn two_way_match(table: &ConfidenceTable) -> Vec<Match> {
    let mut row_best: Vec<Option<(u32, f64)>> = vec![None; table.n2d];
    let mut col_best: Vec<Option<(u32, f64)>> = vec![None; table.n3d];
    for &(i, j, c) in &table.entries {
        let r = &mut row_best[i as usize];
        if r.map_or(true, |(bj, bc)| c > bc || (c == bc && j < bj)) {
            *r = Some((j, c));
        }
        let col = &mut col_best[j as usize];
        if col.map_or(true, |(bi, bc)| c > bc || (c == bc && i < bi)) {
            *col = Some((i, c));
        }
    }
    row_best
        .iter()
        .enumerate()
        .filter_map(|(i, best)| {
            let (j, c) = (*best)?;
            let (bi, _) = col_best[j as usize]?;
            (bi as usize == i && c > 0.5).then_some(Match {
                id2d: i as u32,
                id3d: j,
                confidence: c,
            })
        })
        .collect()
}
