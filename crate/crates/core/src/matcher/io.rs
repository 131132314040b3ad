//! `CDM1` model files (little-endian).
//!
//! Header: magic `CDM1`, version u32, p u32, q u32. Then the coarse tree and
//! the forest (tree count u32, features per split u32, bootstrap u8, seed
//! u64, trees). A tree is max_splits u32, false-negative cost f64,
//! false-positive cost f64, node count u32 and its nodes in pre-order: tag u8
//! 0 for a leaf (positives u32, negatives u32) or 1 for a split (feature u32,
//! threshold f64). A trailer holds a u32 byte length and UTF-8 JSON metadata.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::tree::{CostMatrix, DecisionTree, TreeNode};
use super::{MatcherError, MatcherModel, RandomForest};

pub const CDM1_MAGIC: &[u8; 4] = b"CDM1";
pub const CDM1_VERSION: u32 = 1;

pub fn write_model<W: Write>(model: &MatcherModel, out: &mut W) -> Result<(), MatcherError> {
    out.write_all(CDM1_MAGIC)?;
    out.write_u32::<LittleEndian>(CDM1_VERSION)?;
    out.write_u32::<LittleEndian>(model.p as u32)?;
    out.write_u32::<LittleEndian>(model.q as u32)?;
    write_tree(&model.coarse, out)?;
    let f = &model.fine;
    out.write_u32::<LittleEndian>(f.trees.len() as u32)?;
    out.write_u32::<LittleEndian>(f.features_per_split as u32)?;
    out.write_u8(u8::from(f.bootstrap))?;
    out.write_u64::<LittleEndian>(f.seed)?;
    for t in &f.trees {
        write_tree(t, out)?;
    }
    let json = serde_json::to_vec(&model.metadata).map_err(|e| MatcherError::Format(e.to_string()))?;
    out.write_u32::<LittleEndian>(json.len() as u32)?;
    out.write_all(&json)?;
    Ok(())
}

fn write_tree<W: Write>(tree: &DecisionTree, out: &mut W) -> Result<(), MatcherError> {
    out.write_u32::<LittleEndian>(tree.max_splits as u32)?;
    out.write_f64::<LittleEndian>(tree.cost.false_negative)?;
    out.write_f64::<LittleEndian>(tree.cost.false_positive)?;
    out.write_u32::<LittleEndian>(tree.nodes.len() as u32)?;
    for node in &tree.nodes {
        match *node {
            TreeNode::Leaf {
                positives,
                negatives,
            } => {
                out.write_u8(0)?;
                out.write_u32::<LittleEndian>(positives)?;
                out.write_u32::<LittleEndian>(negatives)?;
            }
            TreeNode::Internal {
                feature, threshold, ..
            } => {
                out.write_u8(1)?;
                out.write_u32::<LittleEndian>(feature)?;
                out.write_f64::<LittleEndian>(threshold)?;
            }
        }
    }
    Ok(())
}

pub fn read_model<R: Read>(input: &mut R) -> Result<MatcherModel, MatcherError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CDM1_MAGIC {
        return Err(MatcherError::Format(format!("bad magic {magic:?}, expected CDM1")));
    }
    let version = input.read_u32::<LittleEndian>()?;
    if version != CDM1_VERSION {
        return Err(MatcherError::Format(format!("unsupported CDM1 version {version}")));
    }
    let p = input.read_u32::<LittleEndian>()? as usize;
    let q = input.read_u32::<LittleEndian>()? as usize;
    let coarse = read_tree(input, p + q)?;
    let n_trees = input.read_u32::<LittleEndian>()? as usize;
    if n_trees == 0 {
        return Err(MatcherError::Format("forest has no trees".into()));
    }
    let features_per_split = input.read_u32::<LittleEndian>()? as usize;
    let bootstrap = input.read_u8()? != 0;
    let seed = input.read_u64::<LittleEndian>()?;
    let trees = (0..n_trees)
        .map(|_| read_tree(input, p + q))
        .collect::<Result<Vec<_>, _>>()?;
    let len = input.read_u32::<LittleEndian>()? as usize;
    let mut json = Vec::new();
    input.take(len as u64).read_to_end(&mut json)?;
    if json.len() != len {
        return Err(MatcherError::Format("metadata trailer truncated".into()));
    }
    let metadata = serde_json::from_slice(&json).map_err(|e| MatcherError::Format(e.to_string()))?;
    MatcherModel::new(
        p,
        q,
        coarse,
        RandomForest {
            trees,
            features_per_split,
            bootstrap,
            seed,
        },
        metadata,
    )
}

fn read_tree<R: Read>(input: &mut R, n_features: usize) -> Result<DecisionTree, MatcherError> {
    let max_splits = input.read_u32::<LittleEndian>()? as usize;
    let cost = CostMatrix {
        false_negative: input.read_f64::<LittleEndian>()?,
        false_positive: input.read_f64::<LittleEndian>()?,
    };
    let count = input.read_u32::<LittleEndian>()? as usize;
    if count == 0 {
        return Err(MatcherError::Format("tree has no nodes".into()));
    }
    let mut raw = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        raw.push(match input.read_u8()? {
            0 => TreeNode::Leaf {
                positives: input.read_u32::<LittleEndian>()?,
                negatives: input.read_u32::<LittleEndian>()?,
            },
            1 => {
                let feature = input.read_u32::<LittleEndian>()?;
                if feature as usize >= n_features {
                    return Err(MatcherError::Format(format!("split feature {feature} out of range")));
                }
                TreeNode::Internal {
                    feature,
                    threshold: input.read_f64::<LittleEndian>()?,
                    left: 0,
                    right: 0,
                }
            }
            tag => return Err(MatcherError::Format(format!("unknown node tag {tag}"))),
        });
    }
    let mut nodes = raw.clone();
    let end = link_preorder(&raw, &mut nodes, 0)?;
    if end != count {
        return Err(MatcherError::Format("trailing nodes after tree".into()));
    }
    Ok(DecisionTree {
        nodes,
        n_features,
        max_splits,
        cost,
    })
}

/// Restores child links of the subtree rooted at `id`; returns the index after it.
fn link_preorder(raw: &[TreeNode], nodes: &mut [TreeNode], id: usize) -> Result<usize, MatcherError> {
    let node = raw
        .get(id)
        .ok_or_else(|| MatcherError::Format("tree node list ends early".into()))?;
    match *node {
        TreeNode::Leaf { .. } => Ok(id + 1),
        TreeNode::Internal {
            feature, threshold, ..
        } => {
            let left = id + 1;
            let right = link_preorder(raw, nodes, left)?;
            let end = link_preorder(raw, nodes, right)?;
            nodes[id] = TreeNode::Internal {
                feature,
                threshold,
                left: left as u32,
                right: right as u32,
            };
            Ok(end)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::{train_forest, train_tree, ForestParams, TrainingSet, TreeParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn model_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f32>> = (0..150).map(|_| (0..5).map(|_| rng.gen()).collect()).collect();
        let labels: Vec<bool> = rows.iter().map(|r| r[0] + r[3] > 1.0).collect();
        let data = TrainingSet::new(&rows, &labels).unwrap();
        let coarse = train_tree(
            &data,
            &TreeParams {
                max_splits: 8,
                cost: CostMatrix::with_ratio(2.0),
                features_per_split: None,
            },
            &mut rng,
        )
        .unwrap();
        let fine = train_forest(&data, &ForestParams::new(4, 16, 9)).unwrap();
        let model = MatcherModel::new(2, 3, coarse, fine, serde_json::json!({"grid": [1, 2]})).unwrap();
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        let back = read_model(&mut buf.as_slice()).unwrap();
        assert_eq!(back, model);
        let mut again = Vec::new();
        write_model(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn corrupt_model_rejected() {
        assert!(matches!(read_model(&mut b"CDS1".as_slice()), Err(MatcherError::Format(_))));
        let mut buf = Vec::new();
        buf.extend_from_slice(CDM1_MAGIC);
        for v in [1u32, 1, 1, 0] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&1f64.to_le_bytes());
        buf.extend_from_slice(&1f64.to_le_bytes());
        buf.extend_from_slice(&1u32.to_le_bytes());
        // A split with no children.
        buf.push(1);
        buf.extend_from_slice(&0u32.to_le_bytes());
        buf.extend_from_slice(&0.5f64.to_le_bytes());
        assert!(matches!(read_model(&mut buf.as_slice()), Err(MatcherError::Format(_))));
    }
}
