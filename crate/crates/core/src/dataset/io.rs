//! `CDS1` dataset files (little-endian).
//!
//! Header: magic `CDS1`, p u32, q u32, n_pos u32, n_neg u32. Rows, positives
//! first: desc3d p x f32, desc2d q x f32, label u8, kp3d id u32, kp2d id u32,
//! image id u32. An optional trailer holds a u32 byte length and UTF-8 JSON
//! metadata.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{CorrespondenceDataset, DatasetError, DatasetRow};
use crate::descriptor::Descriptor;

pub const CDS1_MAGIC: &[u8; 4] = b"CDS1";

pub fn write_dataset<W: Write>(ds: &CorrespondenceDataset, out: &mut W) -> Result<(), DatasetError> {
    out.write_all(CDS1_MAGIC)?;
    for v in [ds.p, ds.q, ds.positives.len(), ds.negatives.len()] {
        out.write_u32::<LittleEndian>(v as u32)?;
    }
    let rows = ds.positives.iter().map(|r| (r, 1u8)).chain(ds.negatives.iter().map(|r| (r, 0u8)));
    for (row, label) in rows {
        if row.desc3d.len() != ds.p || row.desc2d.len() != ds.q {
            return Err(DatasetError::Format("row descriptor length differs from header".into()));
        }
        for &v in row.desc3d.as_slice().iter().chain(row.desc2d.as_slice()) {
            out.write_f32::<LittleEndian>(v)?;
        }
        out.write_u8(label)?;
        out.write_u32::<LittleEndian>(row.keypoint3d_id)?;
        out.write_u32::<LittleEndian>(row.keypoint2d_id)?;
        out.write_u32::<LittleEndian>(row.image_id)?;
    }
    if let Some(meta) = &ds.metadata {
        let json = serde_json::to_vec(meta).map_err(|e| DatasetError::Format(e.to_string()))?;
        out.write_u32::<LittleEndian>(json.len() as u32)?;
        out.write_all(&json)?;
    }
    Ok(())
}

pub fn read_dataset<R: Read>(input: &mut R) -> Result<CorrespondenceDataset, DatasetError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CDS1_MAGIC {
        return Err(DatasetError::Format(format!("bad magic {magic:?}, expected CDS1")));
    }
    let mut header = [0u32; 4];
    input.read_u32_into::<LittleEndian>(&mut header)?;
    let [p, q, n_pos, n_neg] = header.map(|v| v as usize);
    let mut ds = CorrespondenceDataset {
        p,
        q,
        positives: Vec::with_capacity(n_pos),
        negatives: Vec::with_capacity(n_neg),
        metadata: None,
    };
    for i in 0..n_pos + n_neg {
        let mut d3 = vec![0.0f32; p];
        input.read_f32_into::<LittleEndian>(&mut d3)?;
        let mut d2 = vec![0.0f32; q];
        input.read_f32_into::<LittleEndian>(&mut d2)?;
        let label = input.read_u8()?;
        let row = DatasetRow {
            desc3d: Descriptor(d3),
            desc2d: Descriptor(d2),
            keypoint3d_id: input.read_u32::<LittleEndian>()?,
            keypoint2d_id: input.read_u32::<LittleEndian>()?,
            image_id: input.read_u32::<LittleEndian>()?,
        };
        let expected = u8::from(i < n_pos);
        if label != expected {
            return Err(DatasetError::Format(format!("row {i} has label {label}, expected {expected}")));
        }
        if expected == 1 {
            ds.positives.push(row);
        } else {
            ds.negatives.push(row);
        }
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        if rest.len() < 4 {
            return Err(DatasetError::Format("truncated metadata trailer".into()));
        }
        let len = u32::from_le_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
        if rest.len() != 4 + len {
            return Err(DatasetError::Format("metadata trailer length mismatch".into()));
        }
        ds.metadata = Some(serde_json::from_slice(&rest[4..]).map_err(|e| DatasetError::Format(e.to_string()))?);
    }
    Ok(ds)
}
