//! `C3DF` binary feature files (little-endian).
//!
//! Header: magic `C3DF`, version u32, count u32, descriptor length u32. Each
//! record: position 3 x f64, scale f64, response f64, descriptor p x f32.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{CloudError, Keypoint3D};
use crate::descriptor::Descriptor;
use crate::geometry::Vec3;

pub const C3DF_MAGIC: &[u8; 4] = b"C3DF";
pub const C3DF_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet3D {
    pub keypoints: Vec<Keypoint3D>,
    pub descriptors: Vec<Descriptor>,
}

impl FeatureSet3D {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn descriptor_len(&self) -> usize {
        self.descriptors.first().map_or(super::DESCRIPTOR_3D_LEN, Descriptor::len)
    }
}

pub fn write_features_3d<W: Write>(set: &FeatureSet3D, out: &mut W) -> Result<(), CloudError> {
    if set.keypoints.len() != set.descriptors.len() {
        return Err(CloudError::Format("keypoint/descriptor count mismatch".into()));
    }
    let p = set.descriptor_len();
    if set.descriptors.iter().any(|d| d.len() != p) {
        return Err(CloudError::Format("descriptors differ in length".into()));
    }
    out.write_all(C3DF_MAGIC)?;
    out.write_u32::<LittleEndian>(C3DF_VERSION)?;
    out.write_u32::<LittleEndian>(set.len() as u32)?;
    out.write_u32::<LittleEndian>(p as u32)?;
    for (kp, d) in set.keypoints.iter().zip(&set.descriptors) {
        for v in [kp.position.x, kp.position.y, kp.position.z, kp.scale, kp.response] {
            out.write_f64::<LittleEndian>(v)?;
        }
        for &v in d.as_slice() {
            out.write_f32::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn read_features_3d<R: Read>(input: &mut R) -> Result<FeatureSet3D, CloudError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != C3DF_MAGIC {
        return Err(CloudError::Format(format!("bad magic {magic:?}, expected C3DF")));
    }
    let version = input.read_u32::<LittleEndian>()?;
    if version != C3DF_VERSION {
        return Err(CloudError::Format(format!("unsupported C3DF version {version}")));
    }
    let count = input.read_u32::<LittleEndian>()? as usize;
    let p = input.read_u32::<LittleEndian>()? as usize;
    let mut set = FeatureSet3D::default();
    for _ in 0..count {
        let mut v = [0.0f64; 5];
        input.read_f64_into::<LittleEndian>(&mut v)?;
        let mut d = vec![0.0f32; p];
        input.read_f32_into::<LittleEndian>(&mut d)?;
        set.keypoints.push(Keypoint3D {
            position: Vec3::new(v[0], v[1], v[2]),
            scale: v[3],
            response: v[4],
        });
        set.descriptors.push(Descriptor(d));
    }
    Ok(set)
}
