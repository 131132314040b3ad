//! `C2DF` binary feature files (little-endian).
//!
//! Header: magic `C2DF`, version u32, count u32, descriptor length u32. Each
//! record: u, v, scale, orientation as f64, then the descriptor as q x f32.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::describe::{describe_keypoints, DESCRIPTOR_2D_LEN};
use super::detect::{detect_in, Detect2DConfig, ScaleSpace};
use super::{Image, ImageError, Keypoint2D};
use crate::descriptor::Descriptor;

pub const C2DF_MAGIC: &[u8; 4] = b"C2DF";
pub const C2DF_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet2D {
    pub keypoints: Vec<Keypoint2D>,
    pub descriptors: Vec<Descriptor>,
}

impl FeatureSet2D {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn descriptor_len(&self) -> usize {
        self.descriptors.first().map_or(DESCRIPTOR_2D_LEN, Descriptor::len)
    }
}

/// Detects and describes keypoints, dropping those whose support leaves the
/// image or whose descriptor is the zero sentinel.
pub fn extract_features_2d(img: &Image, cfg: &Detect2DConfig) -> Result<FeatureSet2D, ImageError> {
    let ss = ScaleSpace::build(img)?;
    let keypoints: Vec<Keypoint2D> = detect_in(&ss, cfg).into_iter().map(|d| d.keypoint).collect();
    let descriptors = describe_keypoints(&ss, &keypoints);
    let mut set = FeatureSet2D::default();
    for (kp, d) in keypoints.into_iter().zip(descriptors) {
        match d {
            Ok(d) if !d.is_zero() => {
                set.keypoints.push(kp);
                set.descriptors.push(d);
            }
            Ok(_) | Err(ImageError::SupportOutOfBounds { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(set)
}

pub fn write_features_2d<W: Write>(set: &FeatureSet2D, out: &mut W) -> Result<(), ImageError> {
    if set.keypoints.len() != set.descriptors.len() {
        return Err(ImageError::Format("keypoint/descriptor count mismatch".into()));
    }
    let q = set.descriptor_len();
    if set.descriptors.iter().any(|d| d.len() != q) {
        return Err(ImageError::Format("descriptors differ in length".into()));
    }
    out.write_all(C2DF_MAGIC)?;
    out.write_u32::<LittleEndian>(C2DF_VERSION)?;
    out.write_u32::<LittleEndian>(set.len() as u32)?;
    out.write_u32::<LittleEndian>(q as u32)?;
    for (kp, d) in set.keypoints.iter().zip(&set.descriptors) {
        for v in [kp.u, kp.v, kp.scale, kp.orientation] {
            out.write_f64::<LittleEndian>(v)?;
        }
        for &v in d.as_slice() {
            out.write_f32::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn read_features_2d<R: Read>(input: &mut R) -> Result<FeatureSet2D, ImageError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != C2DF_MAGIC {
        return Err(ImageError::Format(format!("bad magic {magic:?}, expected C2DF")));
    }
    let version = input.read_u32::<LittleEndian>()?;
    if version != C2DF_VERSION {
        return Err(ImageError::Format(format!("unsupported C2DF version {version}")));
    }
    let count = input.read_u32::<LittleEndian>()? as usize;
    let q = input.read_u32::<LittleEndian>()? as usize;
    let mut set = FeatureSet2D::default();
    for _ in 0..count {
        let mut v = [0.0f64; 4];
        input.read_f64_into::<LittleEndian>(&mut v)?;
        let mut d = vec![0.0f32; q];
        input.read_f32_into::<LittleEndian>(&mut d)?;
        set.keypoints.push(Keypoint2D {
            u: v[0],
            v: v[1],
            scale: v[2],
            orientation: v[3],
        });
        set.descriptors.push(Descriptor(d));
    }
    Ok(set)
}
