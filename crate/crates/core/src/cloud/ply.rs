use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use ply_rs::parser::Parser;
use ply_rs::ply::{
    Addable, DefaultElement, ElementDef, Encoding, Ply, Property, PropertyDef, PropertyType,
    ScalarType,
};
use ply_rs::writer::Writer;

use super::{CloudError, CloudPoint, PointCloud};
use crate::geometry::Vec3;

/// Intensity assigned when the file carries neither intensity nor color.
pub const DEFAULT_INTENSITY: f64 = 0.5;

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud, CloudError> {
    let mut reader = BufReader::new(File::open(path)?);
    read_ply(&mut reader)
}

/// Reads the `vertex` element of an ASCII or binary PLY stream.
///
/// Intensity comes from an `intensity` property if present, otherwise from
/// `red/green/blue` via ITU-R BT.601 luma, otherwise [`DEFAULT_INTENSITY`].
/// Integer-typed channels are scaled by their type's maximum.
pub fn read_ply<R: Read>(reader: &mut R) -> Result<PointCloud, CloudError> {
    let parser = Parser::<DefaultElement>::new();
    let ply = parser
        .read_ply(reader)
        .map_err(|e| CloudError::Parse(e.to_string()))?;
    let vertex_def = ply
        .header
        .elements
        .get("vertex")
        .ok_or_else(|| CloudError::Parse("no `vertex` element".into()))?;
    for axis in ["x", "y", "z"] {
        if !vertex_def.properties.contains_key(axis) {
            return Err(CloudError::MissingProperty(match axis {
                "x" => "x",
                "y" => "y",
                _ => "z",
            }));
        }
    }
    let has = |name: &str| vertex_def.properties.contains_key(name);
    let color_names = if has("red") && has("green") && has("blue") {
        Some(["red", "green", "blue"])
    } else if has("r") && has("g") && has("b") {
        Some(["r", "g", "b"])
    } else {
        None
    };
    let vertices = ply.payload.get("vertex").map(Vec::as_slice).unwrap_or(&[]);
    if vertices.len() != vertex_def.count {
        return Err(CloudError::Parse(format!(
            "header declares {} vertices, body has {}",
            vertex_def.count,
            vertices.len()
        )));
    }

    let mut points = Vec::with_capacity(vertices.len());
    for (i, v) in vertices.iter().enumerate() {
        let get = |name: &str| -> Result<f64, CloudError> {
            v.get(name)
                .and_then(scalar_value)
                .ok_or_else(|| CloudError::Parse(format!("vertex {i}: bad `{name}`")))
        };
        let position = Vec3::new(get("x")?, get("y")?, get("z")?);
        let intensity = if has("intensity") {
            v.get("intensity")
                .and_then(normalized_channel)
                .ok_or_else(|| CloudError::Parse(format!("vertex {i}: bad `intensity`")))?
        } else if let Some([r, g, b]) = color_names {
            let ch = |name: &str| {
                v.get(name)
                    .and_then(normalized_channel)
                    .ok_or_else(|| CloudError::Parse(format!("vertex {i}: bad `{name}`")))
            };
            0.299 * ch(r)? + 0.587 * ch(g)? + 0.114 * ch(b)?
        } else {
            DEFAULT_INTENSITY
        };
        points.push(CloudPoint {
            position,
            intensity: intensity.clamp(0.0, 1.0),
        });
    }
    PointCloud::new(points)
}

fn scalar_value(p: &Property) -> Option<f64> {
    Some(match *p {
        Property::Char(v) => v as f64,
        Property::UChar(v) => v as f64,
        Property::Short(v) => v as f64,
        Property::UShort(v) => v as f64,
        Property::Int(v) => v as f64,
        Property::UInt(v) => v as f64,
        Property::Float(v) => v as f64,
        Property::Double(v) => v,
        _ => return None,
    })
}

/// Maps a color/intensity channel to `[0, 1]`.
fn normalized_channel(p: &Property) -> Option<f64> {
    Some(match *p {
        Property::UChar(v) => v as f64 / u8::MAX as f64,
        Property::UShort(v) => v as f64 / u16::MAX as f64,
        Property::UInt(v) => v as f64 / u32::MAX as f64,
        Property::Float(v) => v as f64,
        Property::Double(v) => v,
        _ => return None,
    })
}

/// Writes a binary little-endian PLY with `double x, y, z` and `float intensity`.
pub fn write_ply<W: Write>(cloud: &PointCloud, out: &mut W) -> Result<(), CloudError> {
    let mut ply = Ply::<DefaultElement>::new();
    ply.header.encoding = Encoding::BinaryLittleEndian;
    let mut vertex = ElementDef::new("vertex".to_string());
    for axis in ["x", "y", "z"] {
        vertex.properties.add(PropertyDef::new(
            axis.to_string(),
            PropertyType::Scalar(ScalarType::Double),
        ));
    }
    vertex.properties.add(PropertyDef::new(
        "intensity".to_string(),
        PropertyType::Scalar(ScalarType::Float),
    ));
    ply.header.elements.add(vertex);

    let rows = cloud
        .points()
        .iter()
        .map(|p| {
            let mut e = DefaultElement::new();
            e.insert("x".to_string(), Property::Double(p.position.x));
            e.insert("y".to_string(), Property::Double(p.position.y));
            e.insert("z".to_string(), Property::Double(p.position.z));
            e.insert("intensity".to_string(), Property::Float(p.intensity as f32));
            e
        })
        .collect();
    ply.payload.insert("vertex".to_string(), rows);
    Writer::new().write_ply(out, &mut ply)?;
    Ok(())
}
