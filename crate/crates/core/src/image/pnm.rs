//! Binary PGM (P5) and PPM (P6) with 8-bit samples.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Image, ImageError};

pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    read_pnm(&fs::read(path)?)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.data.len() {
            match self.data[self.pos] {
                b'#' => {
                    while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, ImageError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.data.len() && self.data[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::Parse(format!("bad {what} in header")))
    }
}

/// Decodes P5/P6 bytes; color is reduced to BT.601 luma.
pub fn read_pnm(data: &[u8]) -> Result<Image, ImageError> {
    if data.len() < 2 || data[0] != b'P' {
        return Err(ImageError::UnsupportedFormat("not a PNM file".into()));
    }
    let channels = match data[1] {
        b'5' => 1,
        b'6' => 3,
        c => {
            return Err(ImageError::UnsupportedFormat(format!(
                "PNM variant P{}",
                c as char
            )))
        }
    };
    let mut cur = Cursor { data, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(ImageError::Parse("zero image dimension".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(ImageError::UnsupportedFormat(format!("maxval {maxval} (8-bit only)")));
    }
    match data.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(ImageError::Parse("missing whitespace after maxval".into())),
    }
    let needed = width as usize * height as usize * channels;
    let body = &data[cur.pos..];
    if body.len() < needed {
        return Err(ImageError::Parse(format!(
            "expected {needed} sample bytes, found {}",
            body.len()
        )));
    }
    let scale = maxval as f32;
    let pixels = if channels == 1 {
        body[..needed].iter().map(|&b| (b as f32 / scale).min(1.0)).collect()
    } else {
        body[..needed]
            .chunks_exact(3)
            .map(|c| {
                let (r, g, b) = (c[0] as f32, c[1] as f32, c[2] as f32);
                ((0.299 * r + 0.587 * g + 0.114 * b) / scale).clamp(0.0, 1.0)
            })
            .collect()
    };
    Image::new(width, height, pixels)
}

/// Encodes as P5 with values rounded to the nearest of 256 levels.
pub fn write_pgm<W: Write>(img: &Image, out: &mut W) -> Result<(), ImageError> {
    write!(out, "P5\n{} {}\n255\n", img.width(), img.height())?;
    let bytes: Vec<u8> = img
        .pixels()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    out.write_all(&bytes)?;
    Ok(())
}
