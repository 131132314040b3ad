//! Grayscale images, DoG keypoints and 4x4x8 gradient-histogram descriptors.

mod describe;
mod detect;
mod features;
mod pnm;

pub use describe::{compute_descriptor_2d, describe_keypoints, DESCRIPTOR_2D_LEN};
pub use detect::{detect_keypoints_2d, Detect2DConfig, Keypoint2D, ScaleSpace};
pub use features::{
    extract_features_2d, read_features_2d, write_features_2d, FeatureSet2D, C2DF_MAGIC, C2DF_VERSION,
};
pub use pnm::{load_image, read_pnm, write_pgm};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image parse error: {0}")]
    Parse(String),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("image {width}x{height} is smaller than the 32-pixel minimum")]
    ImageTooSmall { width: u32, height: u32 },
    #[error("{fraction:.2} of the descriptor support lies outside the image")]
    SupportOutOfBounds { fraction: f64 },
    #[error("feature file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major luminance image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: u32,
    height: u32,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(width: u32, height: u32, pixels: Vec<f32>) -> Result<Self, ImageError> {
        if pixels.len() != width as usize * height as usize {
            return Err(ImageError::Parse(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ImageError::Parse("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    /// Rotates by 90° so that pixel `(x, y)` moves to `(height - 1 - y, x)`.
    pub fn rotate90(&self) -> Image {
        let (w, h) = (self.width, self.height);
        Image::from_fn(h, w, |x, y| self.get(y, h - 1 - x))
    }
}
