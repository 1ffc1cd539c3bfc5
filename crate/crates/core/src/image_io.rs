//! Frame loading, grayscale conversion and bilinear resampling.

use std::path::Path;

use image::DynamicImage;
use thiserror::Error;

/// Luminance weights applied to R, G and B.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("cannot decode {path}: {reason}")]
    DecodeError { path: String, reason: String },
    #[error("invalid image dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },
    #[error("pixel buffer has {got} values, expected {expected}")]
    BufferSize { expected: usize, got: usize },
}

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    /// Builds an image from row-major data. Values are clamped into `[0, 1]`.
    pub fn new(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidDimensions { width, height });
        }
        if data.len() != width * height {
            return Err(ImageError::BufferSize {
                expected: width * height,
                got: data.len(),
            });
        }
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Pixel lookup with coordinates clamped to the image border.
    #[inline]
    pub fn get_clamped(&self, row: isize, col: isize) -> f64 {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.data[r * self.width + c]
    }

    /// Quantizes to 8 bits, rounding to nearest.
    pub fn to_luma8(&self) -> image::GrayImage {
        let bytes = self
            .data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer size matches dimensions")
    }
}

/// Decodes an 8-bit PNG, JPEG or PGM into a [`GrayImage`].
///
/// Color images are reduced with [`LUMA_WEIGHTS`]; alpha is ignored.
pub fn load_grayscale(path: impl AsRef<Path>) -> Result<GrayImage, ImageError> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(ImageError::FileNotFound(path.display().to_string()));
    }
    let decoded = image::ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map_err(|e| ImageError::DecodeError {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?
        .decode()
        .map_err(|e| ImageError::DecodeError {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
    Ok(from_dynamic(&decoded))
}

/// Converts a decoded image to grayscale with fixed luminance weights.
pub fn from_dynamic(img: &DynamicImage) -> GrayImage {
    let (width, height) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageLuma8(buf) => buf.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(buf) => buf
            .as_raw()
            .chunks_exact(2)
            .map(|px| px[0] as f64 / 255.0)
            .collect(),
        other => other
            .to_rgb8()
            .as_raw()
            .chunks_exact(3)
            .map(|px| {
                (LUMA_WEIGHTS[0] * px[0] as f64
                    + LUMA_WEIGHTS[1] * px[1] as f64
                    + LUMA_WEIGHTS[2] * px[2] as f64)
                    / 255.0
            })
            .collect(),
    };
    GrayImage::new(width, height, data).expect("decoder produced consistent dimensions")
}

/// Bilinear resampling with pixel-center alignment and clamped borders.
///
/// Targets with a zero dimension, or a single-pixel target, are rejected.
pub fn resize_bilinear(
    img: &GrayImage,
    target_w: usize,
    target_h: usize,
) -> Result<GrayImage, ImageError> {
    if target_w == 0 || target_h == 0 || target_w * target_h < 2 {
        return Err(ImageError::InvalidDimensions {
            width: target_w,
            height: target_h,
        });
    }
    if target_w == img.width && target_h == img.height {
        return Ok(img.clone());
    }

    let sx = img.width as f64 / target_w as f64;
    let sy = img.height as f64 / target_h as f64;
    // Horizontal taps are shared by every output row.
    let col_taps: Vec<(usize, usize, f64)> = (0..target_w)
        .map(|c| source_taps(c, sx, img.width))
        .collect();

    let mut data = Vec::with_capacity(target_w * target_h);
    for r in 0..target_h {
        let (r0, r1, fy) = source_taps(r, sy, img.height);
        let row0 = &img.data[r0 * img.width..(r0 + 1) * img.width];
        let row1 = &img.data[r1 * img.width..(r1 + 1) * img.width];
        for &(c0, c1, fx) in &col_taps {
            let top = row0[c0] + (row0[c1] - row0[c0]) * fx;
            let bottom = row1[c0] + (row1[c1] - row1[c0]) * fx;
            data.push(top + (bottom - top) * fy);
        }
    }
    GrayImage::new(target_w, target_h, data)
}

fn source_taps(dst: usize, scale: f64, src_len: usize) -> (usize, usize, f64) {
    let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, pos - i0 as f64)
}

/// Size at which the longer side equals `long_side`, keeping aspect ratio.
///
/// The shorter side is rounded to the nearest even number (at least 2).
pub fn working_size(width: usize, height: usize, long_side: usize) -> (usize, usize) {
    let round_even = |v: f64| -> usize { ((v / 2.0).round() as usize * 2).max(2) };
    if width >= height {
        let h = height as f64 * long_side as f64 / width as f64;
        (long_side, round_even(h))
    } else {
        let w = width as f64 * long_side as f64 / height as f64;
        (round_even(w), long_side)
    }
}

/// Resizes a full-resolution frame to the saliency working resolution.
pub fn to_working_resolution(img: &GrayImage, long_side: usize) -> Result<GrayImage, ImageError> {
    let (w, h) = working_size(img.width, img.height, long_side);
    resize_bilinear(img, w, h)
}
