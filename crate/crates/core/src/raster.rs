//! Dense raster types and PNG/JPEG I/O.
//!
//! All rasters are row-major with the origin at the top-left corner; `y`
//! grows downward.

use std::path::Path;

use image::{GrayImage as LumaBuffer, ImageError, ImageReader, Luma};

use crate::error::{Error, Result};

/// An 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        check_dims(width, height, pixels.len())?;
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self> {
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    /// One channel (0 = red, 1 = green, 2 = blue) as a real-valued image.
    pub fn channel(&self, index: usize) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.pixels.iter().map(|p| f64::from(p[index])).collect(),
        }
    }
}

/// A real-valued single-channel image.
///
/// Values only need to be finite: shifted or scaled copies of an image may
/// leave `[0, 255]`, which the LBP operator does not care about.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height, data.len())?;
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gray intensity {v} is not finite"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
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
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Applies `f` to every intensity.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Result<Self> {
        Self::new(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }
}

/// A binary ground-truth or predicted mask; 1 marks salient pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GtMask {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl GtMask {
    pub fn new(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        if values.iter().any(|&v| v > 1) {
            return Err(Error::InvalidParameter("mask values must be 0 or 1".into()));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }

    /// The top-left `width` x `height` window of the mask.
    pub fn crop(&self, width: usize, height: usize) -> Result<Self> {
        if width > self.width || height > self.height {
            return Err(Error::DimensionMismatch(format!(
                "cannot crop a {}x{} mask to {width}x{height}",
                self.width, self.height
            )));
        }
        let values = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| self.get(x, y))
            .collect();
        Self::new(width, height, values)
    }

    /// Writes the mask as a single-channel PNG with values {0, 255}.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buffer = LumaBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([self.get(x as usize, y as usize) * 255])
        });
        save_luma(&buffer, path)
    }
}

/// Writes 8-bit gray `values` (row-major) as a single-channel PNG.
pub fn save_gray_png(width: usize, height: usize, values: &[u8], path: &Path) -> Result<()> {
    check_dims(width, height, values.len())?;
    let buffer = LumaBuffer::from_fn(width as u32, height as u32, |x, y| {
        Luma([values[y as usize * width + x as usize]])
    });
    save_luma(&buffer, path)
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter(format!(
            "image dimensions {width}x{height} must be positive"
        )));
    }
    if width * height != len {
        return Err(Error::DimensionMismatch(format!(
            "{width}x{height} image needs {} pixels, got {len}",
            width * height
        )));
    }
    Ok(())
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    // The file opened, so read failures during decoding (typically an
    // unexpected end of stream) mean malformed data.
    let img = reader.decode().map_err(|e| match e {
        ImageError::Unsupported(u) => Error::UnsupportedFormat {
            path: path.to_path_buf(),
            message: u.to_string(),
        },
        other => Error::Decode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::EmptyImage {
            path: path.to_path_buf(),
        });
    }
    Ok(img)
}

/// Decodes a PNG or JPEG into 8-bit RGB; gray sources are replicated across
/// the three channels.
pub fn load_image(path: &Path) -> Result<ColorImage> {
    let rgb = decode(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    ColorImage::new(w, h, rgb.pixels().map(|p| p.0).collect())
}

/// Loads a mask; a pixel is salient when its 8-bit gray value is at least 128.
pub fn load_mask(path: &Path) -> Result<GtMask> {
    let luma = decode(path)?.to_luma8();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    GtMask::new(w, h, luma.pixels().map(|p| u8::from(p.0[0] >= 128)).collect())
}

/// BT.601 luma, not rounded.
pub fn to_grayscale(img: &ColorImage) -> GrayImage {
    GrayImage {
        width: img.width,
        height: img.height,
        data: img
            .pixels
            .iter()
            .map(|&[r, g, b]| 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b))
            .collect(),
    }
}

pub fn save_color_png(img: &ColorImage, path: &Path) -> Result<()> {
    let buffer = image::RgbImage::from_fn(img.width as u32, img.height as u32, |x, y| {
        image::Rgb(img.get(x as usize, y as usize))
    });
    buffer
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| encode_error(path, e))
}

pub(crate) fn save_luma(buffer: &LumaBuffer, path: &Path) -> Result<()> {
    buffer
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| encode_error(path, e))
}

fn encode_error(path: &Path, e: ImageError) -> Error {
    match e {
        ImageError::IoError(source) => Error::io(path, source),
        other => Error::Encode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}
