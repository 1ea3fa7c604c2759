//! Image container and 8-bit file I/O.
//!
//! Pixel values live in `[0, 1]` as `f64`. Intermediate results of the
//! optimizer may leave that range; values are clamped only when written
//! to an 8-bit file.

use std::path::Path;

use crate::error::{Error, Result};

/// A grayscale (1 channel) or color (3 channel) image.
///
/// Storage is row-major with interleaved channels:
/// `data[(y * width + x) * channels + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Create an image from raw samples. `data.len()` must equal
    /// `height * width * channels` and `channels` must be 1 or 3.
    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidConfig(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(
                "Image::from_data",
                height * width * channels,
                data.len(),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// All-zero image of the given shape.
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    /// Constant-valued image of the given shape.
    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Total number of samples (`height * width * channels`).
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `(height, width, channels)` triple.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.shape() == other.shape()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Collapse color to grayscale by the per-pixel channel mean.
    /// Grayscale images are returned unchanged.
    pub fn to_luma(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.height * self.width);
        for px in self.data.chunks_exact(self.channels) {
            data.push(px.iter().sum::<f64>() / self.channels as f64);
        }
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Mean squared error against another image of the same shape.
    pub fn mse(&self, other: &Image) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::shape(
                "Image::mse",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    /// Read an 8-bit PNG or PGM/PPM file. Samples are mapped to `[0, 1]`.
    /// Grayscale sources produce 1 channel, everything else 3.
    pub fn load(path: impl AsRef<Path>) -> Result<Image> {
        let dynimg = image::ImageReader::open(path)?.decode()?;
        Ok(match dynimg {
            image::DynamicImage::ImageLuma8(buf) => {
                let (w, h) = (buf.width() as usize, buf.height() as usize);
                let data = buf.into_raw().iter().map(|&v| v as f64 / 255.0).collect();
                Image {
                    height: h,
                    width: w,
                    channels: 1,
                    data,
                }
            }
            other => {
                let buf = other.to_rgb8();
                let (w, h) = (buf.width() as usize, buf.height() as usize);
                let data = buf.into_raw().iter().map(|&v| v as f64 / 255.0).collect();
                Image {
                    height: h,
                    width: w,
                    channels: 3,
                    data,
                }
            }
        })
    }

    /// Write an 8-bit PNG or PGM/PPM file (chosen by extension).
    /// Values are clamped to `[0, 1]` and scaled to 0..=255.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let (w, h) = (self.width as u32, self.height as u32);
        match self.channels {
            1 => {
                let buf = image::GrayImage::from_raw(w, h, bytes)
                    .expect("buffer length matches dimensions");
                buf.save(path)?;
            }
            _ => {
                let buf = image::RgbImage::from_raw(w, h, bytes)
                    .expect("buffer length matches dimensions");
                buf.save(path)?;
            }
        }
        Ok(())
    }
}
