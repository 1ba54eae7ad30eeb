//! Pixel-level primitives shared by the rest of the crate.
//!
//! Everything here works on [`Image`], a row-major `H×W×C` raster of `f32`
//! samples in `[0, 1]`, or on [`Plane`], an unbounded single-channel field
//! used for filter responses that may go negative.

mod color;
mod filter;
mod jpeg;
mod resample;
mod spectrum;

use std::path::Path;

use crate::error::{Error, Result};

pub use color::{rgb_to_hsv_saturation, scale_saturation, to_grayscale};
pub use filter::{
    convolve2d, gaussian_blur, gaussian_blur_sigma, gaussian_kernel_1d, gaussian_kernel_1d_sigma,
    gaussian_sigma, Kernel2D, BLUR_KERNEL_SIZES,
};
pub(crate) use filter::convolve_plane;
pub use jpeg::jpeg_roundtrip;
pub use resample::{average_pool, resize_bicubic, resize_bilinear};
pub use spectrum::{fft_power_spectrum, SpectrumGrid};

/// An `H×W×C` float raster, `C ∈ {1, 3}`, samples in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "buffer holds {} samples, {height}x{width}x{channels} needs {}",
                data.len(),
                height * width * channels
            )));
        }
        if data.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::invalid("samples must lie in [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image, clamping every sample into `[0, 1]` (NaN maps to 0).
    pub fn from_clamped(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let data = data.into_iter().map(clamp_unit).collect();
        Self::new(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![clamp_unit(value); height * width * channels])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(clamp_unit(f(y, x, c)));
                }
            }
        }
        Self::new(height, width, channels, data)
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

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Extracts one channel as a single-channel image.
    pub fn channel(&self, c: usize) -> Image {
        assert!(c < self.channels);
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px[c])
            .collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Interleaves single-channel images of equal size.
    pub fn from_channels(planes: &[Image]) -> Result<Image> {
        let first = planes
            .first()
            .ok_or_else(|| Error::invalid("no channels given"))?;
        if planes
            .iter()
            .any(|p| p.channels != 1 || p.height != first.height || p.width != first.width)
        {
            return Err(Error::invalid("channel planes must be single-channel and equal-sized"));
        }
        let n = first.height * first.width;
        let mut data = Vec::with_capacity(n * planes.len());
        for i in 0..n {
            for p in planes {
                data.push(p.data[i]);
            }
        }
        Image::new(first.height, first.width, planes.len(), data)
    }

    /// Applies `f` to every sample and clamps the result.
    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&s| clamp_unit(f(s))).collect(),
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::invalid(format!(
                "crop {height}x{width}+{top}+{left} outside {}x{}",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(height * width * c);
        for y in top..top + height {
            let row = (y * self.width + left) * c;
            data.extend_from_slice(&self.data[row..row + width * c]);
        }
        Ok(Image {
            height,
            width,
            channels: c,
            data,
        })
    }

    /// Center crop to `height×width`.
    pub fn center_crop(&self, height: usize, width: usize) -> Result<Image> {
        if height > self.height || width > self.width {
            return Err(Error::invalid("center crop larger than image"));
        }
        self.crop((self.height - height) / 2, (self.width - width) / 2, height, width)
    }

    /// Errors unless both sides are at least 8 and divisible by 8.
    pub fn ensure_aligned(&self) -> Result<()> {
        ensure_aligned_dims(self.height, self.width)
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }

    /// Quantizes to 8 bits: `round(s·255)`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&s| quantize_u8(s)).collect()
    }

    pub fn from_u8(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Image> {
        let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Image::new(height, width, channels, data)
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let decoded = image::open(path)
            .map_err(|e| Error::Codec(format!("{}: {e}", path.display())))?;
        match decoded.color().channel_count() {
            1 | 2 => {
                let g = decoded.to_luma8();
                Image::from_u8(g.height() as usize, g.width() as usize, 1, g.as_raw())
            }
            _ => {
                let rgb = decoded.to_rgb8();
                Image::from_u8(rgb.height() as usize, rgb.width() as usize, 3, rgb.as_raw())
            }
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let color = if self.channels == 3 {
            image::ExtendedColorType::Rgb8
        } else {
            image::ExtendedColorType::L8
        };
        image::save_buffer_with_format(
            path,
            &self.to_u8(),
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Codec(format!("{}: {other}", path.display())),
        })
    }
}

/// A single-channel float field without range restriction.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Views a single-channel image as a plane, multiplying by `scale`.
    pub fn from_image(img: &Image, scale: f32) -> Result<Plane> {
        if img.channels() != 1 {
            return Err(Error::invalid("plane conversion needs a single-channel image"));
        }
        Ok(Plane {
            height: img.height(),
            width: img.width(),
            data: img.data().iter().map(|&s| s * scale).collect(),
        })
    }
}

pub(crate) fn ensure_aligned_dims(height: usize, width: usize) -> Result<()> {
    if height < 8 || width < 8 || height % 8 != 0 || width % 8 != 0 {
        return Err(Error::invalid(format!(
            "dimensions {height}x{width} must be multiples of 8 and at least 8"
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn clamp_unit(s: f32) -> f32 {
    if s.is_nan() {
        0.0
    } else {
        s.clamp(0.0, 1.0)
    }
}

#[inline]
pub(crate) fn quantize_u8(s: f32) -> u8 {
    (clamp_unit(s) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_samples() {
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::new(1, 1, 2, vec![0.0, 0.0]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn png_roundtrip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(8, 16, 3, |y, x, c| ((y * 16 + x) * 3 + c) as f32 % 256.0 / 255.0)
            .unwrap();
        let path = dir.path().join("a.png");
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn channel_split_and_merge() {
        let img = Image::from_fn(4, 5, 3, |y, x, c| (y + x + c) as f32 / 20.0).unwrap();
        let planes: Vec<_> = (0..3).map(|c| img.channel(c)).collect();
        assert_eq!(Image::from_channels(&planes).unwrap(), img);
    }

    #[test]
    fn alignment_check() {
        assert!(ensure_aligned_dims(64, 72).is_ok());
        assert!(ensure_aligned_dims(60, 64).is_err());
        assert!(ensure_aligned_dims(0, 8).is_err());
    }
}
