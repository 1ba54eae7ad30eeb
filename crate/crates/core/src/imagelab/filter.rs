use super::{Image, Plane};
use crate::error::{Error, Result};

/// Kernel sizes accepted by [`gaussian_blur`].
pub const BLUR_KERNEL_SIZES: [usize; 4] = [3, 5, 7, 9];

/// Square convolution kernel of odd size.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel2D {
    size: usize,
    weights: Vec<f32>,
}

impl Kernel2D {
    pub fn new(size: usize, weights: Vec<f32>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::invalid(format!("kernel size must be odd, got {size}")));
        }
        if weights.len() != size * size {
            return Err(Error::invalid("kernel weight count must be size²"));
        }
        Ok(Self { size, weights })
    }

    pub fn from_rows<const N: usize>(rows: [[f32; N]; N]) -> Result<Self> {
        Self::new(N, rows.iter().flatten().copied().collect())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn laplacian() -> Self {
        Self::from_rows([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]]).unwrap()
    }

    pub fn sobel_x() -> Self {
        Self::from_rows([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]).unwrap()
    }

    pub fn sobel_y() -> Self {
        Self::from_rows([[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]]).unwrap()
    }

    /// Normalized 2D Gaussian built as the outer product of the 1D kernel.
    pub fn gaussian(size: usize) -> Result<Self> {
        let k1 = gaussian_kernel_1d(size)?;
        let mut w = Vec::with_capacity(size * size);
        for a in &k1 {
            for b in &k1 {
                w.push((a * b) as f32);
            }
        }
        Self::new(size, w)
    }
}

/// Correlation of a single-channel image with `k`, replicate padding, same size.
///
/// The result is not clamped.
pub fn convolve2d(img: &Image, k: &Kernel2D) -> Result<Plane> {
    if img.channels() != 1 {
        return Err(Error::invalid("convolve2d needs a single-channel image"));
    }
    Ok(convolve_plane(&Plane::from_image(img, 1.0)?, k))
}

pub(crate) fn convolve_plane(src: &Plane, k: &Kernel2D) -> Plane {
    let (h, w) = (src.height as isize, src.width as isize);
    let r = (k.size / 2) as isize;
    let mut out = Plane::zeros(src.height, src.width);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0f64;
            for ky in -r..=r {
                let sy = (y + ky).clamp(0, h - 1) as usize;
                for kx in -r..=r {
                    let sx = (x + kx).clamp(0, w - 1) as usize;
                    let wgt = k.weights[((ky + r) as usize) * k.size + (kx + r) as usize];
                    acc += wgt as f64 * src.data[sy * src.width + sx] as f64;
                }
            }
            out.data[(y * w + x) as usize] = acc as f32;
        }
    }
    out
}

/// `σ = 0.3·((k − 1)/2 − 1) + 0.8`.
pub fn gaussian_sigma(kernel_size: usize) -> f64 {
    0.3 * ((kernel_size as f64 - 1.0) / 2.0 - 1.0) + 0.8
}

pub fn gaussian_kernel_1d(kernel_size: usize) -> Result<Vec<f64>> {
    if !BLUR_KERNEL_SIZES.contains(&kernel_size) {
        return Err(Error::invalid(format!(
            "blur kernel size must be one of {BLUR_KERNEL_SIZES:?}, got {kernel_size}"
        )));
    }
    gaussian_kernel_1d_sigma(kernel_size, gaussian_sigma(kernel_size))
}

/// Like [`gaussian_kernel_1d`] with an explicit standard deviation.
pub fn gaussian_kernel_1d_sigma(kernel_size: usize, sigma: f64) -> Result<Vec<f64>> {
    if kernel_size % 2 == 0 || !(sigma > 0.0) {
        return Err(Error::invalid(format!(
            "gaussian kernel needs odd size and positive sigma, got {kernel_size}, {sigma}"
        )));
    }
    let r = (kernel_size / 2) as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / sum).collect())
}

/// Separable normalized Gaussian blur, per channel, replicate padding.
pub fn gaussian_blur(img: &Image, kernel_size: usize) -> Result<Image> {
    blur_separable(img, &gaussian_kernel_1d(kernel_size)?)
}

/// Gaussian blur with an explicit standard deviation.
pub fn gaussian_blur_sigma(img: &Image, kernel_size: usize, sigma: f64) -> Result<Image> {
    blur_separable(img, &gaussian_kernel_1d_sigma(kernel_size, sigma)?)
}

fn blur_separable(img: &Image, k: &[f64]) -> Result<Image> {
    let kernel_size = k.len();
    let r = (kernel_size / 2) as isize;
    let (h, w, c) = img.dims();
    let src = img.data();
    let mut tmp = vec![0f64; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let sx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += kv * src[(y * w + sx) * c + ch] as f64;
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0f32; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let sy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                    acc += kv * tmp[(sy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc as f32;
            }
        }
    }
    Image::from_clamped(h, w, c, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_variance(img: &Image) -> f64 {
        let p = convolve2d(img, &Kernel2D::laplacian()).unwrap();
        let n = p.data.len() as f64;
        let mean = p.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        p.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(Kernel2D::new(2, vec![0.0; 4]).is_err());
        assert!(gaussian_blur(&Image::filled(8, 8, 1, 0.1).unwrap(), 4).is_err());
        assert!(gaussian_blur(&Image::filled(8, 8, 1, 0.1).unwrap(), 11).is_err());
    }

    #[test]
    fn identity_kernel() {
        let img = Image::from_fn(6, 7, 1, |y, x, _| ((y * 5 + x) % 9) as f32 / 8.0).unwrap();
        let id = Kernel2D::from_rows([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(convolve2d(&img, &id).unwrap().data, img.data());
    }

    #[test]
    fn laplacian_kills_constants() {
        let img = Image::filled(9, 9, 1, 0.6).unwrap();
        let out = convolve2d(&img, &Kernel2D::laplacian()).unwrap();
        assert!(out.data.iter().all(|&v| v.abs() < 1e-6));
    }

    #[test]
    fn sobel_on_vertical_step() {
        // columns < 4 are 0.2, columns >= 4 are 0.7: step of 0.5
        let img = Image::from_fn(8, 8, 1, |_, x, _| if x < 4 { 0.2 } else { 0.7 }).unwrap();
        let out = convolve2d(&img, &Kernel2D::sobel_x()).unwrap();
        for y in 0..8 {
            // both columns adjacent to the step see the full (1+2+1)·step response
            assert!((out.get(y, 3) - 2.0).abs() < 1e-6);
            assert!((out.get(y, 4) - 2.0).abs() < 1e-6);
            assert!(out.get(y, 1).abs() < 1e-6);
            assert!(out.get(y, 6).abs() < 1e-6);
        }
    }

    #[test]
    fn gaussian_kernels_normalized() {
        for k in BLUR_KERNEL_SIZES {
            let s: f64 = gaussian_kernel_1d(k).unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            let s2: f32 = Kernel2D::gaussian(k).unwrap().weights().iter().sum();
            assert!((s2 - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn blur_keeps_constants() {
        let img = Image::filled(16, 16, 3, 0.42).unwrap();
        for k in BLUR_KERNEL_SIZES {
            let out = gaussian_blur(&img, k).unwrap();
            assert!(out.data().iter().all(|&s| (s - 0.42).abs() < 1e-6));
        }
    }

    #[test]
    fn impulse_center_matches_formula() {
        let mut data = vec![0f32; 9 * 9];
        data[4 * 9 + 4] = 1.0;
        let img = Image::new(9, 9, 1, data).unwrap();
        let out = gaussian_blur(&img, 3).unwrap();
        // oracle straight from the Gaussian density at σ(3) = 0.8
        let sigma: f64 = 0.8;
        let g = |i: f64| (-(i * i) / (2.0 * sigma * sigma)).exp();
        let c1 = g(0.0) / (g(-1.0) + g(0.0) + g(1.0));
        assert!((out.get(4, 4, 0) as f64 - c1 * c1).abs() < 1e-6);
    }

    #[test]
    fn blur_reduces_laplacian_variance() {
        let img = Image::from_fn(32, 32, 1, |y, x, _| {
            (((y * 31 + x * 17) ^ (x * 7)) % 13) as f32 / 12.0
        })
        .unwrap();
        let base = laplacian_variance(&img);
        for k in BLUR_KERNEL_SIZES {
            assert!(laplacian_variance(&gaussian_blur(&img, k).unwrap()) < base);
        }
    }
}
