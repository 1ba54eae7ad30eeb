//! Per-image statistics.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::imagelab::{
    convolve_plane, fft_power_spectrum, rgb_to_hsv_saturation, to_grayscale, Image, Kernel2D,
    Plane,
};

/// Tunable constants for the unary metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricConfig {
    /// High-frequency cutoff as a fraction of the Nyquist radius.
    pub hf_cutoff: f64,
    /// Gray levels used for the co-occurrence matrix.
    pub glcm_levels: usize,
    /// Co-occurrence offset `(dy, dx)`.
    pub glcm_offset: (usize, usize),
    /// Edge pixels have magnitude above `mean + edge_std_factor·std`.
    pub edge_std_factor: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            hf_cutoff: 0.5,
            glcm_levels: 256,
            glcm_offset: (0, 1),
            edge_std_factor: 1.0,
        }
    }
}

fn check_same(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Grayscale view; single-channel inputs pass through.
fn gray(img: &Image) -> Result<Image> {
    match img.channels() {
        1 => Ok(img.clone()),
        _ => to_grayscale(img),
    }
}

/// Mean squared error over every sample.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// PSNR for a given MSE with peak 1; capped at 100 dB.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        100.0
    } else {
        (10.0 * (1.0 / mse).log10()).min(100.0)
    }
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Share of non-DC spectral power beyond `cfg.hf_cutoff` of the Nyquist radius.
pub fn hf_ratio(img: &Image) -> Result<f64> {
    hf_ratio_with(img, &MetricConfig::default())
}

pub fn hf_ratio_with(img: &Image, cfg: &MetricConfig) -> Result<f64> {
    let g = gray(img)?;
    let spec = fft_power_spectrum(&g)?;
    let (h, w) = (spec.height, spec.width);
    let nyquist = h.min(w) as f64 / 2.0;
    let cutoff = cfg.hf_cutoff * nyquist;
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    let (mut high, mut total) = (0f64, 0f64);
    for y in 0..h {
        for x in 0..w {
            let (fy, fx) = (y as f64 - cy, x as f64 - cx);
            if fy == 0.0 && fx == 0.0 {
                continue;
            }
            let p = spec.get(y, x);
            total += p;
            if (fy * fy + fx * fx).sqrt() > cutoff {
                high += p;
            }
        }
    }
    // relative floor: a constant image leaves only rounding noise outside DC
    if total <= 1e-12 * spec.dc().max(1.0) {
        return Ok(0.0);
    }
    Ok(high / total)
}

fn population_variance(values: &[f32]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n
}

/// Variance of the 3×3 Laplacian response on the 0–255 gray image.
pub fn sharpness(img: &Image) -> Result<f64> {
    let plane = Plane::from_image(&gray(img)?, 255.0)?;
    let lap = convolve_plane(&plane, &Kernel2D::laplacian());
    Ok(population_variance(&lap.data))
}

/// Mean HSV saturation.
pub fn saturation_mean(img: &Image) -> Result<f64> {
    let s = rgb_to_hsv_saturation(img)?;
    Ok(s.data().iter().map(|&v| v as f64).sum::<f64>() / s.data().len() as f64)
}

/// Entropy (bits) of the symmetric, normalized gray-level co-occurrence matrix.
pub fn tex_entropy(img: &Image) -> Result<f64> {
    tex_entropy_with(img, &MetricConfig::default())
}

pub fn tex_entropy_with(img: &Image, cfg: &MetricConfig) -> Result<f64> {
    let levels = quantize_levels(&gray(img)?, cfg.glcm_levels)?;
    let (h, w) = (img.height(), img.width());
    Ok(glcm_entropy(&levels, h, w, cfg.glcm_offset))
}

pub(crate) fn quantize_levels(g: &Image, levels: usize) -> Result<Vec<u32>> {
    if levels < 2 {
        return Err(Error::invalid("need at least 2 gray levels"));
    }
    let top = (levels - 1) as f32;
    Ok(g.data().iter().map(|&s| (s * top).round() as u32).collect())
}

fn glcm_entropy(levels: &[u32], h: usize, w: usize, (dy, dx): (usize, usize)) -> f64 {
    if dy >= h || dx >= w {
        return 0.0;
    }
    let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
    let mut total = 0u64;
    for y in 0..h - dy {
        for x in 0..w - dx {
            let a = levels[y * w + x];
            let b = levels[(y + dy) * w + x + dx];
            *counts.entry((a, b)).or_default() += 1;
            *counts.entry((b, a)).or_default() += 1;
            total += 2;
        }
    }
    let total = total as f64;
    let mut cells: Vec<u64> = counts.into_values().collect();
    // fixed summation order
    cells.sort_unstable();
    -cells
        .into_iter()
        .map(|c| {
            let p = c as f64 / total;
            p * p.log2()
        })
        .sum::<f64>()
}

/// Sobel gradient magnitude on the 0–255 gray image.
pub(crate) fn sobel_magnitude(img: &Image) -> Result<Plane> {
    let plane = Plane::from_image(&gray(img)?, 255.0)?;
    let gx = convolve_plane(&plane, &Kernel2D::sobel_x());
    let gy = convolve_plane(&plane, &Kernel2D::sobel_y());
    let data = gx
        .data
        .iter()
        .zip(&gy.data)
        .map(|(&a, &b)| (a * a + b * b).sqrt())
        .collect();
    Ok(Plane {
        height: plane.height,
        width: plane.width,
        data,
    })
}

/// Fisher skewness `m3 / m2^{3/2}`; zero for fewer than 3 values or zero spread.
pub fn fisher_skewness(values: &[f64]) -> f64 {
    if values.len() < 3 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    if m2 <= 1e-12 * mean.abs().max(1.0).powi(2) {
        return 0.0;
    }
    m3 / m2.powf(1.5)
}

/// Skewness of Sobel magnitudes over edge pixels.
pub fn edge_skew(img: &Image) -> Result<f64> {
    edge_skew_with(img, &MetricConfig::default())
}

pub fn edge_skew_with(img: &Image, cfg: &MetricConfig) -> Result<f64> {
    let mag = sobel_magnitude(img)?;
    let values: Vec<f64> = mag.data.iter().map(|&v| v as f64).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let threshold = mean + cfg.edge_std_factor * std;
    let edges: Vec<f64> = values.into_iter().filter(|&v| v > threshold).collect();
    Ok(fisher_skewness(&edges))
}

/// Whether row/column `i` of an axis of length `len` straddles an interior
/// 8×8 block boundary (the pixels on either side of the grid line).
pub(crate) fn on_block_boundary(i: usize, len: usize) -> bool {
    (i % 8 == 0 && i > 0) || (i % 8 == 7 && i + 1 < len)
}

/// Share of Sobel gradient energy on pixels straddling 8×8 block boundaries.
pub fn dct_blockiness(img: &Image) -> Result<f64> {
    img.ensure_aligned()?;
    let mag = sobel_magnitude(img)?;
    let (h, w) = (mag.height, mag.width);
    let (mut edge, mut total) = (0f64, 0f64);
    for y in 0..h {
        let row_b = on_block_boundary(y, h);
        for x in 0..w {
            let e = (mag.get(y, x) as f64).powi(2);
            total += e;
            if row_b || on_block_boundary(x, w) {
                edge += e;
            }
        }
    }
    if total <= 0.0 {
        return Ok(0.0);
    }
    Ok(edge / total)
}

/// Fraction of pixels that [`dct_blockiness`] counts as boundary pixels.
pub fn block_boundary_fraction(height: usize, width: usize) -> f64 {
    let mut n = 0usize;
    for y in 0..height {
        for x in 0..width {
            if on_block_boundary(y, height) || on_block_boundary(x, width) {
                n += 1;
            }
        }
    }
    n as f64 / (height * width) as f64
}
