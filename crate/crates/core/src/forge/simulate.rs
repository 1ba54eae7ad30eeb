//! Deterministic stand-ins for the two fake families.
//!
//! The reconstruction family compresses the image through a pooled,
//! quantized latent and comes back slightly smoothed. The upsampling family
//! rebuilds the image from a 4× bicubic thumbnail with two stride-2
//! transposed convolutions whose uneven tap overlap leaves a period-2
//! checkerboard, then sharpens and desaturates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagelab::{
    average_pool, gaussian_blur, gaussian_blur_sigma, resize_bicubic, resize_bilinear, scale_saturation, Image,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatorConfig {
    /// Latent downsampling factor of the reconstruction simulator.
    pub vae_pool: usize,
    /// Bits per latent sample.
    pub vae_bits: u32,
    /// Gaussian kernel size applied after decoding.
    pub vae_blur: usize,
    /// Standard deviation of that kernel.
    pub vae_blur_sigma: f64,
    /// Bicubic degradation factor of the upsampling simulator (a power of 2).
    pub gan_down: usize,
    /// Gain imbalance between even and odd output phases of each transposed conv.
    pub gan_checker: f32,
    /// Unsharp-mask amount.
    pub gan_unsharp: f32,
    /// HSV saturation multiplier.
    pub gan_saturation: f32,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            vae_pool: 8,
            vae_bits: 6,
            vae_blur: 3,
            vae_blur_sigma: 0.8,
            gan_down: 4,
            gan_checker: 0.012,
            gan_unsharp: 0.3,
            gan_saturation: 0.93,
        }
    }
}

fn check_dims(img: &Image, factor: usize) -> Result<()> {
    img.ensure_aligned()?;
    if img.height() % factor != 0 || img.width() % factor != 0 {
        return Err(Error::invalid(format!(
            "{}x{} is not divisible by {factor}",
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

pub fn simulate_vae_artifact(img: &Image) -> Result<Image> {
    simulate_vae_artifact_with(img, &SimulatorConfig::default())
}

/// Reconstruction artifact: the image is pooled to a latent, the latent is
/// uniformly quantized, and the quantization error is bilinearly decoded
/// back onto the image before a mild Gaussian blur.
pub fn simulate_vae_artifact_with(img: &Image, cfg: &SimulatorConfig) -> Result<Image> {
    check_dims(img, cfg.vae_pool)?;
    let (h, w, c) = img.dims();
    let latent = average_pool(img, cfg.vae_pool)?;
    let levels = (1u32 << cfg.vae_bits) as f32;
    // signed residual kept around 0.5 so it fits an Image
    let residual = latent.map(|v| ((v * levels).round() / levels).min(1.0) - v + 0.5);
    let decoded = resize_bilinear(&residual, h, w)?;
    let recon: Vec<f32> = img
        .data()
        .iter()
        .zip(decoded.data())
        .map(|(&p, &r)| p + (r - 0.5))
        .collect();
    let recon = Image::from_clamped(h, w, c, recon)?;
    gaussian_blur_sigma(&recon, cfg.vae_blur, cfg.vae_blur_sigma)
}

/// One stride-2 transposed convolution along both axes with the separable
/// 3-tap kernel `[(1−ε)/2, 1+ε, (1−ε)/2]`: even output phases copy one input
/// sample with gain `1+ε`, odd phases blend two with total gain `1−ε`.
fn transposed_conv2x(img: &Image, eps: f32) -> Result<Image> {
    let (h, w, c) = img.dims();
    let side = (1.0 - eps) / 2.0;
    let center = 1.0 + eps;
    let up_axis = |src: &[f32], n: usize, stride: usize, out: &mut [f32], out_stride: usize| {
        for i in 0..n {
            let a = src[i * stride];
            let b = src[(i + 1).min(n - 1) * stride];
            out[2 * i * out_stride] = center * a;
            out[(2 * i + 1) * out_stride] = side * a + side * b;
        }
    };
    // rows
    let mut wide = vec![0f32; h * 2 * w * c];
    for y in 0..h {
        for ch in 0..c {
            let src = &img.data()[y * w * c + ch..];
            let out = &mut wide[y * 2 * w * c + ch..];
            up_axis(src, w, c, out, c);
        }
    }
    // columns
    let (w2, h2) = (2 * w, 2 * h);
    let mut tall = vec![0f32; h2 * w2 * c];
    for x in 0..w2 {
        for ch in 0..c {
            let src = &wide[x * c + ch..];
            let out = &mut tall[x * c + ch..];
            up_axis(src, h, w2 * c, out, w2 * c);
        }
    }
    Image::from_clamped(h2, w2, c, tall)
}

pub fn simulate_gan_artifact(img: &Image) -> Result<Image> {
    simulate_gan_artifact_with(img, &SimulatorConfig::default())
}

pub fn simulate_gan_artifact_with(img: &Image, cfg: &SimulatorConfig) -> Result<Image> {
    if !cfg.gan_down.is_power_of_two() || cfg.gan_down < 2 {
        return Err(Error::Config("gan_down must be a power of two ≥ 2".into()));
    }
    check_dims(img, cfg.gan_down)?;
    let (h, w, c) = img.dims();
    if c != 3 {
        return Err(Error::invalid("upsampling simulator needs RGB input"));
    }
    let mut up = resize_bicubic(img, h / cfg.gan_down, w / cfg.gan_down)?;
    while up.height() < h {
        up = transposed_conv2x(&up, cfg.gan_checker)?;
    }
    let soft = gaussian_blur(&up, 3)?;
    let sharpened: Vec<f32> = up
        .data()
        .iter()
        .zip(soft.data())
        .map(|(&u, &s)| u + cfg.gan_unsharp * (u - s))
        .collect();
    let sharpened = Image::from_clamped(h, w, c, sharpened)?;
    scale_saturation(&sharpened, cfg.gan_saturation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::gen_procedural_real;
    use crate::imagelab::{fft_power_spectrum, to_grayscale};
    use crate::metrics::{mse, saturation_mean};

    #[test]
    fn constant_survives_reconstruction() {
        for v in [0.0, 0.13, 0.5, 0.77, 1.0] {
            let img = Image::filled(32, 40, 3, v).unwrap();
            let out = simulate_vae_artifact(&img).unwrap();
            assert_eq!(out.dims(), img.dims());
            assert!(out.data().iter().all(|&s| (s - v).abs() <= 1.0 / 64.0));
        }
    }

    #[test]
    fn dims_preserved_and_checked() {
        let img = gen_procedural_real(3, 64, 72).unwrap();
        assert_eq!(simulate_vae_artifact(&img).unwrap().dims(), img.dims());
        assert_eq!(simulate_gan_artifact(&img).unwrap().dims(), img.dims());
        let bad = Image::filled(36, 36, 3, 0.5).unwrap();
        assert!(simulate_vae_artifact(&bad).is_err());
        assert!(simulate_gan_artifact(&bad).is_err());
    }

    #[test]
    fn upsampling_leaves_nyquist_peak() {
        let img = gen_procedural_real(8, 64, 64).unwrap();
        let fake = simulate_gan_artifact(&img).unwrap();
        let s_real = fft_power_spectrum(&to_grayscale(&img).unwrap()).unwrap();
        let s_fake = fft_power_spectrum(&to_grayscale(&fake).unwrap()).unwrap();
        assert!(s_fake.at_frequency(32, 0) > s_real.at_frequency(32, 0));
        assert!(s_fake.at_frequency(0, 32) > s_real.at_frequency(0, 32));
    }

    #[test]
    fn upsampling_desaturates() {
        let img = gen_procedural_real(9, 64, 64).unwrap();
        let fake = simulate_gan_artifact(&img).unwrap();
        assert!(saturation_mean(&fake).unwrap() < saturation_mean(&img).unwrap());
    }

    #[test]
    fn reconstruction_is_closer_than_upsampling() {
        let img = gen_procedural_real(10, 64, 64).unwrap();
        let v = mse(&img, &simulate_vae_artifact(&img).unwrap()).unwrap();
        let g = mse(&img, &simulate_gan_artifact(&img).unwrap()).unwrap();
        assert!(0.0 < v && v < g, "vae {v} gan {g}");
    }
}
