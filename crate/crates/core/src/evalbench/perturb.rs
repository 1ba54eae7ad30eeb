use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::imagelab::{gaussian_blur, jpeg_roundtrip, resize_bicubic, Image, BLUR_KERNEL_SIZES};

pub const CROP_PCT_RANGE: (f64, f64) = (5.0, 20.0);
pub const JPEG_QUALITY_RANGE: (u8, u8) = (10, 75);
/// Noise variance on the 0–255 scale.
pub const NOISE_VAR_RANGE: (f64, f64) = (5.0, 20.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationSpec {
    pub blur: bool,
    pub crop: bool,
    pub jpeg: bool,
    pub noise: bool,
    /// Per-image probability of applying each enabled perturbation.
    pub p: f64,
    pub seed: u64,
    /// Random crop anchor instead of a centered one.
    pub random_anchor: bool,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self::none()
    }
}

impl PerturbationSpec {
    pub fn none() -> Self {
        Self {
            blur: false,
            crop: false,
            jpeg: false,
            noise: false,
            p: 0.5,
            seed: 0,
            random_anchor: false,
        }
    }

    pub fn all() -> Self {
        Self {
            blur: true,
            crop: true,
            jpeg: true,
            noise: true,
            ..Self::none()
        }
    }

    /// Parses `none`, `all` or a comma list of `blur,crop,jpeg,noise`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut s = Self::none();
        match list.trim() {
            "" | "none" => return Ok(s),
            "all" => return Ok(Self::all()),
            _ => {}
        }
        for item in list.split(',') {
            match item.trim() {
                "blur" => s.blur = true,
                "crop" => s.crop = true,
                "jpeg" => s.jpeg = true,
                "noise" => s.noise = true,
                other => {
                    return Err(crate::Error::invalid(format!(
                        "unknown perturbation {other:?} (expected blur, crop, jpeg, noise, all or none)"
                    )))
                }
            }
        }
        Ok(s)
    }

    pub fn flags(&self) -> Vec<String> {
        [("blur", self.blur), ("crop", self.crop), ("jpeg", self.jpeg), ("noise", self.noise)]
            .iter()
            .filter(|(_, on)| *on)
            .map(|(n, _)| n.to_string())
            .collect()
    }

    pub fn is_identity(&self) -> bool {
        !(self.blur || self.crop || self.jpeg || self.noise)
    }
}

pub fn sample_blur_kernel(rng: &mut impl Rng) -> usize {
    BLUR_KERNEL_SIZES[rng.gen_range(0..BLUR_KERNEL_SIZES.len())]
}

pub fn sample_crop_pct(rng: &mut impl Rng) -> f64 {
    rng.gen_range(CROP_PCT_RANGE.0..=CROP_PCT_RANGE.1)
}

pub fn sample_jpeg_quality(rng: &mut impl Rng) -> u8 {
    rng.gen_range(JPEG_QUALITY_RANGE.0..=JPEG_QUALITY_RANGE.1)
}

pub fn sample_noise_var(rng: &mut impl Rng) -> f64 {
    rng.gen_range(NOISE_VAR_RANGE.0..=NOISE_VAR_RANGE.1)
}

/// What [`apply_perturbations`] actually did to one image.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Applied {
    pub blur_kernel: Option<usize>,
    /// Removed percentage per axis `(rows, cols)`.
    pub crop_pct: Option<(f64, f64)>,
    pub jpeg_quality: Option<u8>,
    pub noise_var: Option<f64>,
}

/// Removes `pct_y`/`pct_x` percent of each axis and resizes back.
pub fn crop_and_resize(img: &Image, pct_y: f64, pct_x: f64, random_anchor: bool, rng: &mut impl Rng) -> Result<Image> {
    let (h, w, _) = img.dims();
    let keep = |n: usize, pct: f64| ((n as f64 * (1.0 - pct / 100.0)).round() as usize).clamp(1, n);
    let (ch, cw) = (keep(h, pct_y), keep(w, pct_x));
    let (top, left) = if random_anchor {
        (rng.gen_range(0..=h - ch), rng.gen_range(0..=w - cw))
    } else {
        ((h - ch) / 2, (w - cw) / 2)
    };
    resize_bicubic(&img.crop(top, left, ch, cw)?, h, w)
}

/// Applies the enabled perturbations in the order blur → crop → jpeg →
/// noise, each independently with probability `spec.p`.
pub fn apply_perturbations(img: &Image, spec: &PerturbationSpec, rng: &mut impl Rng) -> Result<(Image, Applied)> {
    let mut out = img.clone();
    let mut applied = Applied::default();
    if spec.blur && rng.gen_bool(spec.p) {
        let k = sample_blur_kernel(rng);
        out = gaussian_blur(&out, k)?;
        applied.blur_kernel = Some(k);
    }
    if spec.crop && rng.gen_bool(spec.p) {
        let (py, px) = (sample_crop_pct(rng), sample_crop_pct(rng));
        out = crop_and_resize(&out, py, px, spec.random_anchor, rng)?;
        applied.crop_pct = Some((py, px));
    }
    if spec.jpeg && rng.gen_bool(spec.p) {
        let q = sample_jpeg_quality(rng);
        out = jpeg_roundtrip(&out, q)?;
        applied.jpeg_quality = Some(q);
    }
    if spec.noise && rng.gen_bool(spec.p) {
        let var = sample_noise_var(rng);
        let normal = Normal::new(0.0, var.sqrt() / 255.0).expect("finite std");
        out = out.map(|v| v + normal.sample(rng) as f32);
        applied.noise_var = Some(var);
    }
    Ok((out, applied))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::gen_procedural_real;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_when_disabled() {
        let img = gen_procedural_real(1, 32, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, a) = apply_perturbations(&img, &PerturbationSpec::none(), &mut rng).unwrap();
        assert_eq!(out, img);
        assert_eq!(a, Applied::default());
    }

    #[test]
    fn crop_twenty_percent_of_hundred() {
        let img = Image::from_fn(100, 100, 3, |y, x, _| ((y + x) % 7) as f32 / 7.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = crop_and_resize(&img, 20.0, 20.0, false, &mut rng).unwrap();
        assert_eq!(out.dims(), (100, 100, 3));
        let inner = img.crop(10, 10, 80, 80).unwrap();
        assert_eq!(resize_bicubic(&inner, 100, 100).unwrap(), out);
    }

    #[test]
    fn parse_lists() {
        assert!(PerturbationSpec::parse("none").unwrap().is_identity());
        assert_eq!(PerturbationSpec::parse("all").unwrap().flags().len(), 4);
        let s = PerturbationSpec::parse("jpeg, noise").unwrap();
        assert!(s.jpeg && s.noise && !s.blur && !s.crop);
        assert!(PerturbationSpec::parse("sharpen").is_err());
    }
}
