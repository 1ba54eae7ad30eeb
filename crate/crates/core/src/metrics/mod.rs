//! Image statistics used to compare real images with their simulated fakes.
//!
//! Eight metrics are computed per image and averaged over a corpus into a
//! [`MetricProfile`]. [`radar_scores`] then maps two candidate profiles onto
//! proximity scores relative to a reference profile.

mod radar;
mod single;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagelab::Image;

pub use radar::{radar_scores, RadarScores, DEFAULT_RADAR_ALPHA};
pub use single::{
    block_boundary_fraction, dct_blockiness, edge_skew, edge_skew_with, fisher_skewness, hf_ratio,
    hf_ratio_with, mse, psnr, psnr_from_mse, saturation_mean, sharpness, tex_entropy,
    tex_entropy_with, MetricConfig,
};

/// The eight corpus statistics, in table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mse,
    Psnr,
    HfRatio,
    Sharpness,
    Saturation,
    TexEntropy,
    EdgeSkew,
    DctBlockiness,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Mse,
        Metric::Psnr,
        Metric::HfRatio,
        Metric::Sharpness,
        Metric::Saturation,
        Metric::TexEntropy,
        Metric::EdgeSkew,
        Metric::DctBlockiness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "MSE",
            Metric::Psnr => "PSNR",
            Metric::HfRatio => "HFRatio",
            Metric::Sharpness => "Sharpness",
            Metric::Saturation => "Saturation",
            Metric::TexEntropy => "TexEntropy",
            Metric::EdgeSkew => "EdgeSkew",
            Metric::DctBlockiness => "DCTBlockiness",
        }
    }
}

/// How per-image PSNR values are combined over a corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsnrAggregation {
    /// Arithmetic mean of per-image PSNR.
    #[default]
    PerImage,
    /// PSNR of the corpus-mean MSE.
    Global,
}

/// Corpus means of the eight statistics. The paired metrics are `None` when
/// no reference corpus was given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricProfile {
    pub mse: Option<f64>,
    pub psnr: Option<f64>,
    pub hf_ratio: f64,
    pub sharpness: f64,
    pub saturation: f64,
    pub tex_entropy: f64,
    pub edge_skew: f64,
    pub dct_blockiness: f64,
}

impl MetricProfile {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Mse => self.mse,
            Metric::Psnr => self.psnr,
            Metric::HfRatio => Some(self.hf_ratio),
            Metric::Sharpness => Some(self.sharpness),
            Metric::Saturation => Some(self.saturation),
            Metric::TexEntropy => Some(self.tex_entropy),
            Metric::EdgeSkew => Some(self.edge_skew),
            Metric::DctBlockiness => Some(self.dct_blockiness),
        }
    }
}

/// Per-image metrics of one image (and its optional reference).
pub fn image_profile(img: &Image, reference: Option<&Image>, cfg: &MetricConfig) -> Result<MetricProfile> {
    let (mse_v, psnr_v) = match reference {
        Some(r) => {
            let m = mse(img, r)?;
            (Some(m), Some(psnr_from_mse(m)))
        }
        None => (None, None),
    };
    Ok(MetricProfile {
        mse: mse_v,
        psnr: psnr_v,
        hf_ratio: hf_ratio_with(img, cfg)?,
        sharpness: sharpness(img)?,
        saturation: saturation_mean(img)?,
        tex_entropy: tex_entropy_with(img, cfg)?,
        edge_skew: edge_skew_with(img, cfg)?,
        dct_blockiness: dct_blockiness(img)?,
    })
}

/// Arithmetic means of per-image metrics over a corpus.
pub fn corpus_profile(images: &[Image], reference: Option<&[Image]>) -> Result<MetricProfile> {
    corpus_profile_with(images, reference, &MetricConfig::default(), PsnrAggregation::PerImage)
}

pub fn corpus_profile_with(
    images: &[Image],
    reference: Option<&[Image]>,
    cfg: &MetricConfig,
    aggregation: PsnrAggregation,
) -> Result<MetricProfile> {
    if images.is_empty() {
        return Err(Error::invalid("corpus is empty"));
    }
    if let Some(r) = reference {
        if r.len() != images.len() {
            return Err(Error::invalid(format!(
                "reference corpus has {} images, candidate has {}",
                r.len(),
                images.len()
            )));
        }
    }
    let per_image: Vec<MetricProfile> = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| image_profile(img, reference.map(|r| &r[i]), cfg))
        .collect::<Result<_>>()?;

    // sequential reduction so results do not depend on scheduling
    let n = per_image.len() as f64;
    let mean = |f: &dyn Fn(&MetricProfile) -> f64| per_image.iter().map(f).sum::<f64>() / n;
    let mse_mean = reference.map(|_| mean(&|p| p.mse.unwrap_or(0.0)));
    let psnr_mean = reference.map(|_| match aggregation {
        PsnrAggregation::PerImage => mean(&|p| p.psnr.unwrap_or(0.0)),
        PsnrAggregation::Global => psnr_from_mse(mse_mean.unwrap_or(0.0)),
    });
    Ok(MetricProfile {
        mse: mse_mean,
        psnr: psnr_mean,
        hf_ratio: mean(&|p| p.hf_ratio),
        sharpness: mean(&|p| p.sharpness),
        saturation: mean(&|p| p.saturation),
        tex_entropy: mean(&|p| p.tex_entropy),
        edge_skew: mean(&|p| p.edge_skew),
        dct_blockiness: mean(&|p| p.dct_blockiness),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corpus(seed: u64, n: usize) -> Vec<Image> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Image::from_fn(16, 16, 3, |_, _, _| rng.gen::<f32>()).unwrap())
            .collect()
    }

    #[test]
    fn single_image_corpus_equals_image_profile() {
        let imgs = corpus(1, 1);
        let refs = corpus(2, 1);
        let p = corpus_profile(&imgs, Some(&refs)).unwrap();
        let q = image_profile(&imgs[0], Some(&refs[0]), &MetricConfig::default()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn corpus_against_itself() {
        let imgs = corpus(3, 4);
        let p = corpus_profile(&imgs, Some(&imgs)).unwrap();
        assert_eq!(p.mse, Some(0.0));
        assert_eq!(p.psnr, Some(100.0));
        assert!(corpus_profile(&[], None).is_err());
        assert!(corpus_profile(&imgs, None).unwrap().mse.is_none());
    }

    #[test]
    fn aggregation_modes_differ() {
        let imgs = corpus(4, 3);
        let refs = corpus(5, 3);
        let cfg = MetricConfig::default();
        let a = corpus_profile_with(&imgs, Some(&refs), &cfg, PsnrAggregation::PerImage).unwrap();
        let b = corpus_profile_with(&imgs, Some(&refs), &cfg, PsnrAggregation::Global).unwrap();
        assert_eq!(a.mse, b.mse);
        assert!((b.psnr.unwrap() - psnr_from_mse(b.mse.unwrap())).abs() < 1e-12);
    }

    #[test]
    fn reordering_the_corpus_does_not_change_means() {
        let imgs = corpus(6, 5);
        let mut rev = imgs.clone();
        rev.reverse();
        let a = corpus_profile(&imgs, None).unwrap();
        let b = corpus_profile(&rev, None).unwrap();
        for m in Metric::ALL {
            match (a.get(m), b.get(m)) {
                (Some(x), Some(y)) => assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0)),
                (None, None) => {}
                _ => panic!("presence differs for {m:?}"),
            }
        }
    }
}
