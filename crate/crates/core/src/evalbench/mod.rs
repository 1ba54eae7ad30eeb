//! Balanced-accuracy evaluation under optional perturbations, and the
//! four-paradigm comparison.

mod compare;
mod detector;
mod perturb;

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forge::{ArtifactDomain, Quad};
use crate::imagelab::Image;
use crate::rng::{self, tag};
use crate::train::center_crop_flat;

pub use compare::{
    run_paradigm_comparison, ComparisonCell, ComparisonConfig, ComparisonTable, Paradigm, PatternSummary,
};
pub use detector::{AnyDetector, Detector, ExpertDetector, SefDetector};
pub use perturb::{
    apply_perturbations, crop_and_resize, sample_blur_kernel, sample_crop_pct, sample_jpeg_quality,
    sample_noise_var, Applied, PerturbationSpec, CROP_PCT_RANGE, JPEG_QUALITY_RANGE, NOISE_VAR_RANGE,
};

pub const THRESHOLD: f64 = 0.5;
/// Images per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    /// `50·(TPR + TNR)`.
    pub fn balanced_accuracy(&self) -> Result<f64> {
        let pos = self.tp + self.fn_;
        let neg = self.tn + self.fp;
        if pos == 0 || neg == 0 {
            return Err(Error::invalid("balanced accuracy needs both classes"));
        }
        Ok(50.0 * (self.tp as f64 / pos as f64 + self.tn as f64 / neg as f64))
    }
}

/// Scores at or above `threshold` are called fake.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Confusion> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut c = Confusion::default();
    for (&s, &y) in scores.iter().zip(labels) {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::invalid(format!("score {s} outside [0, 1]")));
        }
        let fake = s >= threshold;
        match (y, fake) {
            (1, true) => c.tp += 1,
            (1, false) => c.fn_ += 1,
            (0, false) => c.tn += 1,
            (0, true) => c.fp += 1,
            _ => return Err(Error::invalid(format!("label {y} is neither 0 nor 1"))),
        }
    }
    Ok(c)
}

/// Mean of TPR and TNR at `threshold`, in percent.
pub fn balanced_accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    confusion(scores, labels, threshold)?.balanced_accuracy()
}

pub fn logistic(logit: f64) -> f64 {
    1.0 / (1.0 + (-logit).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub domain: ArtifactDomain,
    pub balanced_accuracy: f64,
    #[serde(flatten)]
    pub confusion: Confusion,
    pub threshold: f64,
    pub perturbations: Vec<String>,
    pub perturb_seed: u64,
}

/// Errors with a configuration error when any test seed was used for training.
pub fn check_disjoint(train_seeds: impl IntoIterator<Item = u64>, test: &[Quad]) -> Result<()> {
    let train: HashSet<u64> = train_seeds.into_iter().collect();
    let shared = test.iter().filter(|q| train.contains(&q.seed)).count();
    if shared > 0 {
        return Err(Error::Config(format!(
            "{shared} test entries share anchor seeds with the training data"
        )));
    }
    Ok(())
}

/// Slot of an image within its entry, used to key its perturbation stream.
#[derive(Clone, Copy)]
enum Slot {
    Real = 0,
    Vae = 1,
    Gan = 2,
}

fn prepare(img: &Image, index: u64, slot: Slot, spec: &PerturbationSpec, res: usize) -> Result<Vec<f32>> {
    if spec.is_identity() {
        return center_crop_flat(img, res);
    }
    let mut r = rng::stream(spec.seed, tag::PERTURB, index.wrapping_mul(3).wrapping_add(slot as u64));
    let (p, _) = apply_perturbations(img, spec, &mut r)?;
    center_crop_flat(&p, res)
}

/// Fake-probabilities for `items`, computed in fixed-size chunks in parallel.
fn score_all(det: &(impl Detector + ?Sized), items: &[(&Image, u64, Slot)], spec: &PerturbationSpec) -> Result<Vec<f64>> {
    let res = det.resolution();
    let chunks: Vec<Result<Vec<f64>>> = items
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let mut buf = Vec::with_capacity(chunk.len() * res * res * 3);
            for &(img, index, slot) in chunk {
                buf.extend(prepare(img, index, slot, spec, res)?);
            }
            let logits = det.logits(&buf, chunk.len())?;
            Ok(logits.iter().map(|&l| logistic(l as f64)).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(items.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Per-domain balanced accuracy of `det` on `test`: each domain's fakes
/// against the shared reals, center-cropped to the detector resolution.
pub fn evaluate(det: &(impl Detector + ?Sized), test: &[Quad], spec: &PerturbationSpec) -> Result<Vec<EvalResult>> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let mut items: Vec<(&Image, u64, Slot)> = test.iter().map(|q| (&q.real, q.index, Slot::Real)).collect();
    items.extend(test.iter().map(|q| (&q.fake_vae, q.index, Slot::Vae)));
    items.extend(test.iter().map(|q| (&q.fake_gan, q.index, Slot::Gan)));
    let scores = score_all(det, &items, spec)?;
    let n = test.len();
    let real = &scores[..n];
    ArtifactDomain::ALL
        .iter()
        .enumerate()
        .map(|(i, &domain)| {
            let fake = &scores[n * (i + 1)..n * (i + 2)];
            let s: Vec<f64> = real.iter().chain(fake).copied().collect();
            let labels: Vec<u8> = std::iter::repeat(0).take(n).chain(std::iter::repeat(1).take(n)).collect();
            let c = confusion(&s, &labels, THRESHOLD)?;
            Ok(EvalResult {
                domain,
                balanced_accuracy: c.balanced_accuracy()?,
                confusion: c,
                threshold: THRESHOLD,
                perturbations: spec.flags(),
                perturb_seed: spec.seed,
            })
        })
        .collect()
}

/// [`evaluate`] after checking that no test anchor was seen in training.
pub fn evaluate_held_out(
    det: &(impl Detector + ?Sized),
    train_seeds: impl IntoIterator<Item = u64>,
    test: &[Quad],
    spec: &PerturbationSpec,
) -> Result<Vec<EvalResult>> {
    check_disjoint(train_seeds, test)?;
    evaluate(det, test, spec)
}

/// Mean balanced accuracy over the domains in `results`.
pub fn mean_accuracy(results: &[EvalResult]) -> f64 {
    results.iter().map(|r| r.balanced_accuracy).sum::<f64>() / results.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_accuracy_examples() {
        let labels = [0, 0, 1, 1];
        assert_eq!(balanced_accuracy(&[0.1, 0.2, 0.9, 0.8], &labels, 0.5).unwrap(), 100.0);
        assert_eq!(balanced_accuracy(&[0.1, 0.2, 0.3, 0.4], &labels, 0.5).unwrap(), 50.0);
        // TPR 0.8, TNR 0.6
        let labels: Vec<u8> = [0; 5].into_iter().chain([1; 5]).collect();
        let scores = [0.1, 0.1, 0.1, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.1];
        assert!((balanced_accuracy(&scores, &labels, 0.5).unwrap() - 70.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_rejected() {
        assert!(balanced_accuracy(&[0.2, 0.7], &[1, 1], 0.5).is_err());
        assert!(balanced_accuracy(&[0.2], &[0, 1], 0.5).is_err());
        assert!(balanced_accuracy(&[1.2, 0.1], &[1, 0], 0.5).is_err());
    }

    #[test]
    fn overlapping_seeds_are_a_config_error() {
        use crate::forge::{generate_quads, DatasetConfig};
        let test = generate_quads(&DatasetConfig::new(3, 32, 1).held_out()).unwrap();
        let train = generate_quads(&DatasetConfig::new(3, 32, 1)).unwrap();
        assert!(check_disjoint(train.iter().map(|q| q.seed), &test).is_ok());
        assert!(matches!(
            check_disjoint(test.iter().map(|q| q.seed), &test),
            Err(Error::Config(_))
        ));
    }
}
