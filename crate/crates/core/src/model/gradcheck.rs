//! Finite-difference verification of the hand-written backward passes.
//!
//! Analytic gradients come from the `f32` model. Reference gradients are
//! central differences of the loss evaluated on an `f64` copy, so the
//! reference itself carries no single-precision noise.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::backbone::Backbone;
use super::expert::{expert_loss_grad, Expert, ExpertTrainable};
use super::layers::Linear;
use super::sef::{sef_loss_grad, SefModel, SefTrainable};
use super::tensors::Tensors;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::forge::ArtifactDomain;
use crate::rng::{self, tag};

pub const FD_STEP: f64 = 1e-3;
/// Gradients below this magnitude (on both sides) count as agreeing zeros.
const ZERO_FLOOR: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradCheckTarget {
    /// A single linear layer under a random linear loss.
    Linear,
    /// Expert adapters and head under balanced BCE.
    Expert,
    /// Gate, fusion head and both experts' adapters under balanced BCE.
    Sef,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub target: GradCheckTarget,
    pub coordinates: usize,
    pub max_rel_error: f64,
    /// Maximum relative error per checked tensor.
    pub per_tensor: Vec<(String, f64)>,
    /// Largest absolute gradient reported for a frozen parameter.
    pub frozen_max_abs: f64,
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < ZERO_FLOOR {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn random_images(n: usize, cfg: &ModelConfig, rng: &mut impl Rng) -> Vec<f32> {
    (0..n * cfg.image_len()).map(|_| rng.gen::<f32>()).collect()
}

fn randomize(values: &mut [f32], amp: f32, rng: &mut impl Rng) {
    for v in values {
        *v = rng.gen_range(-amp..amp);
    }
}

/// Samples at least `min_total` coordinates (or every coordinate if there
/// are fewer), spread as evenly as tensor sizes allow.
fn pick(sizes: &[usize], min_total: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let total: usize = sizes.iter().sum();
    let want = min_total.min(total);
    let mut quota = vec![0usize; sizes.len()];
    let mut assigned = 0;
    while assigned < want {
        for (q, &len) in quota.iter_mut().zip(sizes) {
            if *q < len && assigned < want {
                *q += 1;
                assigned += 1;
            }
        }
    }
    let mut out = Vec::new();
    for (t, (&len, &q)) in sizes.iter().zip(&quota).enumerate() {
        for i in sample(rng, len, q).into_iter() {
            out.push((t, i));
        }
    }
    out
}

/// Runs the check on `cfg` (use [`ModelConfig::tiny`] for speed) with at
/// least `min_coords` sampled coordinates.
pub fn gradient_check(
    target: GradCheckTarget,
    cfg: &ModelConfig,
    seed: u64,
    min_coords: usize,
) -> Result<GradCheckReport> {
    let mut rng = rng::stream(seed, tag::GRADCHECK, 0);
    match target {
        GradCheckTarget::Linear => check_linear(&mut rng, seed, min_coords),
        GradCheckTarget::Expert => check_expert(cfg, &mut rng, seed, min_coords),
        GradCheckTarget::Sef => check_sef(cfg, &mut rng, seed, min_coords),
    }
}

struct Collected {
    names: Vec<String>,
    analytic: Vec<Vec<f32>>,
}

fn compare(
    target: GradCheckTarget,
    coll: &Collected,
    coords: &[(usize, usize)],
    mut numeric: impl FnMut(usize, usize) -> Result<f64>,
    frozen_max_abs: f64,
) -> Result<GradCheckReport> {
    let mut per = vec![0.0f64; coll.names.len()];
    for &(t, i) in coords {
        let num = numeric(t, i)?;
        let a = coll.analytic[t][i] as f64;
        let e = rel_error(a, num);
        if !e.is_finite() {
            return Err(Error::Consistency(format!("non-finite gradient at {}[{i}]", coll.names[t])));
        }
        per[t] = per[t].max(e);
    }
    let max_rel_error = per.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        target,
        coordinates: coords.len(),
        max_rel_error,
        per_tensor: coll.names.iter().cloned().zip(per).collect(),
        frozen_max_abs,
    })
}

fn check_linear(rng: &mut impl Rng, _seed: u64, min_coords: usize) -> Result<GradCheckReport> {
    let (din, dout, n) = (7, 5, 6);
    let mut lin = Linear::<f32>::random(din, dout, 1.0, rng);
    randomize(&mut lin.b, 1.0, rng);
    let x: Vec<f32> = (0..n * din).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r: Vec<f32> = (0..n * dout).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut grad = Linear::zeros(din, dout);
    lin.accumulate_grad(&x, &r, n, &mut grad);
    let tensors = grad.tensors("linear");
    let coll = Collected {
        names: tensors.iter().map(|t| t.0.clone()).collect(),
        analytic: tensors.iter().map(|t| t.2.to_vec()).collect(),
    };
    let sizes: Vec<usize> = coll.analytic.iter().map(Vec::len).collect();
    let coords = pick(&sizes, min_coords, rng);
    let base = lin.cast::<f64>();
    let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let r64: Vec<f64> = r.iter().map(|&v| v as f64).collect();
    let loss = |l: &Linear<f64>| -> f64 { l.forward(&x64, n).iter().zip(&r64).map(|(a, b)| a * b).sum() };
    compare(
        GradCheckTarget::Linear,
        &coll,
        &coords,
        |t, i| {
            let eval = |delta: f64| {
                let mut p = base.clone();
                p.tensors_mut("linear")[t].2[i] += delta;
                loss(&p)
            };
            Ok((eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP))
        },
        0.0,
    )
}

fn check_expert(cfg: &ModelConfig, rng: &mut impl Rng, seed: u64, min_coords: usize) -> Result<GradCheckReport> {
    let backbone = Backbone::<f32>::new(cfg)?;
    let mut expert = Expert::<f32>::fresh(cfg, Some(ArtifactDomain::VaeSim), seed);
    for (_, _, v) in expert.tensors_mut("") {
        randomize(v, 0.5, rng);
    }
    let labels = [0u8, 1, 1, 0, 1];
    let images = random_images(labels.len(), cfg, rng);

    // frozen contract: lowest block and head frozen
    let (_, partial) = expert_loss_grad(
        &backbone,
        &expert,
        &images,
        &labels,
        ExpertTrainable {
            lora_from: 1,
            head: false,
        },
    )?;
    let mut frozen_max_abs = 0.0f64;
    for (_, _, v) in partial.lora.block_tensors("", 0).into_iter().take(4) {
        frozen_max_abs = v.iter().fold(frozen_max_abs, |m, x| m.max(x.abs() as f64));
    }
    for (_, _, v) in partial.head.tensors("") {
        frozen_max_abs = v.iter().fold(frozen_max_abs, |m, x| m.max(x.abs() as f64));
    }

    let (_, grad) = expert_loss_grad(&backbone, &expert, &images, &labels, ExpertTrainable::all())?;
    let tensors = grad.tensors("expert.");
    let coll = Collected {
        names: tensors.iter().map(|t| t.0.clone()).collect(),
        analytic: tensors.iter().map(|t| t.2.to_vec()).collect(),
    };
    let sizes: Vec<usize> = coll.analytic.iter().map(Vec::len).collect();
    let coords = pick(&sizes, min_coords, rng);
    let bb64 = backbone.cast::<f64>();
    let base = expert.cast::<f64>();
    let img64: Vec<f64> = images.iter().map(|&v| v as f64).collect();
    let trainable = ExpertTrainable {
        lora_from: cfg.num_blocks,
        head: false,
    };
    compare(
        GradCheckTarget::Expert,
        &coll,
        &coords,
        |t, i| {
            let eval = |delta: f64| -> Result<f64> {
                let mut p = base.clone();
                p.tensors_mut("")[t].2[i] += delta;
                Ok(expert_loss_grad(&bb64, &p, &img64, &labels, trainable)?.0)
            };
            Ok((eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP))
        },
        frozen_max_abs,
    )
}

fn check_sef(cfg: &ModelConfig, rng: &mut impl Rng, seed: u64, min_coords: usize) -> Result<GradCheckReport> {
    let backbone = Backbone::<f32>::new(cfg)?;
    let mut ev = Expert::<f32>::fresh(cfg, Some(ArtifactDomain::VaeSim), seed);
    let mut es = Expert::<f32>::fresh(cfg, Some(ArtifactDomain::GanSim), seed ^ 1);
    for e in [&mut ev, &mut es] {
        for (_, _, v) in e.tensors_mut("") {
            randomize(v, 0.5, rng);
        }
    }
    let mut model = SefModel::new(cfg, ev, es, cfg.num_blocks, seed)?;
    for (_, _, v) in model.gate.tensors_mut("") {
        randomize(v, 0.5, rng);
    }
    for (_, _, v) in model.fusion_head.tensors_mut("") {
        randomize(v, 0.5, rng);
    }
    let labels = [0u8, 1, 1, 0, 1, 1];
    let images = random_images(labels.len(), cfg, rng);

    // frozen contract with only the top block unfrozen
    let mut partial_model = model.clone();
    partial_model.unfreeze_k = 1;
    let (_, partial) = sef_loss_grad(&backbone, &partial_model, &images, &labels, SefTrainable::all())?;
    let below = partial_model.lora_from();
    let mut frozen_max_abs = 0.0f64;
    for set in [&partial.lora_v, &partial.lora_s] {
        for (_, _, v) in set.block_tensors("", 0).into_iter().take(4 * below) {
            frozen_max_abs = v.iter().fold(frozen_max_abs, |m, x| m.max(x.abs() as f64));
        }
    }

    let (_, grad) = sef_loss_grad(&backbone, &model, &images, &labels, SefTrainable::all())?;
    let (fast, slow) = grad.trainable_tensors(0);
    let all: Vec<_> = fast.into_iter().chain(slow).collect();
    let coll = Collected {
        names: all.iter().map(|t| t.0.clone()).collect(),
        analytic: all.iter().map(|t| t.2.to_vec()).collect(),
    };
    let sizes: Vec<usize> = coll.analytic.iter().map(Vec::len).collect();
    let coords = pick(&sizes, min_coords, rng);
    let bb64 = backbone.cast::<f64>();
    let base = model.cast::<f64>();
    let img64: Vec<f64> = images.iter().map(|&v| v as f64).collect();
    let frozen = SefTrainable {
        lora: false,
        gate: false,
        fusion_head: false,
    };
    let n_fast = grad.trainable_tensors(0).0.len();
    compare(
        GradCheckTarget::Sef,
        &coll,
        &coords,
        |t, i| {
            let eval = |delta: f64| -> Result<f64> {
                let mut p = base.clone();
                {
                    let (mut fast, mut slow) = p.trainable_tensors_mut();
                    if t < n_fast {
                        fast[t].2[i] += delta;
                    } else {
                        slow[t - n_fast].2[i] += delta;
                    }
                }
                Ok(sef_loss_grad(&bb64, &p, &img64, &labels, frozen)?.0)
            };
            Ok((eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP))
        },
        frozen_max_abs,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_layer_alone() {
        let r = gradient_check(GradCheckTarget::Linear, &ModelConfig::tiny(), 3, 40).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn expert_and_fusion_gradients() {
        let cfg = ModelConfig::tiny();
        for target in [GradCheckTarget::Expert, GradCheckTarget::Sef] {
            let r = gradient_check(target, &cfg, 5, 200).unwrap();
            assert!(r.coordinates >= 200);
            assert_eq!(r.frozen_max_abs, 0.0);
            assert!(r.max_rel_error < 1e-3, "{target:?}: {:#?}", r);
        }
    }
}
