use serde::{Deserialize, Serialize};

use super::{per_source_gradients, ProbeBatch, ProbeParams};
use crate::error::{Error, Result};
use crate::forge::Quad;
use crate::model::{expert_loss_grad, Backbone, Expert, ExpertTrainable, Tensors};
use crate::rng::{self, derive_seed, tag};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaylorStep {
    pub step: usize,
    pub loss_vae: f64,
    /// `−ηλ‖g_vae‖² − η(1−λ)⟨g_vae, g_gan⟩`
    pub predicted: f64,
    /// `L_vae(θ_{t+1}) − L_vae(θ_t)` on the same batch.
    pub measured: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaylorDiagnostic {
    pub eta: f64,
    pub lambda: f64,
    pub steps: Vec<TaylorStep>,
    /// Fraction of steps where prediction and measurement share a sign
    /// (both zero counts as agreement).
    pub sign_agreement: f64,
    /// Pearson correlation; `None` when either series is constant.
    pub correlation: Option<f64>,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Plain gradient descent on the λ-mixed objective in double precision.
/// Every step compares the first-order prediction of the change in the
/// VAE-source loss with the change actually measured on the same batch.
pub fn taylor_diagnostic(cfg: &TrainConfig, data: &[Quad], steps: usize, eta: f64) -> Result<TaylorDiagnostic> {
    cfg.validate()?;
    if steps == 0 || !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::invalid("taylor diagnostic needs steps > 0 and a finite η ≥ 0"));
    }
    let mcfg = cfg.model_config();
    let backbone = Backbone::<f64>::new(&mcfg)?;
    let mut model = Expert::<f64>::fresh(&mcfg, None, derive_seed(cfg.seed, tag::LORA, 0));
    let mut rng = rng::stream(cfg.seed, tag::PROBE, 1);
    let lambda = cfg.mix_lambda;
    let mut out = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch = ProbeBatch::<f64>::sample(data, super::DEFAULT_PROBE_BATCH / 2, cfg.resolution, &mut rng)?;
        let (gv, gs) = per_source_gradients(&backbone, &model, &batch, ProbeParams::LoraAndHead)?;
        let nv2: f64 = gv.values.iter().map(|a| a * a).sum();
        let dot: f64 = gv.values.iter().zip(&gs.values).map(|(a, b)| a * b).sum();
        let predicted = -eta * lambda * nv2 - eta * (1.0 - lambda) * dot;
        let mut off = 0;
        for (_, _, p) in model.tensors_mut("") {
            for v in p.iter_mut() {
                *v -= eta * (lambda * gv.values[off] + (1.0 - lambda) * gs.values[off]);
                off += 1;
            }
        }
        let (images, labels) = batch.source(&batch.fake_vae);
        let (after, _) = expert_loss_grad(&backbone, &model, &images, &labels, ExpertTrainable::all())?;
        out.push(TaylorStep {
            step,
            loss_vae: gv.loss,
            predicted,
            measured: after - gv.loss,
        });
    }
    let agree = out
        .iter()
        .filter(|s| s.predicted.signum() == s.measured.signum() || (s.predicted == 0.0 && s.measured == 0.0))
        .count();
    let p: Vec<f64> = out.iter().map(|s| s.predicted).collect();
    let m: Vec<f64> = out.iter().map(|s| s.measured).collect();
    Ok(TaylorDiagnostic {
        eta,
        lambda,
        sign_agreement: agree as f64 / out.len() as f64,
        correlation: pearson(&p, &m),
        steps: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::{generate_quads, DatasetConfig};
    use crate::model::ModelConfig;

    fn tiny() -> (TrainConfig, Vec<Quad>) {
        let t = ModelConfig::tiny();
        let cfg = TrainConfig {
            resolution: t.image_size,
            embed_dim: t.embed_dim,
            num_heads: t.num_heads,
            num_blocks: t.num_blocks,
            patch_size: t.patch_size,
            lora_rank: t.lora_rank,
            unfreeze_k: 2,
            ..TrainConfig::default()
        };
        (cfg, generate_quads(&DatasetConfig::new(10, 32, 5)).unwrap())
    }

    #[test]
    fn zero_step_changes_nothing() {
        let (cfg, data) = tiny();
        let d = taylor_diagnostic(&cfg, &data, 3, 0.0).unwrap();
        assert!(d.steps.iter().all(|s| s.predicted == 0.0 && s.measured == 0.0));
        assert_eq!(d.sign_agreement, 1.0);
    }

    #[test]
    fn single_source_prediction_never_positive() {
        let (mut cfg, data) = tiny();
        cfg.mix_lambda = 1.0;
        let d = taylor_diagnostic(&cfg, &data, 4, 1e-3).unwrap();
        assert!(d.steps.iter().all(|s| s.predicted <= 0.0));
    }

    #[test]
    fn small_steps_follow_first_order() {
        let (cfg, data) = tiny();
        let d = taylor_diagnostic(&cfg, &data, 10, 1e-5).unwrap();
        assert!(d.sign_agreement >= 0.8, "{}", d.sign_agreement);
    }
}
