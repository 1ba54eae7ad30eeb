use rand_chacha::ChaCha8Rng;

use super::batch::{make_expert_batch, make_mixed_batch, make_sef_batch, Batch, Composition};
use super::optim::Adam;
use super::{cosine_lr, TrainConfig, TrainRecord};
use crate::error::{Error, Result};
use crate::forge::{ArtifactDomain, Quad};
use crate::model::checkpoint::{Checkpoint, CheckpointKind, CheckpointMeta};
use crate::model::{
    expert_loss_grad, sef_loss_grad, Backbone, Expert, ExpertTrainable, SefModel, SefTrainable,
    TensorRef, Tensors,
};
use crate::rng::{self, derive_seed, tag};

/// A trained stage-1 model (expert or mixed baseline).
#[derive(Clone, Debug)]
pub struct ExpertRun {
    pub expert: Expert<f32>,
    pub meta: CheckpointMeta,
    pub records: Vec<TrainRecord>,
}

impl ExpertRun {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_expert(&self.expert, self.meta.clone())
    }
}

#[derive(Clone, Debug)]
pub struct SefRun {
    pub model: SefModel<f32>,
    pub meta: CheckpointMeta,
    pub records: Vec<TrainRecord>,
}

impl SefRun {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_sef(&self.model, self.meta.clone())
    }
}

/// Running sum of micro-batch gradients for a fixed tensor list.
struct Accumulator {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    sums: Vec<Vec<f32>>,
    loss: f64,
    count: usize,
    comp: Composition,
}

impl Accumulator {
    fn new(template: &[TensorRef<'_, f32>]) -> Self {
        Self {
            names: template.iter().map(|t| t.0.clone()).collect(),
            shapes: template.iter().map(|t| t.1.clone()).collect(),
            sums: template.iter().map(|t| vec![0.0; t.2.len()]).collect(),
            loss: 0.0,
            count: 0,
            comp: Composition::default(),
        }
    }

    fn add(&mut self, grads: &[TensorRef<'_, f32>], loss: f32, comp: Composition) {
        for (s, g) in self.sums.iter_mut().zip(grads) {
            for (a, &b) in s.iter_mut().zip(g.2) {
                *a += b;
            }
        }
        self.loss += loss as f64;
        self.count += 1;
        self.comp.add(comp);
    }

    /// Averages in place and returns views for the optimizer.
    fn mean(&mut self) -> Vec<TensorRef<'_, f32>> {
        let inv = 1.0 / self.count as f32;
        for s in &mut self.sums {
            for v in s.iter_mut() {
                *v *= inv;
            }
        }
        self.names
            .iter()
            .zip(&self.shapes)
            .zip(&self.sums)
            .map(|((n, s), v)| (n.clone(), s.clone(), &v[..]))
            .collect()
    }

    fn mean_loss(&self) -> f64 {
        self.loss / self.count as f64
    }
}

fn check_finite(loss: f32, run: &str, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged(format!("{run}: loss became {loss} at optimizer step {step}")))
    }
}

/// Seed of the stage-1 initialization shared by experts and the baseline.
fn stage1_init_seed(cfg: &TrainConfig) -> u64 {
    derive_seed(cfg.seed, tag::LORA, 0)
}

fn stage1(
    cfg: &TrainConfig,
    data: &[Quad],
    run: &str,
    domain: Option<ArtifactDomain>,
    mut next_batch: impl FnMut(&mut ChaCha8Rng) -> Result<Batch>,
) -> Result<ExpertRun> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training data is empty"));
    }
    let mcfg = cfg.model_config();
    let backbone = Backbone::<f32>::new(&mcfg)?;
    let mut expert = Expert::fresh(&mcfg, domain, stage1_init_seed(cfg));
    let mut rng = rng::stream(cfg.seed, tag::BATCH, 0);
    let steps = cfg.stage1_iters / cfg.grad_accum;
    let mut opt = Adam::for_tensors(&expert.tensors_mut(""));
    let mut records = Vec::with_capacity(steps);
    for step in 0..steps {
        let lr = cosine_lr(step, steps, cfg.lr)?;
        let mut acc = Accumulator::new(&expert.tensors(""));
        for _ in 0..cfg.grad_accum {
            let batch = next_batch(&mut rng)?;
            let (loss, grad) =
                expert_loss_grad(&backbone, &expert, &batch.images, &batch.labels, ExpertTrainable::all())?;
            check_finite(loss, run, step)?;
            acc.add(&grad.tensors(""), loss, batch.composition);
        }
        let loss = acc.mean_loss();
        let comp = acc.comp;
        opt.step(&mut expert.tensors_mut(""), &acc.mean(), lr);
        records.push(TrainRecord {
            run: run.to_string(),
            step,
            loss,
            lr,
            lr_lora: None,
            n_real: comp.real,
            n_fake_vae: comp.fake_vae,
            n_fake_gan: comp.fake_gan,
            checkpoint: None,
        });
    }
    Ok(ExpertRun {
        expert,
        meta: CheckpointMeta {
            kind: CheckpointKind::Expert,
            domain,
            model: mcfg,
            iterations: steps as u64,
            seed: cfg.seed,
            config_hash: cfg.hash(),
            unfreeze_k: None,
        },
        records,
    })
}

/// Stage 1: adapters and head trained on one artifact domain.
pub fn train_expert(domain: ArtifactDomain, cfg: &TrainConfig, data: &[Quad]) -> Result<ExpertRun> {
    let run = format!("expert_{}", domain.name().to_ascii_lowercase());
    let res = cfg.resolution;
    stage1(cfg, data, &run, Some(domain), |rng| {
        make_expert_batch(data, cfg.stage1_batch, domain, res, rng)
    })
}

/// Joint training on λ-mixed batches with the same budget as one expert.
pub fn train_mixed_baseline(cfg: &TrainConfig, data: &[Quad]) -> Result<ExpertRun> {
    let res = cfg.resolution;
    stage1(cfg, data, "mixed", None, |rng| {
        make_mixed_batch(data, cfg.stage1_batch, cfg.mix_lambda, res, rng)
    })
}

/// Stage 2: gate and fusion head at `η`, the top `k` adapter blocks of both
/// experts at `γ·η`, everything else frozen.
pub fn train_sef(
    expert_v: &Expert<f32>,
    expert_s: &Expert<f32>,
    cfg: &TrainConfig,
    data: &[Quad],
) -> Result<SefRun> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training data is empty"));
    }
    let mcfg = cfg.model_config();
    for e in [expert_v, expert_s] {
        if e.lora.blocks.len() != mcfg.num_blocks || e.head.din != mcfg.embed_dim || e.lora.rank != mcfg.lora_rank {
            return Err(Error::invalid("expert checkpoint does not match the model configuration"));
        }
    }
    let backbone = Backbone::<f32>::new(&mcfg)?;
    let mut model = SefModel::new(
        &mcfg,
        expert_v.clone(),
        expert_s.clone(),
        cfg.unfreeze_k,
        derive_seed(cfg.seed, tag::GATE, 0),
    )?;
    let from = model.lora_from();
    let mut rng = rng::stream(cfg.seed, tag::BATCH, 1);
    let steps = cfg.stage2_iters / cfg.grad_accum;
    let (mut opt_fast, mut opt_slow) = {
        let (f, s) = model.trainable_tensors_mut();
        (Adam::for_tensors(&f), Adam::for_tensors(&s))
    };
    let trainable = SefTrainable {
        lora: cfg.unfreeze_k > 0 && cfg.gamma > 0.0,
        gate: true,
        fusion_head: true,
    };
    let mut records = Vec::with_capacity(steps);
    for step in 0..steps {
        let lr = cosine_lr(step, steps, cfg.lr)?;
        let lr_lora = lr * cfg.gamma;
        let template = model.zero_grad();
        let (tf, ts) = template.trainable_tensors(from);
        let mut acc_f = Accumulator::new(&tf);
        let mut acc_s = Accumulator::new(&ts);
        for _ in 0..cfg.grad_accum {
            let batch = make_sef_batch(data, cfg.stage2_batch, cfg.resolution, &mut rng)?;
            let (loss, grad) = sef_loss_grad(&backbone, &model, &batch.images, &batch.labels, trainable)?;
            check_finite(loss, "sef", step)?;
            let (gf, gs) = grad.trainable_tensors(from);
            acc_f.add(&gf, loss, batch.composition);
            acc_s.add(&gs, loss, Composition::default());
        }
        let loss = acc_f.mean_loss();
        let comp = acc_f.comp;
        {
            let (mut pf, mut ps) = model.trainable_tensors_mut();
            opt_fast.step(&mut pf, &acc_f.mean(), lr);
            opt_slow.step(&mut ps, &acc_s.mean(), lr_lora);
        }
        records.push(TrainRecord {
            run: "sef".into(),
            step,
            loss,
            lr,
            lr_lora: Some(lr_lora),
            n_real: comp.real,
            n_fake_vae: comp.fake_vae,
            n_fake_gan: comp.fake_gan,
            checkpoint: None,
        });
    }
    Ok(SefRun {
        model,
        meta: CheckpointMeta {
            kind: CheckpointKind::Sef,
            domain: None,
            model: mcfg,
            iterations: steps as u64,
            seed: cfg.seed,
            config_hash: cfg.hash(),
            unfreeze_k: Some(cfg.unfreeze_k),
        },
        records,
    })
}
