use super::backbone::{Backbone, LoraSet};
use super::expert::{Expert, HEAD_INIT_GAIN};
use super::layers::{gelu, gelu_grad, sigmoid, Linear};
use super::loss::balanced_bce;
use super::real::Real;
use super::tensors::{TensorMut, TensorRef, Tensors};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::forge::ArtifactDomain;
use crate::rng::{self, tag};

/// The gate output is squashed into `[GATE_EPS, 1 − GATE_EPS]`.
pub const GATE_EPS: f64 = 1e-6;

/// Two-layer perceptron over `[f1, f2]` producing the routing weight `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gate<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Real> Gate<T> {
    pub fn fresh(cfg: &ModelConfig, seed: u64) -> Self {
        let mut r = rng::stream(seed, tag::GATE, 0);
        Self {
            fc1: Linear::random(2 * cfg.embed_dim, cfg.gate_hidden, 1.0, &mut r),
            fc2: Linear::random(cfg.gate_hidden, 1, HEAD_INIT_GAIN, &mut r),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            fc1: Linear::zeros(self.fc1.din, self.fc1.dout),
            fc2: Linear::zeros(self.fc2.din, self.fc2.dout),
        }
    }

    pub fn cast<U: Real>(&self) -> Gate<U> {
        Gate {
            fc1: self.fc1.cast(),
            fc2: self.fc2.cast(),
        }
    }

    /// Routing weights for `n` rows of concatenated features.
    pub fn forward(&self, input: &[T], n: usize) -> Vec<T> {
        let z = self.fc1.forward(input, n);
        let h: Vec<T> = z.iter().map(|&v| gelu(v)).collect();
        self.fc2.forward(&h, n).into_iter().map(squash).collect()
    }
}

#[inline]
fn squash<T: Real>(z: T) -> T {
    T::from_f64(GATE_EPS) + T::from_f64(1.0 - 2.0 * GATE_EPS) * sigmoid(z)
}

impl<T> Tensors<T> for Gate<T> {
    fn tensors(&self, prefix: &str) -> Vec<TensorRef<'_, T>> {
        let mut t = self.fc1.tensors(&format!("{prefix}.fc1"));
        t.extend(self.fc2.tensors(&format!("{prefix}.fc2")));
        t
    }

    fn tensors_mut(&mut self, prefix: &str) -> Vec<TensorMut<'_, T>> {
        let mut t = self.fc1.tensors_mut(&format!("{prefix}.fc1"));
        t.extend(self.fc2.tensors_mut(&format!("{prefix}.fc2")));
        t
    }
}

#[inline]
fn fuse_scalar<T: Real>(a: T, b: T, w: T) -> T {
    let v = (T::ONE - w) * a + w * b;
    // rounding can step one ulp outside the segment
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

/// Convex combination `(1−w)·f1 + w·f2`; every coordinate lies between
/// the corresponding coordinates of `f1` and `f2`.
pub fn fuse<T: Real>(f1: &[T], f2: &[T], w: T) -> Result<Vec<T>> {
    if f1.len() != f2.len() {
        return Err(Error::invalid(format!(
            "feature lengths differ: {} vs {}",
            f1.len(),
            f2.len()
        )));
    }
    if !(w >= T::ZERO && w <= T::ONE) {
        return Err(Error::invalid("fusion weight outside [0, 1]"));
    }
    Ok(f1.iter().zip(f2).map(|(&a, &b)| fuse_scalar(a, b, w)).collect())
}

/// Two stage-1 experts joined by a gate and a fresh fusion head.
#[derive(Clone, Debug, PartialEq)]
pub struct SefModel<T> {
    pub expert_v: Expert<T>,
    pub expert_s: Expert<T>,
    pub gate: Gate<T>,
    pub fusion_head: Linear<T>,
    /// Number of top blocks whose adapters are unfrozen in stage 2.
    pub unfreeze_k: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SefGrad<T> {
    pub lora_v: LoraSet<T>,
    pub lora_s: LoraSet<T>,
    pub gate: Gate<T>,
    pub fusion_head: Linear<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SefOutput<T> {
    pub logits: Vec<T>,
    /// Weight of the second (GAN) expert per sample; the first gets `1 − w`.
    pub w: Vec<T>,
    pub f1: Vec<T>,
    pub f2: Vec<T>,
}

impl<T: Real> SefModel<T> {
    pub fn new(
        cfg: &ModelConfig,
        expert_v: Expert<T>,
        expert_s: Expert<T>,
        unfreeze_k: usize,
        seed: u64,
    ) -> Result<Self> {
        match (expert_v.domain, expert_s.domain) {
            (Some(ArtifactDomain::VaeSim), Some(ArtifactDomain::GanSim)) => {}
            (a, b) => {
                return Err(Error::invalid(format!(
                    "fusion needs a VAE_SIM and a GAN_SIM expert, got {a:?} and {b:?}"
                )))
            }
        }
        if unfreeze_k > cfg.num_blocks {
            return Err(Error::invalid(format!(
                "unfreeze_k {unfreeze_k} exceeds {} blocks",
                cfg.num_blocks
            )));
        }
        let mut r = rng::stream(seed, tag::HEAD, 1);
        Ok(Self {
            expert_v,
            expert_s,
            gate: Gate::fresh(cfg, seed),
            fusion_head: Linear::random(cfg.embed_dim, 1, HEAD_INIT_GAIN, &mut r),
            unfreeze_k,
        })
    }

    /// First block whose adapters train in stage 2.
    pub fn lora_from(&self) -> usize {
        self.expert_v.lora.blocks.len() - self.unfreeze_k
    }

    pub fn cast<U: Real>(&self) -> SefModel<U> {
        SefModel {
            expert_v: self.expert_v.cast(),
            expert_s: self.expert_s.cast(),
            gate: self.gate.cast(),
            fusion_head: self.fusion_head.cast(),
            unfreeze_k: self.unfreeze_k,
        }
    }

    pub fn zero_grad(&self) -> SefGrad<T> {
        SefGrad {
            lora_v: self.expert_v.lora.zeros_like(),
            lora_s: self.expert_s.lora.zeros_like(),
            gate: self.gate.zeros_like(),
            fusion_head: Linear::zeros(self.fusion_head.din, self.fusion_head.dout),
        }
    }

    /// Parameters updated in stage 2, in optimizer order. Expert heads are
    /// never part of it.
    pub fn trainable_tensors_mut(&mut self) -> (Vec<TensorMut<'_, T>>, Vec<TensorMut<'_, T>>) {
        let from = self.lora_from();
        let mut fast = self.gate.tensors_mut("gate");
        fast.extend(self.fusion_head.tensors_mut("fusion_head"));
        let mut slow = self.expert_v.lora.block_tensors_mut("expert_v.lora", from);
        slow.extend(self.expert_s.lora.block_tensors_mut("expert_s.lora", from));
        (fast, slow)
    }
}

impl<T: Real> SefGrad<T> {
    /// Same order as [`SefModel::trainable_tensors_mut`].
    pub fn trainable_tensors(&self, lora_from: usize) -> (Vec<TensorRef<'_, T>>, Vec<TensorRef<'_, T>>) {
        let mut fast = self.gate.tensors("gate");
        fast.extend(self.fusion_head.tensors("fusion_head"));
        let mut slow = self.lora_v.block_tensors("expert_v.lora", lora_from);
        slow.extend(self.lora_s.block_tensors("expert_s.lora", lora_from));
        (fast, slow)
    }
}

fn concat_rows<T: Real>(a: &[T], b: &[T], d: usize) -> Vec<T> {
    a.chunks_exact(d)
        .zip(b.chunks_exact(d))
        .flat_map(|(x, y)| x.iter().chain(y).copied())
        .collect()
}

fn fuse_rows<T: Real>(f1: &[T], f2: &[T], w: &[T], d: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(f1.len());
    for (i, &wi) in w.iter().enumerate() {
        for j in 0..d {
            out.push(fuse_scalar(f1[i * d + j], f2[i * d + j], wi));
        }
    }
    out
}

/// Runs both experts, the gate and the fusion head. `forced_w` replaces
/// the gate output for every sample.
pub fn forward_sef<T: Real>(
    backbone: &Backbone<T>,
    model: &SefModel<T>,
    images: &[T],
    n: usize,
    forced_w: Option<T>,
) -> Result<SefOutput<T>> {
    let d = backbone.cfg.embed_dim;
    let (f1, _) = backbone.forward(images, n, Some(&model.expert_v.lora), None)?;
    let (f2, _) = backbone.forward(images, n, Some(&model.expert_s.lora), None)?;
    let w = match forced_w {
        Some(w) => vec![w; n],
        None => model.gate.forward(&concat_rows(&f1, &f2, d), n),
    };
    let fused = fuse_rows(&f1, &f2, &w, d);
    let logits = model.fusion_head.forward(&fused, n);
    Ok(SefOutput { logits, w, f1, f2 })
}

/// Which parts of a fused model receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SefTrainable {
    pub lora: bool,
    pub gate: bool,
    pub fusion_head: bool,
}

impl SefTrainable {
    pub fn all() -> Self {
        Self {
            lora: true,
            gate: true,
            fusion_head: true,
        }
    }
}

/// Balanced-BCE loss of the fused model and gradients of its stage-2
/// parameters. Adapters below `model.lora_from()` get no gradient.
pub fn sef_loss_grad<T: Real>(
    backbone: &Backbone<T>,
    model: &SefModel<T>,
    images: &[T],
    labels: &[u8],
    trainable: SefTrainable,
) -> Result<(T, SefGrad<T>)> {
    let n = labels.len();
    let d = backbone.cfg.embed_dim;
    let from = model.lora_from();
    let lora_on = trainable.lora && from < backbone.cfg.num_blocks;
    let keep = lora_on.then_some(from);
    let (f1, c1) = backbone.forward(images, n, Some(&model.expert_v.lora), keep)?;
    let (f2, c2) = backbone.forward(images, n, Some(&model.expert_s.lora), keep)?;
    let gin = concat_rows(&f1, &f2, d);
    let gz = model.gate.fc1.forward(&gin, n);
    let gh: Vec<T> = gz.iter().map(|&v| gelu(v)).collect();
    let go = model.gate.fc2.forward(&gh, n);
    let w: Vec<T> = go.iter().map(|&z| squash(z)).collect();
    let fused = fuse_rows(&f1, &f2, &w, d);
    let logits = model.fusion_head.forward(&fused, n);
    let (loss, dlogits) = balanced_bce(&logits, labels, None)?;

    let mut grad = model.zero_grad();
    if trainable.fusion_head {
        model.fusion_head.accumulate_grad(&fused, &dlogits, n, &mut grad.fusion_head);
    }
    if !(trainable.gate || lora_on) {
        return Ok((loss, grad));
    }
    let dfused = model.fusion_head.backward_input(&dlogits, n);
    let mut df1 = vec![T::ZERO; n * d];
    let mut df2 = vec![T::ZERO; n * d];
    let mut dgo = vec![T::ZERO; n];
    let span = T::from_f64(1.0 - 2.0 * GATE_EPS);
    for i in 0..n {
        let mut dw = T::ZERO;
        for j in 0..d {
            let k = i * d + j;
            df1[k] = (T::ONE - w[i]) * dfused[k];
            df2[k] = w[i] * dfused[k];
            dw += dfused[k] * (f2[k] - f1[k]);
        }
        let s = sigmoid(go[i]);
        dgo[i] = dw * span * s * (T::ONE - s);
    }
    if trainable.gate {
        model.gate.fc2.accumulate_grad(&gh, &dgo, n, &mut grad.gate.fc2);
    }
    let dgh = model.gate.fc2.backward_input(&dgo, n);
    let dgz: Vec<T> = dgh.iter().zip(&gz).map(|(&g, &z)| g * gelu_grad(z)).collect();
    if trainable.gate {
        model.gate.fc1.accumulate_grad(&gin, &dgz, n, &mut grad.gate.fc1);
    }
    if let (Some(c1), Some(c2)) = (c1, c2) {
        let dgin = model.gate.fc1.backward_input(&dgz, n);
        for i in 0..n {
            for j in 0..d {
                df1[i * d + j] += dgin[i * 2 * d + j];
                df2[i * d + j] += dgin[i * 2 * d + d + j];
            }
        }
        backbone.backward(&c1, &df1, &model.expert_v.lora, &mut grad.lora_v)?;
        backbone.backward(&c2, &df2, &model.expert_s.lora, &mut grad.lora_s)?;
    }
    Ok((loss, grad))
}
