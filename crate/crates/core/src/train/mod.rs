//! Stage-1 experts, the mixed-training baseline and stage-2 fusion.

mod batch;
mod loops;
mod optim;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::rng::splitmix64;

pub use crate::model::balanced_bce;
pub use batch::{
    center_crop_flat, make_expert_batch, make_mixed_batch, make_sef_batch, Batch, Composition,
};
pub use loops::{train_expert, train_mixed_baseline, train_sef, ExpertRun, SefRun};
pub use optim::{Adam, ADAM_EPS, BETA1, BETA2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Base learning rate η.
    pub lr: f64,
    /// Stage-2 adapter learning-rate factor γ.
    pub gamma: f64,
    /// Number of top blocks whose adapters train in stage 2.
    pub unfreeze_k: usize,
    /// Stage-1 micro-batches (an optimizer step every `grad_accum`).
    pub stage1_iters: usize,
    pub stage1_batch: usize,
    /// Stage-2 micro-batches.
    pub stage2_iters: usize,
    pub stage2_batch: usize,
    pub grad_accum: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    /// Share of VAE_SIM pairs in mixed-baseline batches.
    pub mix_lambda: f64,
    pub seed: u64,
    pub resolution: usize,
    pub backbone_seed: u64,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_blocks: usize,
    pub patch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            lr: 1e-4,
            gamma: 0.1,
            unfreeze_k: 4,
            stage1_iters: 2000,
            stage1_batch: 16,
            stage2_iters: 1000,
            stage2_batch: 32,
            grad_accum: 4,
            lora_rank: m.lora_rank,
            lora_alpha: m.lora_alpha,
            mix_lambda: 0.5,
            seed: 0,
            resolution: m.image_size,
            backbone_seed: m.backbone_seed,
            embed_dim: m.embed_dim,
            num_heads: m.num_heads,
            num_blocks: m.num_blocks,
            patch_size: m.patch_size,
        }
    }
}

impl TrainConfig {
    /// Budgets sized for a five-seed paradigm comparison on one CPU core:
    /// a quarter of the default iterations at a learning rate high enough
    /// for them to converge.
    pub fn desk_scale() -> Self {
        Self {
            lr: 3e-3,
            stage1_iters: 512,
            stage2_iters: 256,
            stage2_batch: 24,
            ..Self::default()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            image_size: self.resolution,
            patch_size: self.patch_size,
            embed_dim: self.embed_dim,
            num_heads: self.num_heads,
            num_blocks: self.num_blocks,
            lora_rank: self.lora_rank,
            lora_alpha: self.lora_alpha,
            backbone_seed: self.backbone_seed,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        // γ = 0 (frozen adapters) and γ = 1 (shared rate) are allowed as limits.
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.mix_lambda) {
            return bad("mix_lambda must lie in [0, 1]");
        }
        if self.unfreeze_k > self.num_blocks {
            return bad("unfreeze_k exceeds the number of blocks");
        }
        if self.stage1_batch < 2 || self.stage1_batch % 2 != 0 {
            return bad("stage1_batch must be a positive even number (real/fake pairs)");
        }
        if self.stage2_batch < 3 {
            return bad("stage2_batch must hold at least one triple");
        }
        if self.grad_accum == 0 {
            return bad("grad_accum must be positive");
        }
        if self.stage1_iters < self.grad_accum || self.stage2_iters < self.grad_accum {
            return bad("iteration counts must cover at least one accumulation window");
        }
        self.model_config().validate()
    }

    /// Parses TOML (`key = value` lines are valid TOML).
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `key=value` overrides; values are parsed as TOML scalars.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for ov in overrides {
            let ov = ov.as_ref();
            let (k, v) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {ov:?} is not key=value")))?;
            let k = k.trim();
            if !table.contains_key(k) {
                return Err(Error::Config(format!("unknown config key {k:?}")));
            }
            let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {}", v.trim()))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .ok_or_else(|| Error::Config(format!("cannot parse value in {ov:?}")))?;
            table.insert(k.to_string(), value);
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    /// Stable 64-bit digest of the configuration, as hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let h = json
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| splitmix64(h ^ b as u64));
        format!("{h:016x}")
    }
}

/// `lr0 · ½(1 + cos(π·t/T))`.
pub fn cosine_lr(t: usize, total: usize, lr0: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::invalid("cosine schedule needs at least one step"));
    }
    if t > total {
        return Err(Error::invalid(format!("step {t} beyond schedule length {total}")));
    }
    Ok(lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos()))
}

/// One optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub run: String,
    pub step: usize,
    /// Mean loss over the accumulated micro-batches.
    pub loss: f64,
    pub lr: f64,
    /// Adapter learning rate in stage 2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_lora: Option<f64>,
    pub n_real: usize,
    pub n_fake_vae: usize,
    pub n_fake_gan: usize,
    /// Set on the last record once the checkpoint is written.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}
