//! Frozen random-feature patch transformer with LoRA experts, a gating
//! network and convex feature fusion. Forward and backward passes are
//! written out by hand and are generic over `f32`/`f64`.

mod backbone;
pub mod checkpoint;
mod expert;
pub mod gradcheck;
mod layers;
mod loss;
mod real;
mod sef;
mod tensors;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use backbone::{Backbone, BackboneCache, Block, BlockLora, LoraSet};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointKind};
pub use expert::{expert_loss_grad, forward_expert, Expert, ExpertGrad, ExpertTrainable};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use layers::{gelu, sigmoid, LayerNorm, Linear, LoraPair};
pub use loss::{balanced_bce, FAKE, REAL};
pub use real::Real;
pub use sef::{
    forward_sef, fuse, sef_loss_grad, Gate, SefGrad, SefModel, SefOutput, SefTrainable, GATE_EPS,
};
pub use tensors::{flatten, TensorMut, TensorRef, Tensors};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_blocks: usize,
    pub mlp_ratio: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub gate_hidden: usize,
    /// Seed of the frozen backbone weights.
    pub backbone_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            channels: 3,
            patch_size: 8,
            embed_dim: 64,
            num_heads: 4,
            num_blocks: 8,
            mlp_ratio: 4,
            lora_rank: 8,
            lora_alpha: 1.0,
            gate_hidden: 32,
            backbone_seed: 0x5EF,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::invalid(format!(
                "image size {} is not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.channels != 3 {
            return bad("the model expects RGB input".into());
        }
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return bad(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.num_heads
            ));
        }
        if self.num_blocks == 0 || self.mlp_ratio == 0 || self.lora_rank == 0 || self.gate_hidden == 0 {
            return bad("block count, mlp ratio, LoRA rank and gate width must be positive".into());
        }
        if !(self.lora_alpha.is_finite()) {
            return bad("lora_alpha must be finite".into());
        }
        Ok(())
    }

    pub fn num_tokens(&self) -> usize {
        let g = self.image_size / self.patch_size;
        g * g
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    /// Values per flattened input image.
    pub fn image_len(&self) -> usize {
        self.image_size * self.image_size * self.channels
    }

    /// A small configuration for fast tests.
    pub fn tiny() -> Self {
        Self {
            image_size: 16,
            patch_size: 8,
            embed_dim: 8,
            num_heads: 2,
            num_blocks: 3,
            mlp_ratio: 2,
            lora_rank: 2,
            gate_hidden: 4,
            ..Self::default()
        }
    }
}
