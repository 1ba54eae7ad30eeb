use crate::error::{Error, Result};
use crate::model::checkpoint::{Checkpoint, CheckpointKind};
use crate::model::{forward_expert, forward_sef, Backbone, Expert, ModelConfig, SefModel};

/// Anything that maps a batch of flattened `res×res×3` images to logits.
pub trait Detector: Sync {
    fn resolution(&self) -> usize;
    fn logits(&self, images: &[f32], n: usize) -> Result<Vec<f32>>;
}

pub struct ExpertDetector {
    pub backbone: Backbone<f32>,
    pub expert: Expert<f32>,
}

impl ExpertDetector {
    pub fn new(cfg: &ModelConfig, expert: Expert<f32>) -> Result<Self> {
        Ok(Self {
            backbone: Backbone::new(cfg)?,
            expert,
        })
    }
}

impl Detector for ExpertDetector {
    fn resolution(&self) -> usize {
        self.backbone.cfg.image_size
    }

    fn logits(&self, images: &[f32], n: usize) -> Result<Vec<f32>> {
        Ok(forward_expert(&self.backbone, &self.expert, images, n)?.0)
    }
}

pub struct SefDetector {
    pub backbone: Backbone<f32>,
    pub model: SefModel<f32>,
}

impl SefDetector {
    pub fn new(cfg: &ModelConfig, model: SefModel<f32>) -> Result<Self> {
        Ok(Self {
            backbone: Backbone::new(cfg)?,
            model,
        })
    }
}

impl Detector for SefDetector {
    fn resolution(&self) -> usize {
        self.backbone.cfg.image_size
    }

    fn logits(&self, images: &[f32], n: usize) -> Result<Vec<f32>> {
        Ok(forward_sef(&self.backbone, &self.model, images, n, None)?.logits)
    }
}

/// A detector restored from a checkpoint of either kind.
pub enum AnyDetector {
    Expert(ExpertDetector),
    Sef(SefDetector),
}

impl AnyDetector {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg = &ckpt.meta.model;
        cfg.validate().map_err(|e| Error::Format(format!("checkpoint model config: {e}")))?;
        Ok(match ckpt.meta.kind {
            CheckpointKind::Expert => AnyDetector::Expert(ExpertDetector::new(cfg, ckpt.to_expert()?)?),
            CheckpointKind::Sef => AnyDetector::Sef(SefDetector::new(cfg, ckpt.to_sef()?)?),
        })
    }
}

impl Detector for AnyDetector {
    fn resolution(&self) -> usize {
        match self {
            AnyDetector::Expert(d) => d.resolution(),
            AnyDetector::Sef(d) => d.resolution(),
        }
    }

    fn logits(&self, images: &[f32], n: usize) -> Result<Vec<f32>> {
        match self {
            AnyDetector::Expert(d) => d.logits(images, n),
            AnyDetector::Sef(d) => d.logits(images, n),
        }
    }
}
