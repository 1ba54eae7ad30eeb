use super::backbone::{Backbone, LoraSet};
use super::layers::Linear;
use super::loss::balanced_bce;
use super::real::Real;
use super::tensors::{TensorMut, TensorRef, Tensors};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::forge::ArtifactDomain;
use crate::rng::{self, tag};

/// Head gain at initialization; keeps initial logits close to zero.
pub(crate) const HEAD_INIT_GAIN: f64 = 0.01;

/// One adapter set plus its classification head.
#[derive(Clone, Debug, PartialEq)]
pub struct Expert<T> {
    /// `None` for the mixed-training baseline.
    pub domain: Option<ArtifactDomain>,
    pub lora: LoraSet<T>,
    /// `dim → 1`; positive logits mean fake.
    pub head: Linear<T>,
}

/// Gradients with the same layout as [`Expert`]. Frozen parts stay zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertGrad<T> {
    pub lora: LoraSet<T>,
    pub head: Linear<T>,
}

/// Which parts of an expert receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExpertTrainable {
    /// Adapters of blocks `lora_from..` are trainable; `num_blocks` freezes all.
    pub lora_from: usize,
    pub head: bool,
}

impl ExpertTrainable {
    pub fn all() -> Self {
        Self {
            lora_from: 0,
            head: true,
        }
    }
}

impl<T: Real> Expert<T> {
    pub fn fresh(cfg: &ModelConfig, domain: Option<ArtifactDomain>, seed: u64) -> Self {
        let mut r = rng::stream(seed, tag::HEAD, 0);
        Self {
            domain,
            lora: LoraSet::fresh(cfg, seed),
            head: Linear::random(cfg.embed_dim, 1, HEAD_INIT_GAIN, &mut r),
        }
    }

    pub fn cast<U: Real>(&self) -> Expert<U> {
        Expert {
            domain: self.domain,
            lora: self.lora.cast(),
            head: self.head.cast(),
        }
    }

    pub fn zero_grad(&self) -> ExpertGrad<T> {
        ExpertGrad {
            lora: self.lora.zeros_like(),
            head: Linear::zeros(self.head.din, self.head.dout),
        }
    }
}

impl<T> Tensors<T> for Expert<T> {
    fn tensors(&self, prefix: &str) -> Vec<TensorRef<'_, T>> {
        let mut t = self.lora.tensors(&format!("{prefix}lora"));
        t.extend(self.head.tensors(&format!("{prefix}head")));
        t
    }

    fn tensors_mut(&mut self, prefix: &str) -> Vec<TensorMut<'_, T>> {
        let mut t = self.lora.tensors_mut(&format!("{prefix}lora"));
        t.extend(self.head.tensors_mut(&format!("{prefix}head")));
        t
    }
}

impl<T> Tensors<T> for ExpertGrad<T> {
    fn tensors(&self, prefix: &str) -> Vec<TensorRef<'_, T>> {
        let mut t = self.lora.tensors(&format!("{prefix}lora"));
        t.extend(self.head.tensors(&format!("{prefix}head")));
        t
    }

    fn tensors_mut(&mut self, prefix: &str) -> Vec<TensorMut<'_, T>> {
        let mut t = self.lora.tensors_mut(&format!("{prefix}lora"));
        t.extend(self.head.tensors_mut(&format!("{prefix}head")));
        t
    }
}

fn check_pair<T: Real>(backbone: &Backbone<T>, expert: &Expert<T>) -> Result<()> {
    let c = &backbone.cfg;
    if expert.lora.blocks.len() != c.num_blocks || expert.head.din != c.embed_dim {
        return Err(Error::Consistency("expert does not match the backbone".into()));
    }
    Ok(())
}

/// Logits (`n`) and pooled features (`n×dim`) for `n` flattened images.
pub fn forward_expert<T: Real>(
    backbone: &Backbone<T>,
    expert: &Expert<T>,
    images: &[T],
    n: usize,
) -> Result<(Vec<T>, Vec<T>)> {
    check_pair(backbone, expert)?;
    let (feat, _) = backbone.forward(images, n, Some(&expert.lora), None)?;
    let logits = expert.head.forward(&feat, n);
    Ok((logits, feat))
}

/// Balanced-BCE loss and gradients of the trainable parts of `expert`.
pub fn expert_loss_grad<T: Real>(
    backbone: &Backbone<T>,
    expert: &Expert<T>,
    images: &[T],
    labels: &[u8],
    trainable: ExpertTrainable,
) -> Result<(T, ExpertGrad<T>)> {
    check_pair(backbone, expert)?;
    let n = labels.len();
    let lb = backbone.cfg.num_blocks;
    let train_lora = trainable.lora_from < lb;
    let (feat, cache) = backbone.forward(
        images,
        n,
        Some(&expert.lora),
        train_lora.then_some(trainable.lora_from),
    )?;
    let logits = expert.head.forward(&feat, n);
    let (loss, dlogits) = balanced_bce(&logits, labels, None)?;
    let mut grad = expert.zero_grad();
    if trainable.head {
        expert.head.accumulate_grad(&feat, &dlogits, n, &mut grad.head);
    }
    if let Some(cache) = cache {
        let dfeat = expert.head.backward_input(&dlogits, n);
        backbone.backward(&cache, &dfeat, &expert.lora, &mut grad.lora)?;
    }
    Ok((loss, grad))
}
