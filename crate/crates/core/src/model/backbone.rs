use rand_distr::{Distribution, Normal};

use super::layers::{gelu, gelu_grad, softmax_rows, LayerNorm, LnCache, Linear, LoraPair};
use super::real::{cast_vec, gemm, Mat, Real};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Residual-branch output gain at initialization.
const RESIDUAL_GAIN: f64 = 0.5;
const POS_STD: f64 = 0.1;
/// Pixels are mapped to `(x − 0.5) / 0.25` before patch embedding.
const PIXEL_MEAN: f64 = 0.5;
const PIXEL_STD: f64 = 0.25;

/// One pre-norm transformer block.
#[derive(Clone, Debug, PartialEq)]
pub struct Block<T> {
    pub ln1: LayerNorm<T>,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
    pub ln2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

/// Adapters on the query and value projections of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockLora<T> {
    pub q: LoraPair<T>,
    pub v: LoraPair<T>,
}

/// One adapter pair per block.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraSet<T> {
    pub rank: usize,
    pub alpha: f64,
    pub blocks: Vec<BlockLora<T>>,
}

impl<T: Real> LoraSet<T> {
    /// Fresh adapters: `A` Gaussian, `B` zero.
    pub fn fresh(cfg: &ModelConfig, seed: u64) -> Self {
        let d = cfg.embed_dim;
        let blocks = (0..cfg.num_blocks)
            .map(|b| {
                let mut r = rng::stream(seed, tag::LORA, b as u64);
                BlockLora {
                    q: LoraPair::fresh(cfg.lora_rank, d, d, &mut r),
                    v: LoraPair::fresh(cfg.lora_rank, d, d, &mut r),
                }
            })
            .collect();
        Self {
            rank: cfg.lora_rank,
            alpha: cfg.lora_alpha,
            blocks,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            rank: self.rank,
            alpha: self.alpha,
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockLora {
                    q: LoraPair::zeros(b.q.rank, b.q.din, b.q.dout),
                    v: LoraPair::zeros(b.v.rank, b.v.din, b.v.dout),
                })
                .collect(),
        }
    }

    pub fn scale(&self) -> T {
        T::from_f64(self.alpha / self.rank as f64)
    }

    pub fn cast<U: Real>(&self) -> LoraSet<U> {
        LoraSet {
            rank: self.rank,
            alpha: self.alpha,
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockLora {
                    q: b.q.cast(),
                    v: b.v.cast(),
                })
                .collect(),
        }
    }
}

/// Frozen random-feature patch transformer.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone<T> {
    pub cfg: ModelConfig,
    pub patch: Linear<T>,
    /// `tokens×dim`
    pub pos: Vec<T>,
    pub blocks: Vec<Block<T>>,
    pub norm: LayerNorm<T>,
}

#[derive(Debug)]
struct BlockCache<T> {
    ln1: LnCache<T>,
    h1: Vec<T>,
    uq: Vec<T>,
    uv: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    p: Vec<T>,
    ln2: LnCache<T>,
    z: Vec<T>,
}

/// Activations kept by [`Backbone::forward`] for a later backward pass.
#[derive(Debug)]
pub struct BackboneCache<T> {
    n: usize,
    cache_from: usize,
    blocks: Vec<BlockCache<T>>,
    norm: LnCache<T>,
}

impl<T> BackboneCache<T> {
    pub fn batch_size(&self) -> usize {
        self.n
    }

    /// Lowest block whose activations were kept.
    pub fn cache_from(&self) -> usize {
        self.cache_from
    }
}

/// Makes every patch filter zero-sum per input channel, so tokens respond to
/// local structure rather than the patch's mean color.
fn remove_dc<T: Real>(patch: &mut Linear<T>, channels: usize) {
    let din = patch.din;
    let taps = din / channels;
    for row in patch.w.chunks_exact_mut(din) {
        for c in 0..channels {
            let mean = (0..taps).map(|k| row[k * channels + c].to_f64()).sum::<f64>() / taps as f64;
            for k in 0..taps {
                row[k * channels + c] = T::from_f64(row[k * channels + c].to_f64() - mean);
            }
        }
    }
}

impl<T: Real> Backbone<T> {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (d, hdim) = (cfg.embed_dim, cfg.embed_dim * cfg.mlp_ratio);
        let mut r = rng::stream(cfg.backbone_seed, tag::BACKBONE, 0);
        let mut patch = Linear::random(cfg.patch_dim(), d, 1.0, &mut r);
        remove_dc(&mut patch, cfg.channels);
        let pos_dist = Normal::new(0.0, POS_STD).expect("finite std");
        let pos = (0..cfg.num_tokens() * d)
            .map(|_| T::from_f64(pos_dist.sample(&mut r)))
            .collect();
        let blocks = (0..cfg.num_blocks)
            .map(|b| {
                let mut r = rng::stream(cfg.backbone_seed, tag::BACKBONE, 1 + b as u64);
                Block {
                    ln1: LayerNorm::new(d),
                    q: Linear::random(d, d, 1.0, &mut r),
                    k: Linear::random(d, d, 1.0, &mut r),
                    v: Linear::random(d, d, 1.0, &mut r),
                    o: Linear::random(d, d, RESIDUAL_GAIN, &mut r),
                    ln2: LayerNorm::new(d),
                    fc1: Linear::random(d, hdim, 1.0, &mut r),
                    fc2: Linear::random(hdim, d, RESIDUAL_GAIN, &mut r),
                }
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            patch,
            pos,
            blocks,
            norm: LayerNorm::new(d),
        })
    }

    pub fn cast<U: Real>(&self) -> Backbone<U> {
        Backbone {
            cfg: self.cfg.clone(),
            patch: self.patch.cast(),
            pos: cast_vec(&self.pos),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    ln1: b.ln1.cast(),
                    q: b.q.cast(),
                    k: b.k.cast(),
                    v: b.v.cast(),
                    o: b.o.cast(),
                    ln2: b.ln2.cast(),
                    fc1: b.fc1.cast(),
                    fc2: b.fc2.cast(),
                })
                .collect(),
            norm: self.norm.cast(),
        }
    }

    /// Splits `n` HWC images (flattened, `[0,1]`) into normalized patch rows.
    fn patchify(&self, images: &[T], n: usize) -> Result<Vec<T>> {
        let c = &self.cfg;
        let (s, p, ch) = (c.image_size, c.patch_size, c.channels);
        if images.len() != n * s * s * ch {
            return Err(Error::invalid(format!(
                "expected {n} images of {s}x{s}x{ch}, got {} values",
                images.len()
            )));
        }
        let g = s / p;
        let mean = T::from_f64(PIXEL_MEAN);
        let inv = T::from_f64(1.0 / PIXEL_STD);
        let mut out = Vec::with_capacity(images.len());
        for img in images.chunks_exact(s * s * ch) {
            for py in 0..g {
                for px in 0..g {
                    for y in 0..p {
                        let row = (py * p + y) * s + px * p;
                        for &v in &img[row * ch..(row + p) * ch] {
                            out.push((v - mean) * inv);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Pooled features (`n×dim`) with optional adapters. Activations of
    /// blocks `cache_from..` are kept for [`Backbone::backward`]; pass
    /// `None` to keep nothing.
    pub fn forward(
        &self,
        images: &[T],
        n: usize,
        lora: Option<&LoraSet<T>>,
        cache_from: Option<usize>,
    ) -> Result<(Vec<T>, Option<BackboneCache<T>>)> {
        if let Some(l) = lora {
            if l.blocks.len() != self.blocks.len() {
                return Err(Error::Consistency("adapter count differs from block count".into()));
            }
        }
        let cfg = &self.cfg;
        let (d, t) = (cfg.embed_dim, cfg.num_tokens());
        let mut x = self.patch.forward(&self.patchify(images, n)?, n * t);
        for tok in x.chunks_exact_mut(t * d) {
            for (v, &p) in tok.iter_mut().zip(&self.pos) {
                *v += p;
            }
        }
        let keep_from = cache_from.unwrap_or(usize::MAX);
        let mut caches = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            let bl = lora.map(|l| (&l.blocks[b], l.scale()));
            let (y, c) = self.block_forward(block, bl, &x, n, b >= keep_from);
            x = y;
            if let Some(c) = c {
                caches.push(c);
            }
        }
        let (y, norm) = self.norm.forward(&x);
        let inv_t = T::from_f64(1.0 / t as f64);
        let mut feat = vec![T::ZERO; n * d];
        for (i, f) in feat.chunks_exact_mut(d).enumerate() {
            for tok in y[i * t * d..(i + 1) * t * d].chunks_exact(d) {
                for (a, &v) in f.iter_mut().zip(tok) {
                    *a += v;
                }
            }
            for a in f.iter_mut() {
                *a *= inv_t;
            }
        }
        let cache = cache_from.map(|cf| BackboneCache {
            n,
            cache_from: cf.min(self.blocks.len()),
            blocks: caches,
            norm,
        });
        Ok((feat, cache))
    }

    fn block_forward(
        &self,
        blk: &Block<T>,
        lora: Option<(&BlockLora<T>, T)>,
        x: &[T],
        n: usize,
        keep: bool,
    ) -> (Vec<T>, Option<BlockCache<T>>) {
        let cfg = &self.cfg;
        let (d, t, nh) = (cfg.embed_dim, cfg.num_tokens(), cfg.num_heads);
        let dh = d / nh;
        let rows = n * t;
        let (h1, ln1) = blk.ln1.forward(x);
        let mut q = blk.q.forward(&h1, rows);
        let k = blk.k.forward(&h1, rows);
        let mut v = blk.v.forward(&h1, rows);
        let (uq, uv) = match lora {
            Some((l, s)) => (
                l.q.forward_add(&h1, rows, s, &mut q),
                l.v.forward_add(&h1, rows, s, &mut v),
            ),
            None => (Vec::new(), Vec::new()),
        };
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let mut p = vec![T::ZERO; n * nh * t * t];
        let mut ctx = vec![T::ZERO; rows * d];
        for i in 0..n {
            for h in 0..nh {
                let off = i * t * d + h * dh;
                let pm = &mut p[(i * nh + h) * t * t..(i * nh + h + 1) * t * t];
                gemm(
                    scale,
                    Mat::strided(&q[off..], t, dh, d),
                    Mat::strided(&k[off..], t, dh, d).t(),
                    T::ZERO,
                    pm,
                    t,
                );
                softmax_rows(pm, t);
                gemm(
                    T::ONE,
                    Mat::rm(pm, t, t),
                    Mat::strided(&v[off..], t, dh, d),
                    T::ZERO,
                    &mut ctx[off..],
                    d,
                );
            }
        }
        let a = blk.o.forward(&ctx, rows);
        let x1: Vec<T> = x.iter().zip(&a).map(|(&u, &w)| u + w).collect();
        let (h2, ln2) = blk.ln2.forward(&x1);
        let z = blk.fc1.forward(&h2, rows);
        let g: Vec<T> = z.iter().map(|&s| gelu(s)).collect();
        let m = blk.fc2.forward(&g, rows);
        let x2 = x1.iter().zip(&m).map(|(&u, &w)| u + w).collect();
        let cache = keep.then(|| BlockCache {
            ln1,
            h1,
            uq,
            uv,
            q,
            k,
            v,
            p,
            ln2,
            z,
        });
        (x2, cache)
    }

    /// Backpropagates `dfeat` (`n×dim`) into adapter gradients of blocks
    /// `cache.cache_from()..`. Gradients of lower blocks are left untouched.
    pub fn backward(
        &self,
        cache: &BackboneCache<T>,
        dfeat: &[T],
        lora: &LoraSet<T>,
        grad: &mut LoraSet<T>,
    ) -> Result<()> {
        let cfg = &self.cfg;
        let (d, t) = (cfg.embed_dim, cfg.num_tokens());
        let n = cache.n;
        if dfeat.len() != n * d {
            return Err(Error::Consistency("feature gradient has the wrong size".into()));
        }
        if cache.blocks.iter().any(|b| b.uq.is_empty()) {
            return Err(Error::State("forward pass ran without adapters".into()));
        }
        let inv_t = T::from_f64(1.0 / t as f64);
        let mut dy = vec![T::ZERO; n * t * d];
        for i in 0..n {
            let f = &dfeat[i * d..(i + 1) * d];
            for tok in dy[i * t * d..(i + 1) * t * d].chunks_exact_mut(d) {
                for (a, &g) in tok.iter_mut().zip(f) {
                    *a = g * inv_t;
                }
            }
        }
        let mut dx = self.norm.backward(&cache.norm, &dy);
        let scale = lora.scale();
        for (j, bc) in cache.blocks.iter().enumerate().rev() {
            let b = cache.cache_from + j;
            dx = self.block_backward(
                &self.blocks[b],
                &lora.blocks[b],
                scale,
                bc,
                &dx,
                n,
                &mut grad.blocks[b],
            );
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn block_backward(
        &self,
        blk: &Block<T>,
        lora: &BlockLora<T>,
        s: T,
        c: &BlockCache<T>,
        dx2: &[T],
        n: usize,
        grad: &mut BlockLora<T>,
    ) -> Vec<T> {
        let cfg = &self.cfg;
        let (d, t, nh) = (cfg.embed_dim, cfg.num_tokens(), cfg.num_heads);
        let dh = d / nh;
        let rows = n * t;

        // MLP branch
        let dg = blk.fc2.backward_input(dx2, rows);
        let dz: Vec<T> = dg.iter().zip(&c.z).map(|(&g, &z)| g * gelu_grad(z)).collect();
        let dh2 = blk.fc1.backward_input(&dz, rows);
        let dln2 = blk.ln2.backward(&c.ln2, &dh2);
        let dx1: Vec<T> = dx2.iter().zip(&dln2).map(|(&a, &b)| a + b).collect();

        // attention branch
        let dctx = blk.o.backward_input(&dx1, rows);
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let mut dq = vec![T::ZERO; rows * d];
        let mut dk = vec![T::ZERO; rows * d];
        let mut dv = vec![T::ZERO; rows * d];
        let mut dp = vec![T::ZERO; t * t];
        for i in 0..n {
            for h in 0..nh {
                let off = i * t * d + h * dh;
                let pm = &c.p[(i * nh + h) * t * t..(i * nh + h + 1) * t * t];
                let dctx_h = Mat::strided(&dctx[off..], t, dh, d);
                gemm(T::ONE, dctx_h, Mat::strided(&c.v[off..], t, dh, d).t(), T::ZERO, &mut dp, t);
                gemm(T::ONE, Mat::rm(pm, t, t).t(), dctx_h, T::ZERO, &mut dv[off..], d);
                // softmax backward, folded with the score scale
                for r in 0..t {
                    let prow = &pm[r * t..(r + 1) * t];
                    let drow = &mut dp[r * t..(r + 1) * t];
                    let dot: T = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
                    for (dv_, &pv) in drow.iter_mut().zip(prow) {
                        *dv_ = pv * (*dv_ - dot) * scale;
                    }
                }
                gemm(T::ONE, Mat::rm(&dp, t, t), Mat::strided(&c.k[off..], t, dh, d), T::ZERO, &mut dq[off..], d);
                gemm(T::ONE, Mat::rm(&dp, t, t).t(), Mat::strided(&c.q[off..], t, dh, d), T::ZERO, &mut dk[off..], d);
            }
        }
        let mut dh1 = blk.q.backward_input(&dq, rows);
        for (a, b) in dh1.iter_mut().zip(blk.k.backward_input(&dk, rows)) {
            *a += b;
        }
        for (a, b) in dh1.iter_mut().zip(blk.v.backward_input(&dv, rows)) {
            *a += b;
        }
        lora.q.backward(&c.h1, &c.uq, &dq, rows, s, &mut grad.q, &mut dh1);
        lora.v.backward(&c.h1, &c.uv, &dv, rows, s, &mut grad.v, &mut dh1);
        let dln1 = blk.ln1.backward(&c.ln1, &dh1);
        dx1.iter().zip(&dln1).map(|(&a, &b)| a + b).collect()
    }
}
