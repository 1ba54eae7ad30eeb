//! Gradient-conflict probing of the mixed baseline: per-source gradient
//! cosines, per-block breakdowns and a first-order Taylor check of how a
//! mixed update moves the VAE-source loss.

mod taylor;

use std::fmt::Write as _;
use std::ops::Range;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forge::Quad;
use crate::model::{expert_loss_grad, Backbone, Expert, ExpertTrainable, Real, Tensors, FAKE, REAL};
use crate::rng::{self, derive_seed, tag};
use crate::train::{Adam, TrainConfig};

pub use taylor::{taylor_diagnostic, TaylorDiagnostic, TaylorStep};

/// Below this norm a vector counts as zero in [`cosine`].
pub const COSINE_EPS: f64 = 1e-12;
pub const DEFAULT_PROBE_ITERS: usize = 50;
pub const DEFAULT_PROBE_BATCH: usize = 8;

/// `⟨u,v⟩ / (‖u‖‖v‖)`, or 0 when either norm is below [`COSINE_EPS`].
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::invalid(format!("cosine of vectors with lengths {} and {}", u.len(), v.len())));
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (&a, &b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    Ok(cosine_from_parts(dot, nu.sqrt(), nv.sqrt()))
}

pub(crate) fn cosine_from_parts(dot: f64, nu: f64, nv: f64) -> f64 {
    if nu < COSINE_EPS || nv < COSINE_EPS {
        0.0
    } else {
        (dot / (nu * nv)).clamp(-1.0, 1.0)
    }
}

/// Which parameters the probe's gradient vectors cover.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeParams {
    #[default]
    LoraAndHead,
    LoraOnly,
}

impl std::str::FromStr for ProbeParams {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lora_and_head" | "lora+head" | "all" => Ok(ProbeParams::LoraAndHead),
            "lora_only" | "lora" => Ok(ProbeParams::LoraOnly),
            _ => Err(Error::invalid(format!("unknown probe parameter set {s:?}"))),
        }
    }
}

/// A flattened gradient with named tensors and per-layer ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceGradient {
    pub names: Vec<String>,
    /// `(layer label, range into values)`, in parameter order.
    pub layers: Vec<(String, Range<usize>)>,
    pub values: Vec<f64>,
    pub loss: f64,
}

/// `lora.3.q.a` belongs to `block3`; everything else to its first path segment.
fn layer_of(name: &str) -> String {
    let mut parts = name.split('.');
    match (parts.next(), parts.next()) {
        (Some("lora"), Some(b)) => format!("block{b}"),
        (Some(first), _) => first.to_string(),
        _ => name.to_string(),
    }
}

fn flatten_grad<T: Real>(grad: &impl Tensors<T>, params: ProbeParams, loss: f64) -> SourceGradient {
    let mut names = Vec::new();
    let mut layers: Vec<(String, Range<usize>)> = Vec::new();
    let mut values = Vec::new();
    for (name, _, data) in grad.tensors("") {
        if params == ProbeParams::LoraOnly && !name.starts_with("lora.") {
            continue;
        }
        let layer = layer_of(&name);
        let start = values.len();
        values.extend(data.iter().map(|v| v.to_f64()));
        match layers.last_mut() {
            Some((l, r)) if *l == layer => r.end = values.len(),
            _ => layers.push((layer, start..values.len())),
        }
        names.push(name);
    }
    SourceGradient {
        names,
        layers,
        values,
        loss,
    }
}

/// Images for one probe step: `n` reals and the two fakes of the same
/// entries, flattened and cropped with one shared window per entry.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeBatch<T> {
    pub n: usize,
    pub real: Vec<T>,
    pub fake_vae: Vec<T>,
    pub fake_gan: Vec<T>,
}

impl<T: Real> ProbeBatch<T> {
    pub fn sample(data: &[Quad], n: usize, res: usize, rng: &mut impl Rng) -> Result<Self> {
        if data.len() < n || n == 0 {
            return Err(Error::invalid(format!("probe batch needs {n} entries, dataset has {}", data.len())));
        }
        let mut b = ProbeBatch {
            n,
            real: Vec::new(),
            fake_vae: Vec::new(),
            fake_gan: Vec::new(),
        };
        for e in sample(rng, data.len(), n).into_iter() {
            let q = &data[e];
            let (h, w) = (q.real.height(), q.real.width());
            if h < res || w < res {
                return Err(Error::invalid("entry smaller than the working resolution"));
            }
            let (top, left) = (rng.gen_range(0..=h - res), rng.gen_range(0..=w - res));
            for (dst, img) in [(&mut b.real, &q.real), (&mut b.fake_vae, &q.fake_vae), (&mut b.fake_gan, &q.fake_gan)] {
                let c = img.crop(top, left, res, res)?;
                dst.extend(c.data().iter().map(|&v| T::from_f64(v as f64)));
            }
        }
        Ok(b)
    }

    /// Reals followed by one fake family, with labels.
    pub fn source(&self, fakes: &[T]) -> (Vec<T>, Vec<u8>) {
        let mut images = self.real.clone();
        images.extend_from_slice(fakes);
        let labels = std::iter::repeat(REAL).take(self.n).chain(std::iter::repeat(FAKE).take(self.n)).collect();
        (images, labels)
    }
}

/// Gradients of the two per-source balanced-BCE losses of a single-adapter
/// model, each over the shared reals plus one fake family. The model is
/// only read.
pub fn per_source_gradients<T: Real>(
    backbone: &Backbone<T>,
    model: &Expert<T>,
    batch: &ProbeBatch<T>,
    params: ProbeParams,
) -> Result<(SourceGradient, SourceGradient)> {
    let run = |fakes: &[T]| -> Result<SourceGradient> {
        let (images, labels) = batch.source(fakes);
        let (loss, grad) = expert_loss_grad(backbone, model, &images, &labels, ExpertTrainable::all())?;
        Ok(flatten_grad(&grad, params, loss.to_f64()))
    };
    let gv = run(&batch.fake_vae)?;
    let gs = run(&batch.fake_gan)?;
    if gv.names != gs.names || gv.values.len() != gs.values.len() {
        return Err(Error::Consistency("per-source gradients cover different parameters".into()));
    }
    Ok((gv, gs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStat {
    pub layer: String,
    pub dot: f64,
    pub norm_vae: f64,
    pub norm_gan: f64,
    pub cosine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeStep {
    pub iter: usize,
    pub cosine: f64,
    pub dot: f64,
    pub norm_vae: f64,
    pub norm_gan: f64,
    pub loss_vae: f64,
    pub loss_gan: f64,
    pub layers: Vec<LayerStat>,
}

impl ProbeStep {
    pub fn from_gradients(iter: usize, gv: &SourceGradient, gs: &SourceGradient) -> Result<Self> {
        let mut layers = Vec::with_capacity(gv.layers.len());
        let (mut dot, mut nv2, mut ns2) = (0.0, 0.0, 0.0);
        for (label, r) in &gv.layers {
            let (a, b) = (&gv.values[r.clone()], &gs.values[r.clone()]);
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let va: f64 = a.iter().map(|x| x * x).sum();
            let vb: f64 = b.iter().map(|x| x * x).sum();
            dot += d;
            nv2 += va;
            ns2 += vb;
            let (na, nb) = (va.sqrt(), vb.sqrt());
            layers.push(LayerStat {
                layer: label.clone(),
                dot: d,
                norm_vae: na,
                norm_gan: nb,
                cosine: cosine_from_parts(d, na, nb),
            });
        }
        let (nv, ns) = (nv2.sqrt(), ns2.sqrt());
        Ok(ProbeStep {
            iter,
            cosine: cosine(&gv.values, &gs.values)?,
            dot,
            norm_vae: nv,
            norm_gan: ns,
            loss_vae: gv.loss,
            loss_gan: gs.loss,
            layers,
        })
    }

    /// Total cosine rebuilt from the stored per-layer parts.
    pub fn cosine_from_layers(&self) -> f64 {
        let dot: f64 = self.layers.iter().map(|l| l.dot).sum();
        let nv: f64 = self.layers.iter().map(|l| l.norm_vae * l.norm_vae).sum::<f64>().sqrt();
        let ns: f64 = self.layers.iter().map(|l| l.norm_gan * l.norm_gan).sum::<f64>().sqrt();
        cosine_from_parts(dot, nv, ns)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub iters: usize,
    /// Images per source: half reals, half fakes.
    pub batch: usize,
    pub params: ProbeParams,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            iters: DEFAULT_PROBE_ITERS,
            batch: DEFAULT_PROBE_BATCH,
            params: ProbeParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub seed: u64,
    pub iters: usize,
    pub batch: usize,
    pub lambda: f64,
    pub params: ProbeParams,
    pub steps: Vec<ProbeStep>,
    pub conflict_fraction: f64,
    pub mean_cosine: f64,
    pub std_cosine: f64,
    pub mean_abs_cosine: f64,
}

impl ConflictReport {
    fn from_steps(seed: u64, opts: &ProbeOptions, lambda: f64, steps: Vec<ProbeStep>) -> Self {
        let c: Vec<f64> = steps.iter().map(|s| s.cosine).collect();
        let t = c.len().max(1) as f64;
        let mean = c.iter().sum::<f64>() / t;
        let var = c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t;
        Self {
            seed,
            iters: opts.iters,
            batch: opts.batch,
            lambda,
            params: opts.params,
            conflict_fraction: c.iter().filter(|&&x| x < 0.0).count() as f64 / t,
            mean_cosine: mean,
            std_cosine: var.sqrt(),
            mean_abs_cosine: c.iter().map(|x| x.abs()).sum::<f64>() / t,
            steps,
        }
    }

    /// Mean cosine per layer, in parameter order.
    pub fn layer_means(&self) -> Vec<(String, f64)> {
        let Some(first) = self.steps.first() else {
            return Vec::new();
        };
        first
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let m = self.steps.iter().map(|s| s.layers[i].cosine).sum::<f64>() / self.steps.len() as f64;
                (l.layer.clone(), m)
            })
            .collect()
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let conflicts = self.steps.iter().filter(|s| s.cosine < 0.0).count();
        let _ = writeln!(
            out,
            "seed {}: mean cos {:+.4}  std {:.4}  mean |cos| {:.4}  conflicts {}/{} ({:.0}%)",
            self.seed,
            self.mean_cosine,
            self.std_cosine,
            self.mean_abs_cosine,
            conflicts,
            self.steps.len(),
            100.0 * self.conflict_fraction
        );
        for (layer, m) in self.layer_means() {
            let _ = writeln!(out, "  {layer:<8} {m:+.4}");
        }
        out
    }
}

/// Mixed training from the stage-1 initialization for `opts.iters` steps.
/// At each step both per-source gradients are recorded at the current
/// parameters, then the model takes one Adam step along
/// `λ·g_vae + (1−λ)·g_gan` at the base learning rate.
pub fn run_conflict_probe(cfg: &TrainConfig, data: &[Quad], opts: &ProbeOptions) -> Result<ConflictReport> {
    cfg.validate()?;
    if opts.iters == 0 || opts.batch < 2 || opts.batch % 2 != 0 {
        return Err(Error::invalid("probe needs iters > 0 and an even batch of at least 2"));
    }
    let mcfg = cfg.model_config();
    let backbone = Backbone::<f32>::new(&mcfg)?;
    let mut model = Expert::<f32>::fresh(&mcfg, None, derive_seed(cfg.seed, tag::LORA, 0));
    let mut opt = Adam::for_tensors(&model.tensors_mut(""));
    let mut rng = rng::stream(cfg.seed, tag::PROBE, 0);
    let lambda = cfg.mix_lambda;
    let mut steps = Vec::with_capacity(opts.iters);
    for iter in 0..opts.iters {
        let batch = ProbeBatch::<f32>::sample(data, opts.batch / 2, cfg.resolution, &mut rng)?;
        let (gv, gs) = per_source_gradients(&backbone, &model, &batch, ProbeParams::LoraAndHead)?;
        if !(gv.loss.is_finite() && gs.loss.is_finite()) {
            return Err(Error::Diverged(format!("probe loss not finite at iteration {iter}")));
        }
        let step = match opts.params {
            ProbeParams::LoraAndHead => ProbeStep::from_gradients(iter, &gv, &gs)?,
            ProbeParams::LoraOnly => ProbeStep::from_gradients(
                iter,
                &restrict(&gv, ProbeParams::LoraOnly),
                &restrict(&gs, ProbeParams::LoraOnly),
            )?,
        };
        steps.push(step);
        let mixed: Vec<f32> = gv
            .values
            .iter()
            .zip(&gs.values)
            .map(|(a, b)| (lambda * a + (1.0 - lambda) * b) as f32)
            .collect();
        let grads = unflatten(&model, &mixed);
        opt.step(&mut model.tensors_mut(""), &grads, cfg.lr);
    }
    Ok(ConflictReport::from_steps(cfg.seed, opts, lambda, steps))
}

fn restrict(g: &SourceGradient, params: ProbeParams) -> SourceGradient {
    if params == ProbeParams::LoraAndHead {
        return g.clone();
    }
    let mut out = SourceGradient {
        names: g.names.iter().filter(|n| n.starts_with("lora.")).cloned().collect(),
        layers: Vec::new(),
        values: Vec::new(),
        loss: g.loss,
    };
    for (label, r) in &g.layers {
        if label.starts_with("block") {
            let start = out.values.len();
            out.values.extend_from_slice(&g.values[r.clone()]);
            out.layers.push((label.clone(), start..out.values.len()));
        }
    }
    out
}

/// Views a flat vector as tensors shaped like `model`'s.
fn unflatten<'a>(model: &Expert<f32>, flat: &'a [f32]) -> Vec<crate::model::TensorRef<'a, f32>> {
    let mut off = 0;
    model
        .tensors("")
        .into_iter()
        .map(|(name, shape, data)| {
            let r = off..off + data.len();
            off = r.end;
            (name, shape, &flat[r])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::{generate_quads, DatasetConfig};
    use crate::model::ModelConfig;

    #[test]
    fn cosine_kernel() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine(&[1.0, 2.0], &[-1.0, -2.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn layer_labels() {
        assert_eq!(layer_of("lora.3.q.a"), "block3");
        assert_eq!(layer_of("head.weight"), "head");
    }

    fn tiny_setup() -> (TrainConfig, Vec<Quad>) {
        let mut cfg = TrainConfig::default();
        let t = ModelConfig::tiny();
        cfg.resolution = t.image_size;
        cfg.embed_dim = t.embed_dim;
        cfg.num_heads = t.num_heads;
        cfg.num_blocks = t.num_blocks;
        cfg.patch_size = t.patch_size;
        cfg.lora_rank = t.lora_rank;
        cfg.unfreeze_k = 2;
        cfg.lr = 1e-3;
        let data = generate_quads(&DatasetConfig::new(12, 32, 3)).unwrap();
        (cfg, data)
    }

    #[test]
    fn identical_sources_give_unit_cosine() {
        let (cfg, data) = tiny_setup();
        let mcfg = cfg.model_config();
        let bb = Backbone::<f32>::new(&mcfg).unwrap();
        let model = Expert::<f32>::fresh(&mcfg, None, 1);
        let mut rng = rng::stream(0, tag::PROBE, 0);
        let mut batch = ProbeBatch::<f32>::sample(&data, 4, cfg.resolution, &mut rng).unwrap();
        batch.fake_gan = batch.fake_vae.clone();
        let before = model.clone();
        let (gv, gs) = per_source_gradients(&bb, &model, &batch, ProbeParams::LoraAndHead).unwrap();
        assert_eq!(model, before);
        assert!((cosine(&gv.values, &gs.values).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(cosine(&gv.values, &gv.values).unwrap(), 1.0);
    }

    #[test]
    fn probe_report_shape_and_layer_consistency() {
        let (cfg, data) = tiny_setup();
        let opts = ProbeOptions {
            iters: 5,
            ..ProbeOptions::default()
        };
        let r = run_conflict_probe(&cfg, &data, &opts).unwrap();
        assert_eq!(r.steps.len(), 5);
        let blocks = cfg.num_blocks;
        for s in &r.steps {
            assert!((-1.0..=1.0).contains(&s.cosine));
            assert_eq!(s.layers.iter().filter(|l| l.layer.starts_with("block")).count(), blocks);
            assert!((s.cosine_from_layers() - s.cosine).abs() < 1e-6);
        }
        assert!((0.0..=1.0).contains(&r.conflict_fraction));
        assert_eq!(r, run_conflict_probe(&cfg, &data, &opts).unwrap());
        let lora = run_conflict_probe(&cfg, &data, &ProbeOptions { params: ProbeParams::LoraOnly, ..opts }).unwrap();
        assert!(lora.steps[0].layers.iter().all(|l| l.layer.starts_with("block")));
    }
}
