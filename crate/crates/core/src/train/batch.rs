use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::forge::{ArtifactDomain, Quad};
use crate::imagelab::Image;
use crate::model::{FAKE, REAL};

/// Images (flattened HWC, `res×res`) with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Vec<f32>,
    pub labels: Vec<u8>,
    pub composition: Composition,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Composition {
    pub real: usize,
    pub fake_vae: usize,
    pub fake_gan: usize,
}

impl Composition {
    pub fn add(&mut self, other: Composition) {
        self.real += other.real;
        self.fake_vae += other.fake_vae;
        self.fake_gan += other.fake_gan;
    }
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn crop_into(buf: &mut Vec<f32>, img: &Image, top: usize, left: usize, res: usize) {
    let (w, c) = (img.width(), img.channels());
    for y in top..top + res {
        let row = (y * w + left) * c;
        buf.extend_from_slice(&img.data()[row..row + res * c]);
    }
}

fn check_res(q: &Quad, res: usize) -> Result<()> {
    if q.real.height() < res || q.real.width() < res || q.real.channels() != 3 {
        return Err(Error::invalid(format!(
            "entry {} is {}x{}x{}, smaller than the {res}x{res} RGB working resolution",
            q.index,
            q.real.height(),
            q.real.width(),
            q.real.channels()
        )));
    }
    Ok(())
}

/// Random crop window shared by all images of an entry.
fn random_window(q: &Quad, res: usize, rng: &mut impl Rng) -> (usize, usize) {
    (
        rng.gen_range(0..=q.real.height() - res),
        rng.gen_range(0..=q.real.width() - res),
    )
}

/// Center `res×res` crop, flattened.
pub fn center_crop_flat(img: &Image, res: usize) -> Result<Vec<f32>> {
    if img.height() < res || img.width() < res {
        return Err(Error::invalid("image smaller than the working resolution"));
    }
    let mut buf = Vec::with_capacity(res * res * img.channels());
    crop_into(&mut buf, img, (img.height() - res) / 2, (img.width() - res) / 2, res);
    Ok(buf)
}

fn pick_entries(data: &[Quad], k: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if data.len() < k {
        return Err(Error::invalid(format!(
            "batch needs {k} distinct entries, dataset has {}",
            data.len()
        )));
    }
    Ok(sample(rng, data.len(), k).into_vec())
}

/// `pairs` (real, fake) pairs from distinct entries; the first `vae_pairs`
/// use VAE_SIM fakes, the rest GAN_SIM fakes. The random stream consumed
/// does not depend on `vae_pairs`.
fn pair_batch(data: &[Quad], pairs: usize, vae_pairs: usize, res: usize, rng: &mut impl Rng) -> Result<Batch> {
    let idx = pick_entries(data, pairs, rng)?;
    let mut images = Vec::with_capacity(2 * pairs * res * res * 3);
    let mut labels = Vec::with_capacity(2 * pairs);
    let mut comp = Composition::default();
    for (i, &e) in idx.iter().enumerate() {
        let q = &data[e];
        check_res(q, res)?;
        let (top, left) = random_window(q, res, rng);
        let domain = if i < vae_pairs {
            comp.fake_vae += 1;
            ArtifactDomain::VaeSim
        } else {
            comp.fake_gan += 1;
            ArtifactDomain::GanSim
        };
        crop_into(&mut images, &q.real, top, left, res);
        crop_into(&mut images, q.fake(domain), top, left, res);
        labels.extend([REAL, FAKE]);
        comp.real += 1;
    }
    Ok(Batch {
        images,
        labels,
        composition: comp,
    })
}

/// `batch/2` real/fake pairs of one domain.
pub fn make_expert_batch(
    data: &[Quad],
    batch: usize,
    domain: ArtifactDomain,
    res: usize,
    rng: &mut impl Rng,
) -> Result<Batch> {
    let pairs = batch / 2;
    let vae = match domain {
        ArtifactDomain::VaeSim => pairs,
        ArtifactDomain::GanSim => 0,
    };
    pair_batch(data, pairs, vae, res, rng)
}

/// `batch/2` pairs, `round(λ·pairs)` of them with VAE_SIM fakes.
pub fn make_mixed_batch(data: &[Quad], batch: usize, lambda: f64, res: usize, rng: &mut impl Rng) -> Result<Batch> {
    let pairs = batch / 2;
    let vae = (lambda * pairs as f64).round() as usize;
    pair_batch(data, pairs, vae.min(pairs), res, rng)
}

/// `batch/3` (real, VAE fake, GAN fake) triples from distinct entries; the
/// remainder of `batch` is dropped.
pub fn make_sef_batch(data: &[Quad], batch: usize, res: usize, rng: &mut impl Rng) -> Result<Batch> {
    let triples = batch / 3;
    if triples == 0 {
        return Err(Error::invalid("batch too small for one triple"));
    }
    let idx = pick_entries(data, triples, rng)?;
    let mut images = Vec::with_capacity(3 * triples * res * res * 3);
    let mut labels = Vec::with_capacity(3 * triples);
    for &e in &idx {
        let q = &data[e];
        check_res(q, res)?;
        let (top, left) = random_window(q, res, rng);
        crop_into(&mut images, &q.real, top, left, res);
        crop_into(&mut images, &q.fake_vae, top, left, res);
        crop_into(&mut images, &q.fake_gan, top, left, res);
        labels.extend([REAL, FAKE, FAKE]);
    }
    Ok(Batch {
        images,
        labels,
        composition: Composition {
            real: triples,
            fake_vae: triples,
            fake_gan: triples,
        },
    })
}
