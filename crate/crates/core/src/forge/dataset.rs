use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mask::{apply_mask_aug, gen_mask, BinaryMask, MaskKind, MaskSpec};
use super::procedural::gen_procedural_real;
use super::simulate::{simulate_gan_artifact_with, simulate_vae_artifact_with, SimulatorConfig};
use crate::error::{Error, Result};
use crate::imagelab::Image;
use crate::rng::{self, tag};

pub const GENERATOR_VERSION: &str = concat!("sef-forge/", env!("CARGO_PKG_VERSION"));
pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Entry indices at or above this value are reserved for held-out data.
pub const HELD_OUT_FIRST_INDEX: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ArtifactDomain {
    VaeSim,
    GanSim,
}

impl ArtifactDomain {
    pub const ALL: [ArtifactDomain; 2] = [ArtifactDomain::VaeSim, ArtifactDomain::GanSim];

    pub fn name(self) -> &'static str {
        match self {
            ArtifactDomain::VaeSim => "VAE_SIM",
            ArtifactDomain::GanSim => "GAN_SIM",
        }
    }
}

impl std::str::FromStr for ArtifactDomain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vae" | "vae_sim" => Ok(ArtifactDomain::VaeSim),
            "gan" | "gan_sim" => Ok(ArtifactDomain::GanSim),
            _ => Err(Error::invalid(format!("unknown artifact domain {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub aug_prob: f64,
    /// Index of the first entry; held-out sets start at [`HELD_OUT_FIRST_INDEX`].
    #[serde(default)]
    pub first_index: u64,
    #[serde(default)]
    pub simulator: SimulatorConfig,
}

impl DatasetConfig {
    pub fn new(n: usize, size: usize, seed: u64) -> Self {
        Self {
            n,
            height: size,
            width: size,
            seed,
            aug_prob: 0.5,
            first_index: 0,
            simulator: SimulatorConfig::default(),
        }
    }

    /// Evaluation split: indices from [`HELD_OUT_FIRST_INDEX`], no mask
    /// augmentation.
    pub fn held_out(mut self) -> Self {
        self.first_index = HELD_OUT_FIRST_INDEX;
        self.aug_prob = 0.0;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("dataset needs at least one entry"));
        }
        if !(0.0..=1.0).contains(&self.aug_prob) {
            return Err(Error::invalid(format!("aug_prob {} outside [0, 1]", self.aug_prob)));
        }
        if self.height % 8 != 0 || self.width % 8 != 0 || self.height < 32 || self.width < 32 {
            return Err(Error::invalid(format!(
                "dataset images must be multiples of 8 and at least 32, got {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// One aligned sample held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Quad {
    pub index: u64,
    pub seed: u64,
    pub real: Image,
    pub fake_vae: Image,
    pub fake_gan: Image,
    pub mask: Option<BinaryMask>,
}

impl Quad {
    pub fn fake(&self, domain: ArtifactDomain) -> &Image {
        match domain {
            ArtifactDomain::VaeSim => &self.fake_vae,
            ArtifactDomain::GanSim => &self.fake_gan,
        }
    }
}

fn quantized(img: &Image) -> Result<Image> {
    let (h, w, c) = img.dims();
    Image::from_u8(h, w, c, &img.to_u8())
}

/// Generates entry `index` of a dataset. Every image is snapped to 8-bit
/// levels so the in-memory sample equals what a PNG round trip returns.
pub fn generate_quad(cfg: &DatasetConfig, index: u64) -> Result<Quad> {
    let mut rng = rng::stream(cfg.seed, tag::DATASET_ENTRY, index);
    let seed: u64 = rng.gen();
    let real = quantized(&gen_procedural_real(seed, cfg.height, cfg.width)?)?;
    let mut fake_vae = quantized(&simulate_vae_artifact_with(&real, &cfg.simulator)?)?;
    let mut fake_gan = quantized(&simulate_gan_artifact_with(&real, &cfg.simulator)?)?;
    let mut mask = None;
    if rng.gen_bool(cfg.aug_prob) {
        let kind = if rng.gen_bool(0.5) {
            MaskKind::Foreground
        } else {
            MaskKind::Background
        };
        let m = gen_mask(&MaskSpec::new(kind, rng.gen()), cfg.height, cfg.width)?;
        fake_vae = apply_mask_aug(&fake_vae, &real, &m)?;
        fake_gan = apply_mask_aug(&fake_gan, &real, &m)?;
        mask = Some(m);
    }
    Ok(Quad {
        index,
        seed,
        real,
        fake_vae,
        fake_gan,
        mask,
    })
}

/// Generates all entries in memory, in index order.
pub fn generate_quads(cfg: &DatasetConfig) -> Result<Vec<Quad>> {
    cfg.validate()?;
    (0..cfg.n as u64)
        .into_par_iter()
        .map(|i| generate_quad(cfg, cfg.first_index + i))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: u64,
    pub real_path: String,
    pub fake_vae_path: String,
    pub fake_gan_path: String,
    pub mask_path: Option<String>,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub generator_version: String,
    pub config: DatasetConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ManifestRecord {
    Header(ManifestHeader),
    Entry(ManifestEntry),
}

/// Paths in entries are relative to `root`, the directory holding the manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn generator_version(&self) -> &str {
        &self.header.generator_version
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write(&self) -> Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        let mut line = |rec: &ManifestRecord| -> Result<()> {
            let s = serde_json::to_string(rec).map_err(|e| Error::Format(e.to_string()))?;
            writeln!(out, "{s}").map_err(|e| Error::io(&path, e))
        };
        line(&ManifestRecord::Header(self.header.clone()))?;
        for e in &self.entries {
            line(&ManifestRecord::Entry(e.clone()))?;
        }
        out.flush().map_err(|e| Error::io(&path, e))
    }

    /// Reads `dir/manifest.jsonl` (or the file itself if `path` is a file).
    pub fn read(path: impl AsRef<Path>) -> Result<DatasetManifest> {
        let path = path.as_ref();
        let (root, file) = if path.is_dir() {
            (path.to_path_buf(), path.join(MANIFEST_FILE))
        } else {
            let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (root, path.to_path_buf())
        };
        let f = fs::File::open(&file).map_err(|e| Error::io(&file, e))?;
        let mut header = None;
        let mut entries = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&file, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", file.display(), n + 1)))?;
            match rec {
                ManifestRecord::Header(h) if header.is_none() => header = Some(h),
                ManifestRecord::Header(_) => {
                    return Err(Error::Format(format!("{}: duplicate header", file.display())))
                }
                ManifestRecord::Entry(e) => entries.push(e),
            }
        }
        let header =
            header.ok_or_else(|| Error::Format(format!("{}: missing header", file.display())))?;
        Ok(DatasetManifest {
            root,
            header,
            entries,
        })
    }

    /// Anchor seeds referenced by the manifest.
    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|e| e.seed)
    }

    /// Loads every entry and checks the alignment invariants.
    pub fn load(&self) -> Result<Vec<Quad>> {
        self.entries
            .par_iter()
            .map(|e| {
                let load = |p: &str| Image::load_png(self.root.join(p));
                let real = load(&e.real_path)?;
                let fake_vae = load(&e.fake_vae_path)?;
                let fake_gan = load(&e.fake_gan_path)?;
                let mask = match &e.mask_path {
                    Some(p) => Some(BinaryMask::load_png(self.root.join(p))?),
                    None => None,
                };
                let dims_ok = real.same_shape(&fake_vae)
                    && real.same_shape(&fake_gan)
                    && real.height() == e.height
                    && real.width() == e.width
                    && mask
                        .as_ref()
                        .map_or(true, |m| m.height == e.height && m.width == e.width);
                if !dims_ok {
                    return Err(Error::Consistency(format!(
                        "entry {} is not aligned",
                        e.index
                    )));
                }
                real.ensure_aligned()?;
                Ok(Quad {
                    index: e.index,
                    seed: e.seed,
                    real,
                    fake_vae,
                    fake_gan,
                    mask,
                })
            })
            .collect()
    }
}

/// Generates the dataset and writes images and `manifest.jsonl` under `out`.
pub fn build_dataset(cfg: &DatasetConfig, out: impl AsRef<Path>) -> Result<DatasetManifest> {
    cfg.validate()?;
    let out = out.as_ref();
    for sub in ["real", "fake_vae", "fake_gan", "mask"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let entries: Vec<ManifestEntry> = (0..cfg.n as u64)
        .into_par_iter()
        .map(|i| {
            let q = generate_quad(cfg, cfg.first_index + i)?;
            let name = format!("{:05}.png", q.index);
            let rel = |sub: &str| format!("{sub}/{name}");
            q.real.save_png(out.join(rel("real")))?;
            q.fake_vae.save_png(out.join(rel("fake_vae")))?;
            q.fake_gan.save_png(out.join(rel("fake_gan")))?;
            let mask_path = match &q.mask {
                Some(m) => {
                    m.save_png(out.join(rel("mask")))?;
                    Some(rel("mask"))
                }
                None => None,
            };
            Ok(ManifestEntry {
                index: q.index,
                real_path: rel("real"),
                fake_vae_path: rel("fake_vae"),
                fake_gan_path: rel("fake_gan"),
                mask_path,
                seed: q.seed,
                height: cfg.height,
                width: cfg.width,
            })
        })
        .collect::<Result<_>>()?;
    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        header: ManifestHeader {
            generator_version: GENERATOR_VERSION.to_string(),
            config: cfg.clone(),
        },
        entries,
    };
    manifest.write()?;
    Ok(manifest)
}

/// Loads every PNG in `dir` (sorted by file name) as an anchor image,
/// center-cropped to the largest multiple of 8 on each side.
pub fn load_anchor_dir(dir: impl AsRef<Path>) -> Result<Vec<Image>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let img = Image::load_png(p)?;
            let (h, w) = (img.height() / 8 * 8, img.width() / 8 * 8);
            if h == 0 || w == 0 {
                return Err(Error::invalid(format!("{} is smaller than 8x8", p.display())));
            }
            img.center_crop(h, w)
        })
        .collect()
}
