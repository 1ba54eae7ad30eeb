use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagelab::Image;

const MAX_RETRIES: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    /// Ones on the sampled shapes.
    Foreground,
    /// Ones everywhere except the sampled shapes.
    Background,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub seed: u64,
    /// Allowed fraction of the image covered by the sampled shapes.
    pub coverage: (f64, f64),
}

impl MaskSpec {
    pub fn new(kind: MaskKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            coverage: (0.3, 0.7),
        }
    }
}

/// Per-pixel binary mask; `true` selects the fake image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            bits: vec![value; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::invalid("mask size mismatch"));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn coverage(&self) -> f64 {
        self.bits.iter().filter(|&&b| b).count() as f64 / self.bits.len() as f64
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Stored as an 8-bit gray PNG, 255 for ones.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let data = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Image::new(self.height, self.width, 1, data)?.save_png(path)
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<BinaryMask> {
        let img = Image::load_png(path)?;
        if img.channels() != 1 {
            return Err(Error::Format("mask png must be grayscale".into()));
        }
        let bits = img.data().iter().map(|&s| s >= 0.5).collect();
        BinaryMask::from_bits(img.height(), img.width(), bits)
    }
}

/// Union of 1–4 random rectangles/ellipses, resampled until the union's
/// coverage falls inside `spec.coverage`.
pub fn gen_mask(spec: &MaskSpec, h: usize, w: usize) -> Result<BinaryMask> {
    let (lo, hi) = spec.coverage;
    if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) || h == 0 || w == 0 {
        return Err(Error::invalid("mask coverage must be an interval inside [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..MAX_RETRIES {
        let shapes = sample_shapes(&mut rng, h, w);
        let mut bits = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                bits[y * w + x] = shapes.iter().any(|s| s.contains(y as f32 + 0.5, x as f32 + 0.5));
            }
        }
        let fg = BinaryMask::from_bits(h, w, bits)?;
        let cov = fg.coverage();
        if (lo..=hi).contains(&cov) {
            return Ok(match spec.kind {
                MaskKind::Foreground => fg,
                MaskKind::Background => fg.complement(),
            });
        }
    }
    Err(Error::Generation(format!(
        "no mask with coverage in [{lo}, {hi}] after {MAX_RETRIES} attempts"
    )))
}

struct Shape {
    cy: f32,
    cx: f32,
    ry: f32,
    rx: f32,
    ellipse: bool,
}

impl Shape {
    fn contains(&self, y: f32, x: f32) -> bool {
        let (ny, nx) = ((y - self.cy) / self.ry, (x - self.cx) / self.rx);
        if self.ellipse {
            ny * ny + nx * nx <= 1.0
        } else {
            ny.abs() <= 1.0 && nx.abs() <= 1.0
        }
    }
}

fn sample_shapes(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<Shape> {
    let n = rng.gen_range(1..=4);
    (0..n)
        .map(|_| Shape {
            cy: rng.gen_range(0.2..0.8) * h as f32,
            cx: rng.gen_range(0.2..0.8) * w as f32,
            ry: rng.gen_range(0.15..0.5) * h as f32,
            rx: rng.gen_range(0.15..0.5) * w as f32,
            ellipse: rng.gen_bool(0.5),
        })
        .collect()
}

/// `M⊙fake + (1−M)⊙real`, realized as exact per-pixel selection.
pub fn apply_mask_aug(fake: &Image, real: &Image, mask: &BinaryMask) -> Result<Image> {
    if !fake.same_shape(real) || mask.height != fake.height() || mask.width != fake.width() {
        return Err(Error::invalid(format!(
            "mask augmentation shape mismatch: fake {:?}, real {:?}, mask {}x{}",
            fake.dims(),
            real.dims(),
            mask.height,
            mask.width
        )));
    }
    let c = fake.channels();
    let data = fake
        .data()
        .chunks_exact(c)
        .zip(real.data().chunks_exact(c))
        .zip(mask.bits())
        .flat_map(|((f, r), &m)| if m { f } else { r }.iter().copied())
        .collect();
    Image::new(fake.height(), fake.width(), c, data)
}
