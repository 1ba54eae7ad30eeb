use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imagelab::Image;

/// Lattice cell sizes (pixels) and base amplitudes of the value-noise octaves.
const OCTAVES: [(usize, f32); 5] = [(32, 0.20), (16, 0.14), (8, 0.10), (4, 0.08), (2, 0.07)];

fn smoothstep(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

/// One octave of value noise on an `h×w` grid with lattice spacing `cell`.
fn value_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, cell: usize) -> Vec<f32> {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let lattice: Vec<f32> = (0..gh * gw).map(|_| rng.gen::<f32>() * 2.0 - 1.0).collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let (gy, ty) = (y / cell, smoothstep((y % cell) as f32 / cell as f32));
        for x in 0..w {
            let (gx, tx) = (x / cell, smoothstep((x % cell) as f32 / cell as f32));
            let l = |j: usize, i: usize| lattice[j * gw + i];
            let top = l(gy, gx) * (1.0 - tx) + l(gy, gx + 1) * tx;
            let bot = l(gy + 1, gx) * (1.0 - tx) + l(gy + 1, gx + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

fn random_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)]
}

/// Deterministic textured stand-in for a natural photograph.
///
/// A smooth two-color gradient, 2–6 hard-edged rectangles/ellipses, and a
/// multi-octave value-noise texture (shared luminance plus weaker per-channel
/// chroma noise) are layered and clamped to `[0, 1]`.
pub fn gen_procedural_real(seed: u64, h: usize, w: usize) -> Result<Image> {
    if h % 8 != 0 || w % 8 != 0 || h < 32 || w < 32 {
        return Err(Error::invalid(format!(
            "procedural images need sides that are multiples of 8 and at least 32, got {h}x{w}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // gradient background
    let c0 = random_color(&mut rng);
    let c1 = random_color(&mut rng);
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (dy, dx) = (angle.sin(), angle.cos());
    let span = (h as f32).hypot(w as f32);
    let mut px = vec![0f32; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let t = (((y as f32 - h as f32 / 2.0) * dy + (x as f32 - w as f32 / 2.0) * dx) / span
                + 0.5)
                .clamp(0.0, 1.0);
            for c in 0..3 {
                px[(y * w + x) * 3 + c] = c0[c] * (1.0 - t) + c1[c] * t;
            }
        }
    }

    // shapes
    let n_shapes = rng.gen_range(2..=6);
    for _ in 0..n_shapes {
        let color = random_color(&mut rng);
        let cy = rng.gen_range(0.0..h as f32);
        let cx = rng.gen_range(0.0..w as f32);
        let ry = rng.gen_range(0.08..0.3) * h as f32;
        let rx = rng.gen_range(0.08..0.3) * w as f32;
        let ellipse = rng.gen_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let (ny, nx) = ((y as f32 - cy) / ry, (x as f32 - cx) / rx);
                let inside = if ellipse {
                    ny * ny + nx * nx <= 1.0
                } else {
                    ny.abs() <= 1.0 && nx.abs() <= 1.0
                };
                if inside {
                    px[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&color);
                }
            }
        }
    }

    // texture
    let roughness: f32 = rng.gen_range(0.8..1.3);
    for &(cell, amp) in &OCTAVES {
        let luma = value_noise(&mut rng, h, w, cell);
        let chroma: Vec<Vec<f32>> = (0..3).map(|_| value_noise(&mut rng, h, w, cell)).collect();
        for i in 0..h * w {
            for c in 0..3 {
                px[i * 3 + c] += roughness * amp * (luma[i] + 0.35 * chroma[c][i]);
            }
        }
    }

    Image::from_clamped(h, w, 3, px)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{mse, sharpness};

    #[test]
    fn deterministic_per_seed() {
        let a = gen_procedural_real(42, 64, 64).unwrap();
        let b = gen_procedural_real(42, 64, 64).unwrap();
        assert_eq!(a, b);
        let c = gen_procedural_real(43, 64, 64).unwrap();
        assert!(mse(&a, &c).unwrap() > 0.0);
    }

    #[test]
    fn textured() {
        for seed in 0..10 {
            let img = gen_procedural_real(seed, 64, 72).unwrap();
            assert_eq!(img.dims(), (64, 72, 3));
            assert!(sharpness(&img).unwrap() > 0.0);
        }
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(gen_procedural_real(0, 60, 64).is_err());
        assert!(gen_procedural_real(0, 24, 64).is_err());
    }
}
