use super::Image;
use crate::error::{Error, Result};

/// Catmull-Rom cubic weight (`a = −0.5`).
#[inline]
fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Source taps and weights for one output coordinate along one axis.
struct Taps {
    index: Vec<[usize; 4]>,
    weight: Vec<[f64; 4]>,
}

fn cubic_taps(len_in: usize, len_out: usize) -> Taps {
    let scale = len_in as f64 / len_out as f64;
    let mut index = Vec::with_capacity(len_out);
    let mut weight = Vec::with_capacity(len_out);
    for o in 0..len_out {
        let src = (o as f64 + 0.5) * scale - 0.5;
        let base = src.floor();
        let frac = src - base;
        let mut idx = [0usize; 4];
        let mut w = [0f64; 4];
        for k in 0..4 {
            let off = k as f64 - 1.0;
            let i = (base + off).clamp(0.0, (len_in - 1) as f64) as usize;
            idx[k] = i;
            w[k] = cubic_weight(frac - off);
        }
        index.push(idx);
        weight.push(w);
    }
    Taps { index, weight }
}

/// Separable Catmull-Rom resize with edge clamping and output clamped to `[0, 1]`.
pub fn resize_bicubic(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize target must be at least 1x1"));
    }
    let (h, w, c) = img.dims();
    let tx = cubic_taps(w, out_w);
    let ty = cubic_taps(h, out_h);
    let src = img.data();

    // horizontal pass into f64 to avoid a second rounding
    let mut tmp = vec![0f64; h * out_w * c];
    for y in 0..h {
        for ox in 0..out_w {
            for ch in 0..c {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += tx.weight[ox][k] * src[(y * w + tx.index[ox][k]) * c + ch] as f64;
                }
                tmp[(y * out_w + ox) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0f32; out_h * out_w * c];
    for oy in 0..out_h {
        for ox in 0..out_w {
            for ch in 0..c {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += ty.weight[oy][k] * tmp[(ty.index[oy][k] * out_w + ox) * c + ch];
                }
                out[(oy * out_w + ox) * c + ch] = acc as f32;
            }
        }
    }
    Image::from_clamped(out_h, out_w, c, out)
}

/// Half-pixel-centered bilinear resize with edge clamping.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize target must be at least 1x1"));
    }
    let (h, w, c) = img.dims();
    let axis = |len_in: usize, len_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = len_in as f64 / len_out as f64;
        (0..len_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len_in - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(len_in - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let ax = axis(w, out_w);
    let ay = axis(h, out_h);
    let src = img.data();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, fy) in &ay {
        for &(x0, x1, fx) in &ax {
            for ch in 0..c {
                let p = |y: usize, x: usize| src[(y * w + x) * c + ch] as f64;
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bot * fy) as f32);
            }
        }
    }
    Image::from_clamped(out_h, out_w, c, out)
}

/// Non-overlapping `factor×factor` mean pooling; sides must divide evenly.
pub fn average_pool(img: &Image, factor: usize) -> Result<Image> {
    let (h, w, c) = img.dims();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::invalid(format!(
            "pool factor {factor} does not divide {h}x{w}"
        )));
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut acc = vec![0f64; oh * ow * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                acc[((y / factor) * ow + x / factor) * c + ch] += img.get(y, x, ch) as f64;
            }
        }
    }
    let norm = (factor * factor) as f64;
    Image::from_clamped(oh, ow, c, acc.into_iter().map(|s| (s / norm) as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let img = Image::filled(16, 24, 3, 0.37).unwrap();
        for (h, w) in [(4, 6), (16, 24), (33, 7), (64, 96)] {
            let out = resize_bicubic(&img, h, w).unwrap();
            assert!(out.data().iter().all(|&s| (s - 0.37).abs() < 1e-6));
            let out = resize_bilinear(&img, h, w).unwrap();
            assert!(out.data().iter().all(|&s| (s - 0.37).abs() < 1e-6));
        }
    }

    #[test]
    fn identity_resize() {
        let img = Image::from_fn(9, 13, 1, |y, x, _| ((y * 7 + x * 3) % 11) as f32 / 10.0).unwrap();
        let out = resize_bicubic(&img, 9, 13).unwrap();
        let max = img
            .data()
            .iter()
            .zip(out.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0f32, f32::max);
        assert!(max < 1e-6);
    }

    #[test]
    fn zero_target_rejected() {
        let img = Image::filled(8, 8, 1, 0.5).unwrap();
        assert!(resize_bicubic(&img, 0, 4).is_err());
        assert!(resize_bilinear(&img, 4, 0).is_err());
    }

    #[test]
    fn weights_partition_unity() {
        for i in 0..=20 {
            let f = i as f64 / 20.0;
            let s: f64 = (0..4).map(|k| cubic_weight(f - (k as f64 - 1.0))).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_averages_blocks() {
        let img = Image::from_fn(4, 4, 1, |y, x, _| if (y / 2 + x / 2) % 2 == 0 { 1.0 } else { 0.0 })
            .unwrap();
        let out = average_pool(&img, 2).unwrap();
        assert_eq!(out.data(), &[1.0, 0.0, 0.0, 1.0]);
        assert!(average_pool(&img, 3).is_err());
    }
}
