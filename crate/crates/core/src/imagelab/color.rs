use super::Image;
use crate::error::{Error, Result};

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn require_rgb(img: &Image, op: &str) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::invalid(format!(
            "{op} needs a 3-channel image, got {}",
            img.channels()
        )));
    }
    Ok(())
}

/// ITU-R BT.601 luma: `0.299R + 0.587G + 0.114B`.
pub fn to_grayscale(img: &Image) -> Result<Image> {
    require_rgb(img, "to_grayscale")?;
    let data = img
        .data()
        .chunks_exact(3)
        .map(|px| {
            (LUMA[0] * px[0] as f64 + LUMA[1] * px[1] as f64 + LUMA[2] * px[2] as f64) as f32
        })
        .collect();
    Image::from_clamped(img.height(), img.width(), 1, data)
}

/// Per-pixel HSV saturation `(max − min) / max`, zero where `max = 0`.
pub fn rgb_to_hsv_saturation(img: &Image) -> Result<Image> {
    require_rgb(img, "rgb_to_hsv_saturation")?;
    let data = img
        .data()
        .chunks_exact(3)
        .map(|px| {
            let max = px[0].max(px[1]).max(px[2]);
            let min = px[0].min(px[1]).min(px[2]);
            if max <= 0.0 {
                0.0
            } else {
                (max - min) / max
            }
        })
        .collect();
    Image::from_clamped(img.height(), img.width(), 1, data)
}

/// Multiplies HSV saturation by `factor` while keeping hue and value fixed.
///
/// With `V = max(R,G,B)`, each channel becomes `V − factor·(V − c)`.
pub fn scale_saturation(img: &Image, factor: f32) -> Result<Image> {
    require_rgb(img, "scale_saturation")?;
    if !(0.0..=1.0).contains(&factor) {
        return Err(Error::invalid("saturation factor must lie in [0, 1]"));
    }
    let mut data = Vec::with_capacity(img.data().len());
    for px in img.data().chunks_exact(3) {
        let v = px[0].max(px[1]).max(px[2]);
        for &c in px {
            data.push(v - factor * (v - c));
        }
    }
    Image::from_clamped(img.height(), img.width(), 3, data)
}
