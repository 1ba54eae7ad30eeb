use jpeg_encoder::{ColorType, Encoder, SamplingFactor};

use super::Image;
use crate::error::{Error, Result};

/// Encodes to baseline JPEG at `quality` and decodes back.
///
/// Chroma is subsampled 4:2:0 below quality 90 and kept at 4:4:4 otherwise.
pub fn jpeg_roundtrip(img: &Image, quality: u8) -> Result<Image> {
    if !(1..=100).contains(&quality) {
        return Err(Error::invalid(format!("jpeg quality {quality} outside 1..=100")));
    }
    if img.channels() != 3 {
        return Err(Error::invalid("jpeg_roundtrip needs a 3-channel image"));
    }
    let (h, w, _) = img.dims();
    let (w16, h16) = (
        u16::try_from(w).map_err(|_| Error::invalid("image too wide for jpeg"))?,
        u16::try_from(h).map_err(|_| Error::invalid("image too tall for jpeg"))?,
    );

    let mut bytes = Vec::new();
    let mut encoder = Encoder::new(&mut bytes, quality);
    encoder.set_sampling_factor(if quality < 90 {
        SamplingFactor::R_4_2_0
    } else {
        SamplingFactor::R_4_4_4
    });
    encoder
        .encode(&img.to_u8(), w16, h16, ColorType::Rgb)
        .map_err(|e| Error::Codec(format!("jpeg encode: {e}")))?;

    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Jpeg)
        .map_err(|e| Error::Codec(format!("jpeg decode: {e}")))?
        .to_rgb8();
    if decoded.width() as usize != w || decoded.height() as usize != h {
        return Err(Error::Codec("jpeg decode changed dimensions".into()));
    }
    Image::from_u8(h, w, 3, decoded.as_raw())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::mse;

    fn textured() -> Image {
        Image::from_fn(48, 40, 3, |y, x, c| {
            let v = ((y * 37 + x * 91 + c * 13) * 2654435761usize) >> 7;
            (v % 256) as f32 / 255.0
        })
        .unwrap()
    }

    #[test]
    fn near_lossless_at_100() {
        let img = Image::from_fn(32, 32, 3, |y, x, c| (y + x + 4 * c) as f32 / 80.0).unwrap();
        let out = jpeg_roundtrip(&img, 100).unwrap();
        let worst = img
            .data()
            .iter()
            .zip(out.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0f32, f32::max);
        assert!(worst < 0.02, "worst error {worst}");
    }

    #[test]
    fn lower_quality_means_more_error() {
        let img = textured();
        let lo = mse(&img, &jpeg_roundtrip(&img, 10).unwrap()).unwrap();
        let hi = mse(&img, &jpeg_roundtrip(&img, 75).unwrap()).unwrap();
        assert!(lo > hi, "q10 {lo} vs q75 {hi}");
    }

    #[test]
    fn dims_preserved_and_quality_checked() {
        let img = textured();
        assert_eq!(jpeg_roundtrip(&img, 50).unwrap().dims(), img.dims());
        assert!(jpeg_roundtrip(&img, 0).is_err());
        assert!(jpeg_roundtrip(&img, 101).is_err());
        assert!(jpeg_roundtrip(&img.channel(0), 50).is_err());
    }
}
