use rustfft::{num_complex::Complex, FftPlanner};

use super::Image;
use crate::error::{Error, Result};

/// Centered 2D power spectrum; `power[(y, x)]` holds `|F(u, v)|²` with the
/// zero frequency at `(height/2, width/2)`.
#[derive(Clone, Debug)]
pub struct SpectrumGrid {
    pub height: usize,
    pub width: usize,
    pub power: Vec<f64>,
}

impl SpectrumGrid {
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.power[y * self.width + x]
    }

    /// Power at signed frequency `(fy, fx)`, wrapping negative indices.
    pub fn at_frequency(&self, fy: isize, fx: isize) -> f64 {
        let y = (fy + (self.height / 2) as isize).rem_euclid(self.height as isize) as usize;
        let x = (fx + (self.width / 2) as isize).rem_euclid(self.width as isize) as usize;
        self.get(y, x)
    }

    pub fn dc(&self) -> f64 {
        self.get(self.height / 2, self.width / 2)
    }

    pub fn total(&self) -> f64 {
        self.power.iter().sum()
    }
}

/// Magnitude-squared 2D DFT (unnormalized), zero frequency centered.
pub fn fft_power_spectrum(img: &Image) -> Result<SpectrumGrid> {
    if img.channels() != 1 {
        return Err(Error::invalid("fft_power_spectrum needs a single-channel image"));
    }
    let (h, w, _) = img.dims();
    let mut buf: Vec<Complex<f64>> = img
        .data()
        .iter()
        .map(|&s| Complex::new(s as f64, 0.0))
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(w);
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(h);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }

    let mut power = vec![0f64; h * w];
    for v in 0..h {
        for u in 0..w {
            let cy = (v + h / 2) % h;
            let cx = (u + w / 2) % w;
            power[cy * w + cx] = buf[v * w + u].norm_sqr();
        }
    }
    Ok(SpectrumGrid {
        height: h,
        width: w,
        power,
    })
}
