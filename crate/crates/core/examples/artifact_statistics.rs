//! Corpus statistics of procedural anchors and both simulated fake families.
//!
//! Usage: `cargo run --release --example artifact_statistics -- [n] [size]`

use std::time::Instant;

use rayon::prelude::*;
use sef::forge::{gen_procedural_real, simulate_gan_artifact, simulate_vae_artifact};
use sef::imagelab::{fft_power_spectrum, to_grayscale, Image};
use sef::metrics::{corpus_profile, radar_scores, Metric, DEFAULT_RADAR_ALPHA};

fn nyquist_peak(real: &Image, fake: &Image) -> bool {
    let s_r = fft_power_spectrum(&to_grayscale(real).unwrap()).unwrap();
    let s_f = fft_power_spectrum(&to_grayscale(fake).unwrap()).unwrap();
    let (h, w) = (real.height() / 2, real.width() / 2);
    s_f.at_frequency(h as isize, 0) > s_r.at_frequency(h as isize, 0)
        && s_f.at_frequency(0, w as isize) > s_r.at_frequency(0, w as isize)
}

fn main() -> sef::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let size: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(64);
    let t = Instant::now();
    let triples: Vec<(Image, Image, Image)> = (0..n)
        .into_par_iter()
        .map(|seed| {
            let real = gen_procedural_real(seed, size, size)?;
            let vae = simulate_vae_artifact(&real)?;
            let gan = simulate_gan_artifact(&real)?;
            Ok((real, vae, gan))
        })
        .collect::<sef::Result<_>>()?;
    let reals: Vec<Image> = triples.iter().map(|t| t.0.clone()).collect();
    let vaes: Vec<Image> = triples.iter().map(|t| t.1.clone()).collect();
    let gans: Vec<Image> = triples.iter().map(|t| t.2.clone()).collect();
    let p_real = corpus_profile(&reals, Some(&reals))?;
    let p_vae = corpus_profile(&vaes, Some(&reals))?;
    let p_gan = corpus_profile(&gans, Some(&reals))?;
    let peaks = triples.iter().filter(|(r, _, g)| nyquist_peak(r, g)).count();

    println!("{:<15} {:>12} {:>12} {:>12}", "metric", "real", "vae_sim", "gan_sim");
    for m in Metric::ALL {
        let f = |p: &sef::metrics::MetricProfile| p.get(m).map_or("-".into(), |v| format!("{v:.4}"));
        println!("{:<15} {:>12} {:>12} {:>12}", m.name(), f(&p_real), f(&p_vae), f(&p_gan));
    }
    let (s_vae, s_gan) = radar_scores(&p_real, &p_vae, &p_gan, DEFAULT_RADAR_ALPHA)?;
    println!("\nradar proximity (alpha {DEFAULT_RADAR_ALPHA})");
    for m in Metric::ALL {
        if let (Some(a), Some(b)) = (s_vae.get(m), s_gan.get(m)) {
            println!("{:<15} {:>12.4} {:>12.4}", m.name(), a, b);
        }
    }
    println!("\nnyquist peak on {peaks}/{n} anchors; {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
