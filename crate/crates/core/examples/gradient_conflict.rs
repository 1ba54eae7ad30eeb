//! Cosine between the VAE-source and GAN-source gradients during the first
//! iterations of mixed training, and a first-order check of the loss change.
//!
//! Usage: `cargo run --example gradient_conflict -- [iters] [seed]`

use sef::conflict::{run_conflict_probe, taylor_diagnostic, ProbeOptions};
use sef::forge::{generate_quads, DatasetConfig};
use sef::train::TrainConfig;

fn main() -> sef::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::desk_scale()
    };
    let data = generate_quads(&DatasetConfig::new(200, 72, 5))?;

    let report = run_conflict_probe(
        &cfg,
        &data,
        &ProbeOptions {
            iters,
            ..ProbeOptions::default()
        },
    )?;
    for s in report.steps.iter().take(10) {
        println!(
            "iter {:>2}  cos {:+.3}  |g_vae| {:.2e}  |g_gan| {:.2e}",
            s.iter, s.cosine, s.norm_vae, s.norm_gan
        );
    }
    println!("{}", report.summary());

    let t = taylor_diagnostic(&cfg, &data, 20, 1e-5)?;
    println!(
        "first-order prediction of the VAE loss change: sign agreement {:.0}%, correlation {}",
        100.0 * t.sign_agreement,
        t.correlation.map_or("n/a".into(), |c| format!("{c:.4}"))
    );
    Ok(())
}
