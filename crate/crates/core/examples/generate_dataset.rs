//! Writes a small aligned dataset to disk and reads it back.
//!
//! Usage: `cargo run --example generate_dataset -- [out_dir] [n]`

use sef::forge::{build_dataset, DatasetConfig, DatasetManifest, MANIFEST_FILE};
use sef::metrics::mse;

fn main() -> sef::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = args.get(1).cloned().unwrap_or_else(|| "runs/example-data".into());
    let n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(16);

    let cfg = DatasetConfig::new(n, 64, 7);
    let manifest = build_dataset(&cfg, &out)?;
    println!("{} entries under {out} ({})", manifest.len(), manifest.generator_version());

    let loaded = DatasetManifest::read(std::path::Path::new(&out).join(MANIFEST_FILE))?;
    let quads = loaded.load()?;
    let augmented = quads.iter().filter(|q| q.mask.is_some()).count();
    println!("{augmented}/{n} entries carry a mask-augmented fake pair");

    println!("{:>6} {:>10} {:>10} {:>9}", "index", "mse(vae)", "mse(gan)", "coverage");
    for q in quads.iter().take(8) {
        let cov = q.mask.as_ref().map(|m| format!("{:.2}", m.coverage())).unwrap_or_else(|| "-".into());
        println!(
            "{:>6} {:>10.5} {:>10.5} {:>9}",
            q.index,
            mse(&q.real, &q.fake_vae)?,
            mse(&q.real, &q.fake_gan)?,
            cov
        );
    }
    Ok(())
}
