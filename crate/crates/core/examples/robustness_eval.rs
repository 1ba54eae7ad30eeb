//! Balanced accuracy of an expert under each test-time perturbation.
//!
//! Usage: `cargo run --example robustness_eval -- [micro_batches] [p]`

use sef::evalbench::{evaluate, ExpertDetector, PerturbationSpec};
use sef::forge::{generate_quads, ArtifactDomain, DatasetConfig};
use sef::train::{train_expert, TrainConfig};

fn main() -> sef::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(128);
    let p: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let cfg = TrainConfig {
        stage1_iters: iters,
        ..TrainConfig::desk_scale()
    };
    let train = generate_quads(&DatasetConfig::new(200, 72, 3))?;
    let test = generate_quads(&DatasetConfig::new(100, 72, 3).held_out())?;
    let expert = train_expert(ArtifactDomain::GanSim, &cfg, &train)?.expert;
    let det = ExpertDetector::new(&cfg.model_config(), expert)?;

    println!("{:<10} {:>8} {:>8}", "perturb", "vae_sim", "gan_sim");
    for list in ["none", "blur", "crop", "jpeg", "noise", "all"] {
        let spec = PerturbationSpec {
            p,
            seed: 99,
            ..PerturbationSpec::parse(list)?
        };
        let r = evaluate(&det, &test, &spec)?;
        println!("{list:<10} {:>8.2} {:>8.2}", r[0].balanced_accuracy, r[1].balanced_accuracy);
    }
    Ok(())
}
