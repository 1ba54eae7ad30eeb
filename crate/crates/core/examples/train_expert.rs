//! Trains one single-domain expert on in-memory data, saves the checkpoint
//! and checks that it reloads to the same bytes.
//!
//! Usage: `cargo run --example train_expert -- [vae|gan] [micro_batches]`

use sef::evalbench::{evaluate, ExpertDetector, PerturbationSpec};
use sef::forge::{generate_quads, ArtifactDomain, DatasetConfig};
use sef::model::{load_checkpoint, save_checkpoint};
use sef::train::{train_expert, TrainConfig};

fn main() -> sef::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let domain: ArtifactDomain = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(ArtifactDomain::GanSim);
    let iters: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(128);

    let cfg = TrainConfig {
        stage1_iters: iters,
        ..TrainConfig::desk_scale()
    };
    let train = generate_quads(&DatasetConfig::new(200, 72, 1))?;
    let test = generate_quads(&DatasetConfig::new(100, 72, 1).held_out())?;

    let run = train_expert(domain, &cfg, &train)?;
    for r in run.records.iter().step_by((run.records.len() / 8).max(1)) {
        println!("step {:>4}  loss {:.4}  lr {:.2e}", r.step, r.loss, r.lr);
    }

    let path = std::env::temp_dir().join("sef-example-expert.ckpt");
    let ckpt = run.checkpoint();
    save_checkpoint(&ckpt, &path)?;
    let back = load_checkpoint(&path)?;
    assert_eq!(back.to_bytes()?, ckpt.to_bytes()?);
    println!("checkpoint round trip ok ({} bytes)", ckpt.to_bytes()?.len());

    let det = ExpertDetector::new(&cfg.model_config(), run.expert)?;
    for r in evaluate(&det, &test, &PerturbationSpec::none())? {
        println!("{:<8} balanced accuracy {:.2}", r.domain.name(), r.balanced_accuracy);
    }
    Ok(())
}
