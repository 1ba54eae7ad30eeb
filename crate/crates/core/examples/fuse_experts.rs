//! Two experts fused by a gate: trains both, runs stage 2 and shows where
//! the gate routes each kind of image.
//!
//! Usage: `cargo run --example fuse_experts -- [stage1_micro_batches] [stage2_micro_batches]`

use sef::evalbench::{evaluate, PerturbationSpec, SefDetector};
use sef::forge::{generate_quads, ArtifactDomain, DatasetConfig, Quad};
use sef::model::{forward_sef, Backbone};
use sef::train::{center_crop_flat, train_expert, train_sef, TrainConfig};

fn main() -> sef::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let s1: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(128);
    let s2: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(64);
    let cfg = TrainConfig {
        stage1_iters: s1,
        stage2_iters: s2,
        ..TrainConfig::desk_scale()
    };
    let train = generate_quads(&DatasetConfig::new(200, 72, 2))?;
    let test = generate_quads(&DatasetConfig::new(100, 72, 2).held_out())?;

    let ev = train_expert(ArtifactDomain::VaeSim, &cfg, &train)?.expert;
    let es = train_expert(ArtifactDomain::GanSim, &cfg, &train)?.expert;
    let run = train_sef(&ev, &es, &cfg, &train)?;
    println!(
        "stage 2: loss {:.4} -> {:.4}, adapters of blocks {}.. trained at {:.0e}",
        run.records[0].loss,
        run.records.last().map_or(f64::NAN, |r| r.loss),
        run.model.lora_from(),
        cfg.lr * cfg.gamma
    );

    let mcfg = cfg.model_config();
    let backbone = Backbone::<f32>::new(&mcfg)?;
    let pick: [(&str, fn(&Quad) -> &sef::imagelab::Image); 3] = [
        ("real", |q| &q.real),
        ("vae_sim", |q| &q.fake_vae),
        ("gan_sim", |q| &q.fake_gan),
    ];
    for (name, f) in pick {
        let mut images = Vec::new();
        for q in &test[..32] {
            images.extend(center_crop_flat(f(q), mcfg.image_size)?);
        }
        let out = forward_sef(&backbone, &run.model, &images, 32, None)?;
        let mean_w = out.w.iter().map(|&w| w as f64).sum::<f64>() / 32.0;
        println!("{name:<8} mean gate weight on the GAN expert {mean_w:.3}");
    }

    let det = SefDetector::new(&mcfg, run.model)?;
    for r in evaluate(&det, &test, &PerturbationSpec::none())? {
        println!("{:<8} balanced accuracy {:.2}", r.domain.name(), r.balanced_accuracy);
    }
    Ok(())
}
