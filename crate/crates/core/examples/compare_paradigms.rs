//! Experts, mixed training and SEF side by side over several seeds.
//!
//! The full desk-scale run (5 seeds) takes about half an hour on one core;
//! `quick` shrinks every budget for a smoke run.
//!
//! Usage: `cargo run --example compare_paradigms -- [quick|full] [seeds]`

use sef::evalbench::{run_paradigm_comparison, ComparisonConfig};

fn main() -> sef::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let quick = args.get(1).map_or(true, |m| m != "full");
    let n_seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(if quick { 3 } else { 5 });

    let mut cfg = ComparisonConfig::desk_scale();
    if quick {
        cfg.train.stage1_iters = 64;
        cfg.train.stage2_iters = 32;
        cfg.n_train = 100;
        cfg.n_test = 50;
    }
    let (train, test) = (cfg.train_data()?, cfg.test_data()?);
    let seeds: Vec<u64> = (0..n_seeds).collect();
    let table = run_paradigm_comparison(&cfg, &train, &test, &seeds, |c| {
        eprintln!("seed {} {:<10} {:<8} {:.2}", c.seed, c.paradigm.name(), c.domain.name(), c.balanced_accuracy);
    })?;
    print!("{}", table.to_text());
    let p = table.pattern();
    println!(
        "expert margins over mixed: vae {:+.2}, gan {:+.2}; sef gain {:+.2}; sef gap to specialists: vae {:.2}, gan {:.2}",
        p.expert_vae_margin, p.expert_gan_margin, p.sef_gain, p.sef_gap_vae, p.sef_gap_gan
    );
    Ok(())
}
