//! End-to-end acceptance checks. Runs without the libtest harness so every
//! check prints exactly one `PASS`/`FAIL` line; the process fails if any
//! check fails.
//!
//! `SEF_ACCEPT=3,8` runs a subset.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use sef::conflict::{run_conflict_probe, taylor_diagnostic, ProbeOptions};
use sef::evalbench::{
    apply_perturbations, run_paradigm_comparison, sample_blur_kernel, sample_crop_pct, sample_jpeg_quality,
    sample_noise_var, ComparisonConfig, PerturbationSpec,
};
use sef::forge::{
    apply_mask_aug, gen_mask, gen_procedural_real, generate_quads, simulate_gan_artifact, simulate_vae_artifact,
    ArtifactDomain, BinaryMask, DatasetConfig, MaskKind, MaskSpec,
};
use sef::imagelab::Image;
use sef::metrics::{corpus_profile, radar_scores, Metric, MetricProfile};
use sef::model::gradcheck::GradCheckTarget;
use sef::model::{fuse, gradient_check, Backbone, Expert, Gate, LoraSet, ModelConfig};
use sef::train::{train_expert, train_sef, TrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn() -> sef::Result<Outcome>;

fn main() {
    let only: Option<Vec<usize>> = std::env::var("SEF_ACCEPT")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let checks: [(&str, Check); 11] = [
        ("gradient contract", gradient_contract),
        ("adapter identity at init", adapter_identity),
        ("mask composite exactness", mask_composite),
        ("convex fusion", convex_fusion),
        ("radar arithmetic", radar_arithmetic),
        ("metric orderings", metric_orderings),
        ("perturbation supports", perturbation_supports),
        ("paradigm pattern", paradigm_pattern),
        ("conflict probe", conflict_probe),
        ("freeze discipline", freeze_discipline),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let out = check().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        let secs = t.elapsed().as_secs_f64();
        println!(
            "[{:>2}] {:<26} {}  {} ({secs:.1}s)",
            id,
            name,
            if out.pass { "PASS" } else { "FAIL" },
            out.detail
        );
        if !out.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}

fn gradient_contract() -> sef::Result<Outcome> {
    let t = Instant::now();
    let cfg = ModelConfig::tiny();
    let mut worst = 0.0f64;
    let mut frozen = 0.0f64;
    let mut coords = 0;
    for target in [GradCheckTarget::Linear, GradCheckTarget::Expert, GradCheckTarget::Sef] {
        for seed in 0..3 {
            let r = gradient_check(target, &cfg, seed, 300)?;
            worst = worst.max(r.max_rel_error);
            frozen = frozen.max(r.frozen_max_abs);
            coords += r.coordinates;
        }
    }
    let elapsed = t.elapsed();
    Ok(Outcome::new(
        worst < 1e-3 && frozen == 0.0 && elapsed < Duration::from_secs(60),
        format!("max rel err {worst:.2e} over {coords} coords, frozen max |g| {frozen:e}"),
    ))
}

fn random_images(n: usize, cfg: &ModelConfig, rng: &mut impl Rng) -> Vec<f32> {
    (0..n * cfg.image_len()).map(|_| rng.gen::<f32>()).collect()
}

fn adapter_identity() -> sef::Result<Outcome> {
    let cfg = ModelConfig::default();
    let backbone = Backbone::<f32>::new(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 16;
    let images = random_images(n, &cfg, &mut rng);
    let mut worst = 0.0f32;
    for seed in 0..4 {
        let expert = Expert::<f32>::fresh(&cfg, None, seed);
        let (plain, _) = backbone.forward(&images, n, None, None)?;
        let lora = LoraSet::fresh(&cfg, seed + 100);
        let (adapted, _) = backbone.forward(&images, n, Some(&lora), None)?;
        let a = expert.head.forward(&plain, n);
        let b = expert.head.forward(&adapted, n);
        worst = a.iter().zip(&b).fold(worst, |m, (x, y)| m.max((x - y).abs()));
    }
    Ok(Outcome::new(worst <= 1e-6, format!("max logit change {worst:e}")))
}

fn mask_composite() -> sef::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0usize;
    for i in 0..100u64 {
        let (h, w) = (8 * rng.gen_range(4..9), 8 * rng.gen_range(4..9));
        let real = Image::new(h, w, 3, (0..h * w * 3).map(|_| rng.gen::<f32>()).collect())?;
        let fake = Image::new(h, w, 3, (0..h * w * 3).map(|_| rng.gen::<f32>()).collect())?;
        let kind = if i % 2 == 0 { MaskKind::Foreground } else { MaskKind::Background };
        let mask = gen_mask(&MaskSpec::new(kind, i), h, w)?;
        let out = apply_mask_aug(&fake, &real, &mask)?;
        for y in 0..h {
            for x in 0..w {
                let src = if mask.get(y, x) { &fake } else { &real };
                for c in 0..3 {
                    if out.get(y, x, c).to_bits() != src.get(y, x, c).to_bits() {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    let real = gen_procedural_real(1, 32, 32)?;
    let fake = simulate_gan_artifact(&real)?;
    let ones = BinaryMask::filled(32, 32, true);
    let edges = apply_mask_aug(&fake, &real, &ones)? == fake && apply_mask_aug(&fake, &real, &ones.complement())? == real;
    Ok(Outcome::new(
        mismatches == 0 && edges,
        format!("100 triples, {mismatches} mismatched samples, edge cases exact: {edges}"),
    ))
}

fn convex_fusion() -> sef::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut outside = 0;
    let mut unit_fail = 0;
    for _ in 0..1000 {
        let d = rng.gen_range(1..65);
        let f1: Vec<f32> = (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let f2: Vec<f32> = (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let w: f32 = rng.gen();
        let f = fuse(&f1, &f2, w)?;
        for ((&a, &b), &v) in f1.iter().zip(&f2).zip(&f) {
            if v < a.min(b) || v > a.max(b) {
                outside += 1;
            }
        }
        if (1.0 - w) + w != 1.0 {
            unit_fail += 1;
        }
    }
    // gate outputs on ordinary and extreme inputs
    let cfg = ModelConfig::default();
    let gate = Gate::<f32>::fresh(&cfg, 4);
    let mut inputs = Vec::new();
    for scale in [1.0f32, 1e3, 1e6, 1e30] {
        for _ in 0..64 {
            inputs.extend((0..2 * cfg.embed_dim).map(|_| scale * rng.gen_range(-1.0f32..1.0)));
        }
    }
    let n = inputs.len() / (2 * cfg.embed_dim);
    let w = gate.forward(&inputs, n);
    let mut strong = gate.clone();
    for v in strong.fc2.w.iter_mut() {
        *v *= 1e6;
    }
    let w2 = strong.forward(&inputs, n);
    let bad_w = w.iter().chain(&w2).filter(|&&x| !(x > 0.0 && x < 1.0)).count();
    let unit_gate = w.iter().chain(&w2).filter(|&&x| (1.0 - x) + x != 1.0).count();
    Ok(Outcome::new(
        outside == 0 && unit_fail == 0 && bad_w == 0 && unit_gate == 0,
        format!(
            "{outside} coords outside their segment, {bad_w}/{} gate weights outside (0,1), {} partitions != 1",
            2 * n,
            unit_fail + unit_gate
        ),
    ))
}

fn mse_profile(mse: f64) -> MetricProfile {
    MetricProfile {
        mse: Some(mse),
        psnr: None,
        hf_ratio: 0.0,
        sharpness: 0.0,
        saturation: 0.0,
        tex_entropy: 0.0,
        edge_skew: 0.0,
        dct_blockiness: 0.0,
    }
}

fn radar_arithmetic() -> sef::Result<Outcome> {
    let alpha = 1.2;
    let (v, g) = radar_scores(&mse_profile(0.0), &mse_profile(0.0043), &mse_profile(0.0085), alpha)?;
    let (sv, sg) = (v.get(Metric::Mse).unwrap(), g.get(Metric::Mse).unwrap());
    let worst_exact = sg == 1.0 - 1.0 / alpha;
    Ok(Outcome::new(
        (sv - 0.5784).abs() <= 1e-3 && (sg - 0.1667).abs() <= 1e-3 && worst_exact,
        format!("vae {sv:.4}, gan {sg:.4}, worst candidate exactly 1-1/alpha: {worst_exact}"),
    ))
}

fn metric_orderings() -> sef::Result<Outcome> {
    let t = Instant::now();
    let triples: Vec<(Image, Image, Image)> = (0..1000u64)
        .into_par_iter()
        .map(|s| {
            let r = gen_procedural_real(s, 64, 64)?;
            let v = simulate_vae_artifact(&r)?;
            let g = simulate_gan_artifact(&r)?;
            Ok((r, v, g))
        })
        .collect::<sef::Result<_>>()?;
    let reals: Vec<Image> = triples.iter().map(|t| t.0.clone()).collect();
    let vaes: Vec<Image> = triples.iter().map(|t| t.1.clone()).collect();
    let gans: Vec<Image> = triples.iter().map(|t| t.2.clone()).collect();
    let pr = corpus_profile(&reals, None)?;
    let pv = corpus_profile(&vaes, Some(&reals))?;
    let pg = corpus_profile(&gans, Some(&reals))?;
    let (mv, mg) = (pv.mse.unwrap(), pg.mse.unwrap());
    let ok = mv < mg
        && pr.sharpness > pv.sharpness
        && pr.sharpness > pg.sharpness
        && pr.hf_ratio > pv.hf_ratio
        && pr.hf_ratio > pg.hf_ratio
        && pg.saturation < pr.saturation;
    let elapsed = t.elapsed();
    Ok(Outcome::new(
        ok && elapsed < Duration::from_secs(300),
        format!(
            "mse {mv:.4}<{mg:.4}, sharpness {:.0}>{:.0},{:.0}, hf {:.4}>{:.4},{:.4}, saturation {:.4}<{:.4}",
            pr.sharpness, pv.sharpness, pg.sharpness, pr.hf_ratio, pv.hf_ratio, pg.hf_ratio, pg.saturation, pr.saturation
        ),
    ))
}

fn perturbation_supports() -> sef::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 10_000;
    let blur_ok = (0..n).all(|_| [3, 5, 7, 9].contains(&sample_blur_kernel(&mut rng)));
    let crop_ok = (0..n).all(|_| (5.0..=20.0).contains(&sample_crop_pct(&mut rng)));
    let jpeg_ok = (0..n).all(|_| (10..=75).contains(&sample_jpeg_quality(&mut rng)));
    let noise_ok = (0..n).all(|_| (5.0..=20.0).contains(&sample_noise_var(&mut rng)));
    let spec = PerturbationSpec {
        p: 0.5,
        ..PerturbationSpec::all()
    };
    let img = gen_procedural_real(2, 32, 32)?;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        let (_, a) = apply_perturbations(&img, &spec, &mut rng)?;
        counts[0] += a.blur_kernel.is_some() as usize;
        counts[1] += a.crop_pct.is_some() as usize;
        counts[2] += a.jpeg_quality.is_some() as usize;
        counts[3] += a.noise_var.is_some() as usize;
    }
    let rates: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let rates_ok = rates.iter().all(|r| (0.48..=0.52).contains(r));
    Ok(Outcome::new(
        blur_ok && crop_ok && jpeg_ok && noise_ok && rates_ok,
        format!(
            "supports blur {blur_ok} crop {crop_ok} jpeg {jpeg_ok} noise {noise_ok}; rates {:.3}/{:.3}/{:.3}/{:.3}",
            rates[0], rates[1], rates[2], rates[3]
        ),
    ))
}

fn paradigm_pattern() -> sef::Result<Outcome> {
    let t = Instant::now();
    let cfg = ComparisonConfig::desk_scale();
    let (train, test) = (cfg.train_data()?, cfg.test_data()?);
    let seeds: Vec<u64> = (0..5).collect();
    let table = run_paradigm_comparison(&cfg, &train, &test, &seeds, |c| {
        eprintln!(
            "    seed {} {:<10} {:<8} {:.2}",
            c.seed,
            c.paradigm.name(),
            c.domain.name(),
            c.balanced_accuracy
        );
    })?;
    let elapsed = t.elapsed();
    eprint!("{}", table.to_text());
    let p = table.pattern();
    let a = p.expert_vae_margin > 0.0 && p.expert_gan_margin > 0.0;
    let b = p.sef_gain >= 2.0;
    let c = p.sef_gap_vae <= 3.0 && p.sef_gap_gan <= 3.0;
    let in_time = elapsed < Duration::from_secs(45 * 60);
    Ok(Outcome::new(
        a && b && c && in_time,
        format!(
            "(a) {} expert margins vae {:+.2} gan {:+.2}; (b) {} sef gain {:+.2}; (c) {} gaps vae {:.2} gan {:.2}; {:.1} min",
            pf(a),
            p.expert_vae_margin,
            p.expert_gan_margin,
            pf(b),
            p.sef_gain,
            pf(c),
            p.sef_gap_vae,
            p.sef_gap_gan,
            elapsed.as_secs_f64() / 60.0
        ),
    ))
}

fn pf(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "fail"
    }
}

fn conflict_probe() -> sef::Result<Outcome> {
    let data = generate_quads(&DatasetConfig::new(200, 72, 5))?;
    let mut with_conflict = 0;
    let mut abs_cos = Vec::new();
    let mut agreement = Vec::new();
    for seed in 0..5 {
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::desk_scale()
        };
        let r = run_conflict_probe(&cfg, &data, &ProbeOptions::default())?;
        if r.conflict_fraction > 0.0 {
            with_conflict += 1;
        }
        abs_cos.push(r.mean_abs_cosine);
        agreement.push(taylor_diagnostic(&cfg, &data, 50, 1e-5)?.sign_agreement);
    }
    let mean_abs = abs_cos.iter().sum::<f64>() / abs_cos.len() as f64;
    let min_agree = agreement.iter().copied().fold(1.0, f64::min);
    Ok(Outcome::new(
        with_conflict >= 4 && mean_abs < 0.5 && min_agree > 0.8,
        format!(
            "conflicts in {with_conflict}/5 seeds, mean |cos| {mean_abs:.3} (worst seed {:.3}), taylor sign agreement >= {:.0}%",
            abs_cos.iter().copied().fold(0.0, f64::max),
            100.0 * min_agree
        ),
    ))
}

fn freeze_discipline() -> sef::Result<Outcome> {
    let cfg = TrainConfig {
        stage1_iters: 8,
        stage2_iters: 8,
        stage2_batch: 6,
        ..TrainConfig::desk_scale()
    };
    let data = generate_quads(&DatasetConfig::new(16, 72, 9))?;
    let mcfg = cfg.model_config();
    let backbone_before = Backbone::<f32>::new(&mcfg)?;
    let ev = train_expert(ArtifactDomain::VaeSim, &cfg, &data)?.expert;
    let es = train_expert(ArtifactDomain::GanSim, &cfg, &data)?.expert;
    let run = train_sef(&ev, &es, &cfg, &data)?;
    let from = run.model.lora_from();
    let lower_same = (0..from).all(|b| {
        run.model.expert_v.lora.blocks[b] == ev.lora.blocks[b] && run.model.expert_s.lora.blocks[b] == es.lora.blocks[b]
    });
    let upper_moved = (from..mcfg.num_blocks).all(|b| {
        run.model.expert_v.lora.blocks[b] != ev.lora.blocks[b] && run.model.expert_s.lora.blocks[b] != es.lora.blocks[b]
    });
    let heads_same = run.model.expert_v.head == ev.head && run.model.expert_s.head == es.head;
    let backbone_same = Backbone::<f32>::new(&mcfg)? == backbone_before;

    let frozen_cfg = TrainConfig { gamma: 0.0, ..cfg };
    let gate_seed = sef::rng::derive_seed(cfg.seed, sef::rng::tag::GATE, 0);
    let fresh = sef::model::SefModel::new(&mcfg, ev.clone(), es.clone(), cfg.unfreeze_k, gate_seed)?;
    let run0 = train_sef(&ev, &es, &frozen_cfg, &data)?;
    let all_same = run0.model.expert_v == ev && run0.model.expert_s == es;
    let gate_moved = run0.model.gate != fresh.gate && run0.model.fusion_head != fresh.fusion_head;
    Ok(Outcome::new(
        lower_same && heads_same && backbone_same && upper_moved && all_same && gate_moved,
        format!(
            "blocks 0..{from} identical {lower_same}, top blocks trained {upper_moved}, expert heads identical {heads_same}, backbone identical {backbone_same}; gamma=0 experts identical {all_same} with gate trained {gate_moved}"
        ),
    ))
}

fn sef_bin(args: &[&str], out: &Path) -> sef::Result<()> {
    let status = Command::new(env!("CARGO_BIN_EXE_sef"))
        .arg("--threads")
        .arg("1")
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| sef::Error::State(format!("cannot run sef: {e}")))?;
    if !status.status.success() {
        return Err(sef::Error::State(format!(
            "sef {args:?} failed: {}",
            String::from_utf8_lossy(&status.stderr)
        )));
    }
    Ok(())
}

const TINY: [&str; 16] = [
    "--set", "embed_dim=16", "--set", "num_heads=2", "--set", "num_blocks=2", "--set", "unfreeze_k=1",
    "--set", "resolution=32", "--set", "stage1_iters=8", "--set", "stage2_iters=8", "--set", "stage2_batch=6",
];

/// Runs the whole pipeline once into `root`.
fn pipeline(root: &Path) -> sef::Result<()> {
    let p = |s: &str| root.join(s);
    let s = |p: &Path| p.to_string_lossy().into_owned();
    sef_bin(&["gen-data", "--n", "12", "--size", "40", "--seed", "3"], &p("train"))?;
    sef_bin(&["gen-data", "--n", "8", "--size", "40", "--seed", "3", "--held-out"], &p("test"))?;
    let train = s(&p("train"));
    let mut ev = vec!["train-expert", "--domain", "vae", "--data", &train];
    ev.extend(TINY);
    sef_bin(&ev, &p("ev"))?;
    let mut es = vec!["train-expert", "--domain", "gan", "--data", &train];
    es.extend(TINY);
    sef_bin(&es, &p("es"))?;
    let mut mixed = vec!["train-mixed", "--data", &train];
    mixed.extend(TINY);
    sef_bin(&mixed, &p("mixed"))?;
    let (cv, cs) = (s(&p("ev/expert_vae_sim.ckpt")), s(&p("es/expert_gan_sim.ckpt")));
    let mut sefa = vec!["train-sef", "--expert-v", &cv, "--expert-s", &cs, "--data", &train];
    sefa.extend(TINY);
    sef_bin(&sefa, &p("sef"))?;
    let (ck, test) = (s(&p("sef/sef.ckpt")), s(&p("test")));
    sef_bin(
        &["evaluate", "--ckpt", &ck, "--data", &test, "--perturb", "all", "--seed", "5"],
        &p("eval"),
    )?;
    Ok(())
}

fn determinism() -> sef::Result<Outcome> {
    let dir = tempfile::tempdir().map_err(|e| sef::Error::State(e.to_string()))?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pipeline(&a)?;
    pipeline(&b)?;
    let files = [
        "train/manifest.jsonl",
        "test/manifest.jsonl",
        "train/fake_gan/00005.png",
        "ev/expert_vae_sim.ckpt",
        "ev/expert_vae_sim.jsonl",
        "es/expert_gan_sim.ckpt",
        "mixed/mixed.ckpt",
        "mixed/mixed.jsonl",
        "sef/sef.ckpt",
        "sef/sef.jsonl",
        "sef/config.toml",
        "eval/eval.jsonl",
    ];
    let mut differing = Vec::new();
    for f in files {
        let read = |root: &Path| std::fs::read(root.join(f)).map_err(|e| sef::Error::State(format!("{f}: {e}")));
        if read(&a)? != read(&b)? {
            differing.push(f);
        }
    }
    Ok(Outcome::new(
        differing.is_empty(),
        format!("{} artifacts compared across two runs, differing: {differing:?}", files.len()),
    ))
}
