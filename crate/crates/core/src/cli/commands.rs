use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{out_dir, Command, Common};
use crate::conflict::{run_conflict_probe, taylor_diagnostic, ProbeOptions, ProbeParams};
use crate::error::{Error, Result};
use crate::evalbench::{
    check_disjoint, evaluate, run_paradigm_comparison, AnyDetector, ComparisonConfig, Detector, Paradigm,
    PerturbationSpec,
};
use crate::forge::{
    build_dataset, generate_quads, load_anchor_dir, ArtifactDomain, DatasetConfig, DatasetManifest, Quad,
    HELD_OUT_FIRST_INDEX,
};
use crate::metrics::{corpus_profile, radar_scores, Metric, MetricProfile};
use crate::model::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::rng::derive_seed;
use crate::train::{train_expert, train_mixed_baseline, train_sef, TrainConfig, TrainRecord};

/// Canvas of datasets generated on the fly (1.125 × the default resolution).
const GENERATED_CANVAS: usize = 72;

/// Defaults, then the config file, then `--seed`, then `--set` overrides.
fn resolve_config(common: &Common) -> Result<TrainConfig> {
    resolve_config_from(common, TrainConfig::default())
}

/// Layers `base` < config file < `--seed` < `--set`.
fn resolve_config_from(common: &Common, base: TrainConfig) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(p) => TrainConfig::from_file(p)?,
        None => base,
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let cfg = cfg.with_overrides(&common.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes one JSON object per line.
fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?);
        out.push('\n');
    }
    write_file(path, &out)
}

#[derive(Serialize)]
struct RunSnapshot<'a, X: Serialize> {
    subcommand: &'a str,
    seed: u64,
    threads: Option<usize>,
    config_hash: Option<String>,
    #[serde(flatten)]
    extra: X,
}

fn snapshot<X: Serialize>(
    dir: &Path,
    cmd: &Command,
    threads: Option<usize>,
    seed: u64,
    cfg: Option<&TrainConfig>,
    extra: X,
) -> Result<()> {
    if let Some(c) = cfg {
        write_file(&dir.join("config.toml"), &c.to_toml_string())?;
    }
    let snap = RunSnapshot {
        subcommand: cmd.name(),
        seed,
        threads,
        config_hash: cfg.map(|c| c.hash()),
        extra,
    };
    let json = serde_json::to_string_pretty(&snap).map_err(|e| Error::Format(e.to_string()))?;
    write_file(&dir.join("run.json"), &(json + "\n"))
}

fn load_data(path: &Path) -> Result<(DatasetManifest, Vec<Quad>)> {
    let m = DatasetManifest::read(path)?;
    let q = m.load()?;
    Ok((m, q))
}

fn save_run(dir: &Path, name: &str, ckpt: &Checkpoint, mut records: Vec<TrainRecord>) -> Result<PathBuf> {
    let path = dir.join(format!("{name}.ckpt"));
    save_checkpoint(ckpt, &path)?;
    if let Some(last) = records.last_mut() {
        last.checkpoint = Some(path.file_name().unwrap().to_string_lossy().into_owned());
    }
    write_jsonl(&dir.join(format!("{name}.jsonl")), &records)?;
    Ok(path)
}

pub(super) fn execute(cmd: &Command, threads: Option<usize>) -> Result<()> {
    let dir = out_dir(cmd);
    let common = cmd.common();
    match cmd {
        Command::GenData {
            n,
            size,
            aug_prob,
            held_out,
            ..
        } => {
            let mut dc = DatasetConfig::new(*n, *size, common.seed.unwrap_or(0));
            if *held_out {
                dc = dc.held_out();
            }
            if let Some(a) = aug_prob {
                dc.aug_prob = *a;
            }
            create_dir(&dir)?;
            let m = build_dataset(&dc, &dir)?;
            snapshot(&dir, cmd, threads, dc.seed, None, &dc)?;
            println!("wrote {} entries to {}", m.len(), dir.display());
        }
        Command::TrainExpert { domain, data, .. } => {
            let domain: ArtifactDomain = domain.parse()?;
            let cfg = resolve_config(common)?;
            let (_, quads) = load_data(data)?;
            create_dir(&dir)?;
            snapshot(&dir, cmd, threads, cfg.seed, Some(&cfg), serde_json::json!({ "domain": domain, "data": data }))?;
            let run = train_expert(domain, &cfg, &quads)?;
            let name = format!("expert_{}", domain.name().to_ascii_lowercase());
            let path = save_run(&dir, &name, &run.checkpoint(), run.records.clone())?;
            report_training(&run.records, &path);
        }
        Command::TrainMixed { data, .. } => {
            let cfg = resolve_config(common)?;
            let (_, quads) = load_data(data)?;
            create_dir(&dir)?;
            snapshot(&dir, cmd, threads, cfg.seed, Some(&cfg), serde_json::json!({ "data": data }))?;
            let run = train_mixed_baseline(&cfg, &quads)?;
            let path = save_run(&dir, "mixed", &run.checkpoint(), run.records.clone())?;
            report_training(&run.records, &path);
        }
        Command::TrainSef {
            expert_v,
            expert_s,
            data,
            ..
        } => {
            let cfg = resolve_config(common)?;
            let (cv, cs) = (load_checkpoint(expert_v)?, load_checkpoint(expert_s)?);
            for (c, p) in [(&cv, expert_v), (&cs, expert_s)] {
                if c.meta.model != cfg.model_config() {
                    return Err(Error::Config(format!(
                        "{} was trained with a different model configuration",
                        p.display()
                    )));
                }
            }
            let (_, quads) = load_data(data)?;
            create_dir(&dir)?;
            snapshot(
                &dir,
                cmd,
                threads,
                cfg.seed,
                Some(&cfg),
                serde_json::json!({ "expert_v": expert_v, "expert_s": expert_s, "data": data }),
            )?;
            let run = train_sef(&cv.to_expert()?, &cs.to_expert()?, &cfg, &quads)?;
            let path = save_run(&dir, "sef", &run.checkpoint(), run.records.clone())?;
            report_training(&run.records, &path);
        }
        Command::Evaluate {
            ckpt,
            data,
            train_data,
            perturb,
            p,
            random_crop,
            ..
        } => {
            let mut spec = PerturbationSpec::parse(perturb)?;
            if !(0.0..=1.0).contains(p) {
                return Err(Error::invalid(format!("--p {p} outside [0, 1]")));
            }
            spec.p = *p;
            spec.seed = common.seed.unwrap_or(0);
            spec.random_anchor = *random_crop;
            let ck = load_checkpoint(ckpt)?;
            let det = AnyDetector::from_checkpoint(&ck)?;
            let (manifest, test) = load_data(data)?;
            match train_data {
                Some(t) => check_disjoint(DatasetManifest::read(t)?.seeds(), &test)?,
                None if manifest.header.config.first_index < HELD_OUT_FIRST_INDEX => {
                    return Err(Error::Config(format!(
                        "{} is not a held-out set; pass --train-data to check disjointness",
                        data.display()
                    )))
                }
                None => {}
            }
            create_dir(&dir)?;
            snapshot(
                &dir,
                cmd,
                threads,
                spec.seed,
                None,
                serde_json::json!({ "ckpt": ckpt, "data": data, "perturbations": spec }),
            )?;
            let results = evaluate(&det as &dyn Detector, &test, &spec)?;
            write_jsonl(&dir.join("eval.jsonl"), &results)?;
            println!("{:<8} {:>9} {:>6} {:>6} {:>6} {:>6}", "domain", "bal.acc", "TP", "TN", "FP", "FN");
            for r in &results {
                let c = &r.confusion;
                println!(
                    "{:<8} {:>9.2} {:>6} {:>6} {:>6} {:>6}",
                    r.domain.name(),
                    r.balanced_accuracy,
                    c.tp,
                    c.tn,
                    c.fp,
                    c.fn_
                );
            }
        }
        Command::CompareParadigms {
            seeds,
            n_train,
            n_test,
            canvas,
            data_seed,
            ..
        } => {
            let cfg = resolve_config_from(common, TrainConfig::desk_scale())?;
            let cc = ComparisonConfig {
                train: cfg.clone(),
                n_train: *n_train,
                n_test: *n_test,
                canvas: *canvas,
                data_seed: *data_seed,
            };
            let seed_list: Vec<u64> = (0..*seeds as u64).map(|i| cfg.seed + i).collect();
            create_dir(&dir)?;
            snapshot(&dir, cmd, threads, cfg.seed, Some(&cfg), &cc)?;
            let (train, test) = (cc.train_data()?, cc.test_data()?);
            let table = run_paradigm_comparison(&cc, &train, &test, &seed_list, |c| {
                eprintln!(
                    "seed {} {:<10} {:<8} {:.2}",
                    c.seed,
                    c.paradigm.name(),
                    c.domain.name(),
                    c.balanced_accuracy
                );
            })?;
            write_jsonl(&dir.join("cells.jsonl"), &table.cells)?;
            let medians: Vec<_> = Paradigm::ALL
                .iter()
                .map(|&p| {
                    serde_json::json!({
                        "paradigm": p,
                        "vae_sim": table.median(p, ArtifactDomain::VaeSim),
                        "gan_sim": table.median(p, ArtifactDomain::GanSim),
                        "mean": table.median_mean(p),
                    })
                })
                .collect();
            write_jsonl(&dir.join("medians.jsonl"), &medians)?;
            write_jsonl(&dir.join("pattern.jsonl"), &[table.pattern()])?;
            let text = table.to_text();
            write_file(&dir.join("table.txt"), &text)?;
            print!("{text}");
        }
        Command::ConflictReport {
            iters,
            seeds,
            batch,
            params,
            data,
            n,
            taylor_steps,
            eta,
            ..
        } => {
            let base = resolve_config(common)?;
            let opts = ProbeOptions {
                iters: *iters,
                batch: *batch,
                params: params.parse::<ProbeParams>()?,
            };
            let given = match data {
                Some(d) => Some(load_data(d)?.1),
                None => None,
            };
            create_dir(&dir)?;
            snapshot(&dir, cmd, threads, base.seed, Some(&base), &opts)?;
            let mut step_lines = Vec::new();
            let mut summaries = Vec::new();
            for s in 0..*seeds as u64 {
                let mut cfg = base.clone();
                cfg.seed = base.seed + s;
                let quads = match &given {
                    Some(q) => q.clone(),
                    None => generate_quads(&DatasetConfig::new(*n, GENERATED_CANVAS, derive_seed(cfg.seed, 0, 0)))?,
                };
                let report = run_conflict_probe(&cfg, &quads, &opts)?;
                print!("{}", report.summary());
                for st in &report.steps {
                    step_lines.push(serde_json::json!({ "seed": cfg.seed, "step": st }));
                }
                let mut summary = serde_json::json!({
                    "seed": cfg.seed,
                    "iters": report.iters,
                    "batch": report.batch,
                    "conflict_fraction": report.conflict_fraction,
                    "mean_cosine": report.mean_cosine,
                    "std_cosine": report.std_cosine,
                    "mean_abs_cosine": report.mean_abs_cosine,
                    "layer_means": report.layer_means(),
                });
                if *taylor_steps > 0 {
                    let t = taylor_diagnostic(&cfg, &quads, *taylor_steps, *eta)?;
                    println!(
                        "  taylor (eta {:e}): sign agreement {:.0}%, correlation {}",
                        t.eta,
                        100.0 * t.sign_agreement,
                        t.correlation.map_or("n/a".into(), |c| format!("{c:.3}"))
                    );
                    summary["taylor_sign_agreement"] = t.sign_agreement.into();
                    summary["taylor_correlation"] = serde_json::json!(t.correlation);
                }
                summaries.push(summary);
            }
            write_jsonl(&dir.join("steps.jsonl"), &step_lines)?;
            write_jsonl(&dir.join("summary.jsonl"), &summaries)?;
        }
        Command::Metrics { real, vae, gan, alpha, .. } => {
            let r = load_anchor_dir(real)?;
            let v = load_anchor_dir(vae)?;
            let g = load_anchor_dir(gan)?;
            let pr = corpus_profile(&r, Some(&r))?;
            let pv = corpus_profile(&v, Some(&r))?;
            let pg = corpus_profile(&g, Some(&r))?;
            let (sv, sg) = radar_scores(&pr, &pv, &pg, *alpha)?;
            create_dir(&dir)?;
            snapshot(
                &dir,
                cmd,
                threads,
                common.seed.unwrap_or(0),
                None,
                serde_json::json!({ "real": real, "vae": vae, "gan": gan, "alpha": alpha }),
            )?;
            let profiles: Vec<_> = [("real", &pr), ("vae_sim", &pv), ("gan_sim", &pg)]
                .iter()
                .map(|(name, p)| serde_json::json!({ "corpus": name, "profile": p }))
                .collect();
            write_jsonl(&dir.join("profiles.jsonl"), &profiles)?;
            let radar: Vec<_> = Metric::ALL
                .iter()
                .filter_map(|&m| {
                    Some(serde_json::json!({ "metric": m, "vae_sim": sv.get(m)?, "gan_sim": sg.get(m)? }))
                })
                .collect();
            write_jsonl(&dir.join("radar.jsonl"), &radar)?;
            print_profiles(&pr, &pv, &pg);
        }
    }
    Ok(())
}

fn report_training(records: &[TrainRecord], ckpt: &Path) {
    if let (Some(first), Some(last)) = (records.first(), records.last()) {
        eprintln!(
            "{}: {} steps, loss {:.4} -> {:.4}",
            last.run,
            records.len(),
            first.loss,
            last.loss
        );
    }
    println!("{}", ckpt.display());
}

fn print_profiles(r: &MetricProfile, v: &MetricProfile, g: &MetricProfile) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{:<15} {:>12} {:>12} {:>12}", "metric", "real", "vae_sim", "gan_sim");
    for m in Metric::ALL {
        let f = |p: &MetricProfile| p.get(m).map_or("-".to_string(), |x| format!("{x:.4}"));
        let _ = writeln!(out, "{:<15} {:>12} {:>12} {:>12}", m.name(), f(r), f(v), f(g));
    }
}
