use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate_held_out, Detector, ExpertDetector, PerturbationSpec, SefDetector};
use crate::error::{Error, Result};
use crate::forge::{generate_quads, ArtifactDomain, DatasetConfig, Quad};
use crate::train::{train_expert, train_mixed_baseline, train_sef, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    ExpertVae,
    ExpertGan,
    Mixed,
    Sef,
}

impl Paradigm {
    pub const ALL: [Paradigm; 4] = [Paradigm::ExpertVae, Paradigm::ExpertGan, Paradigm::Mixed, Paradigm::Sef];

    pub fn name(self) -> &'static str {
        match self {
            Paradigm::ExpertVae => "expert_vae",
            Paradigm::ExpertGan => "expert_gan",
            Paradigm::Mixed => "mixed",
            Paradigm::Sef => "sef",
        }
    }
}

/// Everything a comparison needs besides the seed list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    /// Per-seed training configuration; its `seed` is replaced by each seed.
    pub train: TrainConfig,
    pub n_train: usize,
    pub n_test: usize,
    /// Side of the generated canvas, cropped to `train.resolution`.
    pub canvas: usize,
    pub data_seed: u64,
}

impl ComparisonConfig {
    /// The five-seed desk-scale setup: 400 training and 200 held-out quads
    /// on a 72-pixel canvas.
    pub fn desk_scale() -> Self {
        Self {
            train: TrainConfig::desk_scale(),
            n_train: 400,
            n_test: 200,
            canvas: 72,
            data_seed: 11,
        }
    }

    pub fn train_data(&self) -> Result<Vec<Quad>> {
        generate_quads(&DatasetConfig::new(self.n_train, self.canvas, self.data_seed))
    }

    pub fn test_data(&self) -> Result<Vec<Quad>> {
        generate_quads(&DatasetConfig::new(self.n_test, self.canvas, self.data_seed).held_out())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub seed: u64,
    pub paradigm: Paradigm,
    pub domain: ArtifactDomain,
    pub balanced_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub seeds: Vec<u64>,
    pub cells: Vec<ComparisonCell>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

impl ComparisonTable {
    pub fn get(&self, seed: u64, paradigm: Paradigm, domain: ArtifactDomain) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.seed == seed && c.paradigm == paradigm && c.domain == domain)
            .map(|c| c.balanced_accuracy)
    }

    /// Median over seeds of one paradigm on one domain.
    pub fn median(&self, paradigm: Paradigm, domain: ArtifactDomain) -> f64 {
        median(self.seeds.iter().filter_map(|&s| self.get(s, paradigm, domain)).collect())
    }

    /// Median over seeds of the two-domain mean.
    pub fn median_mean(&self, paradigm: Paradigm) -> f64 {
        median(
            self.seeds
                .iter()
                .filter_map(|&s| {
                    let v = self.get(s, paradigm, ArtifactDomain::VaeSim)?;
                    let g = self.get(s, paradigm, ArtifactDomain::GanSim)?;
                    Some(0.5 * (v + g))
                })
                .collect(),
        )
    }

    /// Per-seed rows followed by medians, as aligned text.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:<12} {:>8} {:>8} {:>8}", "seed", "paradigm", "vae", "gan", "mean");
        let row = |out: &mut String, label: &str, p: Paradigm, v: f64, g: f64, m: f64| {
            let _ = writeln!(out, "{label:<8} {:<12} {v:>8.2} {g:>8.2} {m:>8.2}", p.name());
        };
        for &s in &self.seeds {
            for p in Paradigm::ALL {
                let v = self.get(s, p, ArtifactDomain::VaeSim).unwrap_or(f64::NAN);
                let g = self.get(s, p, ArtifactDomain::GanSim).unwrap_or(f64::NAN);
                row(&mut out, &s.to_string(), p, v, g, 0.5 * (v + g));
            }
        }
        for p in Paradigm::ALL {
            row(
                &mut out,
                "median",
                p,
                self.median(p, ArtifactDomain::VaeSim),
                self.median(p, ArtifactDomain::GanSim),
                self.median_mean(p),
            );
        }
        out
    }
}

/// Trains both experts, the mixed baseline and the fused model for every
/// seed, and evaluates each on both domains of `test`. `observer` sees
/// every cell as soon as it is known.
/// Median-level comparison of the four paradigms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternSummary {
    /// Own-domain median of each expert minus the mixed baseline's.
    pub expert_vae_margin: f64,
    pub expert_gan_margin: f64,
    /// SEF two-domain mean minus the mixed baseline's (medians over seeds).
    pub sef_gain: f64,
    /// Specialist median minus SEF median on the specialist's domain.
    pub sef_gap_vae: f64,
    pub sef_gap_gan: f64,
}

impl ComparisonTable {
    pub fn pattern(&self) -> PatternSummary {
        let (v, g) = (ArtifactDomain::VaeSim, ArtifactDomain::GanSim);
        PatternSummary {
            expert_vae_margin: self.median(Paradigm::ExpertVae, v) - self.median(Paradigm::Mixed, v),
            expert_gan_margin: self.median(Paradigm::ExpertGan, g) - self.median(Paradigm::Mixed, g),
            sef_gain: self.median_mean(Paradigm::Sef) - self.median_mean(Paradigm::Mixed),
            sef_gap_vae: self.median(Paradigm::ExpertVae, v) - self.median(Paradigm::Sef, v),
            sef_gap_gan: self.median(Paradigm::ExpertGan, g) - self.median(Paradigm::Sef, g),
        }
    }
}

/// Trains all four paradigms for every seed and evaluates each on both
/// held-out domains. `observer` sees every cell as soon as it exists.
pub fn run_paradigm_comparison(
    cfg: &ComparisonConfig,
    train: &[Quad],
    test: &[Quad],
    seeds: &[u64],
    mut observer: impl FnMut(&ComparisonCell),
) -> Result<ComparisonTable> {
    if seeds.len() < 3 {
        return Err(Error::invalid("a paradigm comparison needs at least 3 seeds"));
    }
    let train_seeds: Vec<u64> = train.iter().map(|q| q.seed).collect();
    let clean = PerturbationSpec::none();
    let mut table = ComparisonTable {
        seeds: seeds.to_vec(),
        cells: Vec::new(),
    };
    for &seed in seeds {
        let mut tc = cfg.train.clone();
        tc.seed = seed;
        let mcfg = tc.model_config();
        let mut record = |paradigm: Paradigm, det: &dyn Detector| -> Result<()> {
            for r in evaluate_held_out(det, train_seeds.iter().copied(), test, &clean)? {
                let cell = ComparisonCell {
                    seed,
                    paradigm,
                    domain: r.domain,
                    balanced_accuracy: r.balanced_accuracy,
                };
                observer(&cell);
                table.cells.push(cell);
            }
            Ok(())
        };
        let ev = train_expert(ArtifactDomain::VaeSim, &tc, train)?.expert;
        record(Paradigm::ExpertVae, &ExpertDetector::new(&mcfg, ev.clone())?)?;
        let es = train_expert(ArtifactDomain::GanSim, &tc, train)?.expert;
        record(Paradigm::ExpertGan, &ExpertDetector::new(&mcfg, es.clone())?)?;
        let mixed = train_mixed_baseline(&tc, train)?.expert;
        record(Paradigm::Mixed, &ExpertDetector::new(&mcfg, mixed)?)?;
        let sef = train_sef(&ev, &es, &tc, train)?.model;
        record(Paradigm::Sef, &SefDetector::new(&mcfg, sef)?)?;
    }
    Ok(table)
}
