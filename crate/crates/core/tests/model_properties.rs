//! Properties of the backbone, experts and fused model on the tiny configuration.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sef::forge::ArtifactDomain;
use sef::model::{
    expert_loss_grad, flatten, forward_expert, forward_sef, fuse, Backbone, Expert, ExpertTrainable, Gate,
    ModelConfig, SefModel, Tensors,
};

fn images(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n * cfg.image_len()).map(|_| r.gen::<f64>()).collect()
}

/// Expert with non-zero adapters so that LoRA paths contribute.
fn nudged_expert(cfg: &ModelConfig, domain: ArtifactDomain, seed: u64) -> Expert<f64> {
    let mut e = Expert::<f64>::fresh(cfg, Some(domain), seed);
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for (_, _, v) in e.lora.tensors_mut("l") {
        for x in v.iter_mut() {
            *x += r.gen_range(-0.05..0.05);
        }
    }
    e
}

fn tiny_sef() -> (ModelConfig, Backbone<f64>, SefModel<f64>) {
    let cfg = ModelConfig::tiny();
    let bb = Backbone::<f64>::new(&cfg).unwrap();
    let ev = nudged_expert(&cfg, ArtifactDomain::VaeSim, 1);
    let es = nudged_expert(&cfg, ArtifactDomain::GanSim, 2);
    let m = SefModel::new(&cfg, ev, es, 2, 3).unwrap();
    (cfg, bb, m)
}

#[test]
fn logits_do_not_depend_on_batch_neighbours() {
    let (cfg, bb, m) = tiny_sef();
    let x = images(&cfg, 5, 7);
    let len = cfg.image_len();
    let batch = forward_sef(&bb, &m, &x, 5, None).unwrap();
    for i in 0..5 {
        let single = forward_sef(&bb, &m, &x[i * len..(i + 1) * len], 1, None).unwrap();
        assert!((single.logits[0] - batch.logits[i]).abs() < 1e-12);
        assert!((single.w[0] - batch.w[i]).abs() < 1e-12);
    }
}

#[test]
fn forced_weights_select_one_expert() {
    let (cfg, bb, m) = tiny_sef();
    let x = images(&cfg, 4, 9);
    for (w, expert) in [(0.0, &m.expert_v), (1.0, &m.expert_s)] {
        let out = forward_sef(&bb, &m, &x, 4, Some(w)).unwrap();
        let (_, feat) = forward_expert(&bb, expert, &x, 4).unwrap();
        let direct = m.fusion_head.forward(&feat, 4);
        for (a, b) in out.logits.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12, "w={w}: {a} vs {b}");
        }
    }
}

#[test]
fn equal_composition_micro_batches_average_to_the_full_batch_gradient() {
    let cfg = ModelConfig::tiny();
    let bb = Backbone::<f64>::new(&cfg).unwrap();
    let e = nudged_expert(&cfg, ArtifactDomain::VaeSim, 4);
    let x = images(&cfg, 8, 11);
    let labels = [0u8, 1, 0, 1, 1, 0, 1, 0];
    let half = 4 * cfg.image_len();
    let t = ExpertTrainable::all();
    let (la, ga) = expert_loss_grad(&bb, &e, &x[..half], &labels[..4], t).unwrap();
    let (lb, gb) = expert_loss_grad(&bb, &e, &x[half..], &labels[4..], t).unwrap();
    let (lf, gf) = expert_loss_grad(&bb, &e, &x, &labels, t).unwrap();
    assert!(((la + lb) / 2.0 - lf).abs() < 1e-12);
    let (fa, fb, ff) = (flatten(&ga.tensors("g")), flatten(&gb.tensors("g")), flatten(&gf.tensors("g")));
    for i in 0..ff.len() {
        assert!(((fa[i] + fb[i]) / 2.0 - ff[i]).abs() < 1e-10, "coord {i}");
    }
}

#[test]
fn gate_stays_inside_the_open_interval_for_extreme_inputs() {
    let cfg = ModelConfig::tiny();
    let gate = Gate::<f32>::fresh(&cfg, 5);
    let d2 = 2 * cfg.embed_dim;
    for v in [0.0f32, 1e3, -1e3, 1e30, -1e30] {
        let w = gate.forward(&vec![v; d2], 1)[0];
        assert!(w > 0.0 && w < 1.0, "input {v} gave {w}");
    }
}

proptest! {
    #[test]
    fn fused_coordinates_lie_between_the_experts(
        pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..64),
        w in 0.0f64..=1.0,
    ) {
        let (f1, f2): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let out = fuse(&f1, &f2, w).unwrap();
        for i in 0..out.len() {
            let (lo, hi) = (f1[i].min(f2[i]), f1[i].max(f2[i]));
            prop_assert!(out[i] >= lo && out[i] <= hi);
        }
    }

    #[test]
    fn fuse_rejects_weights_outside_the_unit_interval(w in prop_oneof![-10.0f64..-1e-9, 1.0 + 1e-9..10.0]) {
        prop_assert!(fuse(&[0.0], &[1.0], w).is_err());
    }

    #[test]
    fn gate_weights_are_strictly_inside_the_unit_interval(
        seed in any::<u64>(),
        feats in prop::collection::vec(-50.0f32..50.0, 16),
    ) {
        let cfg = ModelConfig::tiny();
        let gate = Gate::<f32>::fresh(&cfg, seed);
        let w = gate.forward(&feats, 1)[0];
        prop_assert!(w > 0.0 && w < 1.0);
        prop_assert!(((1.0 - w) + w - 1.0).abs() <= f32::EPSILON);
    }
}
