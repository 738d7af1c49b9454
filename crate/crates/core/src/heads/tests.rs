use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::search::best_trial;
use super::*;
use crate::nn::OutputActivation;

fn weighted_mean(widths: &[usize], s: &[f64]) -> f64 {
    let n: Vec<f64> = widths.windows(2).map(|w| (w[0] * w[1]) as f64).collect();
    n.iter().zip(s).map(|(a, b)| a * b).sum::<f64>() / n.iter().sum::<f64>()
}

#[test]
fn er_uniform_widths_share_global_sparsity() {
    let s = erdos_renyi_allocation(&[16, 16, 16], 0.9).unwrap();
    assert!((s[0] - 0.9).abs() < 1e-12 && (s[1] - 0.9).abs() < 1e-12);
}

#[test]
fn er_meets_global_constraint() {
    let w = [32, 16, 16, 16, 1];
    let s = erdos_renyi_allocation(&w, 0.951).unwrap();
    assert!((weighted_mean(&w, &s) - 0.951).abs() < 1e-9);
    assert!(s.iter().all(|&v| (0.0..1.0).contains(&v)));
    // Smaller layers get lower sparsity.
    assert!(s[0] > s[1] && s[3] < s[2]);
    let zero = erdos_renyi_allocation(&w, 0.0).unwrap();
    assert!(weighted_mean(&w, &zero).abs() < 1e-9);
    assert!(erdos_renyi_allocation(&w, 1.0).is_err());
}

#[test]
fn er_ratio_follows_scaling_rule() {
    let w = [64, 16, 16];
    let s = erdos_renyi_allocation(&w, 0.5).unwrap();
    let r0 = (64.0 + 16.0) / (64.0 * 16.0);
    let r1 = 32.0 / 256.0;
    assert!(((1.0 - s[0]) / (1.0 - s[1]) - r0 / r1).abs() < 1e-12);
}

#[test]
fn cosine_decay_endpoints() {
    let a = 0.758;
    assert!((cosine_decay(0, a, 100) - a).abs() < 1e-12);
    assert!(cosine_decay(100, a, 100).abs() < 1e-12);
    assert!((cosine_decay(50, a, 100) - a / 2.0).abs() < 1e-12);
    assert_eq!(cosine_decay(101, a, 100), 0.0);
    let v: Vec<f64> = (0..=100).map(|t| cosine_decay(t, a, 100)).collect();
    assert!(v.windows(2).all(|p| p[1] <= p[0]));
}

#[test]
fn rigl_drops_smallest_magnitude() {
    let w = [0.9, -0.5, 0.1, 0.05, 0.0, 0.0, 0.0, 0.0];
    let g = [0.0, 0.0, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0];
    let mask = [true, true, true, true, false, false, false, false];
    let new = rigl_update(&w, &g, &mask, 0.5, 1);
    assert_eq!(new, [true, true, true, false, true, false, false, false]);
}

#[test]
fn rigl_grows_largest_gradient() {
    let w = [0.7, 0.0, 0.0];
    let g = [0.1, 0.0, 3.0];
    let mask = [true, false, false];
    // target round(3 * 2/3) = 2, keep 1, grow 1
    let new = rigl_update(&w, &g, &mask, 1.0 / 3.0, 1);
    assert_eq!(new, [true, false, true]);
}

#[test]
fn rigl_k_zero_keeps_mask_and_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mask: Vec<bool> = (0..20).map(|i| i % 4 == 0).collect();
    assert_eq!(rigl_update(&w, &g, &mask, 0.75, 0), mask);
    for k in 0..8 {
        let new = rigl_update(&w, &g, &mask, 0.75, k);
        assert_eq!(new.iter().filter(|&&a| a).count(), 5);
    }
}

#[test]
fn rigl_ties_prefer_lowest_index() {
    let new = rigl_update(&[0.0; 4], &[1.0; 4], &[false; 4], 0.5, 2);
    assert_eq!(new, [true, true, false, false]);
}

fn mlp(widths: &[usize], seed: u64) -> crate::Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = crate::Mlp::new(widths, false, OutputActivation::Identity, &mut rng).unwrap();
    for l in &mut m.layers {
        for b in l.bias.value.values_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    m
}

fn set_mask(m: &mut crate::Mlp, layer: usize, off: &[(usize, usize)]) {
    let l = &mut m.layers[layer];
    let mut t = l
        .weight
        .mask()
        .cloned()
        .unwrap_or_else(|| crate::Tensor::full(l.fan_in(), l.fan_out(), 1.0));
    for &(i, j) in off {
        t.set(i, j, 0.0);
    }
    l.weight.set_mask(t).unwrap();
}

fn max_diff(a: &crate::Mlp, b: &crate::Mlp, inputs: &[Vec<f64>]) -> f64 {
    inputs
        .iter()
        .map(|x| (a.forward_one(x)[0] - b.forward_one(x)[0]).abs())
        .fold(0.0, f64::max)
}

fn probe_inputs(dim: usize, n: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect()
}

#[test]
fn leaf_rule_removes_incoming_weights() {
    let mut m = mlp(&[3, 2, 1], 1);
    set_mask(&mut m, 1, &[(0, 0)]);
    let before = m.clone();
    let r = post_prune(&mut m).unwrap();
    assert_eq!(r.leaf_removed, 3);
    assert_eq!(r.bias_removed, 0);
    assert_eq!(m.layers[0].weight.active_count(), 3);
    assert!((0..3).all(|i| m.layers[0].weight.value.get(i, 0) == 0.0));
    assert!(max_diff(&before, &m, &probe_inputs(3, 50)) <= 1e-12);
}

#[test]
fn bias_rule_folds_constant_neuron() {
    let mut m = mlp(&[1, 2, 1], 2);
    set_mask(&mut m, 0, &[(0, 0)]);
    m.layers[0].bias.value.values_mut()[0] = 1.0;
    m.layers[1].weight.value.set(0, 0, 2.0);
    m.layers[1].bias.value.values_mut()[0] = 0.0;
    let before = m.clone();
    let r = post_prune(&mut m).unwrap();
    assert_eq!(r.bias_removed, 1);
    let mish1 = (1.0f64 + 1.0f64.exp()).ln().tanh();
    assert!((m.layers[1].bias.value.values()[0] - 2.0 * mish1).abs() < 1e-12);
    assert!((m.layers[1].bias.value.values()[0] - 1.73018).abs() < 1e-4);
    assert!(!m.layers[1].weight.is_active(0));
    assert!(max_diff(&before, &m, &probe_inputs(1, 50)) <= 1e-12);
}

#[test]
fn dense_network_is_a_fixed_point() {
    let mut m = mlp(&[4, 5, 3, 1], 3);
    let before = m.clone();
    assert_eq!(post_prune(&mut m).unwrap(), PruneReport::default());
    for (a, b) in m.layers.iter().zip(&before.layers) {
        assert_eq!(a.weight.value, b.weight.value);
        assert_eq!(a.bias.value, b.bias.value);
    }
}

#[test]
fn cascading_prune_preserves_function() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..20 {
        let mut m = mlp(&[5, 6, 6, 4, 1], seed);
        for l in 0..m.layers.len() {
            let (a, b) = (m.layers[l].fan_in(), m.layers[l].fan_out());
            let off: Vec<_> = (0..a)
                .flat_map(|i| (0..b).map(move |j| (i, j)))
                .filter(|_| rng.random::<f64>() < 0.7)
                .collect();
            set_mask(&mut m, l, &off);
        }
        let before = m.clone();
        post_prune(&mut m).unwrap();
        assert!(max_diff(&before, &m, &probe_inputs(5, 100)) <= 1e-9);
        let again = m.clone();
        assert_eq!(post_prune(&mut m).unwrap(), PruneReport::default());
        assert!(max_diff(&again, &m, &probe_inputs(5, 10)) == 0.0);
    }
}

#[test]
fn batch_norm_blocks_post_prune() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut m = crate::Mlp::new(&[3, 4, 1], true, OutputActivation::Identity, &mut rng).unwrap();
    assert!(matches!(post_prune(&mut m), Err(crate::Error::Contract(_))));
}

fn and_data(n: usize, seed: u64) -> HeadData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    while x.len() < n {
        let v: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        if v[0].abs() < 0.15 || v[1].abs() < 0.15 {
            continue;
        }
        y.push(if v[0] > 0.0 && v[1] > 0.0 {
            crate::Label::Metaphase
        } else {
            crate::Label::Interphase
        });
        x.push(v);
    }
    HeadData::new(x, y)
}

fn small_sparse_config() -> HeadConfig {
    HeadConfig {
        epochs: 12,
        batch_size: 32,
        learning_rate: 5e-3,
        rigl: RigLConfig {
            sparsity: 0.8,
            delta_t: 7,
            alpha: 0.5,
            t_end_fraction: 0.75,
            warmup_epochs: 3,
        },
        ..HeadConfig::for_scheme(crate::Scheme::LatentSparse)
    }
}

#[test]
fn sparse_training_keeps_rigl_invariants() {
    let train = and_data(320, 1);
    let test = and_data(200, 2);
    let cfg = small_sparse_config();
    let out = train_head(crate::Scheme::LatentSparse, &train, Some(&test), &cfg, 5).unwrap();
    let tr = out.trace.as_ref().unwrap();
    let sizes = [4 * 16, 16 * 16, 16 * 16, 16];
    assert_eq!(tr.active.len(), cfg.epochs * 10);
    assert_eq!(tr.warmup_steps, 30);
    for (t, counts) in tr.active.iter().enumerate() {
        if t < tr.warmup_steps {
            assert_eq!(counts.as_slice(), sizes, "step {t}");
        } else {
            assert_eq!(counts, &tr.targets, "step {t}");
        }
    }
    assert_eq!(tr.updates.first(), Some(&tr.warmup_steps));
    assert!(tr
        .updates
        .iter()
        .all(|&t| (t - tr.warmup_steps) % 7 == 0 && t - tr.warmup_steps < tr.t_end));
    assert!(tr
        .mask_changes
        .iter()
        .all(|&t| t - tr.warmup_steps < tr.t_end));
    let pre = out.pre_prune.as_ref().unwrap();
    assert!(max_diff(pre, &out.model.head, &test.x) <= 1e-9);
    assert!(out.model.accuracy(&test.x, &test.y).unwrap() > 0.85);
    assert_eq!(out.log.len(), 2 * cfg.epochs);
}

#[test]
fn sparse_training_is_deterministic() {
    let train = and_data(200, 3);
    let cfg = HeadConfig {
        epochs: 6,
        ..small_sparse_config()
    };
    let a = train_head(crate::Scheme::LatentSparse, &train, None, &cfg, 9).unwrap();
    let b = train_head(crate::Scheme::LatentSparse, &train, None, &cfg, 9).unwrap();
    assert_eq!(encode_head(&a.model), encode_head(&b.model));
    assert_eq!(a.mask, b.mask);
    let c = train_head(crate::Scheme::LatentSparse, &train, None, &cfg, 10).unwrap();
    assert_ne!(encode_head(&a.model), encode_head(&c.model));
}

#[test]
fn pruned_head_ignores_unsupported_inputs() {
    let train = and_data(320, 4);
    let out = train_head(
        crate::Scheme::LatentSparse,
        &train,
        None,
        &small_sparse_config(),
        1,
    )
    .unwrap();
    let support = out.mask.as_ref().unwrap().input_support();
    let x = vec![0.3, -0.7, 1.1, 0.4];
    let f = out.model.score(&x);
    for d in (0..4).filter(|d| !support.contains(d)) {
        let mut y = x.clone();
        y[d] += 5.0;
        assert_eq!(out.model.score(&y).to_bits(), f.to_bits());
    }
}

#[test]
fn dense_latent_head_learns_and_rule() {
    let train = and_data(600, 5);
    let test = and_data(300, 6);
    let cfg = HeadConfig {
        epochs: 30,
        ..HeadConfig::for_scheme(crate::Scheme::LatentDense)
    };
    let out = train_head(crate::Scheme::LatentDense, &train, Some(&test), &cfg, 2).unwrap();
    assert!(out.mask.is_none() && out.trace.is_none());
    assert!(out.model.accuracy(&test.x, &test.y).unwrap() > 0.93);
    let last = out.log.last().unwrap();
    assert_eq!(last.split, "test");
    assert_eq!(last.active_weights, 4 * 16 + 16 * 16 + 16 * 16 + 16);
}

#[test]
fn pixel_head_trains_and_round_trips() {
    let cfg = crate::synthcells::SynthConfig::default();
    let ds = crate::synthcells::generate_dataset(80, 4, &cfg).unwrap();
    let x = ds.samples.iter().map(|s| s.pixels.clone()).collect();
    let y = ds.samples.iter().map(|s| s.label).collect();
    let data = HeadData::images(x, y, cfg.height, cfg.width);
    let hc = HeadConfig {
        epochs: 2,
        features: vec![16, 8],
        ..HeadConfig::for_scheme(crate::Scheme::PixelDense)
    };
    let out = train_head(crate::Scheme::PixelDense, &data, None, &hc, 0).unwrap();
    assert!(out.model.head.has_batch_norm());
    let back = decode_head(&encode_head(&out.model)).unwrap();
    assert_eq!(
        back.scores(&data.x).unwrap(),
        out.model.scores(&data.x).unwrap()
    );
    assert_eq!(back.scheme, crate::Scheme::PixelDense);
}

#[test]
fn sparse_checkpoint_and_mask_round_trip() {
    let train = and_data(160, 7);
    let cfg = HeadConfig {
        epochs: 5,
        ..small_sparse_config()
    };
    let out = train_head(crate::Scheme::LatentSparse, &train, None, &cfg, 3).unwrap();
    let back = decode_head(&encode_head(&out.model)).unwrap();
    assert_eq!(
        TopologyMask::from_mlp(&back.head),
        *out.mask.as_ref().unwrap()
    );
    let mask = TopologyMask::from_json(&out.mask.as_ref().unwrap().to_json().unwrap()).unwrap();
    let mut dense = back.head.clone();
    for l in &mut dense.layers {
        l.weight.clear_mask();
    }
    mask.apply(&mut dense).unwrap();
    assert_eq!(TopologyMask::from_mlp(&dense), mask);
    assert!(decode_head(b"RASHHEAD").is_err());
}

#[test]
fn head_training_rejects_bad_input() {
    let cfg = HeadConfig::default();
    let empty = HeadData::default();
    assert!(train_head(crate::Scheme::LatentDense, &empty, None, &cfg, 0).is_err());
    let d = and_data(10, 0);
    assert!(train_head(crate::Scheme::Symbolic, &d, None, &cfg, 0).is_err());
    let bad = HeadConfig {
        epochs: 10,
        ..small_sparse_config()
    };
    let bad = HeadConfig {
        rigl: RigLConfig {
            warmup_epochs: 10,
            ..bad.rigl.clone()
        },
        ..bad
    };
    assert!(train_head(crate::Scheme::LatentSparse, &d, None, &bad, 0).is_err());
}

#[test]
fn log_csv_has_expected_header() {
    let rows = vec![LogRow {
        epoch: 1,
        split: "train".into(),
        loss: 0.5,
        accuracy: 0.9,
        active_weights: 12,
    }];
    let text = String::from_utf8(log_csv(&rows).unwrap()).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("epoch,split,loss,accuracy,active_weights")
    );
}

fn record(trial: usize, objective: f64) -> TrialRecord {
    TrialRecord {
        trial,
        config: RigLConfig {
            delta_t: 100 + trial,
            ..RigLConfig::paper()
        },
        val_accuracy: objective - 0.95,
        sparsity: 0.95,
        objective,
    }
}

#[test]
fn search_picks_highest_objective() {
    assert_eq!(best_trial(&[record(0, 1.85), record(1, 1.90)]), 1);
    assert_eq!(best_trial(&[record(0, 1.90), record(1, 1.85)]), 0);
    assert_eq!(best_trial(&[record(0, 1.9), record(1, 1.9)]), 0);
}

#[test]
fn search_is_reproducible_and_in_range() {
    let ranges = SearchRanges::default();
    let score = |c: &RigLConfig, seed: u64| {
        Ok(TrialOutcome {
            val_accuracy: 1.0 - (c.alpha - 0.8).abs() - (seed % 7) as f64 * 1e-3,
            sparsity: c.sparsity,
        })
    };
    let a = hparam_search(&ranges, &RigLConfig::paper(), 12, 2, 42, score).unwrap();
    let b = hparam_search(&ranges, &RigLConfig::paper(), 12, 2, 42, score).unwrap();
    assert_eq!(a, b);
    for t in &a.trials {
        assert!((0.95..=0.97).contains(&t.config.sparsity));
        assert!((100..=200).contains(&t.config.delta_t));
        assert!((0.7..=0.9).contains(&t.config.alpha));
    }
    let max = a
        .trials
        .iter()
        .map(|t| t.objective)
        .fold(f64::MIN, f64::max);
    assert_eq!(a.trials[a.best_trial].objective, max);
    assert!(hparam_search(&ranges, &RigLConfig::paper(), 0, 1, 42, score).is_err());
}

#[test]
fn paper_preset() {
    let p = RigLConfig::paper();
    assert_eq!((p.sparsity, p.delta_t, p.alpha), (0.951, 115, 0.758));
}

mod properties {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn er_allocation_meets_the_global_sparsity(widths in prop::collection::vec(1usize..40, 2..6), s in 0.0..0.99f64) {
            let a = erdos_renyi_allocation(&widths, s).unwrap();
            prop_assert!((weighted_mean(&widths, &a) - s).abs() < 1e-9);
            prop_assert!(a.iter().all(|&v| (0.0..1.0).contains(&v)));
        }

        #[test]
        fn rigl_update_lands_on_the_target_count(
            wg in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, any::<bool>()), 2..60),
            s in 0.1..0.9f64,
            k in 0usize..10,
        ) {
            let w: Vec<f64> = wg.iter().map(|p| if p.2 { p.0 } else { 0.0 }).collect();
            let g: Vec<f64> = wg.iter().map(|p| p.1).collect();
            let mask: Vec<bool> = wg.iter().map(|p| p.2).collect();
            let new = rigl_update(&w, &g, &mask, s, k);
            prop_assert_eq!(new.len(), mask.len());
            let target = active_target(w.len(), s);
            prop_assert_eq!(new.iter().filter(|&&m| m).count(), target);
            if mask.iter().filter(|&&m| m).count() == target {
                let dropped = mask.iter().zip(&new).filter(|(a, b)| **a && !**b).count();
                prop_assert!(dropped <= k);
            }
        }
    }
}
