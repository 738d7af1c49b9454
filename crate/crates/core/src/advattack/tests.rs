use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::heads::{post_prune, HeadModel};
use crate::nn::OutputActivation;
use crate::Mlp;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn vae(seed: u64) -> VaeModel {
    VaeModel::new(4, 4, &[8], 3, &mut rng(seed)).unwrap()
}

fn images(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| (0..16).map(|_| r.random_range(0.05..0.95)).collect())
        .collect()
}

fn latent_head(scheme: Scheme, seed: u64) -> HeadModel {
    HeadModel {
        scheme,
        features: None,
        head: Mlp::new(
            &[3, 5, 1],
            false,
            OutputActivation::Identity,
            &mut rng(seed),
        )
        .unwrap(),
    }
}

fn linear_head(w: [f64; 3]) -> HeadModel {
    let mut head = Mlp::new(&[3, 1], false, OutputActivation::Identity, &mut rng(0)).unwrap();
    head.layers[0].weight.value = Tensor::new(3, 1, w.to_vec()).unwrap();
    HeadModel {
        scheme: Scheme::LatentDense,
        features: None,
        head,
    }
}

fn pixel_head(seed: u64) -> HeadModel {
    let mut r = rng(seed);
    let features = Mlp::new(&[16, 6], false, OutputActivation::Mish, &mut r).unwrap();
    let mut head = Mlp::new(&[6, 4, 1], true, OutputActivation::Identity, &mut r).unwrap();
    let bn = head.layers[0].norm.as_mut().unwrap();
    bn.running_mean = vec![0.1, -0.2, 0.3, 0.0];
    bn.running_var = vec![0.5, 2.0, 1.0, 0.25];
    HeadModel {
        scheme: Scheme::PixelDense,
        features: Some(features),
        head,
    }
}

#[test]
fn fgsm_examples() {
    let x = fgsm_perturb(&[0.0, 0.0, 0.0], &[-2.0, 0.0, 3.0], 0.1, None).unwrap();
    assert_eq!(x, vec![-0.1, 0.0, 0.1]);
    assert_eq!(
        fgsm_perturb(&[0.3, 0.7], &[1.0, -1.0], 0.0, Some([0.0, 1.0])).unwrap(),
        vec![0.3, 0.7]
    );
    assert_eq!(
        fgsm_perturb(&[0.95], &[2.0], 0.1, Some([0.0, 1.0])).unwrap(),
        vec![1.0]
    );
    assert!(fgsm_perturb(&[0.0], &[f64::NAN], 0.1, None).is_err());
    assert!(fgsm_perturb(&[0.0, 1.0], &[1.0], 0.1, None).is_err());
    let single = fgsm_perturb(&[0.5f32], &[-1.0f32], 0.25, None).unwrap();
    assert_eq!(single, vec![0.25f32]);
}

proptest! {
    #[test]
    fn perturbations_respect_the_linf_bound(
        xg in prop::collection::vec((0.0..1.0f64, -2.0..2.0f64), 1..40),
        eps in 0.0..1.5f64,
        zero_mask in prop::collection::vec(any::<bool>(), 40),
        clip in any::<bool>(),
    ) {
        let x: Vec<f64> = xg.iter().map(|p| p.0).collect();
        let g: Vec<f64> = xg.iter().zip(&zero_mask).map(|(p, &z)| if z { 0.0 } else { p.1 }).collect();
        let range = clip.then_some([0.0, 1.0]);
        let xp = fgsm_perturb(&x, &g, eps, range).unwrap();
        for k in 0..x.len() {
            let d = (xp[k] - x[k]).abs();
            prop_assert!(d <= eps);
            if !clip && g[k] != 0.0 {
                // Full step up to the rounding of `x + ε`.
                prop_assert!((d - eps).abs() <= 4.0 * f64::EPSILON * (x[k].abs() + eps));
            }
            if g[k] == 0.0 {
                prop_assert_eq!(xp[k], x[k]);
            }
            if clip {
                prop_assert!((0.0..=1.0).contains(&xp[k]));
            }
        }
    }
}

#[test]
fn planted_linear_head_flips() {
    let enc = vae(0);
    let head = linear_head([1.0, 0.0, 0.0]);
    let p = Pipeline::new(Scheme::LatentDense, Some(&enc), Head::Neural(&head)).unwrap();
    let z = vec![vec![0.2, 0.5, -1.0]];
    for loss in [AttackLoss::Hinge, AttackLoss::Margin] {
        let cfg = AttackConfig {
            loss,
            ..AttackConfig::latent(0.5)
        };
        let out = attack(&p, &z, &cfg).unwrap();
        assert!((out[0].perturbed[0] + 0.3).abs() < 1e-15);
        assert_eq!(&out[0].perturbed[1..], &[0.5, -1.0]);
        assert!(out[0].flipped);
    }
}

#[test]
fn hinge_attack_ignores_confident_samples() {
    let enc = vae(0);
    let head = linear_head([1.0, 0.0, 0.0]);
    let p = Pipeline::new(Scheme::LatentDense, Some(&enc), Head::Neural(&head)).unwrap();
    let z = vec![vec![1.5, 0.0, 0.0]];
    let hinge = attack(&p, &z, &AttackConfig::latent(2.0)).unwrap();
    assert_eq!(hinge[0].perturbed, z[0]);
    let margin = attack(
        &p,
        &z,
        &AttackConfig {
            loss: AttackLoss::Margin,
            ..AttackConfig::latent(2.0)
        },
    )
    .unwrap();
    assert_eq!(margin[0].perturbed[0], -0.5);
}

fn fd_check(p: &Pipeline<'_>, space: AttackSpace, xs: &[Vec<f64>]) {
    let grads = p.score_grads(space, xs).unwrap();
    let h = 1e-6;
    for (x, g) in xs.iter().zip(&grads) {
        for k in 0..x.len() {
            let mut a = x.clone();
            let mut b = x.clone();
            a[k] += h;
            b[k] -= h;
            let fd =
                (p.scores(space, &[a]).unwrap()[0] - p.scores(space, &[b]).unwrap()[0]) / (2.0 * h);
            assert!(
                (fd - g[k]).abs() <= 1e-6 * fd.abs().max(1.0),
                "k={k}: {fd} vs {}",
                g[k]
            );
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let enc = vae(1);
    let xs = images(3, 2);
    let dense = latent_head(Scheme::LatentDense, 3);
    let p2 = Pipeline::new(Scheme::LatentDense, Some(&enc), Head::Neural(&dense)).unwrap();
    fd_check(&p2, AttackSpace::Image, &xs);
    fd_check(&p2, AttackSpace::Latent, &[vec![0.3, -0.7, 1.1]]);
    let pix = pixel_head(4);
    let p1 = Pipeline::new(Scheme::PixelDense, None, Head::Neural(&pix)).unwrap();
    fd_check(&p1, AttackSpace::Image, &xs);
    let e: Expr = "z0 * (z1^2 + z2^2) - exp(sin(z2))".parse().unwrap();
    let p4 = Pipeline::new(Scheme::Symbolic, Some(&enc), Head::Symbolic(&e)).unwrap();
    fd_check(&p4, AttackSpace::Image, &xs);
    fd_check(&p4, AttackSpace::Latent, &[vec![0.3, -0.7, 1.1]]);
}

#[test]
fn pipeline_shape_rules() {
    let enc = vae(0);
    let pix = pixel_head(0);
    let dense = latent_head(Scheme::LatentDense, 0);
    assert!(Pipeline::new(Scheme::PixelDense, Some(&enc), Head::Neural(&pix)).is_err());
    assert!(Pipeline::new(Scheme::LatentSparse, Some(&enc), Head::Neural(&dense)).is_err());
    assert!(Pipeline::new(Scheme::LatentDense, None, Head::Neural(&dense)).is_err());
    let p1 = Pipeline::new(Scheme::PixelDense, None, Head::Neural(&pix)).unwrap();
    assert!(attack(&p1, &[vec![0.0; 3]], &AttackConfig::latent(0.1)).is_err());
    let p2 = Pipeline::new(Scheme::LatentDense, Some(&enc), Head::Neural(&dense)).unwrap();
    assert!(attack(
        &p2,
        &[vec![0.0; 3]],
        &AttackConfig::latent(0.1).restricted(vec![7])
    )
    .is_err());
    assert!(attack(&p2, &[vec![0.0; 3]], &AttackConfig::latent(-0.1)).is_err());
    assert!(attack(
        &p2,
        &[vec![0.0; 3]],
        &AttackConfig::latent(0.1).restricted(vec![])
    )
    .is_err());
}

#[test]
fn nonfinite_scores_are_errors() {
    let enc = vae(0);
    let e: Expr = "log(z0)".parse().unwrap();
    let p = Pipeline::new(Scheme::Symbolic, Some(&enc), Head::Symbolic(&e)).unwrap();
    assert!(attack(&p, &[vec![-1.0, 0.0, 0.0]], &AttackConfig::latent(0.1)).is_err());
}

fn sparse_head(seed: u64) -> HeadModel {
    let mut m = latent_head(Scheme::LatentSparse, seed);
    // Input 1 has no outgoing connections.
    let w = &mut m.head.layers[0].weight;
    let mut mask = vec![1.0; 15];
    for j in 0..5 {
        mask[5 + j] = 0.0;
    }
    w.set_mask(Tensor::new(3, 5, mask).unwrap()).unwrap();
    post_prune(&mut m.head).unwrap();
    m
}

#[test]
fn restricted_attacks_leave_sparse_and_symbolic_heads_unchanged() {
    let enc = vae(5);
    let sparse = sparse_head(6);
    let e: Expr = "z0 * z2 - 0.1".parse().unwrap();
    let mut r = rng(7);
    let zs: Vec<Vec<f64>> = (0..50)
        .map(|_| (0..3).map(|_| r.random_range(-2.0..2.0)).collect())
        .collect();
    let labels: Vec<Label> = (0..50)
        .map(|k| {
            if k % 2 == 0 {
                Label::Metaphase
            } else {
                Label::Interphase
            }
        })
        .collect();
    let eps = [0.0, 0.5, 1.0, 3.0];
    let p3 = Pipeline::new(Scheme::LatentSparse, Some(&enc), Head::Neural(&sparse)).unwrap();
    let p4 = Pipeline::new(Scheme::Symbolic, Some(&enc), Head::Symbolic(&e)).unwrap();
    for p in [p3, p4] {
        for loss in [AttackLoss::Hinge, AttackLoss::Margin] {
            let cfg = AttackConfig {
                loss,
                ..AttackConfig::latent(3.0).restricted(vec![1])
            };
            for s in attack(&p, &zs, &cfg).unwrap() {
                assert_eq!(s.score.to_bits(), s.clean_score.to_bits());
            }
            let curve = attack_curve(&p, &zs, &labels, &eps, &cfg).unwrap();
            assert!(curve
                .rows
                .iter()
                .all(|r| r.accuracy == curve.clean_accuracy && r.n_flipped == 0));
        }
    }
    // A dense head does react to the same dimension.
    let dense = latent_head(Scheme::LatentDense, 6);
    let p2 = Pipeline::new(Scheme::LatentDense, Some(&enc), Head::Neural(&dense)).unwrap();
    let cfg = AttackConfig {
        loss: AttackLoss::Margin,
        ..AttackConfig::latent(3.0).restricted(vec![1])
    };
    assert!(attack(&p2, &zs, &cfg)
        .unwrap()
        .iter()
        .any(|s| s.score != s.clean_score));
}

#[test]
fn curve_is_anchored_and_reproducible() {
    let enc = vae(8);
    let head = latent_head(Scheme::LatentDense, 9);
    let p = Pipeline::new(Scheme::LatentDense, Some(&enc), Head::Neural(&head)).unwrap();
    let xs = images(40, 10);
    let scores = p.scores(AttackSpace::Image, &xs).unwrap();
    // Labels agree with the model on most inputs.
    let labels: Vec<Label> = scores
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            if k % 5 == 0 {
                Label::from_sign(-s)
            } else {
                Label::from_sign(s)
            }
        })
        .collect();
    let eps = [0.0, 0.05, 0.1, 0.5];
    let cfg = AttackConfig {
        loss: AttackLoss::Margin,
        ..AttackConfig::image(0.0)
    };
    let a = attack_curve(&p, &xs, &labels, &eps, &cfg).unwrap();
    assert_eq!(a.rows[0].accuracy, a.clean_accuracy);
    assert_eq!(a.rows[0].n_flipped, 0);
    assert!(a.rows[3].accuracy < a.clean_accuracy);
    let b = attack_curve(&p, &xs, &labels, &eps, &cfg).unwrap();
    assert_eq!(curve_csv(&a.rows).unwrap(), curve_csv(&b.rows).unwrap());
    let text = String::from_utf8(curve_csv(&a.rows).unwrap()).unwrap();
    assert!(
        text.starts_with("epsilon,scheme,accuracy,n_flipped\n0.0,2,"),
        "{text}"
    );
    for bad in [&[0.1, 0.2][..], &[0.0, 0.2, 0.1][..], &[][..]] {
        assert!(attack_curve(&p, &xs, &labels, bad, &cfg).is_err());
    }
    for s in attack(
        &p,
        &xs,
        &AttackConfig {
            epsilon: 0.1,
            ..cfg.clone()
        },
    )
    .unwrap()
    {
        let d = s
            .original
            .iter()
            .zip(&s.perturbed)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(d <= 0.1);
    }
}

#[test]
fn blank_probe_is_consistent() {
    let enc = vae(11);
    let head = latent_head(Scheme::LatentDense, 12);
    let p = Pipeline::new(Scheme::LatentDense, Some(&enc), Head::Neural(&head)).unwrap();
    let a = p.blank_probe().unwrap();
    assert_eq!(a, p.blank_probe().unwrap());
    assert_eq!(a.label, classify(a.score).unwrap());
    let z = a.latent.clone().unwrap();
    assert_eq!(
        z,
        enc.encode_params(&Tensor::row(vec![0.0; 16]))
            .unwrap()
            .0
            .into_values()
    );
    let pix = pixel_head(13);
    let p1 = Pipeline::new(Scheme::PixelDense, None, Head::Neural(&pix)).unwrap();
    let b = p1.blank_probe().unwrap();
    assert!(b.latent.is_none());
    assert_eq!(b.score, pix.score(&[0.0; 16]));
}

#[test]
fn pgm_triplet_layout() {
    let s = AttackedSample {
        original: vec![0.5; 4],
        perturbed: vec![0.6, 0.4, 0.5, 0.6],
        clean_score: 1.0,
        score: -1.0,
        flipped: true,
    };
    let [o, p, d] = pgm_triplet(&s, 2, 2, 0.1).unwrap();
    for img in [&o, &p, &d] {
        assert!(img.starts_with(b"P5\n2 2\n65535\n"));
    }
    let (_, _, diff) = crate::fsio::decode_pgm16(&d).unwrap();
    assert_eq!(diff[0], 1.0);
    assert_eq!(diff[1], 0.0);
    assert!((diff[2] - 0.5).abs() < 1e-4);
}
