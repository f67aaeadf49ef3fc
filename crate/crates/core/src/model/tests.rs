use super::*;
use crate::linalg::{gaussian_init, RngSeed};
use rand::Rng;

fn convex_cfg(c: usize, dim: usize, lambda: f64) -> ModelConfig {
    ModelConfig::Convex(ConvexConfig {
        num_classes: c,
        feature_dim: dim,
        l2_lambda: lambda,
    })
}

fn tiny_transformer() -> ModelConfig {
    ModelConfig::Transformer(TransformerConfig {
        num_classes: 3,
        vocab: 7,
        hidden: 4,
        mlp_mult: 2,
        seq_len: 5,
    })
}

fn random_vectors(n: usize, dim: usize, c: usize, seed: u64) -> Vec<Sample> {
    let mut rng = RngSeed(seed).rng();
    (0..n)
        .map(|_| Sample {
            input: Input::Vector((0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()),
            label: rng.random_range(0..c),
        })
        .collect()
}

fn random_sequences(n: usize, cfg: &TransformerConfig, seed: u64) -> Vec<Sample> {
    let mut rng = RngSeed(seed).rng();
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=cfg.seq_len);
            Sample {
                input: Input::Tokens((0..len).map(|_| rng.random_range(0..cfg.vocab)).collect()),
                label: rng.random_range(0..cfg.num_classes),
            }
        })
        .collect()
}

#[test]
fn zero_convex_model_has_log_c_loss() {
    let cfg = convex_cfg(4, 3, 1e-3);
    let data: Vec<Sample> = (0..8)
        .map(|i| Sample {
            input: Input::Vector(vec![1.0, -0.5, i as f64]),
            label: i % 4,
        })
        .collect();
    let batch = Batch::from_slice(&data, 4).unwrap();
    let l = loss(&cfg.zero_params(), &cfg, &batch).unwrap();
    assert!((l - 4f64.ln()).abs() < 1e-14);
}

#[test]
fn convex_single_sample_scalar_check() {
    let cfg = convex_cfg(2, 2, 0.0);
    let mut params = cfg.zero_params();
    *params.get_mut("W").unwrap() = Matrix::from_rows(&[vec![0.3, -1.2], vec![1.5, 0.4]]).unwrap();
    let data = vec![Sample {
        input: Input::Vector(vec![1.0, 0.0]),
        label: 0,
    }];
    let batch = Batch::from_slice(&data, 2).unwrap();
    // logits = W·(1,0) = (0.3, 1.5); −log softmax₀ = log(1 + e^{1.2})
    let oracle = (1.0 + 1.2f64.exp()).ln();
    assert!((loss(&params, &cfg, &batch).unwrap() - oracle).abs() < 1e-14);
}

#[test]
fn zero_transformer_has_log_c_loss() {
    let cfg = tiny_transformer();
    let ModelConfig::Transformer(t) = &cfg else { unreachable!() };
    let data = random_sequences(6, t, 1);
    let batch = Batch::from_slice(&data, 3).unwrap();
    let l = loss(&cfg.zero_params(), &cfg, &batch).unwrap();
    assert!((l - 3f64.ln()).abs() < 1e-14);
}

#[test]
fn convex_gradient_matches_finite_differences() {
    for seed in 0..20u64 {
        let cfg = convex_cfg(3, 4, 0.05);
        let mut params = cfg.zero_params();
        *params.get_mut("W").unwrap() = gaussian_init(3, 4, 0.7, RngSeed(seed)).unwrap();
        let data = random_vectors(5, 4, 3, seed + 100);
        let batch = Batch::from_slice(&data, 3).unwrap();
        let (_, cache) = forward(&params, &cfg, &batch).unwrap();
        let g = backward(&params, &cfg, &batch, &cache).unwrap();
        let fd = finite_diff_grad(&params, &cfg, &batch, 1e-5).unwrap();
        assert!(g.max_relative_error(&fd).unwrap() <= 1e-5, "seed {seed}");
    }
}

#[test]
fn transformer_gradient_matches_finite_differences() {
    let cfg = tiny_transformer();
    let ModelConfig::Transformer(t) = &cfg else { unreachable!() };
    for seed in 0..20u64 {
        let params = cfg.init_params(RngSeed(seed)).unwrap();
        let data = random_sequences(3, t, seed + 50);
        let batch = Batch::from_slice(&data, 3).unwrap();
        let (_, cache) = forward(&params, &cfg, &batch).unwrap();
        let g = backward(&params, &cfg, &batch, &cache).unwrap();
        assert_eq!(g.len(), 8);
        let fd = finite_diff_grad(&params, &cfg, &batch, 1e-5).unwrap();
        assert!(g.max_relative_error(&fd).unwrap() <= 1e-5, "seed {seed}");
    }
}

#[test]
fn gradient_vanishes_for_zero_weights_and_features() {
    let cfg = convex_cfg(3, 2, 0.5);
    let data = vec![Sample {
        input: Input::Vector(vec![0.0, 0.0]),
        label: 1,
    }];
    let batch = Batch::from_slice(&data, 3).unwrap();
    let params = cfg.zero_params();
    let (_, cache) = forward(&params, &cfg, &batch).unwrap();
    let g = backward(&params, &cfg, &batch, &cache).unwrap();
    assert!(g.get("W").unwrap().is_zero());
}

#[test]
fn stale_cache_is_rejected() {
    let cfg = convex_cfg(2, 2, 1e-3);
    let data = random_vectors(4, 2, 2, 3);
    let batch = Batch::from_slice(&data, 2).unwrap();
    let params = cfg.zero_params();
    let (_, cache) = forward(&params, &cfg, &batch).unwrap();
    let mut moved = params.clone();
    moved.get_mut("W").unwrap()[(0, 0)] = 1.0;
    assert!(matches!(backward(&moved, &cfg, &batch, &cache), Err(Error::Contract(_))));
    let other = random_vectors(4, 2, 2, 4);
    let other_batch = Batch::from_slice(&other, 2).unwrap();
    assert!(backward(&params, &cfg, &other_batch, &cache).is_err());
}

#[test]
fn shape_mismatch_is_a_contract_error() {
    let cfg = convex_cfg(2, 3, 1e-3);
    let mut params = ParamSet::new();
    params.push("W", Matrix::zeros(2, 2), true).unwrap();
    let data = random_vectors(2, 3, 2, 1);
    let batch = Batch::from_slice(&data, 2).unwrap();
    assert!(matches!(forward(&params, &cfg, &batch), Err(Error::Contract(_))));
}

#[test]
fn finite_difference_exact_on_linear_loss() {
    let mut params = ParamSet::new();
    params.push("W", gaussian_init(2, 3, 1.0, RngSeed(9)).unwrap(), true).unwrap();
    let coef = gaussian_init(2, 3, 1.0, RngSeed(10)).unwrap();
    for &h in &[1e-3, 1e-5, 1e-7] {
        let fd = finite_difference(&params, &["W"], h, |p| Ok(p.get("W").unwrap().frobenius_dot(&coef))).unwrap();
        assert!(fd.get("W").unwrap().max_abs_diff(&coef) <= 1e-8, "h={h}");
    }
}

#[test]
fn finite_difference_is_second_order() {
    let cfg = convex_cfg(3, 3, 0.01);
    let mut params = cfg.zero_params();
    *params.get_mut("W").unwrap() = gaussian_init(3, 3, 1.0, RngSeed(2)).unwrap();
    let data = random_vectors(6, 3, 3, 8);
    let batch = Batch::from_slice(&data, 3).unwrap();
    let (_, cache) = forward(&params, &cfg, &batch).unwrap();
    let exact = backward(&params, &cfg, &batch, &cache).unwrap();
    let err = |h: f64| {
        finite_diff_grad(&params, &cfg, &batch, h)
            .unwrap()
            .get("W")
            .unwrap()
            .max_abs_diff(exact.get("W").unwrap())
    };
    let ratio = err(1e-3) / err(5e-4);
    assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    assert!(finite_diff_grad(&params, &cfg, &batch, 1e-2).is_err());
}

#[test]
fn selection_schemes() {
    let cfg = tiny_transformer();
    let p = cfg.init_params(RngSeed(0)).unwrap();
    let up = select_trainable(&p, &cfg, TrainableScheme::ProjectUp).unwrap();
    assert_eq!(up.trainable_names(), vec!["Wup"]);
    let qkv = select_trainable(&p, &cfg, TrainableScheme::AttentionQkv).unwrap();
    assert_eq!(qkv.trainable_names(), vec!["Wq", "Wk", "Wv"]);
    let both = select_trainable(&p, &cfg, TrainableScheme::ClassifierAndProjectUp).unwrap();
    assert_eq!(both.trainable_names(), vec!["Wup", "Wcls"]);
    let convex = convex_cfg(2, 2, 1e-3);
    let cp = convex.zero_params();
    assert_eq!(select_trainable(&cp, &convex, TrainableScheme::All).unwrap().trainable_names(), vec!["W"]);
    assert!(select_trainable(&cp, &convex, TrainableScheme::ProjectUp).is_err());
}

#[test]
fn forward_is_deterministic_and_order_invariant() {
    let cfg = tiny_transformer();
    let ModelConfig::Transformer(t) = &cfg else { unreachable!() };
    let params = cfg.init_params(RngSeed(4)).unwrap();
    let data = random_sequences(9, t, 5);
    let batch = Batch::from_slice(&data, 3).unwrap();
    let a = loss(&params, &cfg, &batch).unwrap();
    let b = loss(&params, &cfg, &batch).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    let rev: Vec<&Sample> = data.iter().rev().collect();
    let c = loss(&params, &cfg, &Batch::new(rev, 3).unwrap()).unwrap();
    assert!((a - c).abs() <= 1e-12);
}

#[test]
fn convex_loss_is_convex_on_random_chords() {
    let cfg = convex_cfg(3, 4, 1e-3);
    let data = random_vectors(10, 4, 3, 77);
    let batch = Batch::from_slice(&data, 3).unwrap();
    let mut rng = RngSeed(78).rng();
    for i in 0..50u64 {
        let w1 = gaussian_init(3, 4, 2.0, RngSeed(i * 2)).unwrap();
        let w2 = gaussian_init(3, 4, 2.0, RngSeed(i * 2 + 1)).unwrap();
        let t: f64 = rng.random_range(0.01..0.99);
        let mut mix = w1.scaled(t);
        mix.axpy(1.0 - t, &w2);
        let at = |w: Matrix| {
            let mut p = cfg.zero_params();
            *p.get_mut("W").unwrap() = w;
            loss(&p, &cfg, &batch).unwrap()
        };
        assert!(at(mix) <= t * at(w1) + (1.0 - t) * at(w2) + 1e-10);
    }
}

#[test]
fn batch_validates_labels() {
    let data = vec![Sample {
        input: Input::Vector(vec![0.0]),
        label: 5,
    }];
    assert!(Batch::from_slice(&data, 3).is_err());
    assert!(Batch::new(vec![], 3).is_err());
}
