use super::*;
use crate::model::{self, Batch, ConvexConfig, ModelConfig, TransformerConfig};
use crate::optim::{AdamConfig, AdamState};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn max_class_share(shard: &LabeledDataset) -> f64 {
    let h = shard.histogram();
    let n: usize = h.iter().sum();
    *h.iter().max().unwrap() as f64 / n.max(1) as f64
}

#[test]
fn synth_vectors_balanced_and_deterministic() {
    let a = synth_vectors(103, 4, 6, 3.0, RngSeed(1)).unwrap();
    let b = synth_vectors(103, 4, 6, 3.0, RngSeed(1)).unwrap();
    let c = synth_vectors(103, 4, 6, 3.0, RngSeed(2)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let h = a.histogram();
    assert!(h.iter().max().unwrap() - h.iter().min().unwrap() <= 1);
    assert!(synth_vectors(3, 4, 6, 3.0, RngSeed(1)).is_err());
}

fn train_full_batch(params: &mut model::ParamSet, cfg: &ModelConfig, ds: &LabeledDataset, lr: f64, steps: usize) {
    let batch = Batch::from_slice(ds.items(), ds.num_classes()).unwrap();
    let mut adam = AdamState::new(AdamConfig::with_lr(lr), params).unwrap();
    let names: Vec<String> = params.trainable_names().iter().map(|n| n.to_string()).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    for _ in 0..steps {
        let (_, g) = model::loss_and_grad(params, cfg, &batch, &names).unwrap();
        adam.step(params, &g).unwrap();
    }
}

fn accuracy(params: &model::ParamSet, cfg: &ModelConfig, ds: &LabeledDataset) -> f64 {
    let hits = ds
        .items()
        .iter()
        .filter(|s| model::predict(params, cfg, &s.input).unwrap() == s.label)
        .count();
    hits as f64 / ds.len() as f64
}

#[test]
fn well_separated_clusters_are_learnable() {
    let ds = synth_vectors(200, 4, 8, 10.0, RngSeed(3)).unwrap();
    let cfg = ModelConfig::Convex(ConvexConfig {
        num_classes: 4,
        feature_dim: 8,
        l2_lambda: 1e-3,
    });
    let mut p = cfg.zero_params();
    train_full_batch(&mut p, &cfg, &ds, 0.1, 200);
    assert!(accuracy(&p, &cfg, &ds) >= 0.99);
}

#[test]
fn deterministic_chains_are_learnable() {
    let ds = synth_sequences(120, 3, 12, 6, RngSeed(4)).unwrap();
    assert!(ds.items().iter().all(|s| match &s.input {
        model::Input::Tokens(t) => t.iter().all(|&x| x < 12),
        _ => false,
    }));
    assert_eq!(ds, synth_sequences(120, 3, 12, 6, RngSeed(4)).unwrap());
    let cfg = ModelConfig::Transformer(TransformerConfig {
        num_classes: 3,
        vocab: 12,
        hidden: 8,
        mlp_mult: 2,
        seq_len: 6,
    });
    let mut p = cfg.init_params(RngSeed(5)).unwrap();
    train_full_batch(&mut p, &cfg, &ds, 0.02, 150);
    assert_eq!(accuracy(&p, &cfg, &ds), 1.0);
    assert!(synth_sequences(10, 3, 5, 6, RngSeed(4)).is_err());
}

#[test]
fn noisy_sequences_stay_in_vocabulary() {
    let spec = SequenceSpec {
        noise: 0.5,
        ..SequenceSpec::new(50, 4, 16, 10)
    };
    let ds = synth_sequences_with(&spec, RngSeed(9)).unwrap();
    let mut off_class = 0;
    for s in ds.items() {
        let model::Input::Tokens(t) = &s.input else { panic!() };
        assert!(t.iter().all(|&x| x < 16));
        off_class += t.iter().filter(|&&x| x % 4 != s.label).count();
    }
    assert!(off_class > 0);
}

#[test]
fn partition_covers_dataset_exactly() {
    let ds = synth_vectors(401, 5, 3, 1.0, RngSeed(6)).unwrap();
    for equal in [false, true] {
        let spec = PartitionSpec {
            num_clients: 6,
            alpha: 0.3,
            seed: RngSeed(7),
            equal_sizes: equal,
        };
        let idx = dirichlet_partition_indices(&ds.labels(), 5, &spec).unwrap();
        let mut all: Vec<usize> = idx.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..401).collect::<Vec<_>>());
        if equal {
            let sizes: Vec<usize> = idx.iter().map(Vec::len).collect();
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "{sizes:?}");
        }
        assert_eq!(idx, dirichlet_partition_indices(&ds.labels(), 5, &spec).unwrap());
    }
    let bad = PartitionSpec {
        num_clients: 2,
        alpha: 1.0,
        seed: RngSeed(0),
        equal_sizes: false,
    };
    assert!(matches!(dirichlet_partition_indices(&[0, 0, 2], 3, &bad), Err(Error::Contract(_))));
}

#[test]
fn large_alpha_matches_global_proportions() {
    let ds = synth_vectors(4000, 4, 2, 1.0, RngSeed(8)).unwrap();
    let global = ds.histogram().iter().map(|&h| h as f64 / 4000.0).collect::<Vec<_>>();
    let mut devs = Vec::new();
    for s in 0..20 {
        let spec = PartitionSpec {
            num_clients: 4,
            alpha: 1000.0,
            seed: RngSeed(100 + s),
            equal_sizes: false,
        };
        let shards = dirichlet_partition(&ds, &spec).unwrap();
        let worst = shards
            .iter()
            .flat_map(|sh| {
                let n = sh.len() as f64;
                sh.histogram()
                    .into_iter()
                    .zip(&global)
                    .map(move |(h, g)| ((h as f64 / n) - g).abs() / g)
            })
            .fold(0.0, f64::max);
        devs.push(worst);
    }
    assert!(median(devs) <= 0.10);
}

#[test]
fn skew_is_monotone_in_alpha() {
    let ds = synth_vectors(800, 4, 2, 1.0, RngSeed(9)).unwrap();
    let skew = |alpha: f64| {
        median(
            (0..20)
                .flat_map(|s| {
                    let spec = PartitionSpec {
                        num_clients: 4,
                        alpha,
                        seed: RngSeed(500 + s),
                        equal_sizes: false,
                    };
                    dirichlet_partition(&ds, &spec)
                        .unwrap()
                        .iter()
                        .filter(|sh| !sh.is_empty())
                        .map(max_class_share)
                        .collect::<Vec<_>>()
                })
                .collect(),
        )
    };
    let values: Vec<f64> = [0.1, 1.0, 10.0, 1000.0].into_iter().map(skew).collect();
    assert!(values[0] >= 0.5, "{values:?}");
    assert!(values.windows(2).all(|w| w[0] >= w[1]), "{values:?}");
}

#[test]
fn eval_split_sizes_and_disjointness() {
    let ds = synth_vectors(100, 4, 2, 1.0, RngSeed(10)).unwrap();
    let (train, eval) = split_train_eval(std::slice::from_ref(&ds), 0.05, RngSeed(11)).unwrap();
    assert_eq!(train[0].len(), 95);
    assert_eq!(eval.len(), 5);
    for e in eval.items() {
        assert!(!train[0].items().contains(e));
    }
    let big = synth_vectors(4 * 3712, 4, 2, 1.0, RngSeed(12)).unwrap();
    let shards = dirichlet_partition(
        &big,
        &PartitionSpec {
            num_clients: 4,
            alpha: 0.1,
            seed: RngSeed(13),
            equal_sizes: true,
        },
    )
    .unwrap();
    let (train, eval) = split_train_eval(&shards, 0.01, RngSeed(14)).unwrap();
    assert_eq!(eval.len(), 4 * 37);
    assert_eq!(train.iter().map(|t| t.len()).sum::<usize>() + eval.len(), big.len());
    let tiny = synth_vectors(10, 2, 2, 1.0, RngSeed(1)).unwrap();
    assert!(split_train_eval(std::slice::from_ref(&tiny), 0.05, RngSeed(1)).is_err());
    assert!(split_train_eval(&[tiny], 0.6, RngSeed(1)).is_err());
}

#[test]
fn stratified_split_keeps_every_class_in_training() {
    let ds = synth_vectors(40, 4, 2, 1.0, RngSeed(20)).unwrap();
    let (train, eval) = split_train_eval(&[ds], 0.5, RngSeed(21)).unwrap();
    assert_eq!(eval.histogram(), vec![5, 5, 5, 5]);
    assert!(train[0].histogram().iter().all(|&h| h >= 1));
}

#[test]
fn csv_round_trip_both_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let v = synth_vectors(20, 3, 4, 2.0, RngSeed(1)).unwrap();
    let path = dir.path().join("v.csv");
    write_csv(&path, &v).unwrap();
    let schema = CsvSchema {
        kind: v.kind(),
        num_classes: 3,
    };
    assert_eq!(load_csv(&path, &schema).unwrap(), v);
    let s = synth_sequences(15, 3, 9, 5, RngSeed(2)).unwrap();
    let path = dir.path().join("s.csv");
    write_csv(&path, &s).unwrap();
    let schema = CsvSchema {
        kind: DatasetKind::Sequence,
        num_classes: 3,
    };
    assert_eq!(load_csv(&path, &schema).unwrap(), s);
}

#[test]
fn csv_errors_name_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "f0,f1,label\n1.0,2.0,0\n1.0,abc,1\n").unwrap();
    let schema = CsvSchema {
        kind: DatasetKind::Vector { dim: 2 },
        num_classes: 2,
    };
    match load_csv(&path, &schema) {
        Err(Error::Parse { location, .. }) => assert!(location.ends_with(":3"), "{location}"),
        other => panic!("unexpected {other:?}"),
    }
    std::fs::write(&path, "").unwrap();
    let err = load_csv(&path, &schema).unwrap_err();
    assert!(matches!(err.root(), Error::Data(_)), "{err}");
    std::fs::write(&path, "f0,f1,label\n").unwrap();
    assert!(matches!(load_csv(&path, &schema).unwrap_err().root(), Error::Data(_)));
    std::fs::write(&path, "a,b,label\n1,2,0\n").unwrap();
    assert!(matches!(load_csv(&path, &schema).unwrap_err().root(), Error::Data(_)));
    assert!(matches!(load_csv(&dir.path().join("missing.csv"), &schema).unwrap_err().root(), Error::Io(_)));
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_vectors(60, 3, 2, 1.0, RngSeed(3)).unwrap();
    let shards = dirichlet_partition(
        &ds,
        &PartitionSpec {
            num_clients: 3,
            alpha: 1.0,
            seed: RngSeed(4),
            equal_sizes: true,
        },
    )
    .unwrap();
    let (manifest, entries) = write_partition(dir.path(), &shards).unwrap();
    assert_eq!(read_manifest(&manifest).unwrap(), entries);
    assert_eq!(entries.iter().map(|e| e.size).sum::<usize>(), 60);
    assert_eq!(entries[1].histogram, shards[1].histogram());
}
