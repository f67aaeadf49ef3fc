//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::time::{Duration, Instant};

use fedtune::adapters::{effective_update, LoraConfig};
use fedtune::data::{dirichlet_partition, split_train_eval, synth_sequences, synth_sequences_with, synth_vectors, LabeledDataset, PartitionSpec, SequenceSpec};
use fedtune::federation::{
    run_training, AggregationKind, AggregationStrategy, EvalOptions, FederatedSetup, LoraSetup, MetricsLog, ModelState, RoundSchedule, RunOptions,
};
use fedtune::harness::{cmd_train, run_experiment, ExperimentConfig};
use fedtune::linalg::{gaussian_init, numerical_rank, spectral_norm, Matrix, RngSeed};
use fedtune::metrics::{
    bound_direct, bound_ffalora, compute_w_star, e2_uniform_limit, generalization_bounds, metrics_csv_bytes, norm_bound_audit, BoundInputs, NormAuditPoint,
};
use fedtune::model::{self, Batch, ConvexConfig, ModelConfig, TrainableScheme, TransformerConfig};
use fedtune::optim::{galore_step, sgd_step, AdamConfig, GaloreConfig, GaloreState, InnerRegularizer, OptimizerConfig, SgdConfig};
use fedtune::Result;
use rand::Rng;

/// Verdict plus a one-line summary of the measured values.
struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Result<Check> {
    Ok(Check { pass, detail: detail.into() })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn convex(num_classes: usize, feature_dim: usize, l2_lambda: f64) -> ModelConfig {
    ModelConfig::Convex(ConvexConfig {
        num_classes,
        feature_dim,
        l2_lambda,
    })
}

fn partition(ds: &LabeledDataset, num_clients: usize, alpha: f64, seed: u64) -> Result<Vec<LabeledDataset>> {
    dirichlet_partition(
        ds,
        &PartitionSpec {
            num_clients,
            alpha,
            seed: RngSeed(seed),
            equal_sizes: true,
        },
    )
}

fn lora(rank: usize, alpha: f64, frozen_a: bool, targets: &[&str]) -> LoraSetup {
    let mut config = LoraConfig::new(rank, alpha);
    config.frozen_a = frozen_a;
    LoraSetup {
        config,
        targets: targets.iter().map(|s| s.to_string()).collect(),
        shared_a: true,
    }
}

fn schedule(epochs: usize, t_agg: usize, batch_size: usize, steps_per_epoch: Option<usize>, seed: u64) -> RoundSchedule {
    RoundSchedule {
        epochs,
        t_agg,
        batch_size,
        steps_per_epoch,
        seed: RngSeed(seed),
    }
}

fn setup(model: ModelConfig, kind: AggregationKind, optimizer: OptimizerConfig, lora: Option<LoraSetup>, schedule: RoundSchedule, init: u64) -> FederatedSetup {
    FederatedSetup {
        model,
        initial: None,
        scheme: TrainableScheme::All,
        lora,
        optimizer,
        aggregation: AggregationStrategy::new(kind),
        schedule,
        init_seed: RngSeed(init),
        eval: EvalOptions::default(),
    }
}

fn no_eval(train: &[LabeledDataset]) -> LabeledDataset {
    LabeledDataset::empty(train[0].num_classes(), train[0].kind())
}

fn c1_gradients() -> Result<Check> {
    let mut rng = RngSeed(11).rng();
    let mut worst = [0.0f64; 2];
    let mut count = [0usize; 2];
    for inst in 0..25u64 {
        let c = rng.random_range(2..=5);
        let dim = rng.random_range(2..=8);
        let cfg = convex(c, dim, rng.random_range(0.0..0.1));
        let mut params = cfg.init_params(RngSeed(inst)).unwrap();
        *params.require_mut(model::CONVEX_WEIGHT)? = gaussian_init(c, dim, 0.8, RngSeed(100 + inst))?;
        let data = synth_vectors(rng.random_range(c..=12), c, dim, 1.5, RngSeed(200 + inst))?;
        let batch = Batch::from_slice(data.items(), c)?;
        let (_, g) = model::loss_and_grad(&params, &cfg, &batch, &params.trainable_names())?;
        let fd = model::finite_diff_grad(&params, &cfg, &batch, 1e-5)?;
        worst[0] = worst[0].max(g.max_relative_error(&fd)?);
        count[0] += 1;
    }
    for inst in 0..25u64 {
        let num_classes = rng.random_range(2..=4);
        let t = TransformerConfig {
            num_classes,
            vocab: rng.random_range(2 * num_classes..=10),
            hidden: rng.random_range(2..=6),
            mlp_mult: rng.random_range(1..=2),
            seq_len: rng.random_range(2..=6),
        };
        let cfg = ModelConfig::Transformer(t.clone());
        let params = cfg.init_params(RngSeed(300 + inst))?;
        let data = synth_sequences(rng.random_range(t.num_classes..=6), t.num_classes, t.vocab, t.seq_len, RngSeed(400 + inst))?;
        let batch = Batch::from_slice(data.items(), t.num_classes)?;
        let names: Vec<&str> = params.names();
        let (_, g) = model::loss_and_grad(&params, &cfg, &batch, &names)?;
        let fd = model::finite_diff_grad(&params, &cfg, &batch, 1e-5)?;
        worst[1] = worst[1].max(g.max_relative_error(&fd)?);
        count[1] += 1;
    }
    check(
        worst.iter().all(|&w| w <= 1e-5),
        format!("convex {} instances max rel err {:.2e}, transformer {} instances max rel err {:.2e}", count[0], worst[0], count[1], worst[1]),
    )
}

fn c2_frozen_a_gradient_sum() -> Result<Check> {
    let t = TransformerConfig {
        num_classes: 3,
        vocab: 12,
        hidden: 6,
        mlp_mult: 2,
        seq_len: 6,
    };
    let cfg = ModelConfig::Transformer(t);
    let ds = synth_sequences(180, 3, 12, 6, RngSeed(21))?;
    let lr = 0.05;
    let (t_agg, s) = (5, 4);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for n in [1usize, 3] {
        let shards = partition(&ds, n, 0.5, 22)?;
        let st = setup(
            cfg.clone(),
            AggregationKind::FfaLora,
            OptimizerConfig::Sgd(SgdConfig { lr }),
            Some(lora(2, 4.0, true, &["Wq", "Wv"])),
            schedule(1, t_agg, 4, Some(s * t_agg), 23),
            24,
        );
        let opts = RunOptions {
            record_gradients: true,
            ..RunOptions::default()
        };
        let log = run_training(&st, &shards, &no_eval(&shards), &opts)?;
        if log.aggregations.len() != s {
            return check(false, format!("N={n}: {} aggregations, expected {s}", log.aggregations.len()));
        }
        let initial = log.initial.pairs();
        let ModelState::Lora(global) = &log.global else { return check(false, "FFA-LoRA run has no adapters") };
        for p0 in &initial {
            let gram = p0.a.t_matmul(&p0.a);
            // Every aggregation: the global update equals the averaged, A₀ᵀA₀-filtered gradient sum so far.
            for agg in &log.aggregations {
                let mut sum = Matrix::zeros(p0.b.rows(), p0.a.cols());
                for g in log.gradients.iter().filter(|g| g.local_step <= agg.local_steps) {
                    sum.axpy(1.0, g.grads.require(&p0.target)?);
                }
                let closed = sum.matmul(&gram).scaled(-lr / n as f64 * p0.scale * p0.scale);
                let measured = if p0.target == log.probe {
                    agg.agg_update.clone()
                } else if agg.round == s {
                    effective_update(&global.pair(&p0.target).expect("target"))
                } else {
                    continue;
                };
                worst = worst.max((&measured - &closed).frobenius_norm() / closed.frobenius_norm());
                checked += 1;
            }
        }
    }
    check(worst <= 1e-8, format!("N in {{1,3}}, t_agg {t_agg}, S {s}: {checked} reconstructions, max rel err {worst:.2e}"))
}

fn c3_rank_bounds() -> Result<Check> {
    let mut rng = RngSeed(31).rng();
    let trials = 1000;
    let (mut within, mut generic) = (0, 0);
    for trial in 0..trials as u64 {
        let d = rng.random_range(8..=32);
        let k = rng.random_range(8..=32);
        let n = rng.random_range(2..=5);
        let ranks: Vec<usize> = (0..n).map(|_| rng.random_range(1..=4)).collect();
        let mut avg = Matrix::zeros(d, k);
        for (i, &r) in ranks.iter().enumerate() {
            let seed = RngSeed(trial).derive(i as u64);
            let b = gaussian_init(d, r, 1.0, seed.derive(0))?;
            let a = gaussian_init(r, k, 1.0, seed.derive(1))?;
            avg.axpy(1.0 / n as f64, &b.matmul(&a));
        }
        let rank = numerical_rank(&avg, None)?;
        let lo = *ranks.iter().max().unwrap();
        let hi = ranks.iter().sum::<usize>().min(d).min(k);
        within += usize::from(lo <= rank && rank <= hi);
        generic += usize::from(rank == hi);
    }
    let rate = generic as f64 / trials as f64;
    check(within == trials && rate >= 0.99, format!("{trials} trials: {within} within bounds, generic rank rate {:.1}%", 100.0 * rate))
}

fn c4_full_rank_galore() -> Result<Check> {
    let lr = 0.1;
    let mut worst = 0.0f64;
    let mut shapes = Vec::new();
    for (c, dim) in [(3usize, 8usize), (5, 5), (8, 3)] {
        let cfg = convex(c, dim, 1e-2);
        let data = synth_vectors(160, c, dim, 2.0, RngSeed(41 + c as u64))?;
        let init = cfg.init_params(RngSeed(42))?;
        let mut plain = init.clone();
        let mut projected = init;
        let gcfg = GaloreConfig {
            refresh_period: 1,
            ..GaloreConfig::new(lr, c.min(dim), InnerRegularizer::Sgd)
        };
        let mut state = GaloreState::new(gcfg, &projected)?;
        let sgd = SgdConfig { lr };
        let names = [model::CONVEX_WEIGHT];
        for step in 0..100 {
            let start = (step * 8) % (data.len() - 8);
            let batch = Batch::from_slice(&data.items()[start..start + 8], c)?;
            let (_, g) = model::loss_and_grad(&plain, &cfg, &batch, &names)?;
            sgd_step(&mut plain, &g, &sgd)?;
            let (_, g) = model::loss_and_grad(&projected, &cfg, &batch, &names)?;
            galore_step(&mut state, &mut projected, &g)?;
            worst = worst.max(plain.require(names[0])?.max_abs_diff(projected.require(names[0])?));
        }
        shapes.push(format!("{c}x{dim}"));
    }
    check(worst <= 1e-12, format!("shapes {}, 100 steps, max trajectory gap {worst:.2e}", shapes.join("/")))
}

fn audit_points(log: &MetricsLog) -> Vec<NormAuditPoint> {
    log.aggregations
        .iter()
        .map(|a| NormAuditPoint {
            weight_norm: a.weight_norm,
            local_steps: a.local_steps,
            grad_bound: a.grad_bound,
        })
        .collect()
}

fn c5_norm_audit() -> Result<Check> {
    let mut runs = 0;
    let mut rounds = 0;
    let mut failed = Vec::new();
    let mut audit = |label: String, log: &MetricsLog| -> Result<()> {
        let b0 = spectral_norm(log.initial.effective()?.require(&log.probe)?)?;
        let verdicts = norm_bound_audit(&audit_points(log), 1.0, b0);
        runs += 1;
        rounds += verdicts.len();
        if verdicts.is_empty() || !verdicts.iter().all(|&v| v) {
            failed.push(label);
        }
        Ok(())
    };
    let cfg = convex(4, 6, 1e-3);
    let ds = synth_vectors(400, 4, 6, 2.0, RngSeed(51))?;
    for n in [1usize, 2, 4] {
        let shards = partition(&ds, n, 0.1, 52)?;
        for t_agg in [1usize, 5, 10] {
            for lr in [0.05, 0.5] {
                let st = setup(cfg.clone(), AggregationKind::Direct, OptimizerConfig::Sgd(SgdConfig { lr }), None, schedule(2, t_agg, 4, Some(30), 53), 54);
                let log = run_training(&st, &shards, &no_eval(&shards), &RunOptions::default())?;
                audit(format!("convex N={n} t_agg={t_agg} lr={lr}"), &log)?;
            }
        }
    }
    let t = TransformerConfig {
        num_classes: 4,
        vocab: 16,
        hidden: 8,
        mlp_mult: 2,
        seq_len: 8,
    };
    let ds = synth_sequences(300, 4, 16, 8, RngSeed(55))?;
    for n in [2usize, 3] {
        let shards = partition(&ds, n, 0.1, 56)?;
        let mut st = setup(
            ModelConfig::Transformer(t.clone()),
            AggregationKind::Direct,
            OptimizerConfig::Sgd(SgdConfig { lr: 0.2 }),
            None,
            schedule(2, 5, 8, None, 57),
            58,
        );
        st.scheme = TrainableScheme::ClassifierAndProjectUp;
        let log = run_training(&st, &shards, &no_eval(&shards), &RunOptions::default())?;
        audit(format!("transformer Wup N={n}"), &log)?;
    }
    check(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{runs} SGD runs, {rounds} aggregations, bound holds at every one")
        } else {
            format!("violations in {}", failed.join(", "))
        },
    )
}

/// Final-round excess risk of direct SGD and FFA-LoRA for one seed.
fn convex_pair(n_clients: usize, seed: u64) -> Result<[f64; 2]> {
    let cfg = convex(4, 8, 1e-3);
    let ds = synth_vectors(2000, 4, 8, 2.0, RngSeed(seed))?;
    let shards = partition(&ds, n_clients, 0.1, seed + 10)?;
    let (train, eval) = split_train_eval(&shards, 0.05, RngSeed(seed + 20))?;
    let w_star = compute_w_star(&LabeledDataset::concat(&train)?, &cfg, 1e-8)?;
    let mut out = [0.0; 2];
    for (slot, kind) in [AggregationKind::Direct, AggregationKind::FfaLora].into_iter().enumerate() {
        let adapters = (kind == AggregationKind::FfaLora).then(|| lora(1, 16.0, true, &[model::CONVEX_WEIGHT]));
        let mut st = setup(cfg.clone(), kind, OptimizerConfig::Sgd(SgdConfig { lr: 0.1 }), adapters, schedule(1, 10, 1, Some(300), seed + 30), seed + 40);
        st.eval = EvalOptions {
            w_star: Some(w_star.clone()),
            sigma: 1.0,
        };
        let log = run_training(&st, &train, &eval, &RunOptions::default())?;
        out[slot] = log.final_global_record().and_then(|r| r.excess_risk).expect("excess risk logged");
    }
    Ok(out)
}

fn c6_convex_trend() -> Result<Check> {
    let seeds = 0..5u64;
    let mut per_n = Vec::new();
    for n in [2usize, 4] {
        per_n.push(seeds.clone().map(|s| convex_pair(n, s)).collect::<Result<Vec<_>>>()?);
    }
    let med = |runs: &[[f64; 2]], slot: usize| median(runs.iter().map(|r| r[slot]).collect());
    let ratio = |slot: usize| median(per_n[1].iter().zip(&per_n[0]).map(|(four, two)| four[slot] / two[slot]).collect());
    let below = (0..2).all(|i| med(&per_n[i], 0) < med(&per_n[i], 1));
    let (rd, rf) = (ratio(0), ratio(1));
    check(
        below && rf > rd,
        format!(
            "median excess risk direct/FFA: N=2 {:.4}/{:.4}, N=4 {:.4}/{:.4}; N4:N2 ratio direct {rd:.3}, FFA {rf:.3}",
            med(&per_n[0], 0),
            med(&per_n[0], 1),
            med(&per_n[1], 0),
            med(&per_n[1], 1)
        ),
    )
}

fn c7_flexlora_tail() -> Result<Check> {
    let t = TransformerConfig {
        num_classes: 4,
        vocab: 16,
        hidden: 8,
        mlp_mult: 2,
        seq_len: 8,
    };
    let ds = synth_sequences(400, 4, 16, 8, RngSeed(71))?;
    let run = |shards: &[LabeledDataset]| -> Result<Vec<f64>> {
        let mut st = setup(
            ModelConfig::Transformer(t.clone()),
            AggregationKind::FlexLora,
            OptimizerConfig::Adam(AdamConfig::with_lr(0.03)),
            Some(lora(4, 8.0, false, &["Wq", "Wv"])),
            schedule(2, 5, 8, None, 72),
            73,
        );
        st.aggregation.flexlora_rank = 4;
        let log = run_training(&st, shards, &no_eval(shards), &RunOptions::default())?;
        Ok(log.aggregations.iter().map(|a| a.tail_mass.expect("FlexLoRA logs tail mass")).collect())
    };
    let skewed = run(&partition(&ds, 4, 0.1, 74)?)?;
    let same = vec![ds.subset(&(0..100).collect::<Vec<_>>()); 4];
    let identical = run(&same)?;
    let after_first = &skewed[1..];
    let min_tail = after_first.iter().copied().fold(f64::INFINITY, f64::min);
    check(
        !after_first.is_empty() && min_tail > 0.0 && identical.iter().all(|&m| m == 0.0),
        format!(
            "non-IID: {} rounds, min tail mass after round 1 {min_tail:.3e}; identical shards: max tail mass {:.1e} over {} rounds",
            skewed.len(),
            identical.iter().copied().fold(0.0, f64::max),
            identical.len()
        ),
    )
}

/// Best end-of-epoch pooled-eval macro-F1 of FedFTG, FlexLoRA and FFA-LoRA.
fn ordering_seed(n_clients: usize, seed: u64) -> Result<[f64; 3]> {
    let cfg = ModelConfig::Transformer(TransformerConfig {
        num_classes: 4,
        vocab: 32,
        hidden: 16,
        mlp_mult: 2,
        seq_len: 16,
    });
    let spec = SequenceSpec {
        noise: 0.5,
        ..SequenceSpec::new(1500, 4, 32, 16)
    };
    let ds = synth_sequences_with(&spec, RngSeed(seed))?;
    let shards = partition(&ds, n_clients, 0.1, seed + 10)?;
    let (train, eval) = split_train_eval(&shards, 0.2, RngSeed(seed + 20))?;
    let qkv = ["Wq", "Wk", "Wv"];
    let fedftg = OptimizerConfig::Galore(GaloreConfig {
        refresh_period: 200,
        ..GaloreConfig::new(0.1, 8, InnerRegularizer::adam_default())
    });
    let methods = [
        (AggregationKind::Direct, fedftg, None),
        (AggregationKind::FlexLora, OptimizerConfig::Adam(AdamConfig::with_lr(0.03)), Some(lora(8, 16.0, false, &qkv))),
        (AggregationKind::FfaLora, OptimizerConfig::Adam(AdamConfig::with_lr(0.3)), Some(lora(8, 16.0, true, &qkv))),
    ];
    let mut out = [0.0; 3];
    for (slot, (kind, optimizer, adapters)) in methods.into_iter().enumerate() {
        let mut st = setup(cfg.clone(), kind, optimizer, adapters, schedule(3, 10, 8, None, seed + 30), seed + 40);
        st.scheme = TrainableScheme::ClassifierAndProjectUp;
        st.aggregation.flexlora_rank = 8;
        let log = run_training(&st, &train, &eval, &RunOptions::default())?;
        out[slot] = (1..=3)
            .filter_map(|e| log.global_records().filter(|r| r.epoch == e).last().and_then(|r| r.macro_f1))
            .fold(0.0, f64::max);
    }
    Ok(out)
}

fn c8_method_ordering() -> Result<Check> {
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [3usize, 4] {
        let runs = (200..205u64).map(|s| ordering_seed(n, s)).collect::<Result<Vec<_>>>()?;
        let m: Vec<f64> = (0..3).map(|i| median(runs.iter().map(|r| r[i]).collect())).collect();
        pass &= m[0] >= m[1] && m[1] >= m[2];
        parts.push(format!("N={n} {:.3}/{:.3}/{:.3}", m[0], m[1], m[2]));
    }
    check(pass, format!("median macro-F1 FedFTG/FlexLoRA/FFA-LoRA: {}", parts.join(", ")))
}

fn c9_bounds() -> Result<Check> {
    let b = BoundInputs {
        d: 1.0,
        n_clients: 2,
        s: 3,
        t_agg: 4,
        c: 0.5,
        alpha: 0.01,
        w_star_norm: 2.0,
        ..BoundInputs::default()
    };
    let zero = BoundInputs { s: 0, ..b };
    let g = BoundInputs {
        sigma: 1.0,
        n: 100,
        q: 32,
        rows: 4,
        cols: 4,
        n_clients: 1,
        r: 2,
        ..BoundInputs::default()
    };
    let gb = generalization_bounds(&g, &[Matrix::zeros(4, 4)])?;
    let e3 = (2.0 * std::f64::consts::LN_2 / 100.0 * 2.0 * 32.0 * 4.0).sqrt();
    let e2 = (2.0 / 100.0 * 4.0 * 4f64.ln()).sqrt();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let results = [
        ("direct 0.62", close(bound_direct(&b), 0.62)),
        ("ffalora 288.24", close(bound_ffalora(&b), 288.24)),
        ("S=0 direct = c", close(bound_direct(&zero), 0.5)),
        ("S=0 ffalora = 0", close(bound_ffalora(&zero), 0.0)),
        ("E1 3.2", close(gb.e1, 3.2)),
        ("E3 1.884", close(gb.e3, e3) && (gb.e3 - 1.884).abs() < 5e-4),
        ("E2 uniform 0.333", close(gb.e2, e2) && close(e2_uniform_limit(1.0, 100, 4, 4), e2) && (e2 - 0.333).abs() < 5e-4),
    ];
    let bad: Vec<&str> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    check(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} examples within 1e-12", results.len())
        } else {
            format!("mismatch: {}", bad.join(", "))
        },
    )
}

fn c10_determinism() -> Result<Check> {
    let tmp = tempfile::tempdir()?;
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for method in ["fedftg", "flexlora", "ffalora"] {
        let mut cfg = ExperimentConfig::default();
        for o in [format!("method={method}"), "data.n=240".into(), "partition.num_clients=3".into(), "schedule.epochs=2".into(), "seed=9".into()] {
            cfg.apply_override(&o)?;
        }
        let bytes = |opts: RunOptions| -> Result<Vec<u8>> { metrics_csv_bytes(&run_experiment(&cfg, &opts)?.1.records) };
        let base = bytes(RunOptions::default())?;
        let variants = [
            RunOptions::default(),
            RunOptions {
                client_order: Some(vec![2, 0, 1]),
                ..RunOptions::default()
            },
            RunOptions {
                client_order: Some(vec![1, 2, 0]),
                ..RunOptions::default()
            },
            RunOptions {
                parallel: true,
                ..RunOptions::default()
            },
        ];
        for v in variants {
            compared += 1;
            if bytes(v)? != base {
                mismatches.push(method.to_string());
            }
        }
        let mut files = Vec::new();
        for run in ["a", "b"] {
            cfg.out_dir = tmp.path().join(format!("{method}_{run}")).to_string_lossy().into_owned();
            let art = cmd_train(&cfg, &RunOptions::default())?;
            files.push(std::fs::read(&art.metrics)?);
        }
        compared += 1;
        if files[0] != files[1] || files[0] != base {
            mismatches.push(format!("{method} metrics.csv"));
        }
    }
    check(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("{compared} comparisons byte-identical (repeat runs, client orders, parallel, metrics.csv files)")
        } else {
            format!("differences: {}", mismatches.join(", "))
        },
    )
}

type Criterion = (u32, &'static str, Duration, fn() -> Result<Check>);

fn main() {
    let min = |m: u64| Duration::from_secs(60 * m);
    let criteria: [Criterion; 10] = [
        (1, "gradient correctness", min(1), c1_gradients),
        (2, "FFA-LoRA gradient-sum exactness", min(1), c2_frozen_a_gradient_sum),
        (3, "rank bounds of averaged updates", min(1), c3_rank_bounds),
        (4, "full-rank GaLore equals SGD", min(1), c4_full_rank_galore),
        (5, "SGD norm-bound audit", min(10), c5_norm_audit),
        (6, "convex excess-risk trend", min(10), c6_convex_trend),
        (7, "FlexLoRA truncation tail mass", min(5), c7_flexlora_tail),
        (8, "desk-scale method ordering", min(30), c8_method_ordering),
        (9, "bound calculators", min(1), c9_bounds),
        (10, "determinism and order invariance", min(10), c10_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (id, name, limit, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == &id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(c) => (c.pass && elapsed < limit, c.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let timing = if elapsed < limit { String::new() } else { format!(" over the {}s limit", limit.as_secs()) };
        println!(
            "criterion {id:>2} {}: {name}: {detail} [{:.1}s{timing}]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        failures += usize::from(!pass);
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
