//! Experiment pipeline behind the CLI: data preparation, training runs and
//! reports, each writing plain files into an output directory.
//!
//! A run directory holds `config.txt` (every key resolved), the shard CSVs
//! with `manifest.csv`, `metrics.csv` and `model.bin` (merged global
//! weights). Re-running `config.txt` reproduces every file byte for byte.

mod config;
mod model_io;
mod report;

pub use config::{DataSource, ExperimentConfig, FamilyKey, InnerKey, Method, OptimizerKind, ScalingKey, SplitKey, WeightingKey};
pub use model_io::{decode_params, encode_params, read_params, write_params, MAGIC, VERSION};
pub use report::{build_report, epoch_end_records, round_series, run_label, summarize, summary_table, svg_line_chart, Report, Series, SummaryRow};

use std::path::{Path, PathBuf};

use crate::data::{
    dirichlet_partition, load_csv, read_manifest, split_train_eval, synth_sequences_with, synth_vectors, write_partition, CsvSchema,
    DatasetKind, LabeledDataset, ManifestEntry, PartitionSpec, SequenceSpec,
};
use crate::error::{Error, Result, ResultExt};
use crate::federation::{run_training, EvalOptions, FederatedSetup, MetricsLog, RunOptions};
use crate::metrics::{compute_w_star, write_metrics_csv, W_STAR_TOL};
use crate::model::{Family, ModelConfig};

/// Seed streams derived from the experiment seed.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const EVAL_SPLIT: u64 = 3;
    pub const SCHEDULE: u64 = 4;
    pub const INIT: u64 = 5;
}

fn dataset_kind(cfg: &ExperimentConfig) -> DatasetKind {
    match cfg.model_config() {
        ModelConfig::Convex(c) => DatasetKind::Vector { dim: c.feature_dim },
        ModelConfig::Transformer(_) => DatasetKind::Sequence,
    }
}

fn schema(cfg: &ExperimentConfig) -> CsvSchema {
    CsvSchema {
        kind: dataset_kind(cfg),
        num_classes: cfg.num_classes,
    }
}

/// The full dataset for synthetic and single-file sources.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<LabeledDataset> {
    let seed = cfg.seed_for(streams::DATA);
    match cfg.data_source {
        DataSource::Synthetic => match cfg.model_config().family() {
            Family::Convex => synth_vectors(cfg.data_n, cfg.num_classes, cfg.feature_dim, cfg.cluster_sep, seed),
            Family::Transformer => {
                let spec = SequenceSpec {
                    noise: cfg.token_noise,
                    ..SequenceSpec::new(cfg.data_n, cfg.num_classes, cfg.vocab, cfg.seq_len)
                };
                synth_sequences_with(&spec, seed)
            }
        },
        DataSource::Csv => load_csv(Path::new(&cfg.data_path), &schema(cfg)),
        DataSource::Manifest => Err(Error::config("data.source = manifest has no single dataset; use client_shards")),
    }
}

/// One shard per client, before the eval split.
pub fn client_shards(cfg: &ExperimentConfig) -> Result<Vec<LabeledDataset>> {
    if cfg.data_source == DataSource::Manifest {
        let manifest = Path::new(&cfg.data_path);
        let dir = manifest.parent().unwrap_or(Path::new("."));
        let entries = read_manifest(manifest)?;
        if entries.len() != cfg.num_clients {
            return Err(Error::config(format!(
                "partition.num_clients: {} but the manifest lists {} shards",
                cfg.num_clients,
                entries.len()
            )));
        }
        return entries.iter().map(|e| load_csv(&dir.join(&e.file), &schema(cfg))).collect();
    }
    let ds = load_dataset(cfg)?;
    let spec = PartitionSpec {
        num_clients: cfg.num_clients,
        alpha: cfg.dirichlet_alpha,
        seed: cfg.seed_for(streams::PARTITION),
        equal_sizes: cfg.equal_sizes,
    };
    dirichlet_partition(&ds, &spec)
}

/// Client shards split into training shards and a pooled eval set.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub shards: Vec<LabeledDataset>,
    pub train: Vec<LabeledDataset>,
    pub eval: LabeledDataset,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let shards = client_shards(cfg)?;
    let (train, eval) = if cfg.eval_fraction > 0.0 {
        split_train_eval(&shards, cfg.eval_fraction, cfg.seed_for(streams::EVAL_SPLIT))?
    } else {
        (shards.clone(), LabeledDataset::empty(cfg.num_classes, dataset_kind(cfg)))
    };
    Ok(PreparedData { shards, train, eval })
}

/// Federated setup for `cfg`; computes the pooled optimum when
/// `eval.w_star` is on.
pub fn build_setup(cfg: &ExperimentConfig, train: &[LabeledDataset]) -> Result<FederatedSetup> {
    cfg.validate()?;
    let model = cfg.model_config();
    let w_star = if cfg.w_star {
        let pooled = LabeledDataset::concat(train)?;
        Some(compute_w_star(&pooled, &model, W_STAR_TOL)?)
    } else {
        None
    };
    Ok(FederatedSetup {
        model,
        initial: None,
        scheme: cfg.scheme,
        lora: cfg.lora_setup(),
        optimizer: cfg.optimizer_config(),
        aggregation: cfg.aggregation(),
        schedule: cfg.schedule(),
        init_seed: cfg.seed_for(streams::INIT),
        eval: EvalOptions { w_star, sigma: cfg.sigma },
    })
}

/// Prepare data and train, without touching the file system.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<(PreparedData, MetricsLog)> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let setup = build_setup(cfg, &data.train)?;
    let log = run_training(&setup, &data.train, &data.eval, opts)?;
    Ok((data, log))
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let path = dir.join("config.txt");
    std::fs::write(&path, cfg.to_text()).context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// Write shard CSVs, `manifest.csv` and `config.txt` into `cfg.out_dir`.
pub fn cmd_partition(cfg: &ExperimentConfig) -> Result<(PathBuf, Vec<ManifestEntry>)> {
    cfg.validate()?;
    let shards = client_shards(cfg)?;
    let dir = cfg.out_path();
    let out = write_partition(&dir, &shards)?;
    write_config(&dir, cfg)?;
    Ok(out)
}

/// Files produced by [`cmd_train`].
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub manifest: PathBuf,
    pub metrics: PathBuf,
    pub model: PathBuf,
    pub log: MetricsLog,
}

pub fn cmd_train(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunArtifacts> {
    let (data, log) = run_experiment(cfg, opts)?;
    let dir = cfg.out_path();
    let (manifest, _) = write_partition(&dir, &data.shards)?;
    let config = write_config(&dir, cfg)?;
    let metrics = dir.join("metrics.csv");
    write_metrics_csv(&metrics, &log.records)?;
    let model = dir.join("model.bin");
    write_params(&model, &log.global.effective()?)?;
    Ok(RunArtifacts {
        dir,
        config,
        manifest,
        metrics,
        model,
        log,
    })
}

/// Build the report and, when `out` is given, write `summary.txt` and the
/// SVG charts there.
pub fn cmd_report(paths: &[PathBuf], out: Option<&Path>) -> Result<Report> {
    let report = build_report(paths)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).context(|| format!("creating {}", dir.display()))?;
        let summary = dir.join("summary.txt");
        std::fs::write(&summary, &report.table).context(|| format!("writing {}", summary.display()))?;
        for (name, svg) in &report.charts {
            let path = dir.join(name);
            std::fs::write(&path, svg).context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(report)
}
