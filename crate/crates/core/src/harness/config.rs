//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, so an empty file is a valid configuration. [`ExperimentConfig::to_text`]
//! writes every key in a fixed order, and parsing that text reproduces it
//! byte for byte.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::adapters::{LoraConfig, LoraScaling};
use crate::error::{Error, Result};
use crate::federation::{AggregationKind, AggregationStrategy, FlexSplit, LoraSetup, RoundSchedule, Weighting};
use crate::linalg::RngSeed;
use crate::model::{ConvexConfig, Family, ModelConfig, TransformerConfig, TrainableScheme};
use crate::optim::{AdamConfig, GaloreConfig, InnerRegularizer, OptimizerConfig, SgdConfig};

macro_rules! keyword_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            const ALL: &'static [(&'static str, $name)] = &[$(($text, $name::$variant)),+];
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let text = Self::ALL.iter().find(|(_, v)| v == self).map(|(t, _)| *t).unwrap_or("?");
                f.write_str(text)
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                Self::ALL.iter().find(|(t, _)| *t == s).map(|(_, v)| *v).ok_or_else(|| {
                    let options: Vec<&str> = Self::ALL.iter().map(|(t, _)| *t).collect();
                    format!("expected one of {}, got {s:?}", options.join("|"))
                })
            }
        }
    };
}

keyword_enum!(
    /// Training recipe: aggregation rule plus the local optimizer family.
    Method {
        FedFtg => "fedftg",
        DirectAdam => "direct_adam",
        DirectSgd => "direct_sgd",
        FedIt => "fedit",
        FlexLora => "flexlora",
        FfaLora => "ffalora",
    }
);

keyword_enum!(FamilyKey { Convex => "convex", Transformer => "transformer" });

keyword_enum!(
    /// Where training data comes from. `csv` is one labeled file that gets
    /// partitioned; `manifest` points at shards written by `partition`.
    DataSource {
        Synthetic => "synthetic",
        Csv => "csv",
        Manifest => "manifest",
    }
);

keyword_enum!(
    /// `auto` picks the method's natural optimizer: GaLore for fedftg,
    /// Adam for direct_adam and the adapter methods, SGD for direct_sgd.
    OptimizerKind {
        Auto => "auto",
        Sgd => "sgd",
        Adam => "adam",
        Galore => "galore",
    }
);

keyword_enum!(InnerKey { Adam => "adam", Sgd => "sgd" });
keyword_enum!(ScalingKey { AlphaOverRank => "alpha_over_rank", Alpha => "alpha" });
keyword_enum!(WeightingKey { Uniform => "uniform", BySize => "by_train_size" });
keyword_enum!(SplitKey { FoldIntoB => "fold_into_b", Sqrt => "sqrt" });

impl Method {
    pub fn aggregation(self) -> AggregationKind {
        match self {
            Method::FedFtg | Method::DirectAdam | Method::DirectSgd => AggregationKind::Direct,
            Method::FedIt => AggregationKind::FedIt,
            Method::FlexLora => AggregationKind::FlexLora,
            Method::FfaLora => AggregationKind::FfaLora,
        }
    }

    pub fn uses_adapters(self) -> bool {
        self.aggregation().uses_adapters()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub method: Method,
    pub family: FamilyKey,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub l2_lambda: f64,
    pub vocab: usize,
    pub hidden: usize,
    pub mlp_mult: usize,
    pub seq_len: usize,
    pub data_source: DataSource,
    pub data_path: String,
    pub data_n: usize,
    pub cluster_sep: f64,
    pub token_noise: f64,
    pub num_clients: usize,
    pub dirichlet_alpha: f64,
    pub equal_sizes: bool,
    pub eval_fraction: f64,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub lora_std: f64,
    pub lora_scaling: ScalingKey,
    pub lora_targets: Vec<String>,
    pub shared_a: bool,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub galore_rank: usize,
    pub galore_refresh: u64,
    pub galore_scale: f64,
    pub galore_inner: InnerKey,
    pub galore_targets: Vec<String>,
    pub reset_moments: bool,
    pub refresh_on_broadcast: bool,
    pub epochs: usize,
    pub t_agg: usize,
    pub batch_size: usize,
    /// 0 means one pass over the smallest shard.
    pub steps_per_epoch: usize,
    pub weighting: WeightingKey,
    pub flexlora_rank: usize,
    pub flex_split: SplitKey,
    pub scheme: TrainableScheme,
    pub w_star: bool,
    pub sigma: f64,
    pub out_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        ExperimentConfig {
            seed: 0,
            method: Method::FedFtg,
            family: FamilyKey::Transformer,
            num_classes: 4,
            feature_dim: 8,
            l2_lambda: 1e-3,
            vocab: 32,
            hidden: 16,
            mlp_mult: 2,
            seq_len: 16,
            data_source: DataSource::Synthetic,
            data_path: String::new(),
            data_n: 1500,
            cluster_sep: 2.0,
            token_noise: 0.5,
            num_clients: 4,
            dirichlet_alpha: 0.1,
            equal_sizes: true,
            eval_fraction: 0.2,
            lora_rank: 8,
            lora_alpha: 16.0,
            lora_std: 0.02,
            lora_scaling: ScalingKey::AlphaOverRank,
            lora_targets: vec!["Wq".into(), "Wk".into(), "Wv".into()],
            shared_a: true,
            optimizer: OptimizerKind::Auto,
            lr: 0.1,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            galore_rank: 8,
            galore_refresh: 200,
            galore_scale: 1.0,
            galore_inner: InnerKey::Adam,
            galore_targets: Vec::new(),
            reset_moments: false,
            refresh_on_broadcast: true,
            epochs: 3,
            t_agg: 10,
            batch_size: 8,
            steps_per_epoch: 0,
            weighting: WeightingKey::Uniform,
            flexlora_rank: 8,
            flex_split: SplitKey::FoldIntoB,
            scheme: TrainableScheme::ClassifierAndProjectUp,
            w_star: false,
            sigma: 1.0,
            out_dir: "runs/default".into(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::config(format!("{key}: {e} (value {value:?})")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list(value: &str) -> Vec<String> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

impl ExperimentConfig {
    /// Every key in serialization order.
    pub const KEYS: [&'static str; 49] = [
        "seed",
        "method",
        "model.family",
        "model.num_classes",
        "model.feature_dim",
        "model.l2_lambda",
        "model.vocab",
        "model.hidden",
        "model.mlp_mult",
        "model.seq_len",
        "data.source",
        "data.path",
        "data.n",
        "data.cluster_sep",
        "data.token_noise",
        "partition.num_clients",
        "partition.alpha",
        "partition.equal_sizes",
        "eval.fraction",
        "adapter.rank",
        "adapter.alpha",
        "adapter.std",
        "adapter.scaling",
        "adapter.targets",
        "adapter.shared_a",
        "optimizer.kind",
        "optimizer.lr",
        "optimizer.beta1",
        "optimizer.beta2",
        "optimizer.eps",
        "optimizer.galore_rank",
        "optimizer.galore_refresh",
        "optimizer.galore_scale",
        "optimizer.galore_inner",
        "optimizer.galore_targets",
        "optimizer.reset_moments",
        "optimizer.refresh_on_broadcast",
        "schedule.epochs",
        "schedule.t_agg",
        "schedule.batch_size",
        "schedule.steps_per_epoch",
        "aggregation.weighting",
        "aggregation.flexlora_rank",
        "aggregation.flex_split",
        "selection.scheme",
        "eval.w_star",
        "eval.sigma",
        "output.dir",
        "output.format_version",
    ];

    /// Parse config text over the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value, got {line:?}", i + 1)))?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(m) => Error::config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    /// Apply one `key=value` override, as passed to `--set`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "method" => self.method = parse_value(key, value)?,
            "model.family" => self.family = parse_value(key, value)?,
            "model.num_classes" => self.num_classes = parse_value(key, value)?,
            "model.feature_dim" => self.feature_dim = parse_value(key, value)?,
            "model.l2_lambda" => self.l2_lambda = parse_value(key, value)?,
            "model.vocab" => self.vocab = parse_value(key, value)?,
            "model.hidden" => self.hidden = parse_value(key, value)?,
            "model.mlp_mult" => self.mlp_mult = parse_value(key, value)?,
            "model.seq_len" => self.seq_len = parse_value(key, value)?,
            "data.source" => self.data_source = parse_value(key, value)?,
            "data.path" => self.data_path = value.to_string(),
            "data.n" => self.data_n = parse_value(key, value)?,
            "data.cluster_sep" => self.cluster_sep = parse_value(key, value)?,
            "data.token_noise" => self.token_noise = parse_value(key, value)?,
            "partition.num_clients" => self.num_clients = parse_value(key, value)?,
            "partition.alpha" => self.dirichlet_alpha = parse_value(key, value)?,
            "partition.equal_sizes" => self.equal_sizes = parse_bool(key, value)?,
            "eval.fraction" => self.eval_fraction = parse_value(key, value)?,
            "adapter.rank" => self.lora_rank = parse_value(key, value)?,
            "adapter.alpha" => self.lora_alpha = parse_value(key, value)?,
            "adapter.std" => self.lora_std = parse_value(key, value)?,
            "adapter.scaling" => self.lora_scaling = parse_value(key, value)?,
            "adapter.targets" => self.lora_targets = parse_list(value),
            "adapter.shared_a" => self.shared_a = parse_bool(key, value)?,
            "optimizer.kind" => self.optimizer = parse_value(key, value)?,
            "optimizer.lr" => self.lr = parse_value(key, value)?,
            "optimizer.beta1" => self.beta1 = parse_value(key, value)?,
            "optimizer.beta2" => self.beta2 = parse_value(key, value)?,
            "optimizer.eps" => self.eps = parse_value(key, value)?,
            "optimizer.galore_rank" => self.galore_rank = parse_value(key, value)?,
            "optimizer.galore_refresh" => self.galore_refresh = parse_value(key, value)?,
            "optimizer.galore_scale" => self.galore_scale = parse_value(key, value)?,
            "optimizer.galore_inner" => self.galore_inner = parse_value(key, value)?,
            "optimizer.galore_targets" => self.galore_targets = parse_list(value),
            "optimizer.reset_moments" => self.reset_moments = parse_bool(key, value)?,
            "optimizer.refresh_on_broadcast" => self.refresh_on_broadcast = parse_bool(key, value)?,
            "schedule.epochs" => self.epochs = parse_value(key, value)?,
            "schedule.t_agg" => self.t_agg = parse_value(key, value)?,
            "schedule.batch_size" => self.batch_size = parse_value(key, value)?,
            "schedule.steps_per_epoch" => self.steps_per_epoch = parse_value(key, value)?,
            "aggregation.weighting" => self.weighting = parse_value(key, value)?,
            "aggregation.flexlora_rank" => self.flexlora_rank = parse_value(key, value)?,
            "aggregation.flex_split" => self.flex_split = parse_value(key, value)?,
            "selection.scheme" => self.scheme = parse_value::<TrainableScheme>(key, value)?,
            "eval.w_star" => self.w_star = parse_bool(key, value)?,
            "eval.sigma" => self.sigma = parse_value(key, value)?,
            "output.dir" => self.out_dir = value.to_string(),
            "output.format_version" => {
                if value != "1" {
                    return Err(Error::config(format!("{key}: only version 1 is supported, got {value:?}")));
                }
            }
            _ => return Err(Error::config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let list = |v: &[String]| v.join(",");
        Some(match key {
            "seed" => self.seed.to_string(),
            "method" => self.method.to_string(),
            "model.family" => self.family.to_string(),
            "model.num_classes" => self.num_classes.to_string(),
            "model.feature_dim" => self.feature_dim.to_string(),
            "model.l2_lambda" => self.l2_lambda.to_string(),
            "model.vocab" => self.vocab.to_string(),
            "model.hidden" => self.hidden.to_string(),
            "model.mlp_mult" => self.mlp_mult.to_string(),
            "model.seq_len" => self.seq_len.to_string(),
            "data.source" => self.data_source.to_string(),
            "data.path" => self.data_path.clone(),
            "data.n" => self.data_n.to_string(),
            "data.cluster_sep" => self.cluster_sep.to_string(),
            "data.token_noise" => self.token_noise.to_string(),
            "partition.num_clients" => self.num_clients.to_string(),
            "partition.alpha" => self.dirichlet_alpha.to_string(),
            "partition.equal_sizes" => self.equal_sizes.to_string(),
            "eval.fraction" => self.eval_fraction.to_string(),
            "adapter.rank" => self.lora_rank.to_string(),
            "adapter.alpha" => self.lora_alpha.to_string(),
            "adapter.std" => self.lora_std.to_string(),
            "adapter.scaling" => self.lora_scaling.to_string(),
            "adapter.targets" => list(&self.lora_targets),
            "adapter.shared_a" => self.shared_a.to_string(),
            "optimizer.kind" => self.optimizer.to_string(),
            "optimizer.lr" => self.lr.to_string(),
            "optimizer.beta1" => self.beta1.to_string(),
            "optimizer.beta2" => self.beta2.to_string(),
            "optimizer.eps" => self.eps.to_string(),
            "optimizer.galore_rank" => self.galore_rank.to_string(),
            "optimizer.galore_refresh" => self.galore_refresh.to_string(),
            "optimizer.galore_scale" => self.galore_scale.to_string(),
            "optimizer.galore_inner" => self.galore_inner.to_string(),
            "optimizer.galore_targets" => list(&self.galore_targets),
            "optimizer.reset_moments" => self.reset_moments.to_string(),
            "optimizer.refresh_on_broadcast" => self.refresh_on_broadcast.to_string(),
            "schedule.epochs" => self.epochs.to_string(),
            "schedule.t_agg" => self.t_agg.to_string(),
            "schedule.batch_size" => self.batch_size.to_string(),
            "schedule.steps_per_epoch" => self.steps_per_epoch.to_string(),
            "aggregation.weighting" => self.weighting.to_string(),
            "aggregation.flexlora_rank" => self.flexlora_rank.to_string(),
            "aggregation.flex_split" => self.flex_split.to_string(),
            "selection.scheme" => self.scheme.to_string(),
            "eval.w_star" => self.w_star.to_string(),
            "eval.sigma" => self.sigma.to_string(),
            "output.dir" => self.out_dir.clone(),
            "output.format_version" => "1".to_string(),
            _ => return None,
        })
    }

    /// Canonical text form: every key, one per line, in [`Self::KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let value = self.get(key).expect("every listed key has a value");
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        }
        out
    }

    pub fn out_path(&self) -> PathBuf {
        PathBuf::from(&self.out_dir)
    }

    pub fn model_config(&self) -> ModelConfig {
        match self.family {
            FamilyKey::Convex => ModelConfig::Convex(ConvexConfig {
                num_classes: self.num_classes,
                feature_dim: self.feature_dim,
                l2_lambda: self.l2_lambda,
            }),
            FamilyKey::Transformer => ModelConfig::Transformer(TransformerConfig {
                num_classes: self.num_classes,
                vocab: self.vocab,
                hidden: self.hidden,
                mlp_mult: self.mlp_mult,
                seq_len: self.seq_len,
            }),
        }
    }

    pub fn resolved_optimizer_kind(&self) -> OptimizerKind {
        match (self.optimizer, self.method) {
            (OptimizerKind::Auto, Method::FedFtg) => OptimizerKind::Galore,
            (OptimizerKind::Auto, Method::DirectSgd) => OptimizerKind::Sgd,
            (OptimizerKind::Auto, _) => OptimizerKind::Adam,
            (k, _) => k,
        }
    }

    /// Cross-field checks; each message names the offending key.
    pub fn validate(&self) -> Result<()> {
        self.model_config().validate().map_err(|e| Error::config(format!("model: {}", e.root())))?;
        let kind = self.resolved_optimizer_kind();
        let expected = match self.method {
            Method::FedFtg => Some(OptimizerKind::Galore),
            Method::DirectAdam => Some(OptimizerKind::Adam),
            Method::DirectSgd => Some(OptimizerKind::Sgd),
            _ => None,
        };
        match expected {
            Some(e) if e != kind => {
                return Err(Error::config(format!(
                    "optimizer.kind: method {} runs {e}, got {kind}",
                    self.method
                )))
            }
            None if kind == OptimizerKind::Galore => {
                return Err(Error::config(format!(
                    "optimizer.kind: galore applies to direct methods, not {}",
                    self.method
                )))
            }
            _ => {}
        }
        let family = self.model_config().family();
        if self.method.uses_adapters() && self.lora_targets.is_empty() {
            return Err(Error::config(format!("adapter.targets: method {} needs at least one target", self.method)));
        }
        if !self.method.uses_adapters() {
            self.scheme
                .targets(family)
                .map_err(|e| Error::config(format!("selection.scheme: {}", e.root())))?;
        }
        if family == Family::Convex && self.data_source == DataSource::Synthetic && self.feature_dim == 0 {
            return Err(Error::config("model.feature_dim: must be positive"));
        }
        if self.num_clients == 0 {
            return Err(Error::config("partition.num_clients: must be at least 1"));
        }
        if !(0.0..=0.5).contains(&self.eval_fraction) {
            return Err(Error::config(format!("eval.fraction: must lie in [0, 0.5], got {}", self.eval_fraction)));
        }
        if self.w_star && family != Family::Convex {
            return Err(Error::config("eval.w_star: only available for the convex family"));
        }
        if self.data_source != DataSource::Synthetic && self.data_path.is_empty() {
            return Err(Error::config(format!("data.path: required for data.source = {}", self.data_source)));
        }
        self.schedule().validate().map_err(|e| Error::config(format!("schedule: {}", e.root())))?;
        self.optimizer_config()
            .build(&crate::model::ParamSet::new())
            .map_err(|e| Error::config(format!("optimizer: {}", e.root())))?;
        if let Some(l) = self.lora_setup() {
            l.config.validate().map_err(|e| Error::config(format!("adapter: {}", e.root())))?;
        }
        Ok(())
    }

    pub fn seed_for(&self, stream: u64) -> RngSeed {
        RngSeed(self.seed).derive(stream)
    }

    pub fn schedule(&self) -> RoundSchedule {
        RoundSchedule {
            epochs: self.epochs,
            t_agg: self.t_agg,
            batch_size: self.batch_size,
            steps_per_epoch: (self.steps_per_epoch > 0).then_some(self.steps_per_epoch),
            seed: self.seed_for(super::streams::SCHEDULE),
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        let adam = AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        };
        match self.resolved_optimizer_kind() {
            OptimizerKind::Sgd => OptimizerConfig::Sgd(SgdConfig { lr: self.lr }),
            OptimizerKind::Adam | OptimizerKind::Auto => OptimizerConfig::Adam(adam),
            OptimizerKind::Galore => {
                let inner = match self.galore_inner {
                    InnerKey::Sgd => InnerRegularizer::Sgd,
                    InnerKey::Adam => InnerRegularizer::Adam {
                        beta1: self.beta1,
                        beta2: self.beta2,
                        eps: self.eps,
                    },
                };
                let mut g = GaloreConfig::new(self.lr, self.galore_rank, inner);
                g.refresh_period = self.galore_refresh;
                g.scale = self.galore_scale;
                g.reset_moments_on_refresh = self.reset_moments;
                g.refresh_on_broadcast = self.refresh_on_broadcast;
                g.targets = (!self.galore_targets.is_empty()).then(|| self.galore_targets.clone());
                OptimizerConfig::Galore(g)
            }
        }
    }

    pub fn lora_setup(&self) -> Option<LoraSetup> {
        self.method.uses_adapters().then(|| {
            let mut config = LoraConfig::new(self.lora_rank, self.lora_alpha);
            config.init_std = self.lora_std;
            config.scaling = match self.lora_scaling {
                ScalingKey::AlphaOverRank => LoraScaling::AlphaOverRank,
                ScalingKey::Alpha => LoraScaling::Alpha,
            };
            config.frozen_a = self.method == Method::FfaLora;
            LoraSetup {
                config,
                targets: self.lora_targets.clone(),
                shared_a: self.shared_a,
            }
        })
    }

    pub fn aggregation(&self) -> AggregationStrategy {
        let mut a = AggregationStrategy::new(self.method.aggregation());
        a.weighting = match self.weighting {
            WeightingKey::Uniform => Weighting::Uniform,
            WeightingKey::BySize => Weighting::ByTrainSize,
        };
        a.flexlora_rank = self.flexlora_rank;
        a.flex_split = match self.flex_split {
            SplitKey::FoldIntoB => FlexSplit::FoldIntoB,
            SplitKey::Sqrt => FlexSplit::Sqrt,
        };
        a
    }
}
