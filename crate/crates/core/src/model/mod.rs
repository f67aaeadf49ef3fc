//! Differentiable model families with hand-written forward/backward passes.
//!
//! * [`ModelConfig::Convex`]: multinomial logistic regression with an L2
//!   penalty, strongly convex in its single weight `"W"` (shape `C×dim`).
//! * [`ModelConfig::Transformer`]: one attention block followed by a
//!   project-up / project-down MLP and a linear classifier over mean-pooled
//!   hidden states.
//!
//! Both report the batch-mean cross-entropy. Gradients are exact and
//! checked against [`finite_diff_grad`].

mod convex;
mod params;
mod transformer;

pub use params::{GradSet, Param, ParamSet};

/// Name of the single weight matrix of the convex family.
pub const CONVEX_WEIGHT: &str = convex::WEIGHT;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{gaussian_init, Matrix, RngSeed};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub l2_lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerConfig {
    pub num_classes: usize,
    pub vocab: usize,
    pub hidden: usize,
    pub mlp_mult: usize,
    pub seq_len: usize,
}

impl TransformerConfig {
    pub fn mlp_width(&self) -> usize {
        self.hidden * self.mlp_mult
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    Convex(ConvexConfig),
    Transformer(TransformerConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Convex,
    Transformer,
}

impl ModelConfig {
    pub fn family(&self) -> Family {
        match self {
            ModelConfig::Convex(_) => Family::Convex,
            ModelConfig::Transformer(_) => Family::Transformer,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ModelConfig::Convex(c) => c.num_classes,
            ModelConfig::Transformer(t) => t.num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Convex(c) => {
                if c.num_classes < 1 || c.feature_dim < 1 {
                    return Err(Error::config("convex model dimensions must be >= 1"));
                }
                if !(c.l2_lambda > 0.0) {
                    return Err(Error::config("convex model needs l2_lambda > 0"));
                }
            }
            ModelConfig::Transformer(t) => {
                if [t.num_classes, t.vocab, t.hidden, t.mlp_mult, t.seq_len].contains(&0) {
                    return Err(Error::config("transformer dimensions must be >= 1"));
                }
            }
        }
        Ok(())
    }

    /// Parameter names in canonical order.
    pub fn param_names(&self) -> Vec<&'static str> {
        match self {
            ModelConfig::Convex(_) => vec![convex::WEIGHT],
            ModelConfig::Transformer(_) => transformer::NAMES.to_vec(),
        }
    }

    pub fn param_shape(&self, name: &str) -> Option<(usize, usize)> {
        match self {
            ModelConfig::Convex(c) => (name == convex::WEIGHT).then_some((c.num_classes, c.feature_dim)),
            ModelConfig::Transformer(t) => {
                let (h, m) = (t.hidden, t.mlp_width());
                Some(match name {
                    "Emb" => (t.vocab, h),
                    "Wq" | "Wk" | "Wv" | "Wo" => (h, h),
                    "Wup" => (m, h),
                    "Wdown" => (h, m),
                    "Wcls" => (t.num_classes, h),
                    _ => return None,
                })
            }
        }
    }

    /// All-zero parameters, every matrix trainable.
    pub fn zero_params(&self) -> ParamSet {
        let mut ps = ParamSet::new();
        for name in self.param_names() {
            let (r, c) = self.param_shape(name).expect("known name");
            ps.push(name, Matrix::zeros(r, c), true).expect("unique names");
        }
        ps
    }

    /// Seeded initial parameters, every matrix trainable.
    ///
    /// The convex model starts at `W = 0`. Transformer weights are Gaussian
    /// with fan-in scaling (`Emb` unit variance).
    pub fn init_params(&self, seed: RngSeed) -> Result<ParamSet> {
        self.validate()?;
        match self {
            ModelConfig::Convex(_) => Ok(self.zero_params()),
            ModelConfig::Transformer(t) => {
                let mut ps = ParamSet::new();
                for (i, name) in transformer::NAMES.iter().enumerate() {
                    let (r, c) = self.param_shape(name).expect("known name");
                    let std = match *name {
                        "Emb" => 1.0,
                        "Wdown" => 1.0 / (t.mlp_width() as f64).sqrt(),
                        _ => 1.0 / (t.hidden as f64).sqrt(),
                    };
                    ps.push(*name, gaussian_init(r, c, std, seed.derive(i as u64))?, true)?;
                }
                Ok(ps)
            }
        }
    }
}

/// Model input: a feature vector (convex) or token indices (transformer).
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Vector(Vec<f64>),
    Tokens(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Input,
    pub label: usize,
}

/// Non-empty borrowed mini-batch with validated labels.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    samples: Vec<&'a Sample>,
}

impl<'a> Batch<'a> {
    pub fn new(samples: Vec<&'a Sample>, num_classes: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        if let Some(s) = samples.iter().find(|s| s.label >= num_classes) {
            return Err(Error::contract(format!(
                "label {} outside 0..{num_classes}",
                s.label
            )));
        }
        Ok(Self { samples })
    }

    pub fn from_slice(samples: &'a [Sample], num_classes: usize) -> Result<Self> {
        Self::new(samples.iter().collect(), num_classes)
    }

    pub fn samples(&self) -> &[&'a Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for s in &self.samples {
            s.label.hash(&mut h);
            match &s.input {
                Input::Vector(x) => x.iter().for_each(|v| v.to_bits().hash(&mut h)),
                Input::Tokens(t) => t.hash(&mut h),
            }
        }
        h.finish()
    }
}

/// Activations from [`forward`], tied to the exact parameters and batch used.
pub struct Cache {
    params_fp: u64,
    batch_fp: u64,
    inner: CacheInner,
}

enum CacheInner {
    Convex(Vec<Vec<f64>>),
    Transformer(Vec<transformer::SampleCache>),
}

/// Softmax probabilities and log-probabilities (max-subtracted).
pub(crate) fn softmax(logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|z| z - max).collect();
    let log_z = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
    let log_p: Vec<f64> = shifted.iter().map(|s| s - log_z).collect();
    (log_p.iter().map(|l| l.exp()).collect(), log_p)
}

/// Batch loss and the cache needed by [`backward`].
pub fn forward(params: &ParamSet, cfg: &ModelConfig, batch: &Batch<'_>) -> Result<(f64, Cache)> {
    check_shapes(params, cfg)?;
    let (loss, inner) = match cfg {
        ModelConfig::Convex(c) => {
            let (loss, probs) = convex::forward(params.require(convex::WEIGHT)?, c, batch)?;
            (loss, CacheInner::Convex(probs))
        }
        ModelConfig::Transformer(t) => {
            let (loss, caches) = transformer::forward(params, t, batch)?;
            (loss, CacheInner::Transformer(caches))
        }
    };
    if !loss.is_finite() {
        return Err(Error::numerical("non-finite loss"));
    }
    Ok((
        loss,
        Cache {
            params_fp: params.fingerprint(),
            batch_fp: batch.fingerprint(),
            inner,
        },
    ))
}

pub fn loss(params: &ParamSet, cfg: &ModelConfig, batch: &Batch<'_>) -> Result<f64> {
    forward(params, cfg, batch).map(|(l, _)| l)
}

/// Gradients of the batch loss for every trainable matrix.
pub fn backward(params: &ParamSet, cfg: &ModelConfig, batch: &Batch<'_>, cache: &Cache) -> Result<GradSet> {
    let names = params.trainable_names();
    backward_for(params, cfg, batch, cache, &names)
}

/// Gradients for the named matrices regardless of their trainable flags.
pub fn backward_for(
    params: &ParamSet,
    cfg: &ModelConfig,
    batch: &Batch<'_>,
    cache: &Cache,
    names: &[&str],
) -> Result<GradSet> {
    if cache.params_fp != params.fingerprint() || cache.batch_fp != batch.fingerprint() {
        return Err(Error::contract(
            "cache does not match the parameters/batch passed to backward",
        ));
    }
    for n in names {
        params.require(n)?;
    }
    match (cfg, &cache.inner) {
        (ModelConfig::Convex(c), CacheInner::Convex(probs)) => {
            let mut g = GradSet::new();
            if names.contains(&convex::WEIGHT) {
                g.insert(convex::WEIGHT, convex::backward(params.require(convex::WEIGHT)?, c, batch, probs)?);
            }
            Ok(g)
        }
        (ModelConfig::Transformer(t), CacheInner::Transformer(caches)) => {
            transformer::backward(params, t, batch, caches, names)
        }
        _ => Err(Error::contract("cache was produced by a different model family")),
    }
}

/// Loss plus gradients for `names` in one call.
pub fn loss_and_grad(
    params: &ParamSet,
    cfg: &ModelConfig,
    batch: &Batch<'_>,
    names: &[&str],
) -> Result<(f64, GradSet)> {
    let (loss, cache) = forward(params, cfg, batch)?;
    let grads = backward_for(params, cfg, batch, &cache, names)?;
    Ok((loss, grads))
}

/// Raw class scores for one input.
pub fn logits(params: &ParamSet, cfg: &ModelConfig, input: &Input) -> Result<Vec<f64>> {
    match cfg {
        ModelConfig::Convex(c) => convex::logits(params.require(convex::WEIGHT)?, c, input),
        ModelConfig::Transformer(t) => transformer::logits(params, t, input),
    }
}

/// Argmax class (lowest index on ties).
pub fn predict(params: &ParamSet, cfg: &ModelConfig, input: &Input) -> Result<usize> {
    let z = logits(params, cfg, input)?;
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Every parameter the model needs is present with the right shape.
pub fn check_shapes(params: &ParamSet, cfg: &ModelConfig) -> Result<()> {
    for name in cfg.param_names() {
        let m = params.require(name)?;
        let want = cfg.param_shape(name).expect("known name");
        if m.shape() != want {
            return Err(Error::contract(format!(
                "parameter {name:?} has shape {:?}, model expects {want:?}",
                m.shape()
            )));
        }
    }
    Ok(())
}

/// Central-difference gradient `(f(w+h) − f(w−h)) / 2h` of an arbitrary
/// scalar function of the named matrices.
pub fn finite_difference(
    params: &ParamSet,
    names: &[&str],
    h: f64,
    mut f: impl FnMut(&ParamSet) -> Result<f64>,
) -> Result<GradSet> {
    let mut work = params.clone();
    let mut grads = GradSet::new();
    for &name in names {
        let n = work.require(name)?.data().len();
        let (rows, cols) = work.require(name)?.shape();
        let mut g = Vec::with_capacity(n);
        for idx in 0..n {
            let orig = work.require(name)?.data()[idx];
            work.require_mut(name)?.data_mut()[idx] = orig + h;
            let plus = f(&work)?;
            work.require_mut(name)?.data_mut()[idx] = orig - h;
            let minus = f(&work)?;
            work.require_mut(name)?.data_mut()[idx] = orig;
            g.push((plus - minus) / (2.0 * h));
        }
        grads.insert(name, Matrix::from_vec(rows, cols, g)?);
    }
    Ok(grads)
}

/// Finite-difference oracle for the model loss over every trainable matrix.
pub fn finite_diff_grad(params: &ParamSet, cfg: &ModelConfig, batch: &Batch<'_>, h: f64) -> Result<GradSet> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Range(format!("finite-difference step {h} outside [1e-7, 1e-3]")));
    }
    let names = params.trainable_names();
    finite_difference(params, &names, h, |p| loss(p, cfg, batch))
}

/// Which matrices are fine-tuned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainableScheme {
    All,
    AttentionQkv,
    ProjectUp,
    ClassifierAndProjectUp,
}

impl TrainableScheme {
    pub fn targets(self, family: Family) -> Result<Vec<&'static str>> {
        match (family, self) {
            (Family::Convex, TrainableScheme::All) => Ok(vec![convex::WEIGHT]),
            (Family::Convex, other) => Err(Error::contract(format!(
                "scheme {other} is not available for the convex family"
            ))),
            (Family::Transformer, TrainableScheme::All) => Ok(transformer::NAMES.to_vec()),
            (Family::Transformer, TrainableScheme::AttentionQkv) => Ok(vec!["Wq", "Wk", "Wv"]),
            (Family::Transformer, TrainableScheme::ProjectUp) => Ok(vec!["Wup"]),
            (Family::Transformer, TrainableScheme::ClassifierAndProjectUp) => Ok(vec!["Wup", "Wcls"]),
        }
    }
}

impl fmt::Display for TrainableScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainableScheme::All => "all",
            TrainableScheme::AttentionQkv => "attention_qkv",
            TrainableScheme::ProjectUp => "project_up",
            TrainableScheme::ClassifierAndProjectUp => "classifier_and_project_up",
        })
    }
}

impl FromStr for TrainableScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(TrainableScheme::All),
            "attention_qkv" => Ok(TrainableScheme::AttentionQkv),
            "project_up" => Ok(TrainableScheme::ProjectUp),
            "classifier_and_project_up" => Ok(TrainableScheme::ClassifierAndProjectUp),
            other => Err(Error::config(format!("unknown trainable scheme {other:?}"))),
        }
    }
}

/// Copy of `params` with trainable flags set exactly on the scheme's targets.
pub fn select_trainable(params: &ParamSet, cfg: &ModelConfig, scheme: TrainableScheme) -> Result<ParamSet> {
    let targets = scheme.targets(cfg.family())?;
    let mut out = params.clone();
    for p in out.iter_mut() {
        p.trainable = targets.contains(&p.name.as_str());
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
