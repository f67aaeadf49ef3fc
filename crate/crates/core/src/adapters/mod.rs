//! LoRA adapters: `W = W₀ + scale · B · A` on selected matrices.
//!
//! A [`LoraModel`] keeps the frozen base weights and the adapter factors in
//! two separate [`ParamSet`]s. The adapter set is what optimizers and
//! aggregators see; its entries are named `<target>.lora_B` and
//! `<target>.lora_A`.

use crate::error::{Error, Result};
use crate::linalg::{gaussian_init, Matrix, RngSeed};
use crate::model::{self, Batch, GradSet, ModelConfig, ParamSet};

/// How the raw LoRA alpha becomes the multiplier on `B·A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoraScaling {
    /// `scale = alpha / r`
    AlphaOverRank,
    /// `scale = alpha`
    Alpha,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub scaling: LoraScaling,
    pub init_std: f64,
    pub frozen_a: bool,
}

impl LoraConfig {
    pub fn new(rank: usize, alpha: f64) -> Self {
        LoraConfig {
            rank,
            alpha,
            scaling: LoraScaling::AlphaOverRank,
            init_std: 0.02,
            frozen_a: false,
        }
    }

    pub fn scale(&self) -> f64 {
        match self.scaling {
            LoraScaling::AlphaOverRank => self.alpha / self.rank as f64,
            LoraScaling::Alpha => self.alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Range("lora rank must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Range(format!("lora alpha must be positive, got {}", self.alpha)));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::Range(format!("lora init std must be positive, got {}", self.init_std)));
        }
        Ok(())
    }
}

/// One adapter: `A` is `r×k`, `B` is `d×r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair {
    pub target: String,
    pub a: Matrix,
    pub b: Matrix,
    pub scale: f64,
    pub frozen_a: bool,
}

impl LoraPair {
    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn effective_update(&self) -> Matrix {
        effective_update(self)
    }
}

pub fn b_name(target: &str) -> String {
    format!("{target}.lora_B")
}

pub fn a_name(target: &str) -> String {
    format!("{target}.lora_A")
}

/// Freeze each target in `params` and create its adapter with `B = 0` and
/// Gaussian `A`. Target `i` draws `A` from `seed.derive(i)`.
pub fn attach_lora(
    params: &mut ParamSet,
    targets: &[&str],
    r: usize,
    scale: f64,
    std: f64,
    frozen_a: bool,
    seed: RngSeed,
) -> Result<Vec<LoraPair>> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::contract(format!("lora scale must be positive, got {scale}")));
    }
    let mut pairs = Vec::with_capacity(targets.len());
    for (i, &t) in targets.iter().enumerate() {
        let (d, k) = params
            .get(t)
            .ok_or_else(|| Error::contract(format!("unknown lora target {t:?}")))?
            .shape();
        if r == 0 || r > d.min(k) {
            return Err(Error::contract(format!("lora rank {r} outside 1..={} for {t:?}", d.min(k))));
        }
        params.set_trainable(t, false)?;
        pairs.push(LoraPair {
            target: t.to_string(),
            a: gaussian_init(r, k, std, seed.derive(i as u64))?,
            b: Matrix::zeros(d, r),
            scale,
            frozen_a,
        });
    }
    Ok(pairs)
}

/// `scale · B · A`.
pub fn effective_update(pair: &LoraPair) -> Matrix {
    pair.b.matmul(&pair.a).scaled(pair.scale)
}

/// `base + scale · B · A`, leaving `base` untouched.
pub fn merge_lora(base: &Matrix, pair: &LoraPair) -> Result<Matrix> {
    let (d, k) = (pair.b.rows(), pair.a.cols());
    if base.shape() != (d, k) {
        return Err(Error::contract(format!(
            "adapter for {:?} is {d}x{k} but base is {:?}",
            pair.target,
            base.shape()
        )));
    }
    Ok(base + &effective_update(pair))
}

/// Chain rule from `∇W` to `(∇B, ∇A)`; `∇A` is absent when `A` is frozen.
pub fn lora_backward_map(grad_w: &Matrix, pair: &LoraPair) -> (Matrix, Option<Matrix>) {
    let grad_b = grad_w.matmul_t(&pair.a).scaled(pair.scale);
    let grad_a = (!pair.frozen_a).then(|| pair.b.t_matmul(grad_w).scaled(pair.scale));
    (grad_b, grad_a)
}

/// A model whose targets carry LoRA adapters.
#[derive(Debug, Clone)]
pub struct LoraModel {
    base: ParamSet,
    adapters: ParamSet,
    targets: Vec<(String, f64)>,
}

impl LoraModel {
    /// Attach adapters to `targets`; every base matrix becomes non-trainable.
    pub fn attach(mut base: ParamSet, targets: &[&str], cfg: &LoraConfig, seed: RngSeed) -> Result<Self> {
        cfg.validate()?;
        let pairs = attach_lora(&mut base, targets, cfg.rank, cfg.scale(), cfg.init_std, cfg.frozen_a, seed)?;
        let names: Vec<String> = base.names().iter().map(|s| s.to_string()).collect();
        for n in names {
            base.set_trainable(&n, false)?;
        }
        Self::from_pairs(base, pairs)
    }

    pub fn from_pairs(base: ParamSet, pairs: Vec<LoraPair>) -> Result<Self> {
        let mut adapters = ParamSet::new();
        let mut targets = Vec::new();
        for p in pairs {
            adapters.push(b_name(&p.target), p.b, true)?;
            adapters.push(a_name(&p.target), p.a, !p.frozen_a)?;
            targets.push((p.target, p.scale));
        }
        Ok(LoraModel { base, adapters, targets })
    }

    pub fn base(&self) -> &ParamSet {
        &self.base
    }

    pub fn adapters(&self) -> &ParamSet {
        &self.adapters
    }

    pub fn adapters_mut(&mut self) -> &mut ParamSet {
        &mut self.adapters
    }

    pub fn target_names(&self) -> Vec<&str> {
        self.targets.iter().map(|(t, _)| t.as_str()).collect()
    }

    pub fn pair(&self, target: &str) -> Result<LoraPair> {
        let scale = self
            .targets
            .iter()
            .find(|(t, _)| t == target)
            .map(|(_, s)| *s)
            .ok_or_else(|| Error::contract(format!("{target:?} has no adapter")))?;
        Ok(LoraPair {
            target: target.to_string(),
            a: self.adapters.require(&a_name(target))?.clone(),
            b: self.adapters.require(&b_name(target))?.clone(),
            scale,
            frozen_a: !self.adapters.is_trainable(&a_name(target)),
        })
    }

    pub fn pairs(&self) -> Vec<LoraPair> {
        self.targets
            .iter()
            .map(|(t, _)| self.pair(t).expect("targets and adapters agree"))
            .collect()
    }

    /// Overwrite the factors of an existing adapter.
    pub fn set_pair(&mut self, pair: &LoraPair) -> Result<()> {
        let b = self.adapters.require_mut(&b_name(&pair.target))?;
        if b.shape() != pair.b.shape() {
            return Err(Error::contract(format!("B shape mismatch for {:?}", pair.target)));
        }
        *b = pair.b.clone();
        let a = self.adapters.require_mut(&a_name(&pair.target))?;
        if a.shape() != pair.a.shape() {
            return Err(Error::contract(format!("A shape mismatch for {:?}", pair.target)));
        }
        *a = pair.a.clone();
        Ok(())
    }

    /// Base weights with every adapter folded in.
    pub fn merged(&self) -> Result<ParamSet> {
        let mut out = self.base.clone();
        for pair in self.pairs() {
            let merged = merge_lora(self.base.require(&pair.target)?, &pair)?;
            *out.require_mut(&pair.target)? = merged;
        }
        Ok(out)
    }

    /// Loss at the merged weights and its gradient with respect to the
    /// trainable adapter factors.
    pub fn loss_and_grad(&self, cfg: &ModelConfig, batch: &Batch<'_>) -> Result<(f64, GradSet)> {
        let (loss, grads, _) = self.loss_and_grads(cfg, batch)?;
        Ok((loss, grads))
    }

    /// As [`LoraModel::loss_and_grad`], also returning the full-weight
    /// gradients of the targets at the merged weights.
    pub fn loss_and_grads(&self, cfg: &ModelConfig, batch: &Batch<'_>) -> Result<(f64, GradSet, GradSet)> {
        let merged = self.merged()?;
        let (loss, cache) = model::forward(&merged, cfg, batch)?;
        let targets = self.target_names();
        let gw = model::backward_for(&merged, cfg, batch, &cache, &targets)?;
        let grads = self.map_gradients(&gw)?;
        Ok((loss, grads, gw))
    }

    /// Map full-weight gradients of the targets onto the adapters.
    pub fn map_gradients(&self, grad_w: &GradSet) -> Result<GradSet> {
        let mut out = GradSet::new();
        for pair in self.pairs() {
            let (gb, ga) = lora_backward_map(grad_w.require(&pair.target)?, &pair);
            out.insert(b_name(&pair.target), gb);
            if let Some(ga) = ga {
                out.insert(a_name(&pair.target), ga);
            }
        }
        Ok(out)
    }
}
