//! Local optimizers: SGD, Adam and GaLore.
//!
//! Every step returns the applied direction `G̃` (the matrix that was
//! multiplied by the learning rate and subtracted) so callers can log it.

mod adam;
mod galore;

pub use adam::{AdamConfig, AdamState, Moments};
pub use galore::{galore_refresh, galore_step, GaloreConfig, GaloreParamState, GaloreState, InnerRegularizer, Projector};

use crate::error::{Error, Result};
use crate::model::{GradSet, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
}

impl SgdConfig {
    pub fn new(lr: f64) -> Result<Self> {
        let cfg = SgdConfig { lr };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Range(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// `W -= lr · grad` for every trainable parameter that has a gradient.
///
/// Gradients for non-trainable parameters are ignored; trainable parameters
/// without a gradient are left as they are.
pub fn sgd_step(params: &mut ParamSet, grads: &GradSet, cfg: &SgdConfig) -> Result<GradSet> {
    cfg.validate()?;
    grads.check_congruent(params)?;
    let mut applied = GradSet::new();
    for (name, g) in grads.iter() {
        if !params.is_trainable(name) {
            continue;
        }
        params.require_mut(name)?.axpy(-cfg.lr, g);
        applied.insert(name, g.clone());
    }
    Ok(applied)
}

/// Construction recipe for a [`LocalOptimizer`].
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerConfig {
    Sgd(SgdConfig),
    Adam(AdamConfig),
    Galore(GaloreConfig),
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match self {
            OptimizerConfig::Sgd(c) => c.lr,
            OptimizerConfig::Adam(c) => c.lr,
            OptimizerConfig::Galore(c) => c.lr,
        }
    }

    pub fn build(&self, params: &ParamSet) -> Result<LocalOptimizer> {
        Ok(match self {
            OptimizerConfig::Sgd(c) => {
                c.validate()?;
                LocalOptimizer::Sgd(*c)
            }
            OptimizerConfig::Adam(c) => LocalOptimizer::Adam(AdamState::new(*c, params)?),
            OptimizerConfig::Galore(c) => LocalOptimizer::Galore(GaloreState::new(c.clone(), params)?),
        })
    }
}

/// Per-client optimizer with its state.
#[derive(Debug, Clone)]
pub enum LocalOptimizer {
    Sgd(SgdConfig),
    Adam(AdamState),
    Galore(GaloreState),
}

impl LocalOptimizer {
    pub fn lr(&self) -> f64 {
        match self {
            LocalOptimizer::Sgd(c) => c.lr,
            LocalOptimizer::Adam(s) => s.config().lr,
            LocalOptimizer::Galore(s) => s.config().lr,
        }
    }

    /// Apply one step and return the direction that was scaled by `lr`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradSet) -> Result<GradSet> {
        match self {
            LocalOptimizer::Sgd(c) => sgd_step(params, grads, c),
            LocalOptimizer::Adam(s) => s.step(params, grads),
            LocalOptimizer::Galore(s) => galore_step(s, params, grads),
        }
    }

    /// Called when the server overwrites the client's weights.
    pub fn on_broadcast(&mut self) {
        if let LocalOptimizer::Galore(s) = self {
            if s.config().refresh_on_broadcast {
                s.request_refresh();
            }
        }
    }
}
