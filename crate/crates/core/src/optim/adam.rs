use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{GradSet, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Range(format!("adam lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Range(format!("adam {name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Range(format!("adam eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected first and second moments for one matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Matrix,
    pub v: Matrix,
    pub t: u64,
}

impl Moments {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Moments {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            t: 0,
        }
    }

    pub fn reset(&mut self) {
        let (r, c) = self.m.shape();
        *self = Moments::zeros(r, c);
    }

    /// Advance the moments with `g` and return `m̂ / (√v̂ + ε)`.
    pub fn direction(&mut self, g: &Matrix, cfg: &AdamConfig) -> Result<Matrix> {
        if g.shape() != self.m.shape() {
            return Err(Error::contract(format!(
                "gradient {:?} does not match moment shape {:?}",
                g.shape(),
                self.m.shape()
            )));
        }
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let mut dir = Matrix::zeros(g.rows(), g.cols());
        let out = dir.data_mut();
        let (m, v) = (self.m.data_mut(), self.v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            out[i] = (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
        }
        Ok(dir)
    }
}

/// Adam over a fixed set of matrices.
#[derive(Debug, Clone)]
pub struct AdamState {
    cfg: AdamConfig,
    moments: Vec<(String, Moments)>,
}

impl AdamState {
    /// Zero moments for every trainable parameter.
    pub fn new(cfg: AdamConfig, params: &ParamSet) -> Result<Self> {
        cfg.validate()?;
        let moments = params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| (p.name.clone(), Moments::zeros(p.value.rows(), p.value.cols())))
            .collect();
        Ok(AdamState { cfg, moments })
    }

    /// A state that tracks nothing yet; stepping it is a contract error.
    pub fn uninitialized(cfg: AdamConfig) -> Self {
        AdamState { cfg, moments: Vec::new() }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn moments(&self, name: &str) -> Option<&Moments> {
        self.moments.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &GradSet) -> Result<GradSet> {
        grads.check_congruent(params)?;
        let mut applied = GradSet::new();
        for (name, g) in grads.iter() {
            if !params.is_trainable(name) {
                continue;
            }
            let state = self
                .moments
                .iter_mut()
                .find(|(n, _)| n == name)
                .map(|(_, m)| m)
                .ok_or_else(|| Error::contract(format!("adam state has no moments for {name:?}")))?;
            let dir = state.direction(g, &self.cfg)?;
            params.require_mut(name)?.axpy(-self.cfg.lr, &dir);
            applied.insert(name, dir);
        }
        Ok(applied)
    }
}
