//! GaLore: gradient steps taken inside a periodically refreshed low-rank
//! subspace of the gradient.
//!
//! The projection is one-sided by the short dimension. For a `d×k` gradient
//! with `d ≤ k` the left factor `P` (`d×r`) is kept and the compressed
//! gradient is `Pᵀ·G`; otherwise the right factor `Q` (`r×k`) is kept and the
//! compressed gradient is `G·Qᵀ`.

use super::adam::{AdamConfig, Moments};
use crate::error::{Error, Result};
use crate::linalg::{svd_truncated, Matrix};
use crate::model::{GradSet, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerRegularizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl InnerRegularizer {
    pub fn adam_default() -> Self {
        let d = AdamConfig::default();
        InnerRegularizer::Adam {
            beta1: d.beta1,
            beta2: d.beta2,
            eps: d.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaloreConfig {
    pub lr: f64,
    /// Requested rank; clamped to `min(d, k)` per matrix.
    pub rank: usize,
    pub refresh_period: u64,
    pub scale: f64,
    pub inner: InnerRegularizer,
    pub reset_moments_on_refresh: bool,
    pub refresh_on_broadcast: bool,
    /// Matrices to project. `None` projects every trainable matrix; the
    /// rest get the inner regularizer at full size.
    pub targets: Option<Vec<String>>,
}

impl GaloreConfig {
    pub fn new(lr: f64, rank: usize, inner: InnerRegularizer) -> Self {
        GaloreConfig {
            lr,
            rank,
            refresh_period: 50,
            scale: 1.0,
            inner,
            reset_moments_on_refresh: false,
            refresh_on_broadcast: true,
            targets: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Range(format!("galore lr must be positive, got {}", self.lr)));
        }
        if self.rank == 0 {
            return Err(Error::Range("galore rank must be at least 1".into()));
        }
        if self.refresh_period == 0 {
            return Err(Error::Range("galore refresh period must be at least 1".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Range(format!("galore scale must be positive, got {}", self.scale)));
        }
        if let InnerRegularizer::Adam { beta1, beta2, eps } = self.inner {
            AdamConfig {
                lr: self.lr,
                beta1,
                beta2,
                eps,
            }
            .validate()?;
        }
        Ok(())
    }

    fn adam(&self) -> Option<AdamConfig> {
        match self.inner {
            InnerRegularizer::Sgd => None,
            InnerRegularizer::Adam { beta1, beta2, eps } => Some(AdamConfig {
                lr: self.lr,
                beta1,
                beta2,
                eps,
            }),
        }
    }
}

/// The kept singular factor.
#[derive(Debug, Clone, PartialEq)]
pub enum Projector {
    /// `P`, `d×r` with orthonormal columns.
    Left(Matrix),
    /// `Q`, `r×k` with orthonormal rows.
    Right(Matrix),
}

impl Projector {
    /// Top-`r` singular factor of `grad` on its short side.
    pub fn from_gradient(grad: &Matrix, rank: usize) -> Result<Self> {
        let (d, k) = grad.shape();
        let r = rank.min(d.min(k));
        let s = svd_truncated(grad, r)?;
        Ok(if d <= k { Projector::Left(s.u) } else { Projector::Right(s.vt) })
    }

    pub fn rank(&self) -> usize {
        match self {
            Projector::Left(p) => p.cols(),
            Projector::Right(q) => q.rows(),
        }
    }

    /// `Pᵀ·G` or `G·Qᵀ`.
    pub fn compress(&self, g: &Matrix) -> Matrix {
        match self {
            Projector::Left(p) => p.t_matmul(g),
            Projector::Right(q) => g.matmul_t(q),
        }
    }

    /// `P·R` or `R·Q`.
    pub fn lift(&self, r: &Matrix) -> Matrix {
        match self {
            Projector::Left(p) => p.matmul(r),
            Projector::Right(q) => r.matmul(q),
        }
    }

    /// Orthogonal projection of `g` onto the kept subspace.
    pub fn project(&self, g: &Matrix) -> Matrix {
        self.lift(&self.compress(g))
    }

    /// `PᵀP` or `QQᵀ`, which is the identity up to rounding.
    pub fn gram(&self) -> Matrix {
        match self {
            Projector::Left(p) => p.t_matmul(p),
            Projector::Right(q) => q.matmul_t(q),
        }
    }

    fn compressed_shape(&self, d: usize, k: usize) -> (usize, usize) {
        match self {
            Projector::Left(_) => (self.rank(), k),
            Projector::Right(_) => (d, self.rank()),
        }
    }
}

/// GaLore state of one parameter matrix.
#[derive(Debug, Clone, Default)]
pub struct GaloreParamState {
    pub projector: Option<Projector>,
    pub moments: Option<Moments>,
    /// Local steps taken on this matrix.
    pub t: u64,
    pub refreshes: u64,
}

/// Recompute the projector from `grad`.
pub fn galore_refresh(state: &mut GaloreParamState, grad: &Matrix, cfg: &GaloreConfig) -> Result<()> {
    let proj = Projector::from_gradient(grad, cfg.rank)?;
    let (rr, rc) = proj.compressed_shape(grad.rows(), grad.cols());
    match (&mut state.moments, cfg.adam()) {
        (Some(m), Some(_)) if m.m.shape() == (rr, rc) && !cfg.reset_moments_on_refresh => {}
        (_, Some(_)) => state.moments = Some(Moments::zeros(rr, rc)),
        (_, None) => state.moments = None,
    }
    state.projector = Some(proj);
    state.refreshes += 1;
    Ok(())
}

/// GaLore over every trainable matrix of a parameter set.
#[derive(Debug, Clone)]
pub struct GaloreState {
    cfg: GaloreConfig,
    projected: Vec<(String, GaloreParamState)>,
    /// Full-size inner state for trainable matrices that are not projected.
    plain: Vec<(String, Option<Moments>)>,
    force_refresh: bool,
}

impl GaloreState {
    pub fn new(cfg: GaloreConfig, params: &ParamSet) -> Result<Self> {
        cfg.validate()?;
        if let Some(targets) = &cfg.targets {
            for t in targets {
                if !params.is_trainable(t) {
                    return Err(Error::contract(format!("galore target {t:?} is not a trainable parameter")));
                }
            }
        }
        let mut projected = Vec::new();
        let mut plain = Vec::new();
        for p in params.iter().filter(|p| p.trainable) {
            let is_target = cfg.targets.as_ref().is_none_or(|t| t.contains(&p.name));
            if is_target {
                projected.push((p.name.clone(), GaloreParamState::default()));
            } else {
                let m = cfg.adam().map(|_| Moments::zeros(p.value.rows(), p.value.cols()));
                plain.push((p.name.clone(), m));
            }
        }
        Ok(GaloreState {
            cfg,
            projected,
            plain,
            force_refresh: false,
        })
    }

    pub fn config(&self) -> &GaloreConfig {
        &self.cfg
    }

    /// Refresh every projector at the next step regardless of the period.
    pub fn request_refresh(&mut self) {
        self.force_refresh = true;
    }

    pub fn param_state(&self, name: &str) -> Option<&GaloreParamState> {
        self.projected.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }
}

/// One GaLore step; returns `G̃` per matrix, with `W -= lr · G̃`.
pub fn galore_step(state: &mut GaloreState, params: &mut ParamSet, grads: &GradSet) -> Result<GradSet> {
    grads.check_congruent(params)?;
    let cfg = state.cfg.clone();
    let adam = cfg.adam();
    let force = std::mem::take(&mut state.force_refresh);
    let mut applied = GradSet::new();
    for (name, g) in grads.iter() {
        if !params.is_trainable(name) {
            continue;
        }
        let update = if let Some((_, ps)) = state.projected.iter_mut().find(|(n, _)| n == name) {
            if force || ps.projector.is_none() || ps.t % cfg.refresh_period == 0 {
                galore_refresh(ps, g, &cfg)?;
            }
            let proj = ps.projector.as_ref().expect("refreshed above");
            let r = proj.compress(g);
            let rho = match (&mut ps.moments, &adam) {
                (Some(m), Some(a)) => m.direction(&r, a)?,
                _ => r,
            };
            ps.t += 1;
            proj.lift(&rho).scaled(cfg.scale)
        } else if let Some((_, m)) = state.plain.iter_mut().find(|(n, _)| n == name) {
            match (m, &adam) {
                (Some(m), Some(a)) => m.direction(g, a)?,
                _ => g.clone(),
            }
        } else {
            return Err(Error::contract(format!("galore state does not track {name:?}")));
        };
        if !update.is_finite() {
            return Err(Error::numerical(format!("galore update for {name:?} is not finite")));
        }
        params.require_mut(name)?.axpy(-cfg.lr, &update);
        applied.insert(name, update);
    }
    Ok(applied)
}
