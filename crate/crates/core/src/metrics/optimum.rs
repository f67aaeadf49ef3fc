use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{self, Batch, ModelConfig, ParamSet};

/// A smooth objective over one matrix.
pub trait Objective {
    fn value_and_grad(&self, w: &Matrix) -> Result<(f64, Matrix)>;
}

/// Result of [`minimize`].
#[derive(Debug, Clone)]
pub struct Minimum {
    pub w: Matrix,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Gradient descent from `w0` until `‖∇f‖_F ≤ tol`.
///
/// The trial step is the Barzilai–Borwein step `⟨s,s⟩/⟨s,y⟩` from the last
/// move (1 on the first iteration), shrunk by halving until the Armijo
/// condition holds. The Armijo test allows a few ulps of slack in `f`, which
/// keeps the search moving once `f` stops changing in floating point.
pub fn minimize(obj: &impl Objective, w0: Matrix, tol: f64, max_iter: usize) -> Result<Minimum> {
    let mut w = w0;
    let (mut f, mut g) = obj.value_and_grad(&w)?;
    let mut step = 1.0;
    for it in 0..max_iter {
        let gnorm = g.frobenius_norm();
        if !gnorm.is_finite() || !f.is_finite() {
            return Err(Error::numerical(format!("objective became non-finite at iteration {it}")));
        }
        if gnorm <= tol {
            return Ok(Minimum {
                w,
                value: f,
                grad_norm: gnorm,
                iterations: it,
            });
        }
        let slack = 8.0 * f64::EPSILON * f.abs();
        let mut t = step;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial = w.clone();
            trial.axpy(-t, &g);
            let (ft, gt) = obj.value_and_grad(&trial)?;
            if ft.is_finite() && ft <= f - ARMIJO_C * t * gnorm * gnorm + slack {
                accepted = Some((trial, ft, gt));
                break;
            }
            t *= 0.5;
        }
        let (w_new, f_new, g_new) =
            accepted.ok_or_else(|| Error::numerical(format!("line search failed at iteration {it} (‖g‖ = {gnorm:e})")))?;
        let s = &w_new - &w;
        let y = &g_new - &g;
        let sy = s.frobenius_dot(&y);
        step = if sy > 0.0 { s.frobenius_dot(&s) / sy } else { 2.0 * t };
        w = w_new;
        f = f_new;
        g = g_new;
    }
    Err(Error::numerical(format!(
        "minimizer did not reach ‖g‖ ≤ {tol:e} in {max_iter} iterations (‖g‖ = {:e})",
        g.frobenius_norm()
    )))
}

/// Full-batch regularized training objective of the convex family.
pub struct ConvexObjective<'a> {
    cfg: &'a ModelConfig,
    batch: Batch<'a>,
}

impl<'a> ConvexObjective<'a> {
    pub fn new(cfg: &'a ModelConfig, data: &'a LabeledDataset) -> Result<Self> {
        match cfg {
            ModelConfig::Convex(c) if c.l2_lambda > 0.0 => {}
            ModelConfig::Convex(_) => return Err(Error::contract("the convex optimum needs l2_lambda > 0")),
            _ => return Err(Error::contract("the optimum is only defined for the convex family")),
        }
        Ok(ConvexObjective {
            cfg,
            batch: Batch::from_slice(data.items(), data.num_classes())?,
        })
    }

    fn params(&self, w: &Matrix) -> Result<ParamSet> {
        let mut p = ParamSet::new();
        p.push(model::CONVEX_WEIGHT, w.clone(), true)?;
        Ok(p)
    }

    pub fn value(&self, w: &Matrix) -> Result<f64> {
        model::loss(&self.params(w)?, self.cfg, &self.batch)
    }
}

impl Objective for ConvexObjective<'_> {
    fn value_and_grad(&self, w: &Matrix) -> Result<(f64, Matrix)> {
        let p = self.params(w)?;
        let (f, g) = model::loss_and_grad(&p, self.cfg, &self.batch, &[model::CONVEX_WEIGHT])?;
        Ok((f, g.require(model::CONVEX_WEIGHT)?.clone()))
    }
}

pub const W_STAR_TOL: f64 = 1e-8;
const W_STAR_MAX_ITER: usize = 200_000;

/// Minimizer of the pooled regularized objective, started from zero.
pub fn compute_w_star(train: &LabeledDataset, cfg: &ModelConfig, tol: f64) -> Result<ParamSet> {
    compute_w_star_from(train, cfg, tol, None)
}

pub fn compute_w_star_from(train: &LabeledDataset, cfg: &ModelConfig, tol: f64, init: Option<Matrix>) -> Result<ParamSet> {
    let obj = ConvexObjective::new(cfg, train)?;
    let start = init.unwrap_or_else(|| cfg.zero_params().require(model::CONVEX_WEIGHT).unwrap().clone());
    let min = minimize(&obj, start, tol, W_STAR_MAX_ITER)?;
    obj.params(&min.w)
}

/// `L(θ) − L(W*)` on the pooled regularized objective.
pub fn excess_risk(params: &ParamSet, w_star: &ParamSet, cfg: &ModelConfig, data: &LabeledDataset) -> Result<f64> {
    let obj = ConvexObjective::new(cfg, data)?;
    let w = params.require(model::CONVEX_WEIGHT)?;
    let ws = w_star.require(model::CONVEX_WEIGHT)?;
    Ok(obj.value(w)? - obj.value(ws)?)
}
