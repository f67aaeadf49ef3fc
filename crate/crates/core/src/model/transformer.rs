//! Single-block, single-head transformer classifier with manual backprop.
//!
//! ```text
//! X  = Emb[tokens]                     (L×h)
//! A  = softmax(X Wqᵀ (X Wkᵀ)ᵀ / √h)    (L×L)
//! H1 = X + (A · X Wvᵀ) Woᵀ
//! H2 = H1 + gelu(H1 Wupᵀ) Wdownᵀ
//! logits = Wcls · mean_rows(H2)
//! ```
//! No layer norm, no dropout; the residual stream keeps the zero-weight model
//! at uniform logits.

use super::{softmax, Batch, Input, TransformerConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{GradSet, ParamSet};

pub(super) const NAMES: [&str; 8] = ["Emb", "Wq", "Wk", "Wv", "Wo", "Wup", "Wdown", "Wcls"];

struct Weights<'a> {
    emb: &'a Matrix,
    wq: &'a Matrix,
    wk: &'a Matrix,
    wv: &'a Matrix,
    wo: &'a Matrix,
    wup: &'a Matrix,
    wdown: &'a Matrix,
    wcls: &'a Matrix,
}

impl<'a> Weights<'a> {
    fn from(params: &'a ParamSet) -> Result<Self> {
        Ok(Self {
            emb: params.require("Emb")?,
            wq: params.require("Wq")?,
            wk: params.require("Wk")?,
            wv: params.require("Wv")?,
            wo: params.require("Wo")?,
            wup: params.require("Wup")?,
            wdown: params.require("Wdown")?,
            wcls: params.require("Wcls")?,
        })
    }
}

/// Activations of one sequence, kept for the backward pass.
pub(super) struct SampleCache {
    tokens: Vec<usize>,
    x: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    attn: Matrix,
    o: Matrix,
    h1: Matrix,
    u: Matrix,
    g: Matrix,
    pooled: Vec<f64>,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let th = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

fn check(m: &Matrix, layer: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::numerical(format!("non-finite activation in layer {layer}")))
    }
}

fn tokens(input: &Input, vocab: usize) -> Result<&[usize]> {
    match input {
        Input::Tokens(t) if t.is_empty() => Err(Error::contract("empty token sequence")),
        Input::Tokens(t) => {
            if let Some(bad) = t.iter().find(|&&x| x >= vocab) {
                return Err(Error::contract(format!("token {bad} outside vocabulary of {vocab}")));
            }
            Ok(t)
        }
        Input::Vector(_) => Err(Error::contract("transformer model needs token inputs")),
    }
}

fn forward_one(w: &Weights<'_>, cfg: &TransformerConfig, input: &Input) -> Result<SampleCache> {
    let toks = tokens(input, cfg.vocab)?;
    let h = cfg.hidden;
    let len = toks.len();
    let mut x = Matrix::zeros(len, h);
    for (i, &t) in toks.iter().enumerate() {
        x.row_mut(i).copy_from_slice(w.emb.row(t));
    }
    let q = x.matmul_t(w.wq);
    let k = x.matmul_t(w.wk);
    let v = x.matmul_t(w.wv);
    let mut attn = q.matmul_t(&k);
    attn.scale_in_place(1.0 / (h as f64).sqrt());
    check(&attn, "attention logits")?;
    for i in 0..len {
        let (p, _) = softmax(attn.row(i));
        attn.row_mut(i).copy_from_slice(&p);
    }
    let o = attn.matmul(&v);
    let h1 = &x + &o.matmul_t(w.wo);
    check(&h1, "Wo")?;
    let u = h1.matmul_t(w.wup);
    check(&u, "Wup")?;
    let g = u.map(gelu);
    let h2 = &h1 + &g.matmul_t(w.wdown);
    check(&h2, "Wdown")?;
    let mut pooled = vec![0.0; h];
    for i in 0..len {
        for (p, &val) in pooled.iter_mut().zip(h2.row(i)) {
            *p += val;
        }
    }
    pooled.iter_mut().for_each(|p| *p /= len as f64);
    let logits = w.wcls.mul_vec(&pooled);
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::numerical("non-finite activation in layer Wcls"));
    }
    let (probs, log_probs) = softmax(&logits);
    Ok(SampleCache {
        tokens: toks.to_vec(),
        x,
        q,
        k,
        v,
        attn,
        o,
        h1,
        u,
        g,
        pooled,
        probs,
        log_probs,
    })
}

pub(super) fn forward(
    params: &ParamSet,
    cfg: &TransformerConfig,
    batch: &Batch<'_>,
) -> Result<(f64, Vec<SampleCache>)> {
    let w = Weights::from(params)?;
    let mut total = 0.0;
    let mut caches = Vec::with_capacity(batch.len());
    for s in batch.samples() {
        let c = forward_one(&w, cfg, &s.input)?;
        total -= c.log_probs[s.label];
        caches.push(c);
    }
    Ok((total / batch.len() as f64, caches))
}

pub(super) fn logits(params: &ParamSet, cfg: &TransformerConfig, input: &Input) -> Result<Vec<f64>> {
    let w = Weights::from(params)?;
    let c = forward_one(&w, cfg, input)?;
    Ok(w.wcls.mul_vec(&c.pooled))
}

pub(super) fn backward(
    params: &ParamSet,
    cfg: &TransformerConfig,
    batch: &Batch<'_>,
    caches: &[SampleCache],
    names: &[&str],
) -> Result<GradSet> {
    let w = Weights::from(params)?;
    let h = cfg.hidden;
    let inv_sqrt_h = 1.0 / (h as f64).sqrt();
    let inv_b = 1.0 / batch.len() as f64;
    let zeros_like = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
    let mut d_emb = zeros_like(w.emb);
    let mut d_wq = zeros_like(w.wq);
    let mut d_wk = zeros_like(w.wk);
    let mut d_wv = zeros_like(w.wv);
    let mut d_wo = zeros_like(w.wo);
    let mut d_wup = zeros_like(w.wup);
    let mut d_wdown = zeros_like(w.wdown);
    let mut d_wcls = zeros_like(w.wcls);

    for (s, c) in batch.samples().iter().zip(caches) {
        let len = c.tokens.len();
        let mut d_logits = c.probs.clone();
        d_logits[s.label] -= 1.0;
        d_logits.iter_mut().for_each(|v| *v *= inv_b);

        d_wcls.axpy(1.0, &Matrix::outer(&d_logits, &c.pooled));
        let d_pooled = w.wcls.t_mul_vec(&d_logits);
        let mut d_h2 = Matrix::zeros(len, h);
        for i in 0..len {
            for (d, &p) in d_h2.row_mut(i).iter_mut().zip(&d_pooled) {
                *d = p / len as f64;
            }
        }

        d_wdown.axpy(1.0, &d_h2.t_matmul(&c.g));
        let d_g = d_h2.matmul(w.wdown);
        let d_u = d_g.zip_map(&c.u, |dg, u| dg * gelu_grad(u));
        d_wup.axpy(1.0, &d_u.t_matmul(&c.h1));
        let d_h1 = &d_h2 + &d_u.matmul(w.wup);

        d_wo.axpy(1.0, &d_h1.t_matmul(&c.o));
        let d_o = d_h1.matmul(w.wo);
        let d_attn = d_o.matmul_t(&c.v);
        let d_v = c.attn.t_matmul(&d_o);
        let mut d_s = Matrix::zeros(len, len);
        for i in 0..len {
            let a = c.attn.row(i);
            let da = d_attn.row(i);
            let inner: f64 = a.iter().zip(da).map(|(x, y)| x * y).sum();
            for (j, ds) in d_s.row_mut(i).iter_mut().enumerate() {
                *ds = a[j] * (da[j] - inner) * inv_sqrt_h;
            }
        }
        let d_q = d_s.matmul(&c.k);
        let d_k = d_s.t_matmul(&c.q);
        d_wq.axpy(1.0, &d_q.t_matmul(&c.x));
        d_wk.axpy(1.0, &d_k.t_matmul(&c.x));
        d_wv.axpy(1.0, &d_v.t_matmul(&c.x));

        let mut d_x = d_h1;
        d_x.axpy(1.0, &d_q.matmul(w.wq));
        d_x.axpy(1.0, &d_k.matmul(w.wk));
        d_x.axpy(1.0, &d_v.matmul(w.wv));
        for (i, &t) in c.tokens.iter().enumerate() {
            for (de, &dx) in d_emb.row_mut(t).iter_mut().zip(d_x.row(i)) {
                *de += dx;
            }
        }
    }

    let all = [d_emb, d_wq, d_wk, d_wv, d_wo, d_wup, d_wdown, d_wcls];
    let mut grads = GradSet::new();
    for (name, g) in NAMES.iter().zip(all) {
        if names.contains(name) {
            grads.insert(*name, g);
        }
    }
    Ok(grads)
}
