use crate::error::Result;
use crate::linalg::{row_softmax_entropy, Matrix};

/// Inputs of the excess-risk and generalization bound formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    /// Gradient spectral-norm bound.
    pub d: f64,
    pub n_clients: usize,
    /// Global aggregation steps.
    pub s: usize,
    pub t_agg: usize,
    pub c: f64,
    /// Learning rate.
    pub alpha: f64,
    /// `‖ΔW*‖₂`.
    pub w_star_norm: f64,
    /// Sub-Gaussian parameter.
    pub sigma: f64,
    /// Samples per client.
    pub n: usize,
    /// Quantization bits.
    pub q: u32,
    pub rows: usize,
    pub cols: usize,
    pub r: usize,
}

impl Default for BoundInputs {
    fn default() -> Self {
        BoundInputs {
            d: 0.0,
            n_clients: 1,
            s: 0,
            t_agg: 1,
            c: 0.0,
            alpha: 0.0,
            w_star_norm: 0.0,
            sigma: 1.0,
            n: 1,
            q: 32,
            rows: 1,
            cols: 1,
            r: 1,
        }
    }
}

/// `α·D²·S·t_agg + c`, the direct-averaging excess-risk bound.
pub fn bound_direct(b: &BoundInputs) -> f64 {
    b.alpha * b.d * b.d * b.s as f64 * b.t_agg as f64 + b.c
}

/// `D·N·S·t_agg · (D·N·S·t_agg·c + (α/N)·‖ΔW*‖₂)`, the FFA-LoRA bound.
pub fn bound_ffalora(b: &BoundInputs) -> f64 {
    let m = b.d * b.n_clients as f64 * b.s as f64 * b.t_agg as f64;
    m * (m * b.c + b.alpha / b.n_clients as f64 * b.w_star_norm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizationBounds {
    /// Full-precision weight aggregation, `√(2σ²/n · q·d·k)` averaged.
    pub e1: f64,
    /// Entropy form, `√(2σ²/n · H(W_i))` averaged.
    pub e2: f64,
    /// Low-rank form, `√(2σ²·ln2/n · r·q·d)` averaged.
    pub e3: f64,
}

/// The three bounds for client matrices, each `rows×cols`.
///
/// E1 and E3 do not depend on the matrix values; with no matrices they are
/// evaluated for `N = n_clients` identical terms and E2 is zero.
pub fn generalization_bounds(b: &BoundInputs, matrices: &[Matrix]) -> Result<GeneralizationBounds> {
    let base = 2.0 * b.sigma * b.sigma / b.n as f64;
    let e1 = (base * b.q as f64 * b.rows as f64 * b.cols as f64).sqrt();
    let e3 = (base * std::f64::consts::LN_2 * b.r as f64 * b.q as f64 * b.rows as f64).sqrt();
    let e2 = if matrices.is_empty() {
        0.0
    } else {
        let mut acc = 0.0;
        for m in matrices {
            acc += (base * row_softmax_entropy(m)?).sqrt();
        }
        acc / matrices.len() as f64
    };
    Ok(GeneralizationBounds { e1, e2, e3 })
}

/// E2 for rows at the uniform limit `f = 1/k`, by direct substitution:
/// `√(2σ²/n · d·ln k)`.
pub fn e2_uniform_limit(sigma: f64, n: usize, rows: usize, cols: usize) -> f64 {
    (2.0 * sigma * sigma / n as f64 * rows as f64 * (cols as f64).ln()).sqrt()
}

/// The closed form commonly quoted for the same limit,
/// `√(2σ²·d/(n·k) · ln k)`. It differs from [`e2_uniform_limit`] by a factor
/// `√k`; both are reported.
pub fn e2_uniform_limit_quoted(sigma: f64, n: usize, rows: usize, cols: usize) -> f64 {
    (2.0 * sigma * sigma * rows as f64 / (n as f64 * cols as f64) * (cols as f64).ln()).sqrt()
}
