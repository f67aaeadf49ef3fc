//! Dense real linear algebra: the matrix type, SVD, numerical rank, norms,
//! Gaussian initialization and row-softmax entropy.

mod matrix;
mod svd;

pub use matrix::Matrix;
pub use svd::{svd, svd_truncated, SvdResult};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Seed for every random stream in the simulator.
///
/// Streams are ChaCha8, so an identical seed and call sequence reproduces the
/// same numbers on every platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent child seed for a named sub-stream (splitmix64 mixing).
    pub fn derive(self, stream: u64) -> RngSeed {
        let mut z = self
            .0
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

/// `rows×cols` matrix of i.i.d. `N(0, std²)` entries.
pub fn gaussian_init(rows: usize, cols: usize, std: f64, seed: RngSeed) -> Result<Matrix> {
    let mut rng = seed.rng();
    gaussian_from(rows, cols, std, &mut rng)
}

pub(crate) fn gaussian_from(
    rows: usize,
    cols: usize,
    std: f64,
    rng: &mut impl rand::Rng,
) -> Result<Matrix> {
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::Range(format!("gaussian std must be positive, got {std}")));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::contract("gaussian_init needs positive dimensions"));
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::Range(e.to_string()))?;
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Default rank tolerance: `max(rows, cols) · ε · σ₁`.
pub fn default_rank_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * sigma_max
}

/// Number of singular values strictly above `tol` (default
/// [`default_rank_tolerance`]).
pub fn numerical_rank(m: &Matrix, tol: Option<f64>) -> Result<usize> {
    let s = svd(m)?.singular_values;
    Ok(rank_from_singular_values(m.rows(), m.cols(), &s, tol))
}

pub(crate) fn rank_from_singular_values(
    rows: usize,
    cols: usize,
    s: &[f64],
    tol: Option<f64>,
) -> usize {
    let sigma_max = s.first().copied().unwrap_or(0.0);
    let tol = tol.unwrap_or_else(|| default_rank_tolerance(rows, cols, sigma_max));
    s.iter().filter(|&&x| x > tol).count()
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.frobenius_norm()
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    if m.is_zero() {
        return Ok(0.0);
    }
    Ok(svd(m)?.singular_values[0])
}

/// Sum over rows of the Shannon entropy (nats) of each row's softmax.
///
/// Uses `H_row = ln Z − Σ p·(x − max)` with max-subtracted logits, which is
/// exact for saturated rows where some `p` underflow to zero.
pub fn row_softmax_entropy(m: &Matrix) -> Result<f64> {
    if !m.is_finite() {
        return Err(Error::numerical("entropy input contains non-finite values"));
    }
    let mut total = 0.0;
    for i in 0..m.rows() {
        let row = m.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let mean_shift: f64 = row
            .iter()
            .zip(&exps)
            .map(|(&x, &e)| (e / z) * (x - max))
            .sum();
        total += (z.ln() - mean_shift).max(0.0);
    }
    Ok(total)
}
