//! One-sided Jacobi SVD.
//!
//! The rotation sweep runs on the columns of the taller orientation (the
//! smaller Gram side), so a `d×k` input costs `O(d·k·min(d,k))` per sweep.
//! One-sided Jacobi keeps every pair of columns orthogonal to a *relative*
//! tolerance, which makes the left singular vectors accurate even for tiny
//! singular values; that matters here because rank and subspace tests run on
//! nearly rank-deficient matrices all the time.

use super::Matrix;
use crate::error::{Error, Result};

/// Thin singular value decomposition `m = U · diag(s) · Vt`.
///
/// For a `d×k` input with `p = min(d, k)`: `u` is `d×p`, `singular_values`
/// has length `p` (nonincreasing), `vt` is `p×k`. Signs are canonical: the
/// largest-magnitude entry of every column of `u` is positive.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `U · diag(s) · Vt`.
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.singular_values.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul(&self.vt)
    }

    /// Keep the `r` dominant triplets.
    pub fn truncate(mut self, r: usize) -> SvdResult {
        let r = r.min(self.rank());
        self.u = self.u.cols_range(0, r);
        self.singular_values.truncate(r);
        self.vt = self.vt.rows_range(0, r);
        self
    }
}

/// Sweep cap per unit of the short dimension.
const SWEEPS_PER_DIM: usize = 10;

/// Full thin SVD of a finite matrix.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if !m.is_finite() {
        return Err(Error::numerical("svd input contains non-finite values"));
    }
    let (d, k) = m.shape();
    if d >= k {
        let (u, s, v) = jacobi_tall(m)?;
        Ok(canonical_signs(SvdResult {
            u,
            singular_values: s,
            vt: v.transpose(),
        }))
    } else {
        // m = (mᵀ)ᵀ = (U' S V'ᵀ)ᵀ = V' S U'ᵀ
        let (u_t, s, v_t) = jacobi_tall(&m.transpose())?;
        Ok(canonical_signs(SvdResult {
            u: v_t,
            singular_values: s,
            vt: u_t.transpose(),
        }))
    }
}

/// The `r` dominant singular triplets; `U·diag(s)·Vt` is then the best
/// rank-`r` Frobenius approximation.
pub fn svd_truncated(m: &Matrix, r: usize) -> Result<SvdResult> {
    let p = m.rows().min(m.cols());
    if r == 0 || r > p {
        return Err(Error::Range(format!(
            "truncation rank {r} outside 1..={p} for a {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    Ok(svd(m)?.truncate(r))
}

/// Jacobi on a tall (`d ≥ k`) matrix. Returns `(U d×k, s, V k×k)`.
fn jacobi_tall(m: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (d, k) = m.shape();
    debug_assert!(d >= k);
    // Column-major working copies: cols[j] is column j.
    let mut cols: Vec<Vec<f64>> = (0..k).map(|j| m.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let mut e = vec![0.0; k];
            e[j] = 1.0;
            e
        })
        .collect();
    let tol = (d as f64) * f64::EPSILON;
    // Columns below this norm are rounding noise; rotating them never settles.
    let floor = {
        let fro: f64 = cols.iter().map(|c| norm2(c).powi(2)).sum::<f64>().sqrt();
        tol * fro
    };
    let max_sweeps = SWEEPS_PER_DIM * k;
    let mut converged = k == 1;
    for _sweep in 0..max_sweeps {
        let mut rotated = false;
        for i in 0..k {
            for j in (i + 1)..k {
                let (alpha, beta, gamma) = gram_entries(&cols[i], &cols[j]);
                let (na, nb) = (alpha.sqrt(), beta.sqrt());
                if gamma == 0.0 || gamma.abs() <= tol * na * nb || na.min(nb) <= floor {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = cols.split_at_mut(j);
                rotate(&mut lo[i], &mut hi[0], c, s);
                let (lo, hi) = v.split_at_mut(j);
                rotate(&mut lo[i], &mut hi[0], c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::numerical(format!(
            "jacobi svd did not converge within {max_sweeps} sweeps"
        )));
    }

    let norms: Vec<f64> = cols.iter().map(|c| norm2(c)).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut missing = Vec::new();
    let mut s = Vec::with_capacity(k);
    for (slot, &j) in order.iter().enumerate() {
        let sigma = norms[j];
        if sigma > 0.0 && sigma > floor {
            u_cols.push(cols[j].iter().map(|x| x / sigma).collect());
            s.push(sigma);
        } else {
            u_cols.push(vec![0.0; d]);
            s.push(0.0);
            missing.push(slot);
        }
    }
    complete_orthonormal(&mut u_cols, &missing);

    let u = Matrix::from_fn(d, k, |i, j| u_cols[j][i]);
    let vm = Matrix::from_fn(k, k, |i, j| v[order[j]][i]);
    Ok((u, s, vm))
}

fn gram_entries(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let mut alpha = 0.0;
    let mut beta = 0.0;
    let mut gamma = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        alpha += x * x;
        beta += y * y;
        gamma += x * y;
    }
    (alpha, beta, gamma)
}

fn rotate(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xa, yb) = (*x, *y);
        *x = c * xa - s * yb;
        *y = s * xa + c * yb;
    }
}

fn norm2(x: &[f64]) -> f64 {
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    scale * x.iter().map(|v| (v / scale).powi(2)).sum::<f64>().sqrt()
}

/// Fill the zero-singular-value slots with unit vectors orthogonal to all
/// other columns (modified Gram–Schmidt against the standard basis).
fn complete_orthonormal(cols: &mut [Vec<f64>], missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let d = cols[0].len();
    let mut candidate = 0;
    for &slot in missing {
        loop {
            assert!(candidate < d, "basis completion ran out of candidates");
            let mut e = vec![0.0; d];
            e[candidate] = 1.0;
            candidate += 1;
            for _pass in 0..2 {
                for (j, c) in cols.iter().enumerate() {
                    if j == slot || c.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    let proj: f64 = e.iter().zip(c).map(|(a, b)| a * b).sum();
                    e.iter_mut().zip(c).for_each(|(a, b)| *a -= proj * b);
                }
            }
            let n = norm2(&e);
            if n > 1e-8 {
                cols[slot] = e.into_iter().map(|x| x / n).collect();
                break;
            }
        }
    }
}

fn canonical_signs(mut r: SvdResult) -> SvdResult {
    let (d, p) = r.u.shape();
    for j in 0..p {
        let mut best = 0;
        for i in 1..d {
            if r.u[(i, j)].abs() > r.u[(best, j)].abs() {
                best = i;
            }
        }
        if r.u[(best, j)] < 0.0 {
            for i in 0..d {
                r.u[(i, j)] = -r.u[(i, j)];
            }
            for c in 0..r.vt.cols() {
                r.vt[(j, c)] = -r.vt[(j, c)];
            }
        }
    }
    r
}
