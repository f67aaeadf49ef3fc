//! Server-side aggregation rules. Each one reduces client snapshots in the
//! order given, which callers keep canonical (ascending client id), so the
//! result does not depend on how clients were scheduled.

use crate::adapters::LoraPair;
use crate::error::{Error, Result};
use crate::linalg::{svd_truncated, Matrix};
use crate::model::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    Uniform,
    ByTrainSize,
}

/// How FlexLoRA splits the truncated SVD `U·diag(s)·Vt` into `(B, A)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlexSplit {
    /// `B = U·diag(s)/scale`, `A = Vt`.
    FoldIntoB,
    /// `B = U·diag(√s)/scale`, `A = diag(√s)·Vt`.
    Sqrt,
}

/// Mixing weights summing to one; `None` for uniform weighting, which
/// [`weighted_mean`] applies as a division by `N`.
pub fn client_weights(weighting: Weighting, train_sizes: &[usize]) -> Result<Option<Vec<f64>>> {
    match weighting {
        Weighting::Uniform => Ok(None),
        Weighting::ByTrainSize => {
            let total: usize = train_sizes.iter().sum();
            if total == 0 {
                return Err(Error::contract("size weighting with zero total training samples"));
            }
            Ok(Some(train_sizes.iter().map(|&n| n as f64 / total as f64).collect()))
        }
    }
}

/// `X₀ + Σ wᵢ·(Xᵢ − X₀)`, with `wᵢ = 1/N` applied as a division by `N`
/// when `weights` is `None`. Centering on the first client makes the mean
/// of identical matrices exact.
pub fn weighted_mean(mats: &[&Matrix], weights: Option<&[f64]>) -> Result<Matrix> {
    let first = mats.first().ok_or_else(|| Error::contract("aggregation over zero clients"))?;
    if let Some(w) = weights {
        if w.len() != mats.len() {
            return Err(Error::contract(format!("{} weights for {} clients", w.len(), mats.len())));
        }
    }
    let mut acc = Matrix::zeros(first.rows(), first.cols());
    for (i, m) in mats.iter().enumerate() {
        if m.shape() != first.shape() {
            return Err(Error::contract(format!(
                "client {i} matrix is {:?}, expected {:?}",
                m.shape(),
                first.shape()
            )));
        }
        let w = weights.map_or(1.0, |w| w[i]);
        for ((a, &x), &x0) in acc.data_mut().iter_mut().zip(m.data()).zip(first.data()) {
            *a += w * (x - x0);
        }
    }
    let n = mats.len() as f64;
    for (a, &x0) in acc.data_mut().iter_mut().zip(first.data()) {
        *a = x0 + if weights.is_none() { *a / n } else { *a };
    }
    Ok(acc)
}

/// Average every trainable matrix; non-trainable matrices come from the
/// first client.
pub fn aggregate_direct(clients: &[&ParamSet], weights: Option<&[f64]>) -> Result<ParamSet> {
    let first = *clients.first().ok_or_else(|| Error::contract("aggregation over zero clients"))?;
    for (i, c) in clients.iter().enumerate() {
        if !first.congruent(c) || c.trainable_names() != first.trainable_names() {
            return Err(Error::contract(format!("client {i} parameters are not congruent with client 0")));
        }
    }
    let mut out = first.clone();
    for name in first.trainable_names() {
        let mats: Vec<&Matrix> = clients.iter().map(|c| c.get(name).expect("congruent")).collect();
        *out.get_mut(name).expect("present") = weighted_mean(&mats, weights)?;
    }
    Ok(out)
}

fn check_pair_sets(clients: &[Vec<LoraPair>]) -> Result<&Vec<LoraPair>> {
    let first = clients.first().ok_or_else(|| Error::contract("aggregation over zero clients"))?;
    for (i, c) in clients.iter().enumerate() {
        if c.len() != first.len() {
            return Err(Error::contract(format!("client {i} has {} adapters, client 0 has {}", c.len(), first.len())));
        }
        for (p, q) in c.iter().zip(first) {
            if p.target != q.target || p.a.shape() != q.a.shape() || p.b.shape() != q.b.shape() {
                return Err(Error::contract(format!(
                    "client {i} adapter {:?} (rank {}) does not match client 0 ({:?}, rank {})",
                    p.target,
                    p.rank(),
                    q.target,
                    q.rank()
                )));
            }
        }
    }
    Ok(first)
}

/// FedIT: average `B` and `A` separately.
pub fn aggregate_fedit(clients: &[Vec<LoraPair>], weights: Option<&[f64]>) -> Result<Vec<LoraPair>> {
    let first = check_pair_sets(clients)?;
    (0..first.len())
        .map(|t| {
            let bs: Vec<&Matrix> = clients.iter().map(|c| &c[t].b).collect();
            let as_: Vec<&Matrix> = clients.iter().map(|c| &c[t].a).collect();
            Ok(LoraPair {
                b: weighted_mean(&bs, weights)?,
                a: weighted_mean(&as_, weights)?,
                ..first[t].clone()
            })
        })
        .collect()
}

/// Averaged effective updates `Σ wᵢ·scale·Bᵢ·Aᵢ`, one per target.
pub fn mean_effective_updates(clients: &[Vec<LoraPair>], weights: Option<&[f64]>) -> Result<Vec<Matrix>> {
    let first = check_pair_sets(clients)?;
    (0..first.len())
        .map(|t| {
            let updates: Vec<Matrix> = clients.iter().map(|c| c[t].effective_update()).collect();
            weighted_mean(&updates.iter().collect::<Vec<_>>(), weights)
        })
        .collect()
}

/// FlexLoRA: average `scale·B·A`, truncate to `r_target` by SVD and split
/// the result back into one `(B, A)` shared by every client.
///
/// Client adapters keep rank `r ≥ r_target`; when `r > r_target` the extra
/// columns of `B` and rows of `A` are zero. Also returns the averaged
/// update of each target before truncation.
pub fn aggregate_flexlora(
    clients: &[Vec<LoraPair>],
    weights: Option<&[f64]>,
    r_target: usize,
    split: FlexSplit,
) -> Result<(Vec<LoraPair>, Vec<Matrix>)> {
    let first = check_pair_sets(clients)?.clone();
    let means = mean_effective_updates(clients, weights)?;
    let mut out = Vec::with_capacity(first.len());
    for (proto, m) in first.iter().zip(&means) {
        let r = proto.rank();
        if r_target == 0 || r_target > r {
            return Err(Error::contract(format!(
                "flexlora target rank {r_target} outside 1..={r} (client adapter rank) for {:?}",
                proto.target
            )));
        }
        let s = svd_truncated(m, r_target)?;
        let (d, k) = m.shape();
        let mut b = Matrix::zeros(d, r);
        let mut a = Matrix::zeros(r, k);
        for j in 0..r_target {
            let sigma = s.singular_values[j];
            let (fb, fa) = match split {
                FlexSplit::FoldIntoB => (sigma, 1.0),
                FlexSplit::Sqrt => (sigma.sqrt(), sigma.sqrt()),
            };
            for i in 0..d {
                b[(i, j)] = s.u[(i, j)] * fb / proto.scale;
            }
            for c in 0..k {
                a[(j, c)] = s.vt[(j, c)] * fa;
            }
        }
        out.push(LoraPair { a, b, ..proto.clone() });
    }
    Ok((out, means))
}

/// FFA-LoRA: average `B`; every client must hold the bitwise-same `A`.
pub fn aggregate_ffalora(clients: &[Vec<LoraPair>], weights: Option<&[f64]>) -> Result<Vec<LoraPair>> {
    let first = check_pair_sets(clients)?;
    for (i, c) in clients.iter().enumerate() {
        for (p, q) in c.iter().zip(first) {
            let same = p.a.data().iter().zip(q.a.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            if !same {
                return Err(Error::contract(format!(
                    "ffalora requires a shared frozen A, but client {i} holds a different A for {:?}",
                    p.target
                )));
            }
        }
    }
    (0..first.len())
        .map(|t| {
            let bs: Vec<&Matrix> = clients.iter().map(|c| &c[t].b).collect();
            Ok(LoraPair {
                b: weighted_mean(&bs, weights)?,
                ..first[t].clone()
            })
        })
        .collect()
}

/// Copy every trainable matrix of `global` into `client`.
pub fn broadcast(global: &ParamSet, client: &mut ParamSet) -> Result<()> {
    if !global.congruent(client) {
        return Err(Error::contract("broadcast between non-congruent parameter sets"));
    }
    for name in global.trainable_names() {
        let src = global.get(name).expect("present");
        *client.require_mut(name)? = src.clone();
    }
    Ok(())
}
