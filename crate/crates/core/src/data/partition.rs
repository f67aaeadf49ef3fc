use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::RngSeed;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub num_clients: usize,
    pub alpha: f64,
    pub seed: RngSeed,
    pub equal_sizes: bool,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Range("num_clients must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Range(format!("dirichlet alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Shard index lists for `labels`; each list is sorted ascending.
///
/// Per class, proportions are drawn from `Dirichlet(alpha·1_N)` (normalized
/// Gamma draws) and the shuffled class indices are cut at the rounded
/// cumulative proportions. With `equal_sizes`, single samples then move from
/// the largest shard to the smallest until sizes differ by at most one; each
/// move picks the class the recipient already holds most of (ties: the class
/// the donor holds most of, then the lowest class id) and takes the donor's
/// highest-index sample of it.
pub fn dirichlet_partition_indices(labels: &[usize], num_classes: usize, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    let n_clients = spec.num_clients;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::contract(format!("label {l} outside 0..{num_classes}")));
        }
        by_class[l].push(i);
    }
    if let Some(c) = by_class.iter().position(|v| v.is_empty()) {
        return Err(Error::contract(format!("class {c} has no samples")));
    }
    let gamma = Gamma::new(spec.alpha, 1.0).map_err(|e| Error::Range(e.to_string()))?;
    let mut rng = spec.seed.rng();
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for idx in by_class.iter_mut() {
        let mut p: Vec<f64> = (0..n_clients).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = p.iter().sum();
        if total > 0.0 && total.is_finite() {
            p.iter_mut().for_each(|x| *x /= total);
        } else {
            let winner = rng.random_range(0..n_clients);
            p = (0..n_clients).map(|j| (j == winner) as u8 as f64).collect();
        }
        idx.shuffle(&mut rng);
        let n_c = idx.len();
        let mut start = 0;
        let mut cum = 0.0;
        for (j, pj) in p.iter().enumerate() {
            cum += pj;
            let end = if j + 1 == n_clients {
                n_c
            } else {
                ((cum * n_c as f64).round() as usize).clamp(start, n_c)
            };
            shards[j].extend_from_slice(&idx[start..end]);
            start = end;
        }
    }
    if spec.equal_sizes {
        rebalance(&mut shards, labels, num_classes);
    }
    for s in shards.iter_mut() {
        s.sort_unstable();
    }
    Ok(shards)
}

fn rebalance(shards: &mut [Vec<usize>], labels: &[usize], num_classes: usize) {
    let mut counts: Vec<Vec<usize>> = shards
        .iter()
        .map(|s| {
            let mut h = vec![0; num_classes];
            s.iter().for_each(|&i| h[labels[i]] += 1);
            h
        })
        .collect();
    loop {
        let donor = (0..shards.len()).max_by_key(|&j| (shards[j].len(), std::cmp::Reverse(j))).unwrap();
        let recipient = (0..shards.len()).min_by_key(|&j| (shards[j].len(), j)).unwrap();
        if shards[donor].len() <= shards[recipient].len() + 1 {
            break;
        }
        let class = (0..num_classes)
            .filter(|&c| counts[donor][c] > 0)
            .max_by_key(|&c| (counts[recipient][c], counts[donor][c], std::cmp::Reverse(c)))
            .expect("donor shard is non-empty");
        let pos = shards[donor]
            .iter()
            .enumerate()
            .filter(|(_, &i)| labels[i] == class)
            .max_by_key(|(_, &i)| i)
            .map(|(p, _)| p)
            .expect("class present in donor");
        let sample = shards[donor].swap_remove(pos);
        shards[recipient].push(sample);
        counts[donor][class] -= 1;
        counts[recipient][class] += 1;
    }
}

/// Split `ds` into `N` shards; see [`dirichlet_partition_indices`].
pub fn dirichlet_partition(ds: &LabeledDataset, spec: &PartitionSpec) -> Result<Vec<LabeledDataset>> {
    let idx = dirichlet_partition_indices(&ds.labels(), ds.num_classes(), spec)?;
    Ok(idx.iter().map(|s| ds.subset(s)).collect())
}

/// Hold out `floor(fraction·|shard|)` samples of each shard and pool them.
///
/// A shard whose present classes all have at least two samples is split
/// stratified: class quotas by largest remainder, capped at `n_c − 1` so each
/// class keeps a training sample. Other shards are split uniformly.
pub fn split_train_eval(
    shards: &[LabeledDataset],
    eval_fraction: f64,
    seed: RngSeed,
) -> Result<(Vec<LabeledDataset>, LabeledDataset)> {
    if !(eval_fraction > 0.0 && eval_fraction <= 0.5) {
        return Err(Error::Range(format!("eval fraction must lie in (0, 0.5], got {eval_fraction}")));
    }
    let first = shards.first().ok_or_else(|| Error::contract("no shards to split"))?;
    let mut trains = Vec::with_capacity(shards.len());
    let mut evals = Vec::with_capacity(shards.len());
    for (j, shard) in shards.iter().enumerate() {
        let mut rng = seed.derive(j as u64).rng();
        let n_eval = (eval_fraction * shard.len() as f64 + 1e-9).floor() as usize;
        if n_eval == 0 {
            return Err(Error::contract(format!(
                "shard {j} has {} samples, too few for a nonzero eval split at fraction {eval_fraction}",
                shard.len()
            )));
        }
        let hist = shard.histogram();
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); shard.num_classes()];
        for (i, s) in shard.items().iter().enumerate() {
            by_class[s.label].push(i);
        }
        let stratify = hist.iter().all(|&h| h == 0 || h >= 2);
        let mut eval_idx = Vec::with_capacity(n_eval);
        if stratify {
            let quotas = stratified_quotas(&hist, n_eval);
            for (c, idx) in by_class.iter_mut().enumerate() {
                idx.shuffle(&mut rng);
                eval_idx.extend_from_slice(&idx[..quotas[c]]);
            }
        } else {
            let mut all: Vec<usize> = (0..shard.len()).collect();
            all.shuffle(&mut rng);
            eval_idx.extend_from_slice(&all[..n_eval]);
        }
        eval_idx.sort_unstable();
        let mut is_eval = vec![false; shard.len()];
        eval_idx.iter().for_each(|&i| is_eval[i] = true);
        let train_idx: Vec<usize> = (0..shard.len()).filter(|&i| !is_eval[i]).collect();
        trains.push(shard.subset(&train_idx));
        evals.push(shard.subset(&eval_idx));
    }
    let pooled = if evals.is_empty() {
        LabeledDataset::empty(first.num_classes(), first.kind())
    } else {
        LabeledDataset::concat(&evals)?
    };
    Ok((trains, pooled))
}

fn stratified_quotas(hist: &[usize], n_eval: usize) -> Vec<usize> {
    let size: usize = hist.iter().sum();
    let cap: Vec<usize> = hist.iter().map(|&h| h.saturating_sub(1)).collect();
    let exact: Vec<f64> = hist.iter().map(|&h| n_eval as f64 * h as f64 / size as f64).collect();
    let mut q: Vec<usize> = exact.iter().zip(&cap).map(|(e, &c)| (e.floor() as usize).min(c)).collect();
    let mut assigned: usize = q.iter().sum();
    let mut order: Vec<usize> = (0..hist.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    while assigned < n_eval {
        let before = assigned;
        for &c in &order {
            if assigned == n_eval {
                break;
            }
            if q[c] < cap[c] {
                q[c] += 1;
                assigned += 1;
            }
        }
        if assigned == before {
            break;
        }
    }
    q
}
