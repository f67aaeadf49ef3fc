//! Datasets: synthetic generators, CSV I/O, Dirichlet partitioning and the
//! train/eval split.

mod csv_io;
mod partition;

pub use csv_io::{load_csv, read_manifest, write_csv, write_manifest, write_partition, CsvSchema, ManifestEntry};
pub use partition::{dirichlet_partition, dirichlet_partition_indices, split_train_eval, PartitionSpec};

use crate::error::{Error, Result};
use crate::linalg::RngSeed;
use crate::model::{Input, Sample};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Vector { dim: usize },
    Sequence,
}

/// Labeled samples of one kind. May be empty (an empty shard); loaders and
/// generators never return an empty dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    items: Vec<Sample>,
    num_classes: usize,
    kind: DatasetKind,
}

impl LabeledDataset {
    pub fn new(items: Vec<Sample>, num_classes: usize, kind: DatasetKind) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::contract(format!("need at least 2 classes, got {num_classes}")));
        }
        for (i, s) in items.iter().enumerate() {
            if s.label >= num_classes {
                return Err(Error::data(format!("sample {i}: label {} outside 0..{num_classes}", s.label)));
            }
            match (&s.input, kind) {
                (Input::Vector(x), DatasetKind::Vector { dim }) if x.len() == dim => {}
                (Input::Tokens(t), DatasetKind::Sequence) if !t.is_empty() => {}
                _ => return Err(Error::data(format!("sample {i} does not match dataset kind {kind:?}"))),
            }
        }
        Ok(LabeledDataset { items, num_classes, kind })
    }

    pub fn empty(num_classes: usize, kind: DatasetKind) -> Self {
        LabeledDataset {
            items: Vec::new(),
            num_classes,
            kind,
        }
    }

    pub fn items(&self) -> &[Sample] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|s| s.label).collect()
    }

    /// Count of samples per class.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for s in &self.items {
            h[s.label] += 1;
        }
        h
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
            num_classes: self.num_classes,
            kind: self.kind,
        }
    }

    /// Concatenation of datasets of the same kind and class count.
    pub fn concat(parts: &[LabeledDataset]) -> Result<LabeledDataset> {
        let first = parts.first().ok_or_else(|| Error::contract("concat of zero datasets"))?;
        let mut items = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            if p.kind != first.kind || p.num_classes != first.num_classes {
                return Err(Error::contract("concat of datasets with different kinds or class counts"));
            }
            items.extend(p.items.iter().cloned());
        }
        Ok(LabeledDataset {
            items,
            num_classes: first.num_classes,
            kind: first.kind,
        })
    }
}

/// `n` points in `C` unit-covariance Gaussian clusters.
///
/// With `dim ≥ C` the means are `(sep/√2)·e_c`, so every pair of means is
/// `sep` apart. With `dim < C` they sit on the first axis at spacing `sep`.
/// Labels are assigned round-robin and the sample order is shuffled.
pub fn synth_vectors(n: usize, num_classes: usize, dim: usize, cluster_sep: f64, seed: RngSeed) -> Result<LabeledDataset> {
    if n < num_classes || dim == 0 {
        return Err(Error::contract(format!("synth_vectors needs n ≥ C and dim ≥ 1 (n={n}, C={num_classes}, dim={dim})")));
    }
    let mut rng = seed.rng();
    let mean = |c: usize, j: usize| -> f64 {
        if dim >= num_classes {
            if j == c {
                cluster_sep / std::f64::consts::SQRT_2
            } else {
                0.0
            }
        } else if j == 0 {
            c as f64 * cluster_sep
        } else {
            0.0
        }
    };
    let mut items: Vec<Sample> = (0..n)
        .map(|i| {
            let c = i % num_classes;
            let x = (0..dim)
                .map(|j| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mean(c, j) + z
                })
                .collect();
            Sample {
                input: Input::Vector(x),
                label: c,
            }
        })
        .collect();
    items.shuffle(&mut rng);
    LabeledDataset::new(items, num_classes, DatasetKind::Vector { dim })
}

/// Parameters of the token-sequence generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceSpec {
    pub n: usize,
    pub num_classes: usize,
    pub vocab: usize,
    pub seq_len: usize,
    /// Probability that a token is replaced by a uniformly random one.
    pub noise: f64,
}

impl SequenceSpec {
    pub fn new(n: usize, num_classes: usize, vocab: usize, seq_len: usize) -> Self {
        SequenceSpec {
            n,
            num_classes,
            vocab,
            seq_len,
            noise: 0.0,
        }
    }
}

/// Token sequences from one first-order Markov chain per class.
///
/// Class `c` owns the tokens `t` with `t mod C == c`. Its chain starts at a
/// uniformly drawn own token and steps along a fixed random cycle over the
/// own tokens; each emitted token is swapped for a uniform draw over the
/// whole vocabulary with probability `noise`.
pub fn synth_sequences(n: usize, num_classes: usize, vocab: usize, seq_len: usize, seed: RngSeed) -> Result<LabeledDataset> {
    synth_sequences_with(&SequenceSpec::new(n, num_classes, vocab, seq_len), seed)
}

pub fn synth_sequences_with(spec: &SequenceSpec, seed: RngSeed) -> Result<LabeledDataset> {
    let &SequenceSpec {
        n,
        num_classes: c,
        vocab,
        seq_len,
        noise,
    } = spec;
    if vocab < 2 * c || n < c || seq_len == 0 {
        return Err(Error::contract(format!(
            "synth_sequences needs V ≥ 2C, n ≥ C and seq_len ≥ 1 (V={vocab}, C={c}, n={n})"
        )));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::Range(format!("noise must lie in [0, 1], got {noise}")));
    }
    let mut chain_rng = seed.derive(0).rng();
    let successor: Vec<Vec<usize>> = (0..c)
        .map(|class| {
            let mut own: Vec<usize> = (class..vocab).step_by(c).collect();
            own.shuffle(&mut chain_rng);
            let mut next = vec![0; vocab];
            for (i, &t) in own.iter().enumerate() {
                next[t] = own[(i + 1) % own.len()];
            }
            next
        })
        .collect();
    let mut rng = seed.derive(1).rng();
    let mut items: Vec<Sample> = (0..n)
        .map(|i| {
            let class = i % c;
            let own_count = (class..vocab).step_by(c).count();
            let mut state = class + c * rng.random_range(0..own_count);
            let tokens = (0..seq_len)
                .map(|_| {
                    let emitted = if noise > 0.0 && rng.random::<f64>() < noise {
                        rng.random_range(0..vocab)
                    } else {
                        state
                    };
                    state = successor[class][state];
                    emitted
                })
                .collect();
            Sample {
                input: Input::Tokens(tokens),
                label: class,
            }
        })
        .collect();
    items.shuffle(&mut rng);
    LabeledDataset::new(items, c, DatasetKind::Sequence)
}

#[cfg(test)]
mod tests;
