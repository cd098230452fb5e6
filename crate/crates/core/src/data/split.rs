//! Seeded train/validation/test splitting and k-fold partitioning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index sets into a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Sizes `(train, val, test)` for `n` samples: the test set takes
/// `⌊0.2·n⌋`, validation `⌊0.2·(n − test)⌋` of the rest, training the
/// remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let test = n / 5;
    let val = (n - test) / 5;
    (n - test - val, val, test)
}

pub fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

pub fn split(n: usize, seed: u64) -> Result<SplitIndices> {
    if n < 3 {
        return Err(Error::Data(format!("cannot split {n} samples three ways")));
    }
    let (train, val, _) = split_sizes(n);
    let idx = shuffled(n, seed);
    Ok(SplitIndices {
        train: idx[..train].to_vec(),
        val: idx[train..train + val].to_vec(),
        test: idx[train + val..].to_vec(),
    })
}

/// Test indices and the remaining pool, for cross-validation.
pub fn holdout(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let s = split(n, seed)?;
    let mut pool = s.train;
    pool.extend(s.val);
    Ok((pool, s.test))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Shuffles `indices` and partitions them into `k` validation folds. The
/// first `len % k` folds take one extra sample.
pub fn kfold(indices: &[usize], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if indices.len() < k {
        return Err(Error::Data(format!(
            "{} samples cannot fill {k} folds",
            indices.len()
        )));
    }
    let order: Vec<usize> = shuffled(indices.len(), seed).into_iter().map(|i| indices[i]).collect();
    let (base, extra) = (order.len() / k, order.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let val = order[start..start + len].to_vec();
        let train = order[..start].iter().chain(&order[start + len..]).copied().collect();
        folds.push(Fold { train, val });
        start += len;
    }
    Ok(folds)
}
