//! k-fold partitioning.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit<T> {
    pub fold_index: usize,
    pub train_ids: Vec<T>,
    pub val_ids: Vec<T>,
}

/// Shuffle once with `seed`, then deal ids round-robin into `k` validation
/// folds so that fold sizes differ by at most one. Training ids keep the input
/// order.
pub fn make_folds<T: Clone + PartialEq>(ids: &[T], k: usize, seed: u64) -> Result<Vec<FoldSplit<T>>> {
    if k < 2 {
        return Err(Error::InvalidConfig(alloc::format!("k must be at least 2, got {k}")));
    }
    if ids.len() < k {
        return Err(Error::NotEnoughIds { n: ids.len(), k });
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut fold_of = alloc::vec![0usize; ids.len()];
    for (pos, &idx) in order.iter().enumerate() {
        fold_of[idx] = pos % k;
    }
    Ok((0..k)
        .map(|fold_index| {
            let val_ids = order
                .iter()
                .filter(|&&i| fold_of[i] == fold_index)
                .map(|&i| ids[i].clone())
                .collect();
            let train_ids = (0..ids.len())
                .filter(|&i| fold_of[i] != fold_index)
                .map(|i| ids[i].clone())
                .collect();
            FoldSplit {
                fold_index,
                train_ids,
                val_ids,
            }
        })
        .collect())
}
