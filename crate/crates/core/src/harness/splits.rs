//! Random train/test splits.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// `n_splits` draws of `n_tr` training indices without replacement; the rest is test data.
pub fn make_splits(n_total: usize, n_tr: usize, n_splits: usize, seed: u64) -> Result<Vec<Split>> {
    if n_splits == 0 {
        return invalid("at least one split is required");
    }
    if n_tr == 0 || 2 * n_tr > n_total {
        return invalid(format!("training size {n_tr} must lie in 1..={}", n_total / 2));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_splits)
        .map(|_| {
            let mut train = sample(&mut rng, n_total, n_tr).into_vec();
            train.sort_unstable();
            let mut in_train = vec![false; n_total];
            for &i in &train {
                in_train[i] = true;
            }
            let test = (0..n_total).filter(|&i| !in_train[i]).collect();
            Split { train, test }
        })
        .collect())
}
