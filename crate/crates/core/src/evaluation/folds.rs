//! Seeded outer/inner fold assignment (uniform shuffle, no stratification).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub seed: u64,
    /// Outer fold of each record, by record index.
    pub outer: Vec<usize>,
    /// For each outer fold: `(record index, inner fold)` for its training records.
    pub inner: Vec<Vec<(usize, usize)>>,
}

fn assign(indices: &mut [usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    indices.shuffle(rng);
    indices.iter().enumerate().map(|(pos, &i)| (i, pos % k)).collect()
}

impl FoldSplit {
    /// `inner_k` is capped at the outer-training size.
    pub fn new(n: usize, k: usize, inner_k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {k}")));
        }
        if n < k {
            return Err(Error::EmptyInput(format!("{n} records cannot fill {k} folds")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut all: Vec<usize> = (0..n).collect();
        let mut outer = vec![0; n];
        for (i, f) in assign(&mut all, k, &mut rng) {
            outer[i] = f;
        }
        let inner = (0..k)
            .map(|f| {
                let mut train: Vec<usize> = (0..n).filter(|&i| outer[i] != f).collect();
                let kk = inner_k.min(train.len()).max(1);
                let mut inner_rng = ChaCha8Rng::seed_from_u64(seed ^ (0xA5A5_0000 + f as u64));
                let mut pairs = assign(&mut train, kk, &mut inner_rng);
                pairs.sort_unstable();
                pairs
            })
            .collect();
        Ok(FoldSplit { k, seed, outer, inner })
    }

    pub fn outer_test(&self, fold: usize) -> Vec<usize> {
        (0..self.outer.len()).filter(|&i| self.outer[i] == fold).collect()
    }

    pub fn outer_train(&self, fold: usize) -> Vec<usize> {
        (0..self.outer.len()).filter(|&i| self.outer[i] != fold).collect()
    }

    /// Number of inner folds actually used for `outer_fold`.
    pub fn inner_k(&self, outer_fold: usize) -> usize {
        self.inner[outer_fold].iter().map(|&(_, f)| f + 1).max().unwrap_or(0)
    }

    /// `(train, validation)` record indices of one inner fold.
    pub fn inner_split(&self, outer_fold: usize, inner_fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (val, train): (Vec<_>, Vec<_>) = self.inner[outer_fold]
            .iter()
            .partition(|&&(_, f)| f == inner_fold);
        (
            train.into_iter().map(|(i, _)| i).collect(),
            val.into_iter().map(|(i, _)| i).collect(),
        )
    }
}
