//! Seeded k-fold assignment.

use imfuse_core::Rng;

use crate::dataset::Dataset;
use crate::error::{HarnessError, Result};

/// Fold index per case. With `strata`, each stratum is shuffled and dealt
/// round-robin, continuing the deal across strata so that fold sizes differ
/// by at most one overall and within every stratum.
pub fn kfold_split(n: usize, k: usize, seed: u64, strata: Option<&[u8]>) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(HarnessError::Config("k must be at least 2".into()));
    }
    if n < k {
        return Err(HarnessError::Config(format!("{n} cases cannot fill {k} folds")));
    }
    let mut rng = Rng::stream(seed, 0xf01d);
    let groups: Vec<Vec<usize>> = match strata {
        None => vec![(0..n).collect()],
        Some(s) => {
            if s.len() != n {
                return Err(HarnessError::Config("one stratum label per case required".into()));
            }
            let mut keys: Vec<u8> = s.to_vec();
            keys.sort_unstable();
            keys.dedup();
            let groups: Vec<Vec<usize>> = keys
                .iter()
                .map(|key| (0..n).filter(|&i| s[i] == *key).collect())
                .collect();
            if let Some(g) = groups.iter().find(|g| g.len() < k) {
                return Err(HarnessError::Config(format!(
                    "stratum `{}` has {} cases, fewer than {k} folds",
                    s[g[0]],
                    g.len()
                )));
            }
            groups
        }
    };
    let mut fold = vec![0; n];
    let mut next = 0;
    for mut g in groups {
        rng.shuffle(&mut g);
        for i in g {
            fold[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(fold)
}

/// Response datasets are stratified by label; survival datasets are not.
pub fn split_dataset(data: &Dataset, k: usize, seed: u64) -> Result<Vec<usize>> {
    let labels: Option<Vec<u8>> = data.cases.iter().map(|c| c.response_class()).collect();
    kfold_split(data.cases.len(), k, seed, labels.as_deref())
}
