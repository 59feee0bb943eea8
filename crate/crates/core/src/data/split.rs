use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MultiLabelDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitOptions {
    pub test_fraction: f64,
    pub init_labeled_fraction: f64,
    /// Seed offsets tried when the labeled set has a single-class label.
    pub max_resamples: u64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            test_fraction: 0.5,
            init_labeled_fraction: 0.04,
            max_resamples: 200,
        }
    }
}

/// Test / labeled / pool partition of instance indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentSplit {
    pub test_idx: Vec<usize>,
    pub labeled_idx: Vec<usize>,
    pub pool_idx: Vec<usize>,
    /// Seed requested by the caller.
    pub seed: u64,
    /// Seed that produced this partition after degenerate-label resampling.
    pub effective_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleAnswer {
    pub instance: usize,
    pub labels: Vec<i8>,
}

/// Random split: `floor(n * test_fraction)` test indices, then
/// `ceil(rest * init_labeled_fraction)` labeled, remainder pool.
pub fn make_split(dataset: &MultiLabelDataset, seed: u64, options: SplitOptions) -> Result<ExperimentSplit> {
    for (name, f) in [
        ("test_fraction", options.test_fraction),
        ("init_labeled_fraction", options.init_labeled_fraction),
    ] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("{name} must lie in (0, 1), got {f}")));
        }
    }
    let n = dataset.num_instances();
    let n_test = (n as f64 * options.test_fraction + 1e-9).floor() as usize;
    let rest = n - n_test;
    let n_labeled = ((rest as f64 * options.init_labeled_fraction) - 1e-9).ceil() as usize;
    if n_labeled == 0 || n_labeled > rest {
        return Err(Error::Config(format!(
            "split of {n} instances leaves no room for a labeled set"
        )));
    }

    let mut fallback = None;
    for offset in 0..=options.max_resamples {
        let effective_seed = seed.wrapping_add(offset);
        let split = draw(n, n_test, n_labeled, seed, effective_seed);
        match labeled_balance(dataset, &split.labeled_idx) {
            Balance::AllLabels => return Ok(split),
            Balance::SomeLabel if fallback.is_none() => fallback = Some(split),
            _ => {}
        }
    }
    fallback.ok_or_else(|| Error::Config("could not draw a labeled set with both classes for any label".into()))
}

fn draw(n: usize, n_test: usize, n_labeled: usize, seed: u64, effective_seed: u64) -> ExperimentSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(effective_seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut test_idx = perm[..n_test].to_vec();
    let mut labeled_idx = perm[n_test..n_test + n_labeled].to_vec();
    let mut pool_idx = perm[n_test + n_labeled..].to_vec();
    test_idx.sort_unstable();
    labeled_idx.sort_unstable();
    pool_idx.sort_unstable();
    ExperimentSplit {
        test_idx,
        labeled_idx,
        pool_idx,
        seed,
        effective_seed,
    }
}

enum Balance {
    /// Every label has both classes.
    AllLabels,
    /// At least one positive and one negative entry somewhere.
    SomeLabel,
    None,
}

fn labeled_balance(dataset: &MultiLabelDataset, labeled: &[usize]) -> Balance {
    let labels = dataset.labels();
    let mixed = (0..dataset.num_labels())
        .filter(|&k| {
            let pos = labeled.iter().any(|&i| labels[(i, k)] == 1);
            let neg = labeled.iter().any(|&i| labels[(i, k)] == -1);
            pos && neg
        })
        .count();
    let any_pos = labeled.iter().any(|&i| labels.row(i).iter().any(|&v| v == 1));
    let any_neg = labeled.iter().any(|&i| labels.row(i).iter().any(|&v| v == -1));
    if mixed == dataset.num_labels() {
        Balance::AllLabels
    } else if any_pos && any_neg {
        Balance::SomeLabel
    } else {
        Balance::None
    }
}

/// Ground-truth labels of a pool instance.
pub fn oracle_labels(dataset: &MultiLabelDataset, split: &ExperimentSplit, index: usize) -> Result<OracleAnswer> {
    if !split.pool_idx.contains(&index) {
        return Err(Error::Query(format!("instance {index} is not in the pool")));
    }
    Ok(OracleAnswer {
        instance: index,
        labels: dataset.label_row(index),
    })
}

impl ExperimentSplit {
    pub fn num_labeled(&self) -> usize {
        self.labeled_idx.len()
    }

    pub fn num_pool(&self) -> usize {
        self.pool_idx.len()
    }

    /// Ask the oracle for `index` and move it from the pool to the labeled set.
    pub fn query(&mut self, dataset: &MultiLabelDataset, index: usize) -> Result<OracleAnswer> {
        let answer = oracle_labels(dataset, self, index)?;
        let pos = self
            .pool_idx
            .iter()
            .position(|&i| i == index)
            .expect("checked by oracle_labels");
        self.pool_idx.remove(pos);
        self.labeled_idx.push(index);
        Ok(answer)
    }

    /// Labeled set seen after `queries` (in order) were answered.
    pub fn labeled_after(&self, queries: &[usize]) -> Vec<usize> {
        let mut labeled = self.labeled_idx.clone();
        labeled.extend_from_slice(queries);
        labeled
    }

    pub fn save_manifest(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        crate::harness::write_atomic(path, text.as_bytes())
    }

    pub fn load_manifest(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
