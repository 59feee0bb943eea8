use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Strategy};
use crate::baselines::{fit_kernel_ridge, minmargin_query, mse_variant_query, random_query};
use crate::data::{make_split, ExperimentSplit, MultiLabelDataset};
use crate::error::{Error, Result};
use crate::eval::{checkpoint_grid, micro_f1, train_eval_classifier, LearningCurve};
use crate::kernels::{GramCache, KernelConfig, KernelMatrix};
use crate::seeding::rng_for;
use crate::selection::query_next;
use crate::solver::{Loss, ModelState, SolverConfig};

/// One (dataset, strategy, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub strategy: Strategy,
    pub seed: u64,
    /// Partition before any query.
    pub split: ExperimentSplit,
    /// Queried dataset indices, in order.
    pub queries: Vec<usize>,
    pub curve: LearningCurve,
    /// Seconds spent choosing each query.
    pub query_seconds: Vec<f64>,
    pub wall_seconds: f64,
    /// Queries whose alternation hit the cap before settling.
    pub unstable_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsBundle {
    pub config: ExperimentConfig,
    /// Ordered by dataset (config order), then strategy, then seed.
    pub runs: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
}

impl ResultsBundle {
    pub fn curves(&self) -> impl Iterator<Item = (&str, &LearningCurve)> {
        self.runs.iter().map(|r| (r.dataset.as_str(), &r.curve))
    }
}

/// Data shared by every run on one dataset.
pub struct PreparedDataset {
    pub dataset: MultiLabelDataset,
    pub kernel: KernelConfig,
    /// Feature kernel over all instances.
    pub gram: KernelMatrix,
}

impl PreparedDataset {
    pub fn new(dataset: MultiLabelDataset, config: &ExperimentConfig) -> Result<Self> {
        let dataset = if config.standardize {
            dataset.standardize_features()
        } else {
            dataset
        };
        let kernel = config.kernel.resolve(dataset.num_features(), dataset.num_labels())?;
        let all: Vec<usize> = (0..dataset.num_instances()).collect();
        let gram = KernelMatrix::compute(dataset.features(), &all, kernel.gamma_x);
        Ok(Self { dataset, kernel, gram })
    }
}

/// Run every (dataset, strategy, seed) of `config`. A dataset that fails to
/// load is recorded in `failures` and skipped; runs are independent and
/// scheduled in parallel, but the result order and content match a
/// sequential execution.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultsBundle> {
    config.validate()?;
    if config.datasets.is_empty() {
        return Err(Error::Config("no datasets configured".into()));
    }
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for source in &config.datasets {
        let name = source.name();
        let prepared = match source.load().and_then(|ds| PreparedDataset::new(ds, config)) {
            Ok(p) => p,
            Err(e) => {
                log::error!("dataset {name}: {e}");
                failures.push(RunFailure {
                    dataset: name,
                    strategy: None,
                    seed: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let (ok, failed) = run_dataset(&prepared, config);
        runs.extend(ok);
        failures.extend(failed);
    }
    Ok(ResultsBundle {
        config: config.clone(),
        runs,
        failures,
    })
}

/// All strategy x seed runs on one prepared dataset.
pub fn run_dataset(prepared: &PreparedDataset, config: &ExperimentConfig) -> (Vec<RunRecord>, Vec<RunFailure>) {
    let jobs: Vec<(Strategy, u64)> = config
        .strategies
        .iter()
        .flat_map(|&s| config.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let results: Vec<Result<RunRecord>> = jobs
        .par_iter()
        .map(|&(strategy, seed)| run_single(prepared, strategy, seed, config))
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for ((strategy, seed), r) in jobs.into_iter().zip(results) {
        match r {
            Ok(run) => ok.push(run),
            Err(e) => {
                log::error!("{} {strategy} seed {seed}: {e}", prepared.dataset.name());
                failed.push(RunFailure {
                    dataset: prepared.dataset.name().to_string(),
                    strategy: Some(strategy),
                    seed: Some(seed),
                    message: e.to_string(),
                });
            }
        }
    }
    (ok, failed)
}

fn labels_f64(dataset: &MultiLabelDataset, indices: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(indices.len(), dataset.num_labels(), |i, k| {
        dataset.labels()[(indices[i], k)] as f64
    })
}

fn select_rows<T: nalgebra::Scalar + Copy>(m: &DMatrix<T>, rows: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Micro-F1 on the test set of the evaluation classifier trained on `labeled`.
pub fn evaluate(dataset: &MultiLabelDataset, labeled: &[usize], test: &[usize]) -> Result<f64> {
    let x_l = select_rows(dataset.features(), labeled);
    let y_l = select_rows(dataset.labels(), labeled);
    let x_t = select_rows(dataset.features(), test);
    let truth = select_rows(dataset.labels(), test);
    let pred = train_eval_classifier(&x_l, &y_l, &x_t)?;
    micro_f1(&pred, &truth)
}

/// One active-learning run: `budget` queries from the seeded split, with the
/// evaluation classifier retrained at every checkpoint.
pub fn run_single(
    prepared: &PreparedDataset,
    strategy: Strategy,
    seed: u64,
    config: &ExperimentConfig,
) -> Result<RunRecord> {
    let started = Instant::now();
    let ds = &prepared.dataset;
    let initial = make_split(ds, seed, config.split_options())?;
    if initial.num_pool() < config.budget {
        return Err(Error::Config(format!(
            "pool of {} instances is smaller than the budget {}",
            initial.num_pool(),
            config.budget
        )));
    }
    let grid = checkpoint_grid(config.budget, config.checkpoint_every);
    let mut split = initial.clone();
    let mut rng = rng_for(&[ds.name(), strategy.name(), &seed.to_string()]);
    let solver = SolverConfig {
        loss: match strategy {
            Strategy::MseVariant => Loss::Mse,
            _ => config.solver.loss,
        },
        ..config.solver
    };
    let mut y_l = labels_f64(ds, &split.labeled_idx);
    let mut base = ModelState::zeros(ds.num_labels(), split.num_labeled(), solver.rho);
    let mut queries = Vec::with_capacity(config.budget);
    let mut query_seconds = Vec::with_capacity(config.budget);
    let mut checkpoints = Vec::with_capacity(grid.len());
    let mut unstable = 0;

    for step in 1..=config.budget {
        let t0 = Instant::now();
        let instance = match strategy {
            Strategy::Random => random_query(&split.pool_idx, &mut rng)?,
            Strategy::Minmargin => {
                let caches = GramCache::from_kernel(&prepared.gram, &split.labeled_idx, &split.pool_idx);
                let theta = fit_kernel_ridge(&caches.k_ll, &y_l, solver.lambda)?;
                let state = ModelState {
                    theta,
                    ..ModelState::zeros(ds.num_labels(), split.num_labeled(), solver.rho)
                };
                split.pool_idx[minmargin_query(&state, &caches)?]
            }
            Strategy::Rmlal | Strategy::MseVariant => {
                let caches = GramCache::from_kernel(&prepared.gram, &split.labeled_idx, &split.pool_idx);
                let outcome = if strategy == Strategy::MseVariant {
                    mse_variant_query(&caches, &y_l, &prepared.kernel, &solver, &base)?
                } else {
                    query_next(&caches, &y_l, &prepared.kernel, &solver, &base)?
                };
                if !outcome.stable {
                    unstable += 1;
                }
                base = outcome.solution.state.extend_labeled();
                split.pool_idx[outcome.index]
            }
        };
        query_seconds.push(t0.elapsed().as_secs_f64());
        let answer = split.query(ds, instance)?;
        let rows = y_l.nrows();
        y_l = y_l.insert_row(rows, 0.0);
        let last = y_l.nrows() - 1;
        for (k, &v) in answer.labels.iter().enumerate() {
            y_l[(last, k)] = v as f64;
        }
        queries.push(instance);
        if grid.contains(&step) {
            checkpoints.push((step, evaluate(ds, &split.labeled_idx, &split.test_idx)?));
        }
    }
    Ok(RunRecord {
        dataset: ds.name().to_string(),
        strategy,
        seed,
        split: initial,
        queries,
        curve: LearningCurve::new(strategy.name(), seed, checkpoints)?,
        query_seconds,
        wall_seconds: started.elapsed().as_secs_f64(),
        unstable_queries: unstable,
    })
}

/// Recompute a run's checkpoints from its persisted split and query log.
pub fn replay_curve(
    dataset: &MultiLabelDataset,
    split: &ExperimentSplit,
    queries: &[usize],
    grid: &[usize],
    method: &str,
) -> Result<LearningCurve> {
    let mut seen = std::collections::BTreeSet::new();
    for q in queries {
        if !split.pool_idx.contains(q) || !seen.insert(*q) {
            return Err(Error::Query(format!(
                "query log entry {q} is repeated or outside the pool"
            )));
        }
    }
    let checkpoints = grid
        .iter()
        .map(|&g| {
            if g > queries.len() {
                return Err(Error::Query(format!(
                    "checkpoint {g} beyond {} logged queries",
                    queries.len()
                )));
            }
            Ok((
                g,
                evaluate(dataset, &split.labeled_after(&queries[..g]), &split.test_idx)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    LearningCurve::new(method, split.seed, checkpoints)
}
