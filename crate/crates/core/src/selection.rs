//! Candidate scores, the relaxed indicator problem and the alternating query
//! loop.
//!
//! For a solved classifier every pool candidate `j` gets
//!
//! * `a_j` — uncertainty, `sum_k g(1 + |f_k(x_j)|)`,
//! * `b_j` — representativeness, `1/u sum_{i in U} g(f(x_j) - f(x_i)) w_ji`,
//! * `c_j` — redundancy, `1/l sum_{i in L} g(f(x_j) - y_i) w_ji`,
//!
//! and `H = a + beta1 b - beta2 c`. Maximizing `alpha^T H` over the simplex
//! is attained at a vertex, so the indicator problem is an argmax. The `b`
//! sum includes the candidate itself; that adds the same `1/u` to every
//! entry and cannot change the argmax.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{predictions, squared_distance, GramCache, KernelConfig};
use crate::solver::{solve_for_candidate, CandidateSolution, Loss, ModelState, SolverConfig};

/// Alternation cap between the fit and the indicator update.
pub const MAX_ALTERNATIONS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionScores {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub h: DVector<f64>,
}

impl SelectionScores {
    pub fn new(a: DVector<f64>, b: DVector<f64>, c: DVector<f64>, beta1: f64, beta2: f64) -> Self {
        let h = combine(&a, &b, &c, beta1, beta2);
        Self { a, b, c, h }
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }
}

/// `H = a + beta1 b - beta2 c`.
pub fn combine(a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>, beta1: f64, beta2: f64) -> DVector<f64> {
    DVector::from_fn(a.len(), |j, _| a[j] + beta1 * b[j] - beta2 * c[j])
}

fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

/// Uncertainty from pool predictions (u x C).
pub fn uncertainty_from_predictions(f_u: &DMatrix<f64>, gamma: f64) -> DVector<f64> {
    DVector::from_fn(f_u.nrows(), |j, _| {
        f_u.row(j)
            .iter()
            .map(|f| (-gamma * (1.0 + f.abs()).powi(2)).exp())
            .sum()
    })
}

/// Representativeness from pool predictions and pool similarities.
pub fn representativeness_from_predictions(f_u: &DMatrix<f64>, w_uu: &DMatrix<f64>, gamma: f64) -> DVector<f64> {
    let u = f_u.nrows();
    let rows: Vec<Vec<f64>> = (0..u).map(|i| row(f_u, i)).collect();
    DVector::from_fn(u, |j, _| {
        let total: f64 = (0..u)
            .map(|i| (-gamma * squared_distance(&rows[j], &rows[i])).exp() * w_uu[(j, i)])
            .sum();
        total / u as f64
    })
}

/// Redundancy from pool predictions, labeled targets and pool-to-labeled
/// similarities.
pub fn redundancy_from_predictions(
    f_u: &DMatrix<f64>,
    y_l: &DMatrix<f64>,
    w_ul: &DMatrix<f64>,
    gamma: f64,
) -> DVector<f64> {
    let l = y_l.nrows();
    let ys: Vec<Vec<f64>> = (0..l).map(|i| row(y_l, i)).collect();
    DVector::from_fn(f_u.nrows(), |j, _| {
        let f = row(f_u, j);
        let total: f64 = (0..l)
            .map(|i| (-gamma * squared_distance(&f, &ys[i])).exp() * w_ul[(j, i)])
            .sum();
        total / l as f64
    })
}

fn pool_predictions(state: &ModelState, caches: &GramCache) -> DMatrix<f64> {
    predictions(&state.theta, caches).1
}

pub fn score_uncertainty(state: &ModelState, caches: &GramCache, kernel: &KernelConfig) -> DVector<f64> {
    uncertainty_from_predictions(&pool_predictions(state, caches), kernel.label_gamma())
}

pub fn score_representativeness(state: &ModelState, caches: &GramCache, kernel: &KernelConfig) -> DVector<f64> {
    representativeness_from_predictions(&pool_predictions(state, caches), &caches.w_uu, kernel.label_gamma())
}

pub fn score_redundancy(
    state: &ModelState,
    caches: &GramCache,
    y_l: &DMatrix<f64>,
    kernel: &KernelConfig,
) -> DVector<f64> {
    redundancy_from_predictions(
        &pool_predictions(state, caches),
        y_l,
        &caches.w_ul,
        kernel.label_gamma(),
    )
}

/// Quadratic-loss counterparts: each correntropy term `g(r)` becomes `-r^2`.
pub fn quadratic_scores(
    f_u: &DMatrix<f64>,
    y_l: &DMatrix<f64>,
    caches: &GramCache,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let u = f_u.nrows();
    let l = y_l.nrows();
    let rows: Vec<Vec<f64>> = (0..u).map(|i| row(f_u, i)).collect();
    let ys: Vec<Vec<f64>> = (0..l).map(|i| row(y_l, i)).collect();
    let a = DVector::from_fn(u, |j, _| -rows[j].iter().map(|f| (1.0 + f.abs()).powi(2)).sum::<f64>());
    let b = DVector::from_fn(u, |j, _| {
        -(0..u)
            .map(|i| squared_distance(&rows[j], &rows[i]) * caches.w_uu[(j, i)])
            .sum::<f64>()
            / u as f64
    });
    let c = DVector::from_fn(u, |j, _| {
        -(0..l)
            .map(|i| squared_distance(&rows[j], &ys[i]) * caches.w_ul[(j, i)])
            .sum::<f64>()
            / l as f64
    });
    (a, b, c)
}

/// All three score vectors and `H` for the loss in `solver`.
pub fn selection_scores(
    state: &ModelState,
    caches: &GramCache,
    y_l: &DMatrix<f64>,
    kernel: &KernelConfig,
    solver: &SolverConfig,
) -> SelectionScores {
    let f_u = pool_predictions(state, caches);
    let (a, b, c) = match solver.loss {
        Loss::Mcc => {
            let gamma = kernel.label_gamma();
            (
                uncertainty_from_predictions(&f_u, gamma),
                representativeness_from_predictions(&f_u, &caches.w_uu, gamma),
                redundancy_from_predictions(&f_u, y_l, &caches.w_ul, gamma),
            )
        }
        Loss::Mse => quadratic_scores(&f_u, y_l, caches),
    };
    SelectionScores::new(a, b, c, solver.beta1, solver.beta2)
}

/// One-hot maximizer of `alpha^T H` over the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaVector {
    pub alpha: DVector<f64>,
    pub index: usize,
}

/// Argmax of `h`, lowest index on ties.
pub fn argmax(h: &DVector<f64>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &v) in h.iter().enumerate() {
        match best {
            Some(b) if h[b] >= v => {}
            _ => best = Some(j),
        }
    }
    best
}

pub fn solve_alpha(h: &DVector<f64>) -> Result<AlphaVector> {
    if h.is_empty() {
        return Err(Error::EmptyPool);
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("selection scores must be finite".into()));
    }
    let index = argmax(h).expect("non-empty");
    let mut alpha = DVector::zeros(h.len());
    alpha[index] = 1.0;
    Ok(AlphaVector { alpha, index })
}

#[derive(Debug, Clone)]
pub struct QueryOutcome {
    /// Pool position of the selected candidate.
    pub index: usize,
    /// Fit conditioned on the selected candidate.
    pub solution: CandidateSolution,
    /// Scores computed from that fit.
    pub scores: SelectionScores,
    /// False when the alternation cap was hit before the index settled.
    pub stable: bool,
    pub alternations: usize,
    /// Candidate chosen at each alternation, starting from the base fit.
    pub visited: Vec<usize>,
}

/// Alternate between fitting for the current candidate and re-selecting from
/// the refreshed scores until the index repeats.
///
/// Every candidate fit starts from `base` (the previous round's classifier,
/// or zeros) with its split re-anchored at that candidate.
pub fn query_next(
    caches: &GramCache,
    y_l: &DMatrix<f64>,
    kernel: &KernelConfig,
    solver: &SolverConfig,
    base: &ModelState,
) -> Result<QueryOutcome> {
    query_next_with_cap(caches, y_l, kernel, solver, base, MAX_ALTERNATIONS)
}

pub fn query_next_with_cap(
    caches: &GramCache,
    y_l: &DMatrix<f64>,
    kernel: &KernelConfig,
    solver: &SolverConfig,
    base: &ModelState,
    max_alternations: usize,
) -> Result<QueryOutcome> {
    if caches.num_pool() == 0 {
        return Err(Error::EmptyPool);
    }
    if max_alternations == 0 {
        return Err(Error::Config("alternation cap must be at least 1".into()));
    }
    let base_scores = selection_scores(base, caches, y_l, kernel, solver);
    let mut q = solve_alpha(&base_scores.h)?.index;
    let mut visited = vec![q];
    let mut solved: BTreeMap<usize, (CandidateSolution, SelectionScores)> = BTreeMap::new();

    for alternation in 1..=max_alternations {
        if let std::collections::btree_map::Entry::Vacant(e) = solved.entry(q) {
            let mut init = base.clone();
            init.reset_split(q, caches);
            let solution = solve_for_candidate(q, caches, y_l, kernel, solver, &init)?;
            let scores = selection_scores(&solution.state, caches, y_l, kernel, solver);
            e.insert((solution, scores));
        }
        let (solution, scores) = &solved[&q];
        let next = solve_alpha(&scores.h)?.index;
        if next == q {
            return Ok(QueryOutcome {
                index: q,
                solution: solution.clone(),
                scores: scores.clone(),
                stable: true,
                alternations: alternation,
                visited,
            });
        }
        q = next;
        visited.push(q);
    }

    let (&index, (solution, scores)) = solved
        .iter()
        .fold(
            None,
            |best: Option<(&usize, &(CandidateSolution, SelectionScores))>, item| match best {
                Some(b) if b.1 .0.objective() >= item.1 .0.objective() => Some(b),
                _ => Some(item),
            },
        )
        .expect("at least one candidate solved");
    log::warn!(
        "query index did not settle within {max_alternations} alternations (visited {visited:?}); using best objective"
    );
    Ok(QueryOutcome {
        index,
        solution: solution.clone(),
        scores: scores.clone(),
        stable: false,
        alternations: max_alternations,
        visited,
    })
}
