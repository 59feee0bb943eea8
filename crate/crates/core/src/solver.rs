//! Candidate-conditioned classifier fit: half-quadratic reweighting around an
//! ADMM solve of the weighted quadratic surrogate.
//!
//! The classifier is `f_k(x) = theta_k^T K_L(x)` with one coefficient row per
//! label. For a fixed candidate `x_q` the maximized objective is
//!
//! ```text
//! J = sum_ik g(y_ik - f_k(x_i)) - gamma*lambda*sum_k ||theta_k||_K^2
//!   + sum_k g(1 + |f_k(x_q)|)
//!   + beta1/u * sum_{i in U} g(f(x_q) - f(x_i)) w_qi
//!   - beta2/l * sum_{i in L} g(f(x_q) - y_i) w_qi,      g(r) = exp(-gamma ||r||^2)
//! ```
//!
//! Each maximized term is minorized by `J(theta0) - gamma * weight * r^2`;
//! the subtracted redundancy term is replaced by its tangent at the current
//! `f(x_q)` plus a curvature bound, so the minimized surrogate is a true
//! majorizer and every accepted step increases `J`.

use nalgebra::linalg::Cholesky;
use nalgebra::{DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{hq_weights, predictions, unit_weights, GramCache, HqWeights, KernelConfig};

/// Loss used for the fit and the selection scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// Correntropy (robust) loss.
    Mcc,
    /// Mean-square loss: every half-quadratic weight frozen at 1.
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub rho: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub tol_primal: f64,
    pub tol_obj: f64,
    pub loss: Loss,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            beta1: 1.0,
            beta2: 1.0,
            rho: 1.0,
            max_outer: 10,
            max_inner: 50,
            tol_primal: 1e-5,
            tol_obj: 1e-6,
            loss: Loss::Mcc,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [
            ("rho", self.rho),
            ("tol_primal", self.tol_primal),
            ("tol_obj", self.tol_obj),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::Config("iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Coefficients and ADMM variables for one candidate solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// C x l.
    pub theta: DMatrix<f64>,
    /// Split variable, `e_k = theta_k^T K_L(x_q)` at convergence.
    pub e: DVector<f64>,
    /// Scaled-free dual variable of the split constraint.
    pub eta: DVector<f64>,
    pub rho: f64,
}

impl ModelState {
    pub fn zeros(num_labels: usize, num_labeled: usize, rho: f64) -> Self {
        Self {
            theta: DMatrix::zeros(num_labels, num_labeled),
            e: DVector::zeros(num_labels),
            eta: DVector::zeros(num_labels),
            rho,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.theta.nrows()
    }

    pub fn num_labeled(&self) -> usize {
        self.theta.ncols()
    }

    /// Warm start for the next round: the newly labeled point (appended last)
    /// gets a zero coefficient.
    pub fn extend_labeled(&self) -> Self {
        let l = self.num_labeled();
        Self {
            theta: self.theta.clone().insert_column(l, 0.0),
            ..self.clone()
        }
    }

    /// Re-anchor the split at candidate `q`: `e = theta K_L(x_q)`, `eta = 0`.
    pub fn reset_split(&mut self, q: usize, caches: &GramCache) {
        self.e = &self.theta * caches.pool_column(q);
        self.eta.fill(0.0);
    }

    /// `||e - theta K_L(x_q)||_inf`.
    pub fn primal_residual(&self, q: usize, caches: &GramCache) -> f64 {
        (&self.e - &self.theta * caches.pool_column(q)).amax()
    }
}

/// `f_k(x) = theta_k^T kernel_column`.
pub fn predict(state: &ModelState, kernel_column: &DVector<f64>) -> Result<DVector<f64>> {
    if kernel_column.len() != state.num_labeled() {
        return Err(Error::Dimension {
            expected: state.num_labeled(),
            found: kernel_column.len(),
        });
    }
    Ok(&state.theta * kernel_column)
}

/// Where the half-quadratic weights come from in each outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightPolicy {
    /// Recomputed from the current classifier (robust loss).
    Correntropy,
    /// All weights 1 (quadratic loss); only the redundancy anchor moves.
    Unit,
    /// Held fixed for the whole solve.
    Fixed(HqWeights),
}

impl WeightPolicy {
    pub fn for_loss(loss: Loss) -> Self {
        match loss {
            Loss::Mcc => WeightPolicy::Correntropy,
            Loss::Mse => WeightPolicy::Unit,
        }
    }

    fn weights(
        &self,
        theta: &DMatrix<f64>,
        q: usize,
        caches: &GramCache,
        y_l: &DMatrix<f64>,
        kernel: &KernelConfig,
    ) -> HqWeights {
        match self {
            WeightPolicy::Correntropy => hq_weights(theta, q, caches, y_l, kernel),
            WeightPolicy::Unit => unit_weights(theta, q, caches, y_l.ncols()),
            WeightPolicy::Fixed(w) => w.clone(),
        }
    }
}

fn check_dims(theta: &DMatrix<f64>, q: usize, caches: &GramCache, y_l: &DMatrix<f64>) -> Result<()> {
    let l = caches.num_labeled();
    if theta.ncols() != l {
        return Err(Error::Dimension {
            expected: l,
            found: theta.ncols(),
        });
    }
    if y_l.nrows() != l {
        return Err(Error::Dimension {
            expected: l,
            found: y_l.nrows(),
        });
    }
    if theta.nrows() != y_l.ncols() {
        return Err(Error::Dimension {
            expected: y_l.ncols(),
            found: theta.nrows(),
        });
    }
    if q >= caches.num_pool() {
        return Err(Error::Query(format!(
            "candidate {q} outside pool of size {}",
            caches.num_pool()
        )));
    }
    Ok(())
}

/// Pieces of the quadratic form shared by the surrogate and its gradient.
struct Terms {
    fit: f64,
    ridge: f64,
    margin: f64,
    representativeness: f64,
    redundancy_sq: f64,
}

fn terms(theta: &DMatrix<f64>, w: &HqWeights, caches: &GramCache, y_l: &DMatrix<f64>, q: usize) -> Terms {
    let (f_l, f_u) = predictions(theta, caches);
    let c = y_l.ncols();
    let fit = (0..y_l.nrows())
        .flat_map(|i| (0..c).map(move |k| (i, k)))
        .map(|(i, k)| w.m[(i, k)] * (y_l[(i, k)] - f_l[(i, k)]).powi(2))
        .sum();
    let ridge = (theta * &caches.k_ll).component_mul(theta).sum();
    let margin = (0..c)
        .map(|k| {
            let a = f_u[(q, k)].abs();
            w.n[k] * (1.0 + 2.0 * a + a * a)
        })
        .sum();
    let representativeness = (0..f_u.nrows())
        .map(|i| w.h_star[i] * (0..c).map(|k| (f_u[(q, k)] - f_u[(i, k)]).powi(2)).sum::<f64>())
        .sum();
    let redundancy_sq = (0..y_l.nrows())
        .map(|i| w.v_star[i] * (0..c).map(|k| (f_u[(q, k)] - y_l[(i, k)]).powi(2)).sum::<f64>())
        .sum();
    Terms {
        fit,
        ridge,
        margin,
        representativeness,
        redundancy_sq,
    }
}

/// Half-quadratic objective (minimized form) at fixed weights:
/// `sum m (y - f)^2 + lambda sum ||theta_k||_K^2 + sum n (1 + |f_q|)^2
///  + beta1 sum h* ||f_q - f_i||^2 - beta2 sum v* ||f_q - y_i||^2`.
pub fn objective_hq(
    state: &ModelState,
    weights: &HqWeights,
    caches: &GramCache,
    y_l: &DMatrix<f64>,
    q: usize,
    config: &SolverConfig,
) -> f64 {
    let t = terms(&state.theta, weights, caches, y_l, q);
    t.fit + config.lambda * t.ridge + t.margin + config.beta1 * t.representativeness - config.beta2 * t.redundancy_sq
}

/// Redundancy term after linearization at `weights.anchor`, plus curvature.
fn redundancy_majorizer(f_q: &DVector<f64>, w: &HqWeights, y_l: &DMatrix<f64>) -> f64 {
    let mut total = 0.0;
    for k in 0..y_l.ncols() {
        let a = w.anchor[k];
        for i in 0..y_l.nrows() {
            let y = y_l[(i, k)];
            total += w.v_star[i] * (2.0 * f_q[k] * (y - a) + a * a - y * y);
        }
        total += w.redundancy_curvature * (f_q[k] - a).powi(2);
    }
    total
}

/// Majorizing surrogate minimized in one outer iteration. Equals
/// [`objective_hq`] when `theta` reproduces the anchor.
pub fn surrogate(
    theta: &DMatrix<f64>,
    weights: &HqWeights,
    caches: &GramCache,
    y_l: &DMatrix<f64>,
    q: usize,
    config: &SolverConfig,
) -> f64 {
    let t = terms(theta, weights, caches, y_l, q);
    let f_q = theta * caches.pool_column(q);
    t.fit
        + config.lambda * t.ridge
        + t.margin
        + config.beta1 * t.representativeness
        + config.beta2 * redundancy_majorizer(&f_q, weights, y_l)
}

/// Augmented Lagrangian of the split `e = theta^T K_L(x_q)`.
pub fn lagrangian(
    state: &ModelState,
    weights: &HqWeights,
    caches: &GramCache,
    y_l: &DMatrix<f64>,
    q: usize,
    config: &SolverConfig,
) -> f64 {
    let t = terms(&state.theta, weights, caches, y_l, q);
    let f_q = &state.theta * caches.pool_column(q);
    let smooth = t.fit
        + config.lambda * t.ridge
        + config.beta1 * t.representativeness
        + config.beta2 * redundancy_majorizer(&f_q, weights, y_l);
    let split: f64 = (0..state.e.len())
        .map(|k| {
            let e = state.e[k];
            let r = e - f_q[k];
            weights.n[k] * (1.0 + 2.0 * e.abs() + e * e) + state.eta[k] * r + 0.5 * state.rho * r * r
        })
        .sum();
    smooth + split
}

/// The maximized objective evaluated exactly (no surrogate). For the
/// quadratic loss and for fixed weights it is the negated surrogate.
pub fn exact_objective(
    theta: &DMatrix<f64>,
    q: usize,
    caches: &GramCache,
    y_l: &DMatrix<f64>,
    kernel: &KernelConfig,
    config: &SolverConfig,
    policy: &WeightPolicy,
) -> f64 {
    match policy {
        WeightPolicy::Correntropy => {
            let gamma = kernel.label_gamma();
            let (f_l, f_u) = predictions(theta, caches);
            let (l, c) = (y_l.nrows(), y_l.ncols());
            let u = f_u.nrows();
            let g = |d: f64| (-gamma * d).exp();
            let mut fit = 0.0;
            for i in 0..l {
                for k in 0..c {
                    fit += g((y_l[(i, k)] - f_l[(i, k)]).powi(2));
                }
            }
            let ridge = (theta * &caches.k_ll).component_mul(theta).sum();
            let margin: f64 = (0..c).map(|k| g((1.0 + f_u[(q, k)].abs()).powi(2))).sum();
            let rep: f64 = (0..u)
                .map(|i| {
                    let d: f64 = (0..c).map(|k| (f_u[(q, k)] - f_u[(i, k)]).powi(2)).sum();
                    g(d) * caches.w_uu[(q, i)]
                })
                .sum::<f64>()
                / u as f64;
            let red: f64 = (0..l)
                .map(|i| {
                    let d: f64 = (0..c).map(|k| (f_u[(q, k)] - y_l[(i, k)]).powi(2)).sum();
                    g(d) * caches.w_ul[(q, i)]
                })
                .sum::<f64>()
                / l as f64;
            fit - gamma * config.lambda * ridge + margin + config.beta1 * rep - config.beta2 * red
        }
        WeightPolicy::Unit => {
            let w = unit_weights(theta, q, caches, y_l.ncols());
            let state = ModelState {
                theta: theta.clone(),
                e: DVector::zeros(0),
                eta: DVector::zeros(0),
                rho: 0.0,
            };
            -objective_hq(&state, &w, caches, y_l, q, config)
        }
        WeightPolicy::Fixed(w) => -surrogate(theta, w, caches, y_l, q, config),
    }
}

/// Per-label factorized systems `B_k theta_k = r_k` for fixed weights.
pub struct ThetaSystem {
    factors: Vec<Cholesky<f64, Dyn>>,
    /// Weight-dependent constant part of every right-hand side (l x C).
    rhs: DMatrix<f64>,
    kq: DVector<f64>,
    rho: f64,
}

impl ThetaSystem {
    pub fn assemble(
        weights: &HqWeights,
        caches: &GramCache,
        y_l: &DMatrix<f64>,
        q: usize,
        rho: f64,
        config: &SolverConfig,
    ) -> Result<Self> {
        let k = &caches.k_ll;
        let kq = caches.pool_column(q);
        let l = k.nrows();
        let c = y_l.ncols();

        // D_h = sum_i h*_i (Kq - K_i)(Kq - K_i)^T
        let s: f64 = weights.h_star.sum();
        let g = &caches.k_lu * &weights.h_star;
        let mut scaled = caches.k_lu.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= weights.h_star[j];
        }
        let kqkq = &kq * kq.transpose();
        let d_h = &scaled * caches.k_lu.transpose() + &kqkq * s - &kq * g.transpose() - &g * kq.transpose();

        let v_total: f64 = weights.v_star.sum();
        let kappa = weights.redundancy_curvature;
        let common = k * config.lambda + d_h * config.beta1 + &kqkq * (config.beta2 * kappa + 0.5 * rho);

        let mut factors = Vec::with_capacity(c);
        let mut rhs = DMatrix::zeros(l, c);
        for label in 0..c {
            let m = weights.m.column(label);
            let mut km = k.clone();
            for (j, mut col) in km.column_iter_mut().enumerate() {
                col *= m[j];
            }
            let mut b = &km * k + &common;
            b = (&b + b.transpose()) * 0.5;
            factors.push(factorize(b, label)?);

            let my = m.component_mul(&y_l.column(label));
            let a = weights.anchor[label];
            let y_sum = weights.v_star.dot(&y_l.column(label));
            let r0 = k * my - &kq * (config.beta2 * (y_sum - v_total * a)) + &kq * (config.beta2 * kappa * a);
            rhs.set_column(label, &r0);
        }
        Ok(Self { factors, rhs, kq, rho })
    }

    /// Minimizer over theta of the augmented Lagrangian at fixed `e`, `eta`.
    pub fn solve(&self, e: &DVector<f64>, eta: &DVector<f64>) -> DMatrix<f64> {
        let c = self.factors.len();
        let mut theta = DMatrix::zeros(c, self.kq.len());
        for k in 0..c {
            let r = self.rhs.column(k) + &self.kq * (0.5 * (eta[k] + self.rho * e[k]));
            let sol = self.factors[k].solve(&r);
            theta.set_row(k, &sol.transpose());
        }
        theta
    }
}

fn factorize(b: DMatrix<f64>, label: usize) -> Result<Cholesky<f64, Dyn>> {
    let max_diag = b.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let singular = |b: &DMatrix<f64>| Error::Singular {
        label,
        condition: condition_estimate(b),
    };
    if !(max_diag > 0.0 && max_diag.is_finite()) {
        return Err(singular(&b));
    }
    if let Some(ch) = Cholesky::new(b.clone()) {
        return Ok(ch);
    }
    let mut jittered = b.clone();
    for i in 0..b.nrows() {
        jittered[(i, i)] += 1e-10 * max_diag;
    }
    Cholesky::new(jittered).ok_or_else(|| singular(&b))
}

fn condition_estimate(b: &DMatrix<f64>) -> f64 {
    if b.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let eig = b.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// One ADMM theta step from scratch (assemble, factorize, solve).
pub fn update_theta(
    state: &ModelState,
    weights: &HqWeights,
    caches: &GramCache,
    y_l: &DMatrix<f64>,
    q: usize,
    config: &SolverConfig,
) -> Result<DMatrix<f64>> {
    check_dims(&state.theta, q, caches, y_l)?;
    let system = ThetaSystem::assemble(weights, caches, y_l, q, state.rho, config)?;
    Ok(system.solve(&state.e, &state.eta))
}

/// `sign(z) max(|z| - tau, 0)`.
pub fn soft_threshold(z: f64, tau: f64) -> f64 {
    if z > tau {
        z - tau
    } else if z < -tau {
        z + tau
    } else {
        0.0
    }
}

/// Closed-form minimizer of `(n + rho/2) e^2 + (eta - rho c) e + 2 n |e|`
/// per label, with `c = theta_k^T K_L(x_q)`.
pub fn update_e(state: &ModelState, weights: &HqWeights, caches: &GramCache, q: usize) -> DVector<f64> {
    let c = &state.theta * caches.pool_column(q);
    DVector::from_fn(c.len(), |k, _| {
        let n = weights.n[k];
        soft_threshold(state.rho * c[k] - state.eta[k], 2.0 * n) / (2.0 * n + state.rho)
    })
}

/// Dual ascent: `eta + rho (e - theta^T K_L(x_q))`.
pub fn update_eta(state: &ModelState, q: usize, caches: &GramCache) -> DVector<f64> {
    let c = &state.theta * caches.pool_column(q);
    &state.eta + (&state.e - c) * state.rho
}

/// Result of one candidate-conditioned solve.
#[derive(Debug, Clone)]
pub struct CandidateSolution {
    pub state: ModelState,
    /// Weights used in the last accepted outer iteration.
    pub weights: HqWeights,
    pub converged: bool,
    pub outer_iterations: usize,
    /// Exact objective before the first and after every accepted outer step.
    pub objective_trace: Vec<f64>,
    /// Primal residual after every inner step, grouped by outer iteration.
    pub residual_trace: Vec<Vec<f64>>,
}

impl CandidateSolution {
    pub fn objective(&self) -> f64 {
        *self
            .objective_trace
            .last()
            .expect("trace starts with the initial value")
    }

    pub fn primal_residual(&self) -> f64 {
        self.residual_trace
            .iter()
            .rev()
            .find_map(|r| r.last().copied())
            .unwrap_or(0.0)
    }
}

/// Fit for candidate `q` starting from `init` (its `e`, `eta` are used as
/// given), with weights chosen by `config.loss`.
pub fn solve_for_candidate(
    q: usize,
    caches: &GramCache,
    y_l: &DMatrix<f64>,
    kernel: &KernelConfig,
    config: &SolverConfig,
    init: &ModelState,
) -> Result<CandidateSolution> {
    solve_with_policy(
        q,
        caches,
        y_l,
        kernel,
        config,
        init,
        &WeightPolicy::for_loss(config.loss),
    )
}

pub fn solve_with_policy(
    q: usize,
    caches: &GramCache,
    y_l: &DMatrix<f64>,
    kernel: &KernelConfig,
    config: &SolverConfig,
    init: &ModelState,
    policy: &WeightPolicy,
) -> Result<CandidateSolution> {
    config.validate()?;
    check_dims(&init.theta, q, caches, y_l)?;
    let c = y_l.ncols();
    if init.e.len() != c || init.eta.len() != c {
        return Err(Error::Dimension {
            expected: c,
            found: init.e.len().min(init.eta.len()),
        });
    }
    let kq = caches.pool_column(q);
    let kq_norm = kq.norm();
    let mut state = init.clone();
    state.rho = config.rho;

    let mut j_prev = exact_objective(&state.theta, q, caches, y_l, kernel, config, policy);
    let mut trace = vec![j_prev];
    if !j_prev.is_finite() {
        return Err(Error::Divergence {
            message: "initial objective is not finite".into(),
            trace,
        });
    }
    let mut residual_trace = Vec::new();
    let mut weights = policy.weights(&state.theta, q, caches, y_l, kernel);
    let mut outer_converged = false;
    let mut outer_iterations = 0;

    for outer in 1..=config.max_outer {
        let step_weights = policy.weights(&state.theta, q, caches, y_l, kernel);
        let system = ThetaSystem::assemble(&step_weights, caches, y_l, q, config.rho, config)?;
        let s_old = surrogate(&state.theta, &step_weights, caches, y_l, q, config);

        let mut trial = state.clone();
        let mut residuals = Vec::new();
        for _ in 0..config.max_inner {
            trial.theta = system.solve(&trial.e, &trial.eta);
            let e_new = update_e(&trial, &step_weights, caches, q);
            let dual = config.rho * (&e_new - &trial.e).amax() * kq_norm;
            trial.e = e_new;
            trial.eta = update_eta(&trial, q, caches);
            let primal = trial.primal_residual(q, caches);
            residuals.push(primal);
            if primal <= config.tol_primal && dual <= config.tol_primal {
                break;
            }
        }

        let s_new = surrogate(&trial.theta, &step_weights, caches, y_l, q, config);
        if !s_new.is_finite() {
            return Err(Error::Divergence {
                message: format!("surrogate became non-finite in outer iteration {outer}"),
                trace,
            });
        }
        if s_new > s_old + 1e-12 * s_old.abs().max(1.0) {
            // The inexact inner solve failed to decrease the majorizer; keep
            // the previous iterate so the objective never decreases.
            log::debug!("candidate {q}: outer step {outer} rejected ({s_new} > {s_old})");
            residual_trace.push(vec![state.primal_residual(q, caches)]);
            outer_converged = true;
            break;
        }
        state = trial;
        weights = step_weights;
        residual_trace.push(residuals);
        outer_iterations = outer;

        let j = exact_objective(&state.theta, q, caches, y_l, kernel, config, policy);
        trace.push(j);
        if !j.is_finite() {
            return Err(Error::Divergence {
                message: format!("objective became non-finite in outer iteration {outer}"),
                trace,
            });
        }
        if (j - j_prev).abs() < config.tol_obj {
            outer_converged = true;
            break;
        }
        j_prev = j;
    }

    let converged = outer_converged && state.primal_residual(q, caches) <= config.tol_primal;
    Ok(CandidateSolution {
        state,
        weights,
        converged,
        outer_iterations,
        objective_trace: trace,
        residual_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::build_gram;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Toy {
        caches: GramCache,
        y: DMatrix<f64>,
        kernel: KernelConfig,
    }

    fn toy(seed: u64, l: usize, u: usize, c: usize) -> Toy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = 3;
        let features = DMatrix::from_fn(l + u, t, |_, _| rng.random_range(-1.5..1.5));
        let labeled: Vec<usize> = (0..l).collect();
        let pool: Vec<usize> = (l..l + u).collect();
        let kernel = KernelConfig::for_dimensions(t, c);
        let caches = build_gram(&features, &labeled, &pool, &kernel);
        let y = DMatrix::from_fn(l, c, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
        Toy { caches, y, kernel }
    }

    fn random_weights(rng: &mut ChaCha8Rng, l: usize, u: usize, c: usize) -> HqWeights {
        HqWeights {
            m: DMatrix::from_fn(l, c, |_, _| rng.random_range(0.05..1.0)),
            n: DVector::from_fn(c, |_, _| rng.random_range(0.05..1.0)),
            h_star: DVector::from_fn(u, |_, _| rng.random_range(0.01..1.0) / u as f64),
            v_star: DVector::from_fn(l, |_, _| rng.random_range(0.01..1.0) / l as f64),
            anchor: DVector::from_fn(c, |_, _| rng.random_range(-1.0..1.0)),
            redundancy_curvature: rng.random_range(0.0..0.4),
        }
    }

    fn random_state(rng: &mut ChaCha8Rng, l: usize, c: usize) -> ModelState {
        ModelState {
            theta: DMatrix::from_fn(c, l, |_, _| rng.random_range(-1.0..1.0)),
            e: DVector::from_fn(c, |_, _| rng.random_range(-1.0..1.0)),
            eta: DVector::from_fn(c, |_, _| rng.random_range(-1.0..1.0)),
            rho: rng.random_range(0.5..2.0),
        }
    }

    #[test]
    fn predict_cases() {
        let zero = ModelState::zeros(3, 2, 1.0);
        assert_eq!(
            predict(&zero, &DVector::from_vec(vec![0.3, 0.7])).unwrap(),
            DVector::zeros(3)
        );
        let state = ModelState {
            theta: DMatrix::from_element(2, 1, 2.0),
            ..ModelState::zeros(2, 1, 1.0)
        };
        assert_eq!(
            predict(&state, &DVector::from_vec(vec![0.5])).unwrap(),
            DVector::from_element(2, 1.0)
        );
        assert!(predict(&state, &DVector::from_vec(vec![0.5, 1.0])).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_state(&mut rng, 4, 3);
        let col = DVector::from_fn(4, |_, _| rng.random_range(0.0..1.0));
        let f = predict(&s, &col).unwrap();
        for k in 0..3 {
            let mut expected = 0.0;
            for i in 0..4 {
                expected += s.theta[(k, i)] * col[i];
            }
            assert!((f[k] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn objective_plug_in() {
        let t = toy(1, 3, 2, 2);
        let state = ModelState::zeros(2, 3, 1.0);
        let y = DMatrix::from_element(3, 2, 1.0);
        let mut w = random_weights(&mut ChaCha8Rng::seed_from_u64(0), 3, 2, 2);
        w.m.fill(1.0);
        let cfg = SolverConfig {
            beta1: 0.0,
            beta2: 0.0,
            ..SolverConfig::default()
        };
        let v = objective_hq(&state, &w, &t.caches, &y, 0, &cfg);
        assert!((v - (6.0 + w.n.sum())).abs() < 1e-14);
    }

    #[test]
    fn objective_matches_term_by_term_oracle() {
        let t = toy(3, 3, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let state = random_state(&mut rng, 3, 2);
        let w = random_weights(&mut rng, 3, 2, 2);
        let cfg = SolverConfig {
            lambda: 0.3,
            beta1: 0.7,
            beta2: 1.3,
            ..SolverConfig::default()
        };
        let q = 1;
        let (k_ll, k_lu) = (&t.caches.k_ll, &t.caches.k_lu);
        let f = |k: usize, col: &dyn Fn(usize) -> f64| (0..3).map(|i| state.theta[(k, i)] * col(i)).sum::<f64>();
        let mut expected = 0.0;
        for i in 0..3 {
            for k in 0..2 {
                let fi = f(k, &|a| k_ll[(a, i)]);
                expected += w.m[(i, k)] * (t.y[(i, k)] - fi).powi(2);
            }
        }
        for k in 0..2 {
            for a in 0..3 {
                for b in 0..3 {
                    expected += cfg.lambda * state.theta[(k, a)] * k_ll[(a, b)] * state.theta[(k, b)];
                }
            }
            let fq = f(k, &|a| k_lu[(a, q)]);
            expected += w.n[k] * (1.0 + 2.0 * fq.abs() + fq * fq);
        }
        for j in 0..2 {
            let mut d = 0.0;
            for k in 0..2 {
                d += (f(k, &|a| k_lu[(a, q)]) - f(k, &|a| k_lu[(a, j)])).powi(2);
            }
            expected += cfg.beta1 * w.h_star[j] * d;
        }
        for i in 0..3 {
            let mut d = 0.0;
            for k in 0..2 {
                d += (f(k, &|a| k_lu[(a, q)]) - t.y[(i, k)]).powi(2);
            }
            expected -= cfg.beta2 * w.v_star[i] * d;
        }
        let got = objective_hq(&state, &w, &t.caches, &t.y, q, &cfg);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        let zero = ModelState::zeros(2, 3, 1.0);
        let cfg0 = SolverConfig {
            beta1: 0.0,
            beta2: 0.0,
            ..cfg
        };
        let expected0: f64 = w.m.component_mul(&t.y.component_mul(&t.y)).sum() + w.n.sum();
        assert!((objective_hq(&zero, &w, &t.caches, &t.y, q, &cfg0) - expected0).abs() < 1e-14);
    }

    #[test]
    fn surrogate_touches_objective_at_anchor() {
        let t = toy(5, 4, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let state = random_state(&mut rng, 4, 2);
        let mut w = random_weights(&mut rng, 4, 3, 2);
        w.anchor = &state.theta * t.caches.pool_column(2);
        let cfg = SolverConfig::default();
        let a = objective_hq(&state, &w, &t.caches, &t.y, 2, &cfg);
        let b = surrogate(&state.theta, &w, &t.caches, &t.y, 2, &cfg);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn theta_update_reduces_to_kernel_ridge() {
        let t = toy(7, 5, 3, 2);
        let mut w = random_weights(&mut ChaCha8Rng::seed_from_u64(1), 5, 3, 2);
        w.m.fill(1.0);
        w.n.fill(0.0);
        let cfg = SolverConfig {
            lambda: 0.25,
            beta1: 0.0,
            beta2: 0.0,
            ..SolverConfig::default()
        };
        let state = ModelState::zeros(2, 5, 0.0);
        let theta = update_theta(&state, &w, &t.caches, &t.y, 0, &cfg).unwrap();
        let k = &t.caches.k_ll;
        let a = k * k + k * cfg.lambda;
        for label in 0..2 {
            let b = k * t.y.column(label);
            let direct = a.clone().lu().solve(&b).unwrap();
            assert!((theta.row(label).transpose() - direct).amax() < 1e-8);
        }
        let again = update_theta(&state, &w, &t.caches, &t.y, 0, &cfg).unwrap();
        assert_eq!(theta, again);
    }

    fn assert_stationary(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = rng.random_range(1..=10);
        let u = rng.random_range(1..=6);
        let c = rng.random_range(2..=4);
        let t = toy(seed + 100, l, u, c);
        let w = random_weights(&mut rng, l, u, c);
        let mut state = random_state(&mut rng, l, c);
        let cfg = SolverConfig {
            lambda: rng.random_range(0.01..1.0),
            beta1: rng.random_range(0.0..2.0),
            beta2: rng.random_range(0.0..2.0),
            ..SolverConfig::default()
        };
        let q = rng.random_range(0..u);
        state.theta = update_theta(&state, &w, &t.caches, &t.y, q, &cfg).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..c {
            for i in 0..l {
                let mut plus = state.clone();
                plus.theta[(k, i)] += h;
                let mut minus = state.clone();
                minus.theta[(k, i)] -= h;
                let g = (lagrangian(&plus, &w, &t.caches, &t.y, q, &cfg)
                    - lagrangian(&minus, &w, &t.caches, &t.y, q, &cfg))
                    / (2.0 * h);
                worst = worst.max(g.abs());
            }
        }
        assert!(worst <= 1e-5, "seed {seed}: gradient {worst}");
    }

    #[test]
    fn theta_update_is_stationary() {
        for seed in 0..30 {
            assert_stationary(seed);
        }
    }

    #[test]
    fn singular_system_is_reported() {
        let t = toy(2, 3, 2, 2);
        let mut w = random_weights(&mut ChaCha8Rng::seed_from_u64(3), 3, 2, 2);
        w.m.fill(0.0);
        w.n.fill(0.0);
        let cfg = SolverConfig {
            lambda: 0.0,
            beta1: 0.0,
            beta2: 0.0,
            ..SolverConfig::default()
        };
        let state = ModelState::zeros(2, 3, 0.0);
        let err = update_theta(&state, &w, &t.caches, &t.y, 0, &cfg).unwrap_err();
        assert!(matches!(err, Error::Singular { label: 0, .. }));
    }

    fn scalar_objective(e: f64, n: f64, eta: f64, c: f64, rho: f64) -> f64 {
        (n + rho / 2.0) * e * e + (eta - rho * c) * e + 2.0 * n * e.abs()
    }

    /// Minimizer of the convex scalar objective by bisection on the sign of
    /// its one-sided derivatives.
    fn numeric_minimizer(n: f64, eta: f64, c: f64, rho: f64) -> f64 {
        let slope = |e: f64, side: f64| 2.0 * (n + rho / 2.0) * e + (eta - rho * c) + 2.0 * n * side;
        if slope(0.0, 1.0) >= 0.0 && slope(0.0, -1.0) <= 0.0 {
            return 0.0;
        }
        let (mut lo, mut hi, side) = if slope(0.0, 1.0) < 0.0 {
            (0.0, 1e6, 1.0)
        } else {
            (-1e6, 0.0, -1.0)
        };
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if slope(mid, side) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn closed_form(n: f64, eta: f64, c: f64, rho: f64) -> f64 {
        // one-label state with K_L(x_q) = [1] so that c = theta
        let features = DMatrix::from_row_slice(2, 1, &[0.0, 0.0]);
        let caches = build_gram(&features, &[0], &[1], &KernelConfig::for_dimensions(1, 1));
        let state = ModelState {
            theta: DMatrix::from_element(1, 1, c),
            e: DVector::zeros(1),
            eta: DVector::from_element(1, eta),
            rho,
        };
        let w = HqWeights {
            m: DMatrix::from_element(1, 1, 1.0),
            n: DVector::from_element(1, n),
            h_star: DVector::from_element(1, 1.0),
            v_star: DVector::from_element(1, 1.0),
            anchor: DVector::zeros(1),
            redundancy_curvature: 0.0,
        };
        update_e(&state, &w, &caches, 0)[0]
    }

    #[test]
    fn e_update_cases() {
        assert!((closed_form(0.0, 0.4, 1.5, 2.0) - (1.5 - 0.4 / 2.0)).abs() < 1e-15);
        assert_eq!(closed_form(0.5, 0.2, 0.3, 1.0), 0.0);
        assert_eq!(closed_form(0.5, -0.5, 0.5, 1.0), 0.0);
    }

    #[test]
    fn e_update_matches_numeric_minimization() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let grid: Vec<f64> = (0..10_000).map(|i| -10.0 + 20.0 * i as f64 / 9_999.0).collect();
        for _ in 0..1000 {
            let n = rng.random_range(0.0..1.0);
            let eta = rng.random_range(-3.0..3.0);
            let c = rng.random_range(-3.0..3.0);
            let rho = rng.random_range(0.1..5.0);
            let e = closed_form(n, eta, c, rho);
            assert!((e - numeric_minimizer(n, eta, c, rho)).abs() < 1e-8);
            let best = scalar_objective(e, n, eta, c, rho);
            let grid_best = grid
                .iter()
                .map(|&g| scalar_objective(g, n, eta, c, rho))
                .fold(f64::INFINITY, f64::min);
            assert!(best <= grid_best + 1e-12);
        }
    }

    #[test]
    fn eta_update_cases() {
        let features = DMatrix::from_row_slice(2, 1, &[0.0, 0.0]);
        let caches = build_gram(&features, &[0], &[1], &KernelConfig::for_dimensions(1, 1));
        let mut state = ModelState {
            theta: DMatrix::from_element(1, 1, 1.0),
            e: DVector::from_element(1, 1.0),
            eta: DVector::from_element(1, 0.3),
            rho: 1.0,
        };
        assert_eq!(update_eta(&state, 0, &caches)[0], 0.3);
        state.e[0] = 1.5;
        assert_eq!(update_eta(&state, 0, &caches)[0], 0.8);
        for step in 1..=5 {
            state.eta = update_eta(&state, 0, &caches);
            assert!((state.eta[0] - (0.3 + 0.5 * step as f64)).abs() < 1e-14);
        }
    }

    fn fresh_state(t: &Toy, q: usize) -> ModelState {
        let mut s = ModelState::zeros(t.y.ncols(), t.y.nrows(), 1.0);
        s.reset_split(q, &t.caches);
        s
    }

    #[test]
    fn separable_toy_is_fit() {
        let features = DMatrix::from_row_slice(
            9,
            2,
            &[
                -2.0, -2.0, -1.8, -1.5, -1.5, -2.2, 2.0, 2.0, 1.7, 2.1, 2.2, 1.6, -2.0, 2.0, 2.0, -2.0, 0.1, 0.0,
            ],
        );
        let labeled = [0, 1, 2, 3, 4, 5];
        let pool = [6, 7, 8];
        let kernel = KernelConfig::for_dimensions(2, 2);
        let caches = build_gram(&features, &labeled, &pool, &kernel);
        let y = DMatrix::from_row_slice(
            6,
            2,
            &[1.0, -1.0, 1.0, -1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0],
        );
        let cfg = SolverConfig::default();
        let t = Toy {
            caches: caches.clone(),
            y: y.clone(),
            kernel,
        };
        let sol = solve_for_candidate(2, &caches, &y, &kernel, &cfg, &fresh_state(&t, 2)).unwrap();
        let (f_l, _) = predictions(&sol.state.theta, &caches);
        for i in 0..6 {
            for k in 0..2 {
                assert_eq!(f_l[(i, k)].signum(), y[(i, k)], "instance {i} label {k}");
            }
        }
    }

    #[test]
    fn warm_start_converges_quickly() {
        let t = toy(9, 6, 5, 3);
        let long = SolverConfig {
            max_outer: 200,
            ..SolverConfig::default()
        };
        let first = solve_for_candidate(1, &t.caches, &t.y, &t.kernel, &long, &fresh_state(&t, 1)).unwrap();
        assert!(first.converged);
        let cfg = SolverConfig::default();
        let again = solve_for_candidate(1, &t.caches, &t.y, &t.kernel, &cfg, &first.state).unwrap();
        assert!(
            again.outer_iterations <= 2,
            "{} outer iterations",
            again.outer_iterations
        );
        assert!(again.converged);
    }

    #[test]
    fn converged_flag_implies_small_residual() {
        for seed in 0..10 {
            let t = toy(seed, 5, 4, 2);
            let cfg = SolverConfig::default();
            let sol = solve_for_candidate(0, &t.caches, &t.y, &t.kernel, &cfg, &fresh_state(&t, 0)).unwrap();
            if sol.converged {
                assert!(sol.state.primal_residual(0, &t.caches) <= cfg.tol_primal);
            }
        }
    }

    fn monotone(loss: Loss, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = rng.random_range(2..=8);
        let u = rng.random_range(2..=8);
        let c = rng.random_range(2..=4);
        let t = toy(seed + 500, l, u, c);
        let cfg = SolverConfig {
            lambda: rng.random_range(0.01..1.0),
            beta1: rng.random_range(0.0..2.0),
            beta2: rng.random_range(0.0..2.0),
            loss,
            ..SolverConfig::default()
        };
        let q = rng.random_range(0..u);
        let mut init = random_state(&mut rng, l, c);
        init.reset_split(q, &t.caches);
        let sol = solve_for_candidate(q, &t.caches, &t.y, &t.kernel, &cfg, &init).unwrap();
        for pair in sol.objective_trace.windows(2) {
            assert!(
                pair[1] >= pair[0] - 1e-8,
                "{loss:?} seed {seed}: {:?}",
                sol.objective_trace
            );
        }
    }

    #[test]
    fn outer_iterations_never_decrease_objective() {
        for seed in 0..20 {
            monotone(Loss::Mcc, seed);
            monotone(Loss::Mse, seed);
        }
    }

    #[test]
    fn fixed_weight_solve_matches_kernel_ridge() {
        let t = toy(13, 6, 4, 3);
        let mut w = unit_weights(&DMatrix::zeros(3, 6), 0, &t.caches, 3);
        w.n.fill(0.0);
        let cfg = SolverConfig {
            lambda: 0.2,
            beta1: 0.0,
            beta2: 0.0,
            rho: 1e-3,
            max_inner: 200,
            tol_primal: 1e-14,
            tol_obj: 1e-300,
            ..SolverConfig::default()
        };
        let sol = solve_with_policy(
            0,
            &t.caches,
            &t.y,
            &t.kernel,
            &cfg,
            &fresh_state(&t, 0),
            &WeightPolicy::Fixed(w),
        )
        .unwrap();
        let k = &t.caches.k_ll;
        let a = k * k + k * cfg.lambda;
        for label in 0..3 {
            let direct = a.clone().lu().solve(&(k * t.y.column(label))).unwrap();
            let err = (sol.state.theta.row(label).transpose() - direct).amax();
            assert!(err < 1e-8, "label {label}: {err}");
        }
    }

    #[test]
    fn residuals_settle_on_converged_runs() {
        let mut checked = 0;
        let mut monotone_tail = 0;
        for seed in 0..20 {
            let t = toy(seed + 900, 6, 5, 3);
            let cfg = SolverConfig::default();
            let sol = solve_for_candidate(2, &t.caches, &t.y, &t.kernel, &cfg, &fresh_state(&t, 2)).unwrap();
            if !sol.converged {
                continue;
            }
            let all: Vec<f64> = sol.residual_trace.iter().flatten().copied().collect();
            if all.len() < 5 {
                continue;
            }
            checked += 1;
            let tail = &all[all.len() - 5..];
            if tail.windows(2).all(|p| p[1] <= p[0] + 1e-12) {
                monotone_tail += 1;
            }
        }
        assert!(checked >= 10, "only {checked} converged runs");
        assert!(
            monotone_tail as f64 >= 0.8 * checked as f64,
            "{monotone_tail}/{checked}"
        );
    }

    #[test]
    fn non_finite_labels_diverge() {
        let mut t = toy(4, 3, 3, 2);
        t.y[(0, 0)] = f64::NAN;
        let cfg = SolverConfig::default();
        let init = ModelState::zeros(2, 3, 1.0);
        let err = solve_for_candidate(0, &t.caches, &t.y, &t.kernel, &cfg, &init).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn extend_labeled_appends_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_state(&mut rng, 3, 2);
        let e = s.extend_labeled();
        assert_eq!(e.theta.ncols(), 4);
        assert_eq!(e.theta.column(3).amax(), 0.0);
        assert_eq!(e.theta.columns(0, 3), s.theta.columns(0, 3));
    }
}
