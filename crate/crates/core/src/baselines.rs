//! Reference query strategies: uniform random, minimum summed margin, and the
//! quadratic-loss ablation of the correntropy strategy.

use nalgebra::linalg::Cholesky;
use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::{GramCache, KernelConfig};
use crate::selection::{query_next, QueryOutcome};
use crate::solver::{Loss, ModelState, SolverConfig};

/// Uniform draw from `pool`.
pub fn random_query<R: Rng + ?Sized>(pool: &[usize], rng: &mut R) -> Result<usize> {
    pool.choose(rng).copied().ok_or(Error::EmptyPool)
}

/// Kernel ridge fit on the labeled set: `(K_LL + lambda I) theta_k = y_k`.
/// Returns theta as C x l.
pub fn fit_kernel_ridge(k_ll: &DMatrix<f64>, y_l: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let l = k_ll.nrows();
    if y_l.nrows() != l {
        return Err(Error::Dimension {
            expected: l,
            found: y_l.nrows(),
        });
    }
    let a = k_ll + DMatrix::identity(l, l) * lambda;
    let chol = Cholesky::new(a).ok_or(Error::Singular {
        label: 0,
        condition: f64::INFINITY,
    })?;
    Ok(chol.solve(y_l).transpose())
}

/// Pool position minimizing `sum_k |f_k(x_j)|`; lowest index on ties.
pub fn minmargin_from_predictions(f_u: &DMatrix<f64>) -> Result<usize> {
    let margins = DVector::from_fn(f_u.nrows(), |j, _| f_u.row(j).iter().map(|f| f.abs()).sum::<f64>());
    let mut best: Option<usize> = None;
    for (j, &m) in margins.iter().enumerate() {
        match best {
            Some(b) if margins[b] <= m => {}
            _ => best = Some(j),
        }
    }
    best.ok_or(Error::EmptyPool)
}

/// Minimum-margin query for an already fitted classifier.
pub fn minmargin_query(state: &ModelState, caches: &GramCache) -> Result<usize> {
    let f_u = caches.k_lu.tr_mul(&state.theta.transpose());
    minmargin_from_predictions(&f_u)
}

/// The full query loop with every half-quadratic weight frozen at 1.
pub fn mse_variant_query(
    caches: &GramCache,
    y_l: &DMatrix<f64>,
    kernel: &KernelConfig,
    solver: &SolverConfig,
    base: &ModelState,
) -> Result<QueryOutcome> {
    let config = SolverConfig {
        loss: Loss::Mse,
        ..*solver
    };
    query_next(caches, y_l, kernel, &config, base)
}
