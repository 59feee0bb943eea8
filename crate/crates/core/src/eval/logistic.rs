//! L2-regularized logistic regression, one classifier per label.
//!
//! Minimizes `0.5 ||w||^2 + C sum_i log(1 + exp(-y_i w^T [x_i, 1]))` with
//! Newton steps and Armijo backtracking, so the loss decreases at every
//! accepted step. When there are fewer samples than weights the Newton system
//! is solved in sample space through the Woodbury identity.

use nalgebra::linalg::Cholesky;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticConfig {
    /// Weight of the data term relative to the unit L2 penalty.
    pub c: f64,
    pub max_iter: usize,
    /// Stop once the gradient norm falls below `tol` times its initial value.
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    /// Feature weights followed by the bias weight.
    pub weights: DVector<f64>,
    /// Loss before the first and after every accepted step.
    pub loss_history: Vec<f64>,
}

impl LogisticFit {
    pub fn decision(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let t = x.ncols();
        x * self.weights.rows(0, t) + DVector::from_element(x.nrows(), self.weights[t])
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn with_bias(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(x.ncols(), 1.0)
}

fn loss(xb: &DMatrix<f64>, y: &[f64], w: &DVector<f64>, c: f64) -> f64 {
    let z = xb * w;
    0.5 * w.norm_squared() + c * y.iter().zip(z.iter()).map(|(yi, zi)| softplus(-yi * zi)).sum::<f64>()
}

/// Fit one binary classifier; `y` holds +-1.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64], config: &LogisticConfig) -> Result<LogisticFit> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptyPool);
    }
    if y.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: y.len(),
        });
    }
    let xb = with_bias(x);
    let d = xb.ncols();
    let mut w = DVector::zeros(d);
    let mut f = loss(&xb, y, &w, config.c);
    let mut history = vec![f];
    let mut g0 = None;

    for _ in 0..config.max_iter {
        let z = &xb * &w;
        // d/dz softplus(-y z) = -y sigmoid(-y z)
        let coef = DVector::from_fn(n, |i, _| -y[i] * sigmoid(-y[i] * z[i]) * config.c);
        let grad = &w + xb.tr_mul(&coef);
        let gnorm = grad.norm();
        let g_init = *g0.get_or_insert(gnorm);
        if gnorm <= config.tol * g_init.max(1e-300) || gnorm == 0.0 {
            break;
        }
        let curvature = DVector::from_fn(n, |i, _| {
            let s = sigmoid(y[i] * z[i]);
            config.c * s * (1.0 - s)
        });
        let step = newton_direction(&xb, &curvature, &grad)?;
        let slope = grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &w - &step * t;
            let f_trial = loss(&xb, y, &trial, config.c);
            if f_trial <= f - 1e-4 * t * slope {
                w = trial;
                f = f_trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        history.push(f);
    }
    Ok(LogisticFit {
        weights: w,
        loss_history: history,
    })
}

/// `(I + X^T D X)^{-1} g`.
fn newton_direction(xb: &DMatrix<f64>, curvature: &DVector<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, d) = xb.shape();
    let singular = || Error::Singular {
        label: 0,
        condition: f64::INFINITY,
    };
    if n < d {
        // (I + X^T D X)^{-1} = I - X^T S (I + S X X^T S)^{-1} S X, S = D^{1/2}
        let s = curvature.map(f64::sqrt);
        let mut sx = xb.clone();
        for (i, mut r) in sx.row_iter_mut().enumerate() {
            r *= s[i];
        }
        let inner = DMatrix::identity(n, n) + &sx * sx.transpose();
        let chol = Cholesky::new(inner).ok_or_else(singular)?;
        let v = chol.solve(&(&sx * grad));
        Ok(grad - sx.tr_mul(&v))
    } else {
        let mut dx = xb.clone();
        for (i, mut r) in dx.row_iter_mut().enumerate() {
            r *= curvature[i];
        }
        let h = DMatrix::identity(d, d) + xb.tr_mul(&dx);
        let chol = Cholesky::new(h).ok_or_else(singular)?;
        Ok(chol.solve(grad))
    }
}

/// One-vs-rest predictions on `x_test`. A label seen with a single class in
/// the labeled set is predicted as that class everywhere.
pub fn train_eval_classifier(x_l: &DMatrix<f64>, y_l: &DMatrix<i8>, x_test: &DMatrix<f64>) -> Result<DMatrix<i8>> {
    if x_l.nrows() == 0 {
        return Err(Error::Query(
            "evaluation classifier needs a non-empty labeled set".into(),
        ));
    }
    if y_l.nrows() != x_l.nrows() {
        return Err(Error::Dimension {
            expected: x_l.nrows(),
            found: y_l.nrows(),
        });
    }
    if x_test.ncols() != x_l.ncols() {
        return Err(Error::Dimension {
            expected: x_l.ncols(),
            found: x_test.ncols(),
        });
    }
    let config = LogisticConfig::default();
    let mut out = DMatrix::from_element(x_test.nrows(), y_l.ncols(), -1i8);
    for k in 0..y_l.ncols() {
        let y: Vec<f64> = y_l.column(k).iter().map(|&v| v as f64).collect();
        let first = y[0];
        if y.iter().all(|&v| v == first) {
            out.column_mut(k).fill(first as i8);
            continue;
        }
        let fit = fit_logistic(x_l, &y, &config)?;
        let scores = fit.decision(x_test);
        for (i, s) in scores.iter().enumerate() {
            out[(i, k)] = if *s > 0.0 { 1 } else { -1 };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn separable(n: usize, t: usize, seed: u64) -> (DMatrix<f64>, DMatrix<i8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // keep a margin of 0.2 around both decision boundaries
        let mut x = DMatrix::zeros(n, t);
        let mut i = 0;
        while i < n {
            let row: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
            if row[0].abs() > 0.2 && (row[1] - 0.2).abs() > 0.2 {
                for (j, v) in row.into_iter().enumerate() {
                    x[(i, j)] = v;
                }
                i += 1;
            }
        }
        let y = DMatrix::from_fn(n, 2, |i, k| {
            let m = if k == 0 { x[(i, 0)] } else { x[(i, 1)] - 0.2 };
            if m > 0.0 {
                1
            } else {
                -1
            }
        });
        (x, y)
    }

    #[test]
    fn separable_training_accuracy() {
        for (n, t) in [(40, 3), (10, 30)] {
            let (mut x, y) = separable(n, t, 3);
            x *= 5.0;
            let pred = train_eval_classifier(&x, &y, &x).unwrap();
            assert_eq!(pred, y, "n={n} t={t}");
        }
    }

    #[test]
    fn single_class_label_is_constant() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let y = DMatrix::from_row_slice(3, 2, &[1, 1, 1, -1, 1, 1]);
        let test = DMatrix::from_row_slice(2, 1, &[-5.0, 5.0]);
        let pred = train_eval_classifier(&x, &y, &test).unwrap();
        assert_eq!(pred.column(0).iter().copied().collect::<Vec<_>>(), vec![1, 1]);
        let neg = DMatrix::from_element(3, 1, -1i8);
        let p = train_eval_classifier(&x, &neg, &test).unwrap();
        assert!(p.iter().all(|&v| v == -1));
    }

    #[test]
    fn empty_labeled_set_errors() {
        let x = DMatrix::<f64>::zeros(0, 2);
        let y = DMatrix::<i8>::zeros(0, 2);
        assert!(train_eval_classifier(&x, &y, &DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn loss_decreases_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (n, t) in [(50, 4), (8, 20)] {
            let x = DMatrix::from_fn(n, t, |_, _| rng.random_range(-2.0..2.0));
            let y: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let fit = fit_logistic(&x, &y, &LogisticConfig::default()).unwrap();
            assert!(fit.loss_history.len() > 1);
            for pair in fit.loss_history.windows(2) {
                assert!(pair[1] <= pair[0], "{:?}", fit.loss_history);
            }
        }
    }

    #[test]
    fn both_newton_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (n, d) = (6, 9);
        let xb = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let curvature = DVector::from_fn(n, |_, _| rng.random_range(0.0..0.25));
        let grad = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let woodbury = newton_direction(&xb, &curvature, &grad).unwrap();
        let mut dx = xb.clone();
        for (i, mut r) in dx.row_iter_mut().enumerate() {
            r *= curvature[i];
        }
        let h = DMatrix::identity(d, d) + xb.tr_mul(&dx);
        assert!((h * woodbury - grad).amax() < 1e-12);
    }
}
