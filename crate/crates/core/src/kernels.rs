//! Gaussian kernels, correntropy estimators, label-aware consistency and the
//! half-quadratic auxiliary weights.
//!
//! Two kernel sizes are in play. `gamma_x` measures feature-space similarity
//! (the classifier kernel and the `w` similarities); `gamma_y` scales every
//! quantity living in label space (losses, margin term, `h`, `v`). A Gaussian
//! with kernel size `gamma` is `exp(-gamma * ||a - b||^2)`, i.e.
//! `gamma = 1 / (2 sigma^2)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel sizes. `gamma_scale` multiplies `gamma_y` for kernel-size studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub gamma_x: f64,
    pub gamma_y: f64,
    pub gamma_scale: f64,
}

impl KernelConfig {
    /// Defaults: `1/t` in feature space, `1/C` in label space.
    pub fn for_dimensions(num_features: usize, num_labels: usize) -> Self {
        Self {
            gamma_x: 1.0 / num_features as f64,
            gamma_y: 1.0 / num_labels as f64,
            gamma_scale: 1.0,
        }
    }

    /// Effective label-space kernel size.
    pub fn label_gamma(&self) -> f64 {
        self.gamma_y * self.gamma_scale
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma_x", self.gamma_x),
            ("gamma_y", self.gamma_y),
            ("gamma_scale", self.gamma_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `exp(-gamma * ||a - b||^2)`.
pub fn gaussian_kernel(a: &[f64], b: &[f64], gamma: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            found: b.len(),
        });
    }
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("kernel size must be positive, got {gamma}")));
    }
    Ok((-gamma * squared_distance(a, b)).exp())
}

/// Sample correntropy: mean Gaussian kernel over paired samples.
pub fn correntropy_estimate<A, B>(a: &[A], b: &[B], gamma: f64) -> Result<f64>
where
    A: AsRef<[f64]>,
    B: AsRef<[f64]>,
{
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("correntropy needs at least one sample pair".into()));
    }
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            found: b.len(),
        });
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        total += gaussian_kernel(x.as_ref(), y.as_ref(), gamma)?;
    }
    Ok(total / a.len() as f64)
}

/// Correntropy between scalar targets and predictions.
pub fn mcc_loss(targets: &[f64], predictions: &[f64], gamma: f64) -> Result<f64> {
    let a: Vec<[f64; 1]> = targets.iter().map(|&v| [v]).collect();
    let b: Vec<[f64; 1]> = predictions.iter().map(|&v| [v]).collect();
    correntropy_estimate(&a, &b, gamma)
}

/// Label-aware consistency of two instances: label similarity times feature
/// similarity.
pub fn consistency(x_i: &[f64], y_i: &[f64], x_j: &[f64], y_j: &[f64], config: &KernelConfig) -> Result<f64> {
    let label_part = gaussian_kernel(y_i, y_j, config.label_gamma())?;
    let feature_part = gaussian_kernel(x_i, x_j, config.gamma_x)?;
    Ok(label_part * feature_part)
}

/// Symmetric Gaussian kernel matrix over a fixed set of instances.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    /// Dataset index of every row.
    indices: Vec<usize>,
    /// Row position for each dataset index (usize::MAX if absent).
    positions: Vec<usize>,
    values: DMatrix<f64>,
}

impl KernelMatrix {
    /// Kernel over `indices` of `features` (rows). Exactly symmetric with a
    /// unit diagonal.
    pub fn compute(features: &DMatrix<f64>, indices: &[usize], gamma: f64) -> Self {
        let rows: Vec<Vec<f64>> = indices
            .iter()
            .map(|&i| features.row(i).iter().copied().collect())
            .collect();
        let m = indices.len();
        let mut values = DMatrix::from_element(m, m, 1.0);
        for a in 0..m {
            for b in (a + 1)..m {
                let v = (-gamma * squared_distance(&rows[a], &rows[b])).exp();
                values[(a, b)] = v;
                values[(b, a)] = v;
            }
        }
        let mut positions = vec![usize::MAX; features.nrows()];
        for (p, &i) in indices.iter().enumerate() {
            positions[i] = p;
        }
        Self {
            indices: indices.to_vec(),
            positions,
            values,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Kernel value between two dataset indices.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(self.positions[i], self.positions[j])]
    }

    /// Sub-block with rows `row_idx` and columns `col_idx` (dataset indices).
    pub fn block(&self, row_idx: &[usize], col_idx: &[usize]) -> DMatrix<f64> {
        let rows: Vec<usize> = row_idx.iter().map(|&i| self.positions[i]).collect();
        let cols: Vec<usize> = col_idx.iter().map(|&j| self.positions[j]).collect();
        assert!(
            rows.iter().chain(&cols).all(|&p| p != usize::MAX),
            "index outside kernel matrix"
        );
        DMatrix::from_fn(rows.len(), cols.len(), |a, b| self.values[(rows[a], cols[b])])
    }
}

/// Kernel blocks for one labeled/pool configuration. The classifier kernel
/// and the feature similarity `w` share `gamma_x`, so `w_ul` is `k_lu`
/// transposed; both are kept for direct indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct GramCache {
    pub k_ll: DMatrix<f64>,
    pub k_lu: DMatrix<f64>,
    pub w_uu: DMatrix<f64>,
    pub w_ul: DMatrix<f64>,
}

impl GramCache {
    pub fn from_kernel(kernel: &KernelMatrix, labeled: &[usize], pool: &[usize]) -> Self {
        let k_ll = kernel.block(labeled, labeled);
        let k_lu = kernel.block(labeled, pool);
        let w_uu = kernel.block(pool, pool);
        let w_ul = k_lu.transpose();
        Self { k_ll, k_lu, w_uu, w_ul }
    }

    pub fn num_labeled(&self) -> usize {
        self.k_ll.nrows()
    }

    pub fn num_pool(&self) -> usize {
        self.w_uu.nrows()
    }

    /// `K_L(x_q)` for pool position `q`.
    pub fn pool_column(&self, q: usize) -> DVector<f64> {
        self.k_lu.column(q).into_owned()
    }
}

/// Materialize the kernel blocks for `labeled` and `pool` directly.
pub fn build_gram(features: &DMatrix<f64>, labeled: &[usize], pool: &[usize], config: &KernelConfig) -> GramCache {
    let mut all = labeled.to_vec();
    all.extend_from_slice(pool);
    let kernel = KernelMatrix::compute(features, &all, config.gamma_x);
    GramCache::from_kernel(&kernel, labeled, pool)
}

/// Curvature bound used to minorize the subtracted redundancy correntropy.
///
/// For `g(u) = exp(-gamma ||u||^2)` the largest Hessian eigenvalue is
/// `4 gamma exp(-3/2)`; halving it and dividing by `gamma` (the surrogate
/// scale) gives this constant.
pub const REDUNDANCY_CURVATURE: f64 = 0.446_260_320_296_859_6;

/// Half-quadratic auxiliary weights for one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct HqWeights {
    /// `m_ik`, l x C.
    pub m: DMatrix<f64>,
    /// `n_qk`, length C.
    pub n: DVector<f64>,
    /// `h*_qi = h_qi w_qi` over the pool, length u.
    pub h_star: DVector<f64>,
    /// `v*_qi = v_qi w_qi` over the labeled set, length l.
    pub v_star: DVector<f64>,
    /// `f(x_q)` at which the redundancy term was linearized.
    pub anchor: DVector<f64>,
    /// Extra curvature on `||f(x_q) - anchor||^2` that keeps the linearized
    /// redundancy term a minorizer. Zero for quadratic losses.
    pub redundancy_curvature: f64,
}

/// Predictions of `theta` (C x l) on the labeled set (l x C) and pool (u x C).
pub fn predictions(theta: &DMatrix<f64>, caches: &GramCache) -> (DMatrix<f64>, DMatrix<f64>) {
    let labeled = &caches.k_ll * theta.transpose();
    let pool = caches.k_lu.tr_mul(&theta.transpose());
    (labeled, pool)
}

/// Correntropy-derived weights at the current classifier `theta` (C x l) for
/// candidate pool position `q`.
pub fn hq_weights(
    theta: &DMatrix<f64>,
    q: usize,
    caches: &GramCache,
    y_l: &DMatrix<f64>,
    config: &KernelConfig,
) -> HqWeights {
    let gamma = config.label_gamma();
    let (f_l, f_u) = predictions(theta, caches);
    let l = caches.num_labeled();
    let u = caches.num_pool();
    let c = y_l.ncols();
    let f_q: DVector<f64> = f_u.row(q).transpose();

    let m = DMatrix::from_fn(l, c, |i, k| (-gamma * (y_l[(i, k)] - f_l[(i, k)]).powi(2)).exp());
    let n = DVector::from_fn(c, |k, _| {
        let a = f_q[k].abs();
        (-gamma * (1.0 + 2.0 * a + a * a)).exp()
    });
    let h_star = DVector::from_fn(u, |i, _| {
        let d: f64 = (0..c).map(|k| (f_q[k] - f_u[(i, k)]).powi(2)).sum();
        (-gamma * d).exp() / u as f64 * caches.w_uu[(q, i)]
    });
    let v_star = DVector::from_fn(l, |i, _| {
        let d: f64 = (0..c).map(|k| (f_q[k] - y_l[(i, k)]).powi(2)).sum();
        (-gamma * d).exp() / l as f64 * caches.w_ul[(q, i)]
    });
    let mean_w = caches.w_ul.row(q).sum() / l as f64;
    HqWeights {
        m,
        n,
        h_star,
        v_star,
        anchor: f_q,
        redundancy_curvature: REDUNDANCY_CURVATURE * mean_w,
    }
}

/// Weights of the quadratic-loss variant: every half-quadratic weight is 1.
pub fn unit_weights(theta: &DMatrix<f64>, q: usize, caches: &GramCache, num_labels: usize) -> HqWeights {
    let l = caches.num_labeled();
    let u = caches.num_pool();
    let f_q = theta * caches.pool_column(q);
    HqWeights {
        m: DMatrix::from_element(l, num_labels, 1.0),
        n: DVector::from_element(num_labels, 1.0),
        h_star: DVector::from_fn(u, |i, _| caches.w_uu[(q, i)] / u as f64),
        v_star: DVector::from_fn(l, |i, _| caches.w_ul[(q, i)] / l as f64),
        anchor: f_q,
        redundancy_curvature: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_identity_and_unit_distance() {
        assert_eq!(gaussian_kernel(&[1.0, 2.0], &[1.0, 2.0], 0.3).unwrap(), 1.0);
        let v = gaussian_kernel(&[0.0, 0.0], &[1.0, 0.0], 1.0).unwrap();
        assert!((v - 0.367_879_441_171_442_3).abs() < 1e-15);
        let tiny = gaussian_kernel(&[0.0], &[50.0], 1e-12).unwrap();
        assert!((tiny - 1.0).abs() < 1e-8);
    }

    #[test]
    fn gaussian_rejects_bad_input() {
        assert!(matches!(
            gaussian_kernel(&[0.0], &[0.0, 1.0], 1.0),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(gaussian_kernel(&[0.0], &[0.0], 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn correntropy_cases() {
        let a = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(correntropy_estimate(&a, &a, 0.5).unwrap(), 1.0);
        let b = vec![vec![1.0, 2.0], vec![3.0, 5.0]];
        let v = correntropy_estimate(&a, &b, 1.0).unwrap();
        assert!((v - (1.0 + (-1.0f64).exp()) / 2.0).abs() < 1e-15);
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(
            correntropy_estimate(&empty, &empty, 1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn correntropy_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let b: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let gamma = 0.37;
        let mut expected = 0.0;
        for i in 0..5 {
            let mut d = 0.0;
            for k in 0..3 {
                d += (a[i][k] - b[i][k]) * (a[i][k] - b[i][k]);
            }
            expected += (-gamma * d).exp();
        }
        expected /= 5.0;
        let got = correntropy_estimate(&a, &b, gamma).unwrap();
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn consistency_cases() {
        let cfg = KernelConfig {
            gamma_x: 0.2,
            gamma_y: 0.5,
            gamma_scale: 1.0,
        };
        let x = [0.3, -1.0];
        let y = [1.0, -1.0];
        assert_eq!(consistency(&x, &y, &x, &y, &cfg).unwrap(), 1.0);
        let x2 = [1.3, 0.5];
        let w = gaussian_kernel(&x, &x2, 0.2).unwrap();
        assert_eq!(consistency(&x, &y, &x2, &y, &cfg).unwrap(), w);
        // ||(1,1) - (1,-1)||^2 = 4, gamma_y = 1/2 -> exp(-2); pick x2 so w = 0.5.
        let gamma_x = 1.0;
        let cfg = KernelConfig {
            gamma_x,
            gamma_y: 0.5,
            gamma_scale: 1.0,
        };
        let xa = [0.0];
        let xb = [(2.0f64.ln()).sqrt()];
        let got = consistency(&xa, &[1.0, 1.0], &xb, &[1.0, -1.0], &cfg).unwrap();
        assert!((got - (-2.0f64).exp() * 0.5).abs() < 1e-15);
        assert!(consistency(&xa, &[1.0], &xb, &[1.0, -1.0], &cfg).is_err());
    }

    #[test]
    fn gram_blocks_match_scalar_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let features = DMatrix::from_fn(12, 4, |_, _| rng.random_range(-1.0..1.0));
        let labeled = [0, 3, 5, 7];
        let pool = [1, 2, 4, 6, 8, 9, 10, 11];
        let cfg = KernelConfig::for_dimensions(4, 3);
        let g = build_gram(&features, &labeled, &pool, &cfg);
        for i in 0..4 {
            assert_eq!(g.k_ll[(i, i)], 1.0);
        }
        for i in 0..8 {
            assert_eq!(g.w_uu[(i, i)], 1.0);
        }
        assert!((&g.k_ll - g.k_ll.transpose()).amax() < 1e-12);
        assert!((&g.w_uu - g.w_uu.transpose()).amax() < 1e-12);
        let row = |i: usize| -> Vec<f64> { features.row(i).iter().copied().collect() };
        for _ in 0..10 {
            let a = rng.random_range(0..4);
            let b = rng.random_range(0..8);
            let expected = gaussian_kernel(&row(labeled[a]), &row(pool[b]), cfg.gamma_x).unwrap();
            assert!((g.k_lu[(a, b)] - expected).abs() < 1e-15);
            assert!((g.w_ul[(b, a)] - expected).abs() < 1e-15);
        }
        assert!(g.k_lu.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn curvature_constant() {
        assert!((REDUNDANCY_CURVATURE - 2.0 * (-1.5f64).exp()).abs() < 1e-16);
    }

    fn toy_caches(seed: u64, l: usize, u: usize) -> (GramCache, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = DMatrix::from_fn(l + u, 3, |_, _| rng.random_range(-1.0..1.0));
        let labeled: Vec<usize> = (0..l).collect();
        let pool: Vec<usize> = (l..l + u).collect();
        let caches = build_gram(&features, &labeled, &pool, &KernelConfig::for_dimensions(3, 2));
        let y = DMatrix::from_fn(l, 2, |i, k| if (i + k) % 2 == 0 { 1.0 } else { -1.0 });
        (caches, y)
    }

    #[test]
    fn weights_at_zero_classifier() {
        let (caches, y) = toy_caches(1, 3, 4);
        let cfg = KernelConfig::for_dimensions(3, 2);
        let theta = DMatrix::zeros(2, 3);
        let w = hq_weights(&theta, 1, &caches, &y, &cfg);
        let g = cfg.label_gamma();
        for k in 0..2 {
            assert!((w.n[k] - (-g).exp()).abs() < 1e-15);
        }
        // residual y - 0 = +-1
        assert!(w.m.iter().all(|&m| (m - (-g).exp()).abs() < 1e-15));
        assert!(w.h_star.iter().all(|&h| h > 0.0 && h <= 1.0 / 4.0));
        assert!(w.v_star.iter().all(|&v| v > 0.0 && v <= 1.0 / 3.0));
    }

    #[test]
    fn zero_residual_gives_unit_weight() {
        // l = 1 and K_LL = [1]: theta = y reproduces the labels exactly.
        let features = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let caches = build_gram(&features, &[0], &[1], &KernelConfig::for_dimensions(1, 2));
        let y = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let theta = y.transpose();
        let w = hq_weights(&theta, 0, &caches, &y, &KernelConfig::for_dimensions(1, 2));
        assert_eq!(w.m[(0, 0)], 1.0);
        assert_eq!(w.m[(0, 1)], 1.0);
    }

    #[test]
    fn weights_decay_with_residual() {
        let g = 1.0 / 6.0;
        let mut prev = f64::INFINITY;
        for step in 0..200 {
            let r = step as f64 * 0.1;
            let m = (-g * r * r).exp();
            let n = (-g * (1.0 + 2.0 * r + r * r)).exp();
            assert!(m > 0.0 && m <= 1.0 && n > 0.0 && n <= 1.0);
            assert!(m <= prev);
            prev = m;
        }
        assert!((-g * 400.0f64).exp() < 1e-28);
    }

    proptest! {
        #[test]
        fn consistency_is_symmetric(
            xi in prop::collection::vec(-3.0f64..3.0, 4),
            xj in prop::collection::vec(-3.0f64..3.0, 4),
            yi in prop::collection::vec(prop::sample::select(vec![-1.0f64, 1.0]), 3),
            yj in prop::collection::vec(-1.5f64..1.5, 3),
        ) {
            let cfg = KernelConfig::for_dimensions(4, 3);
            let a = consistency(&xi, &yi, &xj, &yj, &cfg).unwrap();
            let b = consistency(&xj, &yj, &xi, &yi, &cfg).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a > 0.0 && a <= 1.0);
        }

        #[test]
        fn identical_labels_dominate(
            xi in prop::collection::vec(-3.0f64..3.0, 4),
            xj in prop::collection::vec(-3.0f64..3.0, 4),
            y in prop::collection::vec(-1.5f64..1.5, 3),
            y_other in prop::collection::vec(-1.5f64..1.5, 3),
        ) {
            let cfg = KernelConfig::for_dimensions(4, 3);
            let same = consistency(&xi, &y, &xj, &y, &cfg).unwrap();
            let diff = consistency(&xi, &y, &xj, &y_other, &cfg).unwrap();
            prop_assert!(same >= diff);
        }
    }
}
