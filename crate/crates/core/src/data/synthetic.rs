//! Seeded synthetic multi-label datasets.
//!
//! Each instance gets a dominant label plus optional co-occurring labels.
//! Features are a random linear embedding of a latent vector that sums the
//! prototypes of the instance's labels, with co-occurring labels expressed
//! more weakly than the dominant one. Weakly expressed relevant labels are
//! exactly the "outlier label" situation: relevant, but barely supported by
//! the features.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::MultiLabelDataset;
use crate::error::Result;
use crate::seeding::rng_for;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub name: String,
    pub num_instances: usize,
    pub num_features: usize,
    pub num_labels: usize,
    /// Target average number of relevant labels per instance (>= 1).
    pub cardinality: f64,
    pub latent_dim: usize,
    /// Std of latent noise relative to unit-norm-ish prototypes.
    pub latent_noise: f64,
    /// Std of independent per-feature noise.
    pub feature_noise: f64,
    /// Expression strength range of co-occurring labels.
    pub weak_strength: (f64, f64),
}

impl SyntheticSpec {
    /// Same shape as the Mulan *emotions* set: 593 x 72, 6 labels, LC 1.87.
    pub fn emotions_like() -> Self {
        Self {
            name: "emotions-synthetic".into(),
            num_instances: 593,
            num_features: 72,
            num_labels: 6,
            cardinality: 1.87,
            latent_dim: 12,
            latent_noise: 0.7,
            feature_noise: 0.5,
            weak_strength: (0.2, 0.9),
        }
    }

    /// Same shape as the Mulan *scene* set: 2407 x 294, 6 labels, LC 1.07.
    pub fn scene_like() -> Self {
        Self {
            name: "scene-synthetic".into(),
            num_instances: 2407,
            num_features: 294,
            num_labels: 6,
            cardinality: 1.07,
            latent_dim: 16,
            latent_noise: 0.7,
            feature_noise: 0.5,
            weak_strength: (0.2, 0.9),
        }
    }

    pub fn generate(&self, seed: u64) -> Result<MultiLabelDataset> {
        let mut rng = rng_for(&["synthetic", &self.name, &seed.to_string()]);
        let c = self.num_labels;
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

        // Unequal label priors for the dominant label.
        let priors: Vec<f64> = (0..c).map(|k| 1.0 + k as f64 * 0.35).rev().collect();
        let prior_total: f64 = priors.iter().sum();
        let extra_rate = ((self.cardinality - 1.0) / (c as f64 - 1.0)).clamp(0.0, 1.0);

        let prototypes: Vec<Vec<f64>> = (0..c)
            .map(|_| {
                let v: Vec<f64> = (0..self.latent_dim).map(|_| std_normal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| 2.0 * x / norm).collect()
            })
            .collect();
        let embedding = DMatrix::from_fn(self.num_features, self.latent_dim, |_, _| {
            std_normal.sample(&mut rng) / (self.latent_dim as f64).sqrt()
        });
        let weak = Uniform::new(self.weak_strength.0, self.weak_strength.1).expect("valid range");

        let n = self.num_instances;
        let mut labels = DMatrix::from_element(n, c, -1i8);
        let mut features = DMatrix::zeros(n, self.num_features);
        for i in 0..n {
            let dominant = sample_categorical(&priors, prior_total, &mut rng);
            let mut latent: Vec<f64> = (0..self.latent_dim)
                .map(|_| self.latent_noise * std_normal.sample(&mut rng))
                .collect();
            for k in 0..c {
                let strength = if k == dominant {
                    1.0
                } else if rng.random::<f64>() < extra_rate {
                    weak.sample(&mut rng)
                } else {
                    continue;
                };
                labels[(i, k)] = 1;
                for (z, p) in latent.iter_mut().zip(&prototypes[k]) {
                    *z += strength * p;
                }
            }
            for f in 0..self.num_features {
                let mut value = self.feature_noise * std_normal.sample(&mut rng);
                for (d, z) in latent.iter().enumerate() {
                    value += embedding[(f, d)] * z;
                }
                features[(i, f)] = value;
            }
        }

        MultiLabelDataset::new(
            self.name.clone(),
            features,
            labels,
            (0..self.num_features).map(|f| format!("x{f}")).collect(),
            (0..c).map(|k| format!("label{k}")).collect(),
        )
    }
}

fn sample_categorical(weights: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let mut u = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            return k;
        }
        u -= w;
    }
    weights.len() - 1
}
