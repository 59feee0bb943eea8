//! Multi-label datasets, loaders, splits and the simulated oracle.
//!
//! Labels are stored as `i8` values in `{-1, +1}` everywhere; loaders remap
//! the `{0, 1}` encoding used on disk.

mod arff;
mod csv_source;
mod split;
pub mod synthetic;

use std::collections::HashSet;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub use arff::{load_mulan_arff, parse_arff, parse_label_header, write_label_header, write_mulan_arff};
pub use csv_source::load_csv;
pub use split::{make_split, oracle_labels, ExperimentSplit, OracleAnswer, SplitOptions};

/// Feature matrix plus a `{-1, +1}` label matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabelDataset {
    name: String,
    features: DMatrix<f64>,
    labels: DMatrix<i8>,
    feature_names: Vec<String>,
    label_names: Vec<String>,
}

impl MultiLabelDataset {
    pub fn new(
        name: impl Into<String>,
        features: DMatrix<f64>,
        labels: DMatrix<i8>,
        feature_names: Vec<String>,
        label_names: Vec<String>,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if labels.nrows() != n {
            return Err(Error::Dimension {
                expected: n,
                found: labels.nrows(),
            });
        }
        if features.ncols() == 0 {
            return Err(Error::Schema("dataset needs at least one feature".into()));
        }
        if labels.ncols() < 2 {
            return Err(Error::Schema(format!(
                "multi-label dataset needs at least two labels, found {}",
                labels.ncols()
            )));
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::Dimension {
                expected: features.ncols(),
                found: feature_names.len(),
            });
        }
        if label_names.len() != labels.ncols() {
            return Err(Error::Dimension {
                expected: labels.ncols(),
                found: label_names.len(),
            });
        }
        let mut seen = HashSet::new();
        for name in &label_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate label name `{name}`")));
            }
        }
        if let Some(bad) = labels.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::Schema(format!("label entry {bad} is not -1 or +1")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("feature matrix contains non-finite values".into()));
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            feature_names,
            label_names,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &DMatrix<i8> {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn num_instances(&self) -> usize {
        self.features.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.ncols()
    }

    pub fn feature_row(&self, i: usize) -> Vec<f64> {
        self.features.row(i).iter().copied().collect()
    }

    pub fn label_row(&self, i: usize) -> Vec<i8> {
        self.labels.row(i).iter().copied().collect()
    }

    /// Label row as reals, the form the solver consumes.
    pub fn label_row_f64(&self, i: usize) -> Vec<f64> {
        self.labels.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    /// Average number of relevant labels per instance.
    pub fn label_cardinality(&self) -> f64 {
        let positives = self.labels.iter().filter(|&&v| v == 1).count();
        positives as f64 / self.num_instances() as f64
    }

    /// Same dataset with a different label matrix. Used for label-noise studies.
    pub fn with_labels(&self, labels: DMatrix<i8>) -> Result<Self> {
        Self::new(
            self.name.clone(),
            self.features.clone(),
            labels,
            self.feature_names.clone(),
            self.label_names.clone(),
        )
    }

    /// Rows `indices` of the feature matrix, row-major and contiguous.
    pub fn feature_rows(&self, indices: &[usize]) -> Vec<Vec<f64>> {
        indices.iter().map(|&i| self.feature_row(i)).collect()
    }

    /// Z-score every feature column (population variance). Zero-variance
    /// columns become all zeros.
    pub fn standardize_features(&self) -> Self {
        let n = self.num_instances() as f64;
        let mut features = self.features.clone();
        for mut column in features.column_iter_mut() {
            let mean = column.iter().sum::<f64>() / n;
            let var = column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if std <= f64::EPSILON * mean.abs().max(1.0) {
                column.fill(0.0);
            } else {
                column.iter_mut().for_each(|v| *v = (*v - mean) / std);
            }
        }
        Self {
            features,
            ..self.clone()
        }
    }
}

/// Free-function form of [`MultiLabelDataset::standardize_features`].
pub fn standardize_features(dataset: &MultiLabelDataset) -> MultiLabelDataset {
    dataset.standardize_features()
}
