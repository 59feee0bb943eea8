use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::{run_dataset, PreparedDataset, RunFailure, RunRecord};
use super::output::mean_std;
use crate::error::{Error, Result};

/// One setting of the tradeoff study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub beta1: f64,
    pub beta2: f64,
    pub gamma_scale: f64,
}

/// Every (beta1, beta2) pair at unit label-kernel scale, then every extra
/// `gamma_scale` at `beta1 = beta2 = 1`.
pub fn sweep_points(betas: &[f64], gamma_scales: &[f64]) -> Vec<SweepPoint> {
    let mut points: Vec<SweepPoint> = betas
        .iter()
        .flat_map(|&beta1| {
            betas.iter().map(move |&beta2| SweepPoint {
                beta1,
                beta2,
                gamma_scale: 1.0,
            })
        })
        .collect();
    for &gamma_scale in gamma_scales {
        let p = SweepPoint {
            beta1: 1.0,
            beta2: 1.0,
            gamma_scale,
        };
        if !points.contains(&p) {
            points.push(p);
        }
    }
    points
}

pub fn default_sweep_points() -> Vec<SweepPoint> {
    sweep_points(&[0.1, 1.0, 10.0], &[1.0, 2.0, 4.0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dataset: String,
    pub strategy: String,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma_scale: f64,
    pub runs: usize,
    pub mean_final_f1: f64,
    pub std_final_f1: f64,
    /// Mean micro-F1 over all checkpoints and runs.
    pub mean_curve_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResults {
    pub rows: Vec<SweepRow>,
    pub runs: Vec<(SweepPoint, RunRecord)>,
    pub failures: Vec<RunFailure>,
}

/// Run the configured strategies and seeds once per sweep point.
pub fn run_sweep(config: &ExperimentConfig, points: &[SweepPoint]) -> Result<SweepResults> {
    config.validate()?;
    if points.is_empty() {
        return Err(Error::Config("empty sweep".into()));
    }
    let mut out = SweepResults {
        rows: Vec::new(),
        runs: Vec::new(),
        failures: Vec::new(),
    };
    for source in &config.datasets {
        let dataset = match source.load() {
            Ok(d) => d,
            Err(e) => {
                out.failures.push(RunFailure {
                    dataset: source.name(),
                    strategy: None,
                    seed: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        // The feature kernel does not depend on the swept values.
        let mut prepared = PreparedDataset::new(dataset, config)?;
        for &point in points {
            let mut cfg = config.clone();
            cfg.solver.beta1 = point.beta1;
            cfg.solver.beta2 = point.beta2;
            cfg.kernel.gamma_scale = point.gamma_scale;
            cfg.validate()?;
            prepared.kernel = cfg
                .kernel
                .resolve(prepared.dataset.num_features(), prepared.dataset.num_labels())?;
            let (runs, failed) = run_dataset(&prepared, &cfg);
            out.failures.extend(failed);
            for strategy in &cfg.strategies {
                let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.strategy == *strategy).collect();
                if mine.is_empty() {
                    continue;
                }
                let finals: Vec<f64> = mine.iter().filter_map(|r| r.curve.final_value()).collect();
                let all: Vec<f64> = mine
                    .iter()
                    .flat_map(|r| r.curve.checkpoints.iter().map(|c| c.1))
                    .collect();
                let (mean, std) = mean_std(&finals);
                out.rows.push(SweepRow {
                    dataset: prepared.dataset.name().to_string(),
                    strategy: strategy.name().to_string(),
                    beta1: point.beta1,
                    beta2: point.beta2,
                    gamma_scale: point.gamma_scale,
                    runs: mine.len(),
                    mean_final_f1: mean,
                    std_final_f1: std,
                    mean_curve_f1: mean_std(&all).0,
                });
            }
            out.runs.extend(runs.into_iter().map(|r| (point, r)));
        }
    }
    Ok(out)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid() {
        let p = default_sweep_points();
        assert_eq!(p.len(), 9 + 2);
        assert!(p.contains(&SweepPoint {
            beta1: 0.1,
            beta2: 10.0,
            gamma_scale: 1.0
        }));
        assert_eq!(p.iter().filter(|s| s.gamma_scale == 4.0).count(), 1);
    }
}
