use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Strategy;
use super::experiment::{ResultsBundle, RunFailure};
use crate::data::ExperimentSplit;
use crate::error::{Error, Result};
use crate::eval::{paired_ttest_wtl, LearningCurve, WtlSummary};

pub const CURVES_HEADER: [&str; 5] = ["dataset", "strategy", "seed", "queries", "micro_f1"];
pub const SIGNIFICANCE: f64 = 0.05;

/// Write `bytes` to a sibling temp file and rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// A learning curve tagged with its dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRecord {
    pub dataset: String,
    pub curve: LearningCurve,
}

impl CurveRecord {
    pub fn from_bundle(bundle: &ResultsBundle) -> Vec<Self> {
        bundle
            .curves()
            .map(|(d, c)| CurveRecord {
                dataset: d.to_string(),
                curve: c.clone(),
            })
            .collect()
    }
}

/// Curves as CSV text, one row per checkpoint.
pub fn curves_csv(curves: &[CurveRecord]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CURVES_HEADER)?;
    for rec in curves {
        for &(q, f1) in &rec.curve.checkpoints {
            w.write_record([
                rec.dataset.clone(),
                rec.curve.method.clone(),
                rec.curve.seed.to_string(),
                q.to_string(),
                f1.to_string(),
            ])?;
        }
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

pub fn emit_curves_csv(bundle: &ResultsBundle, path: &Path) -> Result<()> {
    write_atomic(path, &curves_csv(&CurveRecord::from_bundle(bundle))?)
}

/// Parse a curves CSV back into curves, in first-appearance order.
pub fn parse_curves_csv(text: &str) -> Result<Vec<CurveRecord>> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CURVES_HEADER {
        return Err(Error::Schema(format!("unexpected curves header {header:?}")));
    }
    let mut order: Vec<(String, String, u64)> = Vec::new();
    let mut points: BTreeMap<(String, String, u64), Vec<(usize, f64)>> = BTreeMap::new();
    for (line, row) in r.records().enumerate() {
        let row = row?;
        let bad = |what: &str| Error::parse(line + 2, format!("invalid {what}"));
        let key = (
            row[0].to_string(),
            row[1].to_string(),
            row[2].parse().map_err(|_| bad("seed"))?,
        );
        let q: usize = row[3].parse().map_err(|_| bad("query count"))?;
        let f1: f64 = row[4].parse().map_err(|_| bad("micro_f1"))?;
        if !points.contains_key(&key) {
            order.push(key.clone());
        }
        points.entry(key).or_default().push((q, f1));
    }
    order
        .into_iter()
        .map(|key| {
            let checkpoints = points.remove(&key).unwrap_or_default();
            Ok(CurveRecord {
                curve: LearningCurve::new(key.1, key.2, checkpoints)?,
                dataset: key.0,
            })
        })
        .collect()
}

pub fn read_curves_csv(path: &Path) -> Result<Vec<CurveRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_curves_csv(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub strategy: String,
    pub baseline: String,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    pub mean_final_f1: f64,
    pub std_final_f1: f64,
    pub runs: usize,
}

impl SummaryRow {
    pub fn wtl(&self) -> WtlSummary {
        WtlSummary {
            wins: self.wins,
            ties: self.ties,
            losses: self.losses,
        }
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Win/Tie/Loss of every strategy against `baseline` per dataset, plus the
/// mean and standard deviation of final-checkpoint micro-F1. `compared`
/// restricts and orders the strategies; empty means all present.
pub fn summarize(curves: &[CurveRecord], baseline: &str, compared: &[String]) -> Result<Vec<SummaryRow>> {
    let mut datasets: Vec<&str> = Vec::new();
    for c in curves {
        if !datasets.contains(&c.dataset.as_str()) {
            datasets.push(&c.dataset);
        }
    }
    if datasets.is_empty() {
        return Err(Error::Config("no curves to summarize".into()));
    }
    let mut rows = Vec::new();
    for dataset in datasets {
        let of = |method: &str| -> Vec<LearningCurve> {
            curves
                .iter()
                .filter(|c| c.dataset == dataset && c.curve.method == method)
                .map(|c| c.curve.clone())
                .collect()
        };
        let missing = |s: &str| Error::Config(format!("strategy `{s}` missing from results for dataset `{dataset}`"));
        let base = of(baseline);
        if base.is_empty() {
            return Err(missing(baseline));
        }
        let strategies: Vec<String> = if compared.is_empty() {
            let mut v: Vec<String> = Vec::new();
            for c in curves.iter().filter(|c| c.dataset == dataset) {
                if !v.contains(&c.curve.method) {
                    v.push(c.curve.method.clone());
                }
            }
            v
        } else {
            compared.to_vec()
        };
        for strategy in strategies {
            let runs = of(&strategy);
            if runs.is_empty() {
                return Err(missing(&strategy));
            }
            let wtl = paired_ttest_wtl(&runs, &base, SIGNIFICANCE)?;
            let finals: Vec<f64> = runs
                .iter()
                .map(|c| c.final_value().ok_or_else(|| Error::Domain("empty curve".into())))
                .collect::<Result<_>>()?;
            let (mean, std) = mean_std(&finals);
            rows.push(SummaryRow {
                dataset: dataset.to_string(),
                strategy,
                baseline: baseline.to_string(),
                wins: wtl.wins,
                ties: wtl.ties,
                losses: wtl.losses,
                mean_final_f1: mean,
                std_final_f1: std,
                runs: runs.len(),
            });
        }
    }
    Ok(rows)
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record([
            "dataset",
            "strategy",
            "baseline",
            "wins",
            "ties",
            "losses",
            "mean_final_f1",
            "std_final_f1",
            "runs",
        ])?;
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

/// Query log of one run, enough to replay its curve with the split manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryLog {
    pub dataset: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub queries: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub dataset: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub wall_seconds: f64,
    pub query_seconds: Vec<f64>,
    pub unstable_queries: usize,
}

/// File names inside an output directory.
pub const CURVES_FILE: &str = "curves.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const QUERIES_FILE: &str = "queries.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const FAILURES_FILE: &str = "failures.json";
pub const SPLITS_DIR: &str = "splits";

pub fn split_manifest_path(dir: &Path, dataset: &str, seed: u64) -> PathBuf {
    dir.join(SPLITS_DIR).join(format!("{dataset}_seed{seed}.json"))
}

/// Persist everything about `bundle` under `dir`. Timings are kept apart
/// from the deterministic artifacts. Returns the written paths.
pub fn write_outputs(bundle: &ResultsBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |name: PathBuf, bytes: Vec<u8>| -> Result<()> {
        write_atomic(&name, &bytes)?;
        written.push(name);
        Ok(())
    };
    let curves = CurveRecord::from_bundle(bundle);
    put(dir.join(CURVES_FILE), curves_csv(&curves)?)?;

    let baseline = bundle.config.baseline.name();
    if bundle.runs.iter().any(|r| r.strategy.name() == baseline) {
        match summarize(&curves, baseline, &[]) {
            Ok(rows) => put(dir.join(SUMMARY_FILE), summary_csv(&rows)?)?,
            Err(e) => log::warn!("summary skipped: {e}"),
        }
    } else {
        log::warn!("summary skipped: baseline `{baseline}` was not run");
    }

    put(dir.join(CONFIG_FILE), serde_json::to_vec_pretty(&bundle.config)?)?;
    let logs: Vec<QueryLog> = bundle
        .runs
        .iter()
        .map(|r| QueryLog {
            dataset: r.dataset.clone(),
            strategy: r.strategy,
            seed: r.seed,
            queries: r.queries.clone(),
        })
        .collect();
    put(dir.join(QUERIES_FILE), serde_json::to_vec_pretty(&logs)?)?;
    let timings: Vec<RunTiming> = bundle
        .runs
        .iter()
        .map(|r| RunTiming {
            dataset: r.dataset.clone(),
            strategy: r.strategy,
            seed: r.seed,
            wall_seconds: r.wall_seconds,
            query_seconds: r.query_seconds.clone(),
            unstable_queries: r.unstable_queries,
        })
        .collect();
    put(dir.join(TIMINGS_FILE), serde_json::to_vec_pretty(&timings)?)?;
    let failures: &[RunFailure] = &bundle.failures;
    put(dir.join(FAILURES_FILE), serde_json::to_vec_pretty(failures)?)?;

    let mut manifests: BTreeMap<(String, u64), &ExperimentSplit> = BTreeMap::new();
    for r in &bundle.runs {
        manifests.entry((r.dataset.clone(), r.seed)).or_insert(&r.split);
    }
    for ((dataset, seed), split) in manifests {
        let path = split_manifest_path(dir, &dataset, seed);
        split.save_manifest(&path)?;
        written.push(path);
    }
    Ok(written)
}

pub fn read_query_logs(path: &Path) -> Result<Vec<QueryLog>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
