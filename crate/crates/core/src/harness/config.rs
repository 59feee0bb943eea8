use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::synthetic::SyntheticSpec;
use crate::data::{load_csv, load_mulan_arff, MultiLabelDataset, SplitOptions};
use crate::error::{Error, Result};
use crate::kernels::KernelConfig;
use crate::solver::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Correntropy-based query criterion.
    Rmlal,
    /// Same pipeline with quadratic loss.
    MseVariant,
    Minmargin,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Rmlal,
        Strategy::MseVariant,
        Strategy::Minmargin,
        Strategy::Random,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Rmlal => "rmlal",
            Strategy::MseVariant => "mse_variant",
            Strategy::Minmargin => "minmargin",
            Strategy::Random => "random",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| Error::UnknownStrategy(s.to_string()))
    }
}

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Mulan ARFF file plus XML label header.
    Mulan {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        arff: PathBuf,
        xml: PathBuf,
    },
    /// CSV with a header row; the last `num_labels` columns hold 0/1 labels.
    Csv {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        path: PathBuf,
        num_labels: usize,
    },
    /// Seeded generator shaped like a known benchmark.
    Synthetic {
        preset: String,
        #[serde(default)]
        seed: u64,
    },
}

impl DatasetSource {
    /// Parse a command-line dataset argument: `synthetic:<preset>[:seed]`,
    /// `csv:<path>:<num_labels>`, or a path to an `.arff` file whose label
    /// header sits next to it with an `.xml` extension.
    pub fn parse(arg: &str) -> Result<Self> {
        if let Some(rest) = arg.strip_prefix("synthetic:") {
            let mut parts = rest.splitn(2, ':');
            let preset = parts.next().unwrap_or_default().to_string();
            let seed = match parts.next() {
                Some(s) => s
                    .parse()
                    .map_err(|_| Error::Config(format!("bad synthetic seed `{s}`")))?,
                None => 0,
            };
            synthetic_spec(&preset)?;
            return Ok(DatasetSource::Synthetic { preset, seed });
        }
        if let Some(rest) = arg.strip_prefix("csv:") {
            let (path, labels) = rest
                .rsplit_once(':')
                .ok_or_else(|| Error::Config(format!("expected csv:<path>:<num_labels>, got `{arg}`")))?;
            let num_labels = labels
                .parse()
                .map_err(|_| Error::Config(format!("bad label count `{labels}`")))?;
            return Ok(DatasetSource::Csv {
                name: None,
                path: path.into(),
                num_labels,
            });
        }
        let path = PathBuf::from(arg);
        if path.extension().is_some_and(|e| e == "arff") {
            return Ok(DatasetSource::Mulan {
                name: None,
                xml: path.with_extension("xml"),
                arff: path,
            });
        }
        Err(Error::Config(format!("unrecognized dataset `{arg}`")))
    }

    pub fn name(&self) -> String {
        let stem = |p: &Path| {
            p.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        };
        match self {
            DatasetSource::Mulan { name, arff, .. } => name.clone().unwrap_or_else(|| stem(arff)),
            DatasetSource::Csv { name, path, .. } => name.clone().unwrap_or_else(|| stem(path)),
            DatasetSource::Synthetic { preset, .. } => synthetic_spec(preset)
                .map(|s| s.name)
                .unwrap_or_else(|_| preset.clone()),
        }
    }

    pub fn load(&self) -> Result<MultiLabelDataset> {
        let dataset = match self {
            DatasetSource::Mulan { arff, xml, .. } => load_mulan_arff(arff, xml)?,
            DatasetSource::Csv { path, num_labels, .. } => load_csv(path, *num_labels)?,
            DatasetSource::Synthetic { preset, seed } => synthetic_spec(preset)?.generate(*seed)?,
        };
        let name = self.name();
        if dataset.name() == name {
            Ok(dataset)
        } else {
            MultiLabelDataset::new(
                name,
                dataset.features().clone(),
                dataset.labels().clone(),
                dataset.feature_names().to_vec(),
                dataset.label_names().to_vec(),
            )
        }
    }
}

fn synthetic_spec(preset: &str) -> Result<SyntheticSpec> {
    match preset {
        "emotions" => Ok(SyntheticSpec::emotions_like()),
        "scene" => Ok(SyntheticSpec::scene_like()),
        other => Err(Error::Config(format!(
            "unknown synthetic preset `{other}` (emotions, scene)"
        ))),
    }
}

/// Kernel sizes; unset entries default to `1/t` and `1/C` per dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelSettings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_y: Option<f64>,
    pub gamma_scale: f64,
}

impl Default for KernelSettings {
    fn default() -> Self {
        Self {
            gamma_x: None,
            gamma_y: None,
            gamma_scale: 1.0,
        }
    }
}

impl KernelSettings {
    pub fn resolve(&self, num_features: usize, num_labels: usize) -> Result<KernelConfig> {
        let defaults = KernelConfig::for_dimensions(num_features, num_labels);
        let config = KernelConfig {
            gamma_x: self.gamma_x.unwrap_or(defaults.gamma_x),
            gamma_y: self.gamma_y.unwrap_or(defaults.gamma_y),
            gamma_scale: self.gamma_scale,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetSource>,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub budget: usize,
    pub checkpoint_every: usize,
    pub test_fraction: f64,
    pub init_labeled_fraction: f64,
    /// z-score features before computing kernels.
    pub standardize: bool,
    /// Strategy used as the reference in summaries.
    pub baseline: Strategy,
    pub solver: SolverConfig,
    pub kernel: KernelSettings,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            datasets: Vec::new(),
            strategies: Strategy::ALL.to_vec(),
            seeds: (0..5).collect(),
            budget: 100,
            checkpoint_every: 4,
            test_fraction: 0.5,
            init_labeled_fraction: 0.04,
            standardize: true,
            baseline: Strategy::Random,
            solver: SolverConfig::default(),
            kernel: KernelSettings::default(),
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        // Relative dataset paths are taken relative to the config file.
        if let Some(base) = path.parent() {
            for ds in &mut config.datasets {
                match ds {
                    DatasetSource::Mulan { arff, xml, .. } => {
                        *arff = resolve(base, arff);
                        *xml = resolve(base, xml);
                    }
                    DatasetSource::Csv { path, .. } => *path = resolve(base, path),
                    DatasetSource::Synthetic { .. } => {}
                }
            }
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn split_options(&self) -> SplitOptions {
        SplitOptions {
            test_fraction: self.test_fraction,
            init_labeled_fraction: self.init_labeled_fraction,
            ..SplitOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.checkpoint_every == 0 || self.budget < self.checkpoint_every {
            return Err(Error::Config(format!(
                "need budget >= checkpoint_every >= 1 (budget {}, checkpoint_every {})",
                self.budget, self.checkpoint_every
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        let mut seen = self.strategies.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.strategies.len() {
            return Err(Error::Config("strategies must be distinct".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if !(self.kernel.gamma_scale > 0.0 && self.kernel.gamma_scale.is_finite()) {
            return Err(Error::Config("gamma_scale must be positive".into()));
        }
        self.solver.validate()
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
