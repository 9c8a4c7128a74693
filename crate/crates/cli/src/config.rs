//! Run configuration documents.

use std::path::{Path, PathBuf};

use lossforge_core::data::{load_delimited, load_idx, synth_blobs, DelimitedSchema, DEFAULT_FRACTIONS};
use lossforge_core::fitness::{ExperimentMode, ExperimentSpec};
use lossforge_core::gp::{GpConfig, GpError};
use lossforge_core::nn::TrainConfig;
use lossforge_core::rng::derive_seed;
use lossforge_core::Dataset;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SEED_ENV: &str = "LOSSFORGE_SEED";
pub const DEFAULT_OUTPUT: &str = "lossforge-out";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; `gp.seed` and the experiment seed are derived from it.
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the config file.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub trainer: TrainConfig,
    pub datasets: Vec<DatasetEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub mode: ExperimentMode,
    pub runs_per_dataset: usize,
    pub baseline_errors: Option<Vec<f64>>,
    pub fractions: (f64, f64, f64),
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            mode: ExperimentMode::SingleDatasetSingleRun,
            runs_per_dataset: 1,
            baseline_errors: None,
            fractions: DEFAULT_FRACTIONS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetEntry {
    Blobs {
        name: Option<String>,
        classes: usize,
        per_class: usize,
        dims: usize,
        spread: f64,
        /// Defaults to the master seed.
        seed: Option<u64>,
    },
    Delimited {
        name: Option<String>,
        path: PathBuf,
        #[serde(default = "comma")]
        delimiter: char,
        #[serde(default)]
        has_header: bool,
        #[serde(default = "last_column")]
        label_column: i64,
        #[serde(default)]
        normalize: bool,
        class_count: Option<usize>,
        take: Option<usize>,
    },
    Idx {
        name: Option<String>,
        images: PathBuf,
        labels: PathBuf,
        take: Option<usize>,
    },
}

fn comma() -> char {
    ','
}

fn last_column() -> i64 {
    -1
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub take: Option<usize>,
}

/// A parsed and validated config plus its source text and location.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub text: String,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        if let Some(seed) = overrides.seed.or(env_seed()?) {
            config.seed = seed;
        }
        if let Some(take) = overrides.take {
            for entry in &mut config.datasets {
                match entry {
                    DatasetEntry::Delimited { take: t, .. } | DatasetEntry::Idx { take: t, .. } => {
                        *t = Some(take)
                    }
                    DatasetEntry::Blobs { .. } => {}
                }
            }
        }
        config.gp.seed = config.seed;
        config.validate()?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, text, base_dir })
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        match (flag, &self.config.output) {
            (Some(dir), _) => dir.to_path_buf(),
            (None, Some(dir)) => self.base_dir.join(dir),
            (None, None) => PathBuf::from(DEFAULT_OUTPUT),
        }
    }

    pub fn load_datasets(&self) -> Result<Vec<Dataset>, CliError> {
        self.config
            .datasets
            .iter()
            .map(|entry| entry.load(&self.base_dir, self.config.seed))
            .collect()
    }
}

/// Seed from `LOSSFORGE_SEED`, if set.
pub fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

impl RunConfig {
    pub fn experiment_spec(&self) -> ExperimentSpec {
        ExperimentSpec {
            mode: self.experiment.mode,
            runs_per_dataset: self.experiment.runs_per_dataset,
            trainer: self.trainer.clone(),
            baseline_errors: self.experiment.baseline_errors.clone(),
            fractions: self.experiment.fractions,
            seed: derive_seed(self.seed, &[0xE0]),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.gp.check().map_err(|e| match e {
            GpError::InvalidConfig { field, message } => {
                CliError::Usage(format!("config field gp.{field}: {message}"))
            }
            other => CliError::Usage(format!("config section gp: {other}")),
        })?;
        self.trainer
            .check()
            .map_err(|e| CliError::Usage(format!("config section trainer: {e}")))?;
        let (a, b, c) = self.experiment.fractions;
        if !(a > 0.0 && b > 0.0 && c > 0.0 && (a + b + c - 1.0).abs() <= 1e-9) {
            return Err(CliError::Usage(format!(
                "config field experiment.fractions: ({a}, {b}, {c}) must be positive and sum to 1"
            )));
        }
        if self.datasets.is_empty() {
            return Err(CliError::Usage("config field datasets: at least one entry required".into()));
        }
        for (i, entry) in self.datasets.iter().enumerate() {
            if let DatasetEntry::Blobs { classes, per_class, dims, spread, .. } = entry {
                if *classes < 2 || *per_class < 2 || *dims == 0 || !(spread.is_finite() && *spread >= 0.0) {
                    return Err(CliError::Usage(format!(
                        "config field datasets[{i}]: blobs need classes >= 2, per_class >= 2, dims >= 1, spread >= 0"
                    )));
                }
            }
        }
        self.experiment_spec()
            .check(self.datasets.len())
            .map_err(|e| CliError::Usage(format!("config section experiment: {e}")))
    }
}

impl DatasetEntry {
    pub fn load(&self, base: &Path, master_seed: u64) -> Result<Dataset, CliError> {
        let runtime = |e: lossforge_core::data::DataError| CliError::Runtime(e.into());
        let mut data = match self {
            DatasetEntry::Blobs { classes, per_class, dims, spread, seed, .. } => {
                synth_blobs(*classes, *per_class, *dims, *spread, seed.unwrap_or(master_seed)).map_err(runtime)?
            }
            DatasetEntry::Delimited {
                path, delimiter, has_header, label_column, normalize, class_count, take, ..
            } => {
                let schema = DelimitedSchema {
                    delimiter: *delimiter,
                    has_header: *has_header,
                    label_column: *label_column,
                    normalize: *normalize,
                    class_count: *class_count,
                    take: *take,
                };
                load_delimited(&base.join(path), &schema).map_err(runtime)?
            }
            DatasetEntry::Idx { images, labels, take, .. } => {
                load_idx(&base.join(images), &base.join(labels), *take).map_err(runtime)?
            }
        };
        if let Some(name) = self.name() {
            data.name = name.to_string();
        }
        Ok(data)
    }

    pub fn name(&self) -> Option<&str> {
        match self {
            DatasetEntry::Blobs { name, .. }
            | DatasetEntry::Delimited { name, .. }
            | DatasetEntry::Idx { name, .. } => name.as_deref(),
        }
    }
}
