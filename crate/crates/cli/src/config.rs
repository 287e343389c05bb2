use std::path::{Path, PathBuf};

use lddmm_metric::eval::LogisticConfig;
use lddmm_metric::io::SCHEMA_VERSION;
use lddmm_metric::kernel::RowDirection;
use lddmm_metric::metric_learning::EmConfig;
use lddmm_metric::synth::ShapeGenConfig;
use lddmm_metric::RegistrationConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Where the images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSpec {
    Generate {
        #[serde(default)]
        shapes: ShapeGenConfig,
    },
    /// A `filename,label` CSV; file names are relative to the CSV.
    Load { labels_csv: PathBuf },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Generate {
            shapes: ShapeGenConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Images per class in the training set; the rest are test images.
    pub train_per_class: usize,
    pub row_direction: RowDirection,
    pub mi_alpha_grid: Vec<f64>,
    pub mi_bins: usize,
    /// Ordered training pairs registered per α during MI selection.
    pub mi_pairs: usize,
    pub logistic: LogisticConfig,
    pub momentum_map: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            train_per_class: 50,
            row_direction: RowDirection::TrainingToNew,
            mi_alpha_grid: (0..9).map(|k| 10f64.powf(-2.0 + 0.5 * k as f64)).collect(),
            mi_bins: 32,
            mi_pairs: 20,
            logistic: LogisticConfig::default(),
            momentum_map: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Drives the generator, both splits and the logistic folds.
    pub seed: Option<u64>,
    pub dataset: DatasetSpec,
    pub registration: RegistrationConfig,
    pub em: EmConfig,
    pub evaluation: EvalOptions,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: None,
            dataset: DatasetSpec::default(),
            registration: RegistrationConfig::default(),
            em: EmConfig::default(),
            evaluation: EvalOptions::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file, or the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(ExperimentConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
        // relative dataset paths are relative to the config file
        if let DatasetSpec::Load { labels_csv } = &mut cfg.dataset {
            if labels_csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *labels_csv = dir.join(&*labels_csv);
                }
            }
        }
        Ok(cfg)
    }

    /// Applies the seed everywhere it is used and checks the whole config.
    pub fn finalize(&mut self, seed_flag: Option<u64>) -> Result<u64, CliError> {
        if seed_flag.is_some() {
            self.seed = seed_flag;
        }
        let seed = self
            .seed
            .ok_or_else(|| CliError::Config("a seed is required: set \"seed\" in the config or pass --seed".into()))?;
        if let DatasetSpec::Generate { shapes } = &mut self.dataset {
            shapes.seed = seed;
            shapes.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let DatasetSpec::Load { labels_csv } = &self.dataset {
            if !labels_csv.exists() {
                return Err(CliError::Config(format!("labels CSV {} does not exist", labels_csv.display())));
            }
        }
        self.em.seed = seed;
        self.evaluation.logistic.seed = seed;
        self.em.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.registration.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let ev = &self.evaluation;
        if ev.train_per_class < 2 || ev.mi_bins == 0 || ev.mi_pairs == 0 || ev.mi_alpha_grid.is_empty() {
            return Err(CliError::Config(
                "evaluation needs train_per_class >= 2, mi_bins >= 1, mi_pairs >= 1 and a non-empty mi_alpha_grid".into(),
            ));
        }
        if ev.mi_alpha_grid.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(CliError::Config("mi_alpha_grid entries must be > 0".into()));
        }
        Ok(seed)
    }
}
