//! The JSON run configuration shared by every command.

use std::path::{Path, PathBuf};

use deepseg::augment::AugmentSpec;
use deepseg::data::PhantomSpec;
use deepseg::metrics::MetricConfig;
use deepseg::nn::{EncoderFamily, ModelConfig};
use deepseg::train::{LossSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Where slices come from: a manifest on disk or an in-memory phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub manifest: Option<PathBuf>,
    pub phantom: Option<PhantomSpec>,
    /// Phantom cases and slices per case.
    pub cases: usize,
    pub slices_per_case: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            manifest: None,
            phantom: None,
            cases: 4,
            slices_per_case: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    All,
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    /// Defaults to `<out>/model.dsegmdl`.
    pub checkpoint: Option<PathBuf>,
    /// Which cases of the fold's split to segment.
    pub subset: Subset,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            checkpoint: None,
            subset: Subset::Val,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Default `<out>/predictions`.
    pub pred_dir: Option<PathBuf>,
    /// Default `<out>/truth`.
    pub truth_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Empty means every family.
    pub encoders: Vec<EncoderFamily>,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub predictions: usize,
    /// Phantom slices used for the timed epochs.
    pub slices: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            encoders: Vec::new(),
            warmup_epochs: 1,
            epochs: 2,
            predictions: 4,
            slices: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreviewConfig {
    /// Number of slices to write before/after pairs for.
    pub count: usize,
}

impl Default for PreviewConfig {
    fn default() -> Self {
        PreviewConfig { count: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossSpec,
    pub augment: AugmentSpec,
    pub metrics: MetricConfig,
    pub data: DataConfig,
    pub output_dir: PathBuf,
    pub fold: usize,
    pub predict: PredictConfig,
    pub evaluate: EvaluateConfig,
    pub benchmark: BenchmarkConfig,
    pub preview: PreviewConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            loss: LossSpec::default(),
            augment: AugmentSpec::default(),
            metrics: MetricConfig::default(),
            data: DataConfig::default(),
            output_dir: PathBuf::from("deepseg-out"),
            fold: 0,
            predict: PredictConfig::default(),
            evaluate: EvaluateConfig::default(),
            benchmark: BenchmarkConfig::default(),
            preview: PreviewConfig::default(),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub fold: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub fn parse_run_config(text: &str) -> CliResult<RunConfig> {
    serde_json::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))
}

impl RunConfig {
    /// Reads the file, applies overrides and resolves relative paths
    /// against the config file's directory. Does not validate.
    pub fn load(path: &Path, overrides: &Overrides) -> CliResult<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = parse_run_config(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.output_dir);
        if let Some(m) = cfg.data.manifest.as_mut() {
            resolve(m);
        }
        if let Some(c) = cfg.predict.checkpoint.as_mut() {
            resolve(c);
        }
        for d in [cfg.evaluate.pred_dir.as_mut(), cfg.evaluate.truth_dir.as_mut()].into_iter().flatten() {
            resolve(d);
        }
        if let Some(fold) = overrides.fold {
            cfg.fold = fold;
        }
        if let Some(seed) = overrides.seed {
            cfg.train.seed = seed;
            if let Some(p) = cfg.data.phantom.as_mut() {
                p.seed = seed;
            }
        }
        if let Some(out) = &overrides.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }

    /// Checks every nested invariant; runs before any command touches disk.
    /// The data source is only checked when `needs_data` is set.
    pub fn validate(&self, needs_data: bool) -> CliResult<()> {
        self.model.validate().map_err(|e| CliError::in_section(e, "model"))?;
        if self.model.input_shape[0] != 1 {
            return Err(CliError::config("invalid config field `model.input_shape`: slices have exactly 1 channel"));
        }
        self.train.validate().map_err(|e| CliError::in_section(e, "train"))?;
        self.loss.validate(self.model.num_classes).map_err(|e| CliError::in_section(e, "loss"))?;
        self.augment.validate().map_err(|e| CliError::in_section(e, "augment"))?;
        self.metrics.validate().map_err(|e| CliError::in_section(e, "metrics"))?;
        if self.fold > 1 {
            return Err(CliError::config(format!("invalid config field `fold`: must be 0 or 1, got {}", self.fold)));
        }
        match (&self.data.manifest, &self.data.phantom) {
            _ if !needs_data => {}
            (Some(_), Some(_)) | (None, None) => {
                return Err(CliError::config("invalid config field `data`: set exactly one of `manifest` or `phantom`"))
            }
            (None, Some(p)) => {
                p.validate().map_err(|e| CliError::in_section(e, "data.phantom"))?;
                if self.data.cases == 0 || self.data.slices_per_case == 0 {
                    return Err(CliError::config("invalid config field `data.cases`: phantom counts must be at least 1"));
                }
            }
            (Some(_), None) => {}
        }
        if self.output_dir.exists() && !self.output_dir.is_dir() {
            return Err(CliError::config(format!(
                "invalid config field `output_dir`: {} exists and is not a directory",
                self.output_dir.display()
            )));
        }
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.predict.checkpoint.clone().unwrap_or_else(|| self.output_dir.join(crate::CHECKPOINT_FILE))
    }
}
