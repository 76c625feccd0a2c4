//! Training configuration and the `key = value` config file format.

use std::path::{Path, PathBuf};

use cca_core::loss::CcaSign;
use cca_core::network::{ModelConfig, Profile};

use crate::error::{io_err, PipelineError, PipelineResult};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub crop_size: usize,
    pub lr_initial: f64,
    pub lr_drop_step: usize,
    pub lr_final: f64,
    pub lambda: f64,
    pub cca_enabled: bool,
    pub cca_sign: CcaSign,
    pub schedule_n: usize,
    pub schedule_k: f64,
    pub profile: Profile,
    pub data_dir: PathBuf,
    pub checkpoint_path: PathBuf,
}

impl TrainConfig {
    /// Toy preset: the full-scale published schedule (2.8M + 0.2M steps,
    /// lr 1e-4 -> 1e-5, crop 256, batch 8) scaled to a CPU-sized run.
    pub fn toy_preset() -> Self {
        TrainConfig {
            seed: 1,
            steps: 20_000,
            batch_size: 8,
            crop_size: 64,
            lr_initial: 1e-4,
            lr_drop_step: 18_000,
            lr_final: 1e-5,
            lambda: 0.85,
            cca_enabled: true,
            cca_sign: CcaSign::MaximizeGain,
            schedule_n: 3,
            schedule_k: 1.7,
            profile: Profile::Toy,
            data_dir: PathBuf::from("data"),
            checkpoint_path: PathBuf::from("model.ccaw"),
        }
    }

    /// Full-scale settings as documented reference, not a local target.
    pub fn paper_preset() -> Self {
        TrainConfig {
            seed: 1,
            steps: 3_000_000,
            batch_size: 8,
            crop_size: 256,
            lr_initial: 1e-4,
            lr_drop_step: 2_800_000,
            lr_final: 1e-5,
            lambda: 0.85,
            cca_enabled: true,
            cca_sign: CcaSign::MaximizeGain,
            schedule_n: 5,
            schedule_k: 1.7,
            profile: Profile::Full,
            data_dir: PathBuf::from("data"),
            checkpoint_path: PathBuf::from("model.ccaw"),
        }
    }

    pub fn validate(&self) -> PipelineResult<()> {
        if self.steps == 0 {
            return Err(PipelineError::Config("steps must be positive".into()));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
        if !(self.lambda > 0.0) {
            return Err(PipelineError::Config("lambda must be positive".into()));
        }
        if self.crop_size == 0 || !self.crop_size.is_multiple_of(16) {
            return Err(PipelineError::Config(format!(
                "crop_size {} must be a positive multiple of 16",
                self.crop_size
            )));
        }
        if self.batch_size == 0 {
            return Err(PipelineError::Config("batch_size must be positive".into()));
        }
        if self.schedule_n < 2 {
            return Err(PipelineError::Config("schedule_n must be >= 2".into()));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
        if !(self.schedule_k >= 0.0) {
            return Err(PipelineError::Config("schedule_k must be >= 0".into()));
        }
        Ok(())
    }

    /// The model architecture this run trains.
    pub fn model_config(&self) -> ModelConfig {
        let mut cfg = match self.profile {
            Profile::Full => ModelConfig::full(),
            _ => ModelConfig::toy(),
        };
        cfg.profile = self.profile;
        cfg.stages = self.schedule_n;
        cfg.schedule_k = self.schedule_k;
        cfg
    }

    pub fn learning_rate(&self, step: usize) -> f64 {
        if step < self.lr_drop_step {
            self.lr_initial
        } else {
            self.lr_final
        }
    }

    /// Parse a `key = value` file (UTF-8, `#` comments). Keys are the
    /// TrainConfig fields in snake case; unknown keys are errors. The
    /// CCA_SEED environment variable overrides `seed`.
    pub fn from_file(path: &Path) -> PipelineResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut cfg = Self::toy_preset();
        Self::apply_text(&mut cfg, &text)?;
        if let Ok(s) = std::env::var("CCA_SEED") {
            cfg.seed = s
                .parse()
                .map_err(|_| PipelineError::Config(format!("CCA_SEED {s:?} is not a u64")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(cfg: &mut TrainConfig, text: &str) -> PipelineResult<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                PipelineError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| {
                PipelineError::Config(format!("line {}: bad {what} value {value:?}", lineno + 1))
            };
            match key {
                "seed" => cfg.seed = value.parse().map_err(|_| bad("u64"))?,
                "steps" => cfg.steps = value.parse().map_err(|_| bad("usize"))?,
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad("usize"))?,
                "crop_size" => cfg.crop_size = value.parse().map_err(|_| bad("usize"))?,
                "lr_initial" => cfg.lr_initial = value.parse().map_err(|_| bad("float"))?,
                "lr_drop_step" => cfg.lr_drop_step = value.parse().map_err(|_| bad("usize"))?,
                "lr_final" => cfg.lr_final = value.parse().map_err(|_| bad("float"))?,
                "lambda" => cfg.lambda = value.parse().map_err(|_| bad("float"))?,
                "cca_enabled" => {
                    cfg.cca_enabled = match value {
                        "true" | "1" => true,
                        "false" | "0" => false,
                        _ => return Err(bad("bool")),
                    }
                }
                "cca_sign" => {
                    cfg.cca_sign = match value {
                        "maximize_gain" => CcaSign::MaximizeGain,
                        "literal" => CcaSign::Literal,
                        _ => return Err(bad("cca_sign (maximize_gain|literal)")),
                    }
                }
                "schedule_n" => cfg.schedule_n = value.parse().map_err(|_| bad("usize"))?,
                "schedule_k" => cfg.schedule_k = value.parse().map_err(|_| bad("float"))?,
                "profile" => {
                    cfg.profile = match value {
                        "toy" => Profile::Toy,
                        "full" => Profile::Full,
                        "custom" => Profile::Custom,
                        _ => return Err(bad("profile (toy|full|custom)")),
                    }
                }
                "data_dir" => cfg.data_dir = PathBuf::from(value),
                "checkpoint_path" => cfg.checkpoint_path = PathBuf::from(value),
                other => {
                    return Err(PipelineError::Config(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(())
    }
}
