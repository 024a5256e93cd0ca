//! Joint pretraining: per-step pipeline, AdamW, checkpoints, metrics and
//! the frozen-encoder linear probe.

mod checkpoint;
mod optim;
mod probe;
mod step;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, OptimizerState, CHECKPOINT_VERSION};
pub use optim::{learning_rate, AdamW};
pub use probe::{extract_features, linear_probe, logistic_regression, probe_accuracy, ProbeConfig, ProbeReport};
pub use step::{batch_objective, prepare_sample, sample_losses, train_step, PreparedSample, SampleLosses};
pub use trainer::{metrics_header, metrics_row, Trainer};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::{DiffusionSchedule, ScheduleDescriptor};
use crate::error::{DimpError, Result};
use crate::geom::TubeParams;
use crate::model::{CenterConditioning, ModelConfig, MotionObjective};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            warmup_steps: 100,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Directory holding `manifest.json`.
    pub data: PathBuf,
    /// 0 saves only at the end.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            steps: 2000,
            batch_size: 8,
            seed: 0,
            data: PathBuf::from("data"),
            checkpoint_every: 0,
        }
    }
}

/// Comparison runs, each a set of config overrides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Dimp,
    /// Regress `M0` directly instead of denoising it.
    Deterministic,
    /// Decode from ground-truth masked centers.
    Leakage,
    NoMotion,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Dimp, Variant::Deterministic, Variant::Leakage, Variant::NoMotion];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dimp => "dimp",
            Variant::Deterministic => "deterministic",
            Variant::Leakage => "leakage",
            Variant::NoMotion => "no-motion",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| DimpError::Config {
            field: "variant".into(),
            message: format!("unknown variant `{s}`; expected dimp, deterministic, leakage or no-motion"),
        })
    }

    /// The variant a model configuration was trained as.
    pub fn of(m: &ModelConfig) -> Self {
        if m.lambda_mot == 0.0 {
            Variant::NoMotion
        } else if m.motion_objective == MotionObjective::Regression {
            Variant::Deterministic
        } else if m.center_conditioning == CenterConditioning::GroundTruth {
            Variant::Leakage
        } else {
            Variant::Dimp
        }
    }

    pub fn apply(self, cfg: &mut TrainConfig) {
        let m = &mut cfg.model;
        match self {
            Variant::Dimp => {
                m.center_conditioning = CenterConditioning::MaskedDiffusion;
                m.motion_objective = MotionObjective::Diffusion;
            }
            Variant::Deterministic => {
                m.center_conditioning = CenterConditioning::MaskedDiffusion;
                m.motion_objective = MotionObjective::Regression;
            }
            Variant::Leakage => {
                m.center_conditioning = CenterConditioning::GroundTruth;
                m.motion_objective = MotionObjective::Diffusion;
            }
            Variant::NoMotion => m.lambda_mot = 0.0,
        }
    }
}

impl TrainConfig {
    /// Settings reported for full-scale pretraining, kept for reference;
    /// far too slow for a desk run.
    pub fn full_scale_defaults() -> Self {
        Self {
            model: ModelConfig {
                center_steps: 1000,
                motion_steps: 1000,
                num_tubes: 32,
                seq_len: 24,
                tube: TubeParams {
                    radius: 0.1,
                    temporal_extent: 3,
                    n_pts: 32,
                    keypoint_frame: 1,
                },
                ..ModelConfig::default()
            },
            batch_size: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let o = &self.optimizer;
        let bad = |field: &str, message: String| DimpError::Config {
            field: field.into(),
            message,
        };
        if !(o.lr > 0.0) {
            return Err(bad("optimizer.lr", format!("must be positive, got {}", o.lr)));
        }
        if self.steps == 0 {
            return Err(bad("steps", "must be positive".into()));
        }
        if o.warmup_steps >= self.steps {
            return Err(bad(
                "optimizer.warmup_steps",
                format!("{} is not below steps = {}", o.warmup_steps, self.steps),
            ));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be positive".into()));
        }
        if !(o.weight_decay >= 0.0) || !(o.grad_clip >= 0.0) {
            return Err(bad("optimizer.weight_decay", "weight decay and clip must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(bad("optimizer.beta1", "betas must lie in [0, 1) and eps be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| DimpError::Config {
            field: "config".into(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DimpError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn center_schedule(&self) -> ScheduleDescriptor {
        ScheduleDescriptor::cosine(self.model.center_steps)
    }

    pub fn motion_schedule(&self) -> ScheduleDescriptor {
        ScheduleDescriptor::cosine(self.model.motion_steps)
    }

    pub fn schedules(&self) -> Result<(DiffusionSchedule, DiffusionSchedule)> {
        Ok((self.center_schedule().build()?, self.motion_schedule().build()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = TrainConfig::default();
        let text = cfg.to_toml_string();
        assert!(text.contains("gamma_cen"));
        assert_eq!(TrainConfig::from_toml_str(&text).unwrap(), cfg);
        let partial = TrainConfig::from_toml_str("steps = 5\n[optimizer]\nlr = 0.01\n").unwrap();
        assert_eq!(partial.steps, 5);
        assert_eq!(partial.optimizer.lr, 0.01);
        assert_eq!(partial.batch_size, 8);
    }

    #[test]
    fn defaults_and_variants() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.model.mask_ratio, 0.6);
        assert_eq!(cfg.model.h, 4);
        assert_eq!(cfg.model.gamma_cen, 0.1);
        assert_eq!(cfg.model.lambda_mot, 1.0);
        assert_eq!(cfg.optimizer.lr, 1e-3);
        assert!(cfg.validate().is_ok());
        let mut c = cfg.clone();
        Variant::NoMotion.apply(&mut c);
        assert_eq!(c.model.lambda_mot, 0.0);
        let mut c = cfg.clone();
        Variant::Leakage.apply(&mut c);
        assert_eq!(c.model.center_conditioning, CenterConditioning::GroundTruth);
        assert_eq!(Variant::parse("deterministic").unwrap(), Variant::Deterministic);
        assert!(Variant::parse("nope").is_err());
        let bad = TrainConfig { steps: 10, ..TrainConfig::default() };
        assert!(matches!(bad.validate(), Err(DimpError::Config { field, .. }) if field == "optimizer.warmup_steps"));
    }
}
