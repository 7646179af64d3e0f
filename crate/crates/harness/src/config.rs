use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sgcrf_core::evalkit::EvalConfig;
use sgcrf_core::model::ModelConfig;
use sgcrf_core::synthworld::DatasetConfig;
use sgcrf_core::vrd::RslMode;

/// Model variants compared by the experiments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Baseline {
    /// Unary heads, no relation sequence layer.
    Vrd,
    VrdTranse,
    VrdTriple,
    /// Message passing without order features.
    SgDualLike,
    /// Configured relation sequence layer plus message passing.
    #[default]
    SgCrf,
}

impl Baseline {
    pub const ALL: [Baseline; 5] = [
        Baseline::Vrd,
        Baseline::VrdTranse,
        Baseline::VrdTriple,
        Baseline::SgDualLike,
        Baseline::SgCrf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Vrd => "vrd",
            Baseline::VrdTranse => "vrd_transe",
            Baseline::VrdTriple => "vrd_triple",
            Baseline::SgDualLike => "sg_dual_like",
            Baseline::SgCrf => "sg_crf",
        }
    }

    /// Whether the second (mean-field) training stage runs.
    pub fn uses_scn(self) -> bool {
        matches!(self, Baseline::SgDualLike | Baseline::SgCrf)
    }

    /// The model configuration this baseline trains, derived from `base`.
    pub fn model_config(self, base: &ModelConfig) -> ModelConfig {
        let rsl_mode = match self {
            Baseline::Vrd | Baseline::SgDualLike => RslMode::None,
            Baseline::VrdTranse => RslMode::TranseConcat,
            Baseline::VrdTriple => RslMode::TripleConcat,
            Baseline::SgCrf => base.rsl_mode,
        };
        ModelConfig {
            rsl_mode,
            ..base.clone()
        }
    }
}

impl std::fmt::Display for Baseline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Scenes per optimizer step; gradients are averaged over the batch.
    pub batch_size: usize,
    pub seed: u64,
    /// Background boxes added to every training scene so the object head
    /// learns to reject them.
    pub train_distractors: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_epochs: 20,
            stage2_epochs: 40,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 1,
            seed: 0,
            train_distractors: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bail!("train.lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            bail!("train.momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            bail!("train.batch_size must be positive");
        }
        Ok(())
    }
}

/// Everything one run needs; echoed into every report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub baseline: Baseline,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        Ok(())
    }

    /// Reads a TOML config; missing keys take their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: ExperimentConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate().with_context(|| format!("validating {}", path.display()))?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
