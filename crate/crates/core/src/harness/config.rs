use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::DatasetSpec;
use super::stages::StageSchedule;
use crate::degrpo::DeGrpoConfig;
use crate::encoding::EncoderConfig;
use crate::error::{Error, Result};
use crate::numerics::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Upper bound on recurrence rounds.
    pub max_rounds: usize,
    /// Upper bound on cumulative sample visits.
    pub max_visits: usize,
    /// Stop as soon as the evaluation reward reaches the target.
    pub stop_at_target: bool,
    pub eval_samples: usize,
    pub eval_candidates: usize,
    /// Evaluate every this many iterations.
    pub eval_every: usize,
    /// Target as a fraction of the planted-oracle reward (which is 1).
    pub target_fraction: f64,
    /// Initial channel weights; uniform when unset.
    pub alpha: Option<[f64; 3]>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            max_rounds: 60,
            max_visits: 40_000,
            stop_at_target: false,
            eval_samples: 64,
            eval_candidates: 8,
            eval_every: 1,
            target_fraction: 0.75,
            alpha: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub enabled: bool,
    pub encoder: EncoderConfig,
    pub schedule: StageSchedule,
    /// Number of synthetic regression inputs.
    pub samples: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            encoder: EncoderConfig::default(),
            schedule: StageSchedule::default(),
            samples: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory for run artifacts; nothing is written when unset.
    pub dir: Option<PathBuf>,
    pub metrics: String,
    pub summary: String,
    pub plot: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            metrics: "metrics.csv".into(),
            summary: "summary.json".into(),
            plot: "plot.csv".into(),
        }
    }
}

/// Everything a run needs; a run is reproducible from this value alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub degrpo: DeGrpoConfig,
    pub training: TrainingConfig,
    pub pretrain: PretrainConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetSpec::default(),
            degrpo: DeGrpoConfig {
                lr_policy: 10.0,
                lr_baseline: 0.05,
                ..DeGrpoConfig::default()
            },
            training: TrainingConfig::default(),
            pretrain: PretrainConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn prefixed(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { field, message } => Error::Config {
            field: format!("{prefix}.{field}"),
            message,
        },
        other => other,
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
            field: e
                .span()
                .map(|s| format!("byte {}..{}", s.start, s.end))
                .unwrap_or_else(|| "<document>".into()),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.degrpo.validate().map_err(|e| prefixed("degrpo", e))?;
        if let Some(tracked) = &self.degrpo.tracked_params {
            let vocab = self.dataset.vocab.load()?;
            let n = vocab.total() * (self.dataset.feature_dim + 1);
            if let Some(&bad) = tracked.iter().find(|&&i| i >= n) {
                return Err(Error::config(
                    "degrpo.tracked_params",
                    format!("index {bad} exceeds the policy's {n} parameters"),
                ));
            }
        }
        let t = &self.training;
        if t.eval_samples == 0 {
            return Err(Error::config("training.eval_samples", "must be at least 1"));
        }
        if t.eval_candidates == 0 {
            return Err(Error::config(
                "training.eval_candidates",
                "must be at least 1",
            ));
        }
        if t.eval_every == 0 {
            return Err(Error::config("training.eval_every", "must be at least 1"));
        }
        if !(t.target_fraction > 0.0 && t.target_fraction <= 1.0) {
            return Err(Error::config(
                "training.target_fraction",
                "must lie in (0, 1]",
            ));
        }
        if let Some(w) = t.alpha {
            if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::config("training.alpha", "weights must be positive"));
            }
        }
        if self.pretrain.enabled {
            let mut store = ParamStore::new();
            let mut rng = super::dataset::stream(0, 0);
            crate::encoding::HierarchicalEncoder::new(&mut store, &self.pretrain.encoder, &mut rng)
                .map_err(|e| Error::config("pretrain.encoder", e.to_string()))?;
            self.pretrain.schedule.validate(&store.groups())?;
        }
        Ok(())
    }
}
