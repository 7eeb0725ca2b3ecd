use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::DeGrpoConfig;
use super::pairs::{mean_gap, PreferencePair};
use crate::error::{Error, Result};

/// Lower median of the batch utilities.
pub fn batch_threshold(utilities: &[f64]) -> Result<f64> {
    if utilities.is_empty() {
        return Err(Error::Contract("threshold of an empty batch".into()));
    }
    let mut v = utilities.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v[(v.len() - 1) / 2])
}

/// `lambda * s + (1 - lambda) * [u > tau]`.
pub fn recurrent_update(s: f64, u: f64, tau: f64, lambda: f64) -> f64 {
    let ind = if u > tau { 1.0 } else { 0.0 };
    lambda * s + (1.0 - lambda) * ind
}

/// Sample status implied by its recurrent state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifecycle {
    Removed,
    Decay,
    Full,
}

impl Lifecycle {
    /// Advantage multiplier; zero for removed samples.
    pub fn factor(self, cfg: &DeGrpoConfig) -> f64 {
        match self {
            Lifecycle::Removed => 0.0,
            Lifecycle::Decay => cfg.delta,
            Lifecycle::Full => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Lifecycle::Removed => "removed",
            Lifecycle::Decay => "decay",
            Lifecycle::Full => "full",
        }
    }
}

impl fmt::Display for Lifecycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `Removed` if `s <= tau_remove`, `Decay` if `s >= tau_keep`, else `Full`.
pub fn lifecycle_factor(s: f64, cfg: &DeGrpoConfig) -> Lifecycle {
    if s <= cfg.tau_remove {
        Lifecycle::Removed
    } else if s >= cfg.tau_keep {
        Lifecycle::Decay
    } else {
        Lifecycle::Full
    }
}

/// `delta_factor * (mean gap - baseline)`.
pub fn advantage(pairs: &[PreferencePair], baseline: f64, delta_factor: f64) -> Result<f64> {
    Ok(delta_factor * (mean_gap(pairs)? - baseline))
}
