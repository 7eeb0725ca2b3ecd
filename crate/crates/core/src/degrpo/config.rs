use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the KL term enters the maximized objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlSign {
    /// `J = surrogate - beta * KL`.
    Penalize,
    /// `J = surrogate + beta * KL`, as the formula is written.
    Literal,
}

impl KlSign {
    pub fn sign(self) -> f64 {
        match self {
            KlSign::Penalize => -1.0,
            KlSign::Literal => 1.0,
        }
    }
}

/// Comparison used for the in-loop removal check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalRule {
    /// Remove when `s < tau_remove`.
    Strict,
    /// Remove when `s <= tau_remove`.
    Inclusive,
}

impl RemovalRule {
    pub fn removes(self, s: f64, tau_remove: f64) -> bool {
        match self {
            RemovalRule::Strict => s < tau_remove,
            RemovalRule::Inclusive => s <= tau_remove,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeGrpoConfig {
    /// Smoothing of the recurrent state.
    pub lambda: f64,
    pub tau_remove: f64,
    pub tau_keep: f64,
    /// Advantage decay for samples above `tau_keep`.
    pub delta: f64,
    /// Clip radius.
    pub epsilon: f64,
    /// KL coefficient.
    pub beta: f64,
    /// Candidates per sample.
    pub k: usize,
    /// Per-factor floor inside the log-domain geometric means.
    pub gm_floor: f64,
    pub kl_sign: KlSign,
    pub removal_rule: RemovalRule,
    /// Initial recurrent state.
    pub s0: f64,
    pub batch_size: usize,
    pub lr_policy: f64,
    pub lr_baseline: f64,
    /// Learning rate of the channel-weight logits. Zero keeps them fixed.
    pub lr_alpha: f64,
    /// Policy parameter indices used for gradient sensitivity; all when unset.
    pub tracked_params: Option<Vec<usize>>,
}

impl Default for DeGrpoConfig {
    fn default() -> Self {
        Self {
            lambda: 0.8,
            tau_remove: 0.20,
            tau_keep: 0.80,
            delta: 0.50,
            epsilon: 0.20,
            beta: 0.01,
            k: 4,
            gm_floor: 1e-8,
            kl_sign: KlSign::Penalize,
            removal_rule: RemovalRule::Strict,
            s0: 0.5,
            batch_size: 8,
            lr_policy: 1e-2,
            lr_baseline: 1e-2,
            lr_alpha: 0.0,
            tracked_params: None,
        }
    }
}

impl DeGrpoConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(name, format!("must lie in [0, 1], got {v}")))
            }
        };
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::config(
                "lambda",
                format!("must lie in [0, 1), got {}", self.lambda),
            ));
        }
        unit("tau_remove", self.tau_remove)?;
        unit("tau_keep", self.tau_keep)?;
        unit("s0", self.s0)?;
        if self.tau_remove >= self.tau_keep {
            return Err(Error::config(
                "tau_remove",
                format!(
                    "must be below tau_keep ({} >= {})",
                    self.tau_remove, self.tau_keep
                ),
            ));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(
                "delta",
                format!("must lie in (0, 1), got {}", self.delta),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("epsilon", "must be positive"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("beta", "must be non-negative"));
        }
        if self.k < 4 {
            return Err(Error::config(
                "k",
                format!("needs at least 4 candidates, got {}", self.k),
            ));
        }
        if !(self.gm_floor > 0.0 && self.gm_floor.is_finite()) {
            return Err(Error::config("gm_floor", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        for (name, v) in [
            ("lr_policy", self.lr_policy),
            ("lr_baseline", self.lr_baseline),
            ("lr_alpha", self.lr_alpha),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(
                    name,
                    format!("must be finite and non-negative, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        DeGrpoConfig::default().validate().unwrap();
    }

    #[test]
    fn field_level_errors() {
        let bad = DeGrpoConfig {
            tau_remove: 0.9,
            ..Default::default()
        };
        match bad.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "tau_remove"),
            other => panic!("{other:?}"),
        }
        let bad = DeGrpoConfig {
            k: 3,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "k"));
    }

    #[test]
    fn removal_rules_differ_only_at_boundary() {
        assert!(!RemovalRule::Strict.removes(0.2, 0.2));
        assert!(RemovalRule::Inclusive.removes(0.2, 0.2));
        assert!(RemovalRule::Strict.removes(0.19, 0.2));
        assert!(!RemovalRule::Inclusive.removes(0.21, 0.2));
    }
}
