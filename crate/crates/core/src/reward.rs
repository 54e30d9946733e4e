//! Weighted-product scalarization of accuracy and latency.
//!
//! `R(m) = ACC(m) · (LAT(m) / T)^w` with `w = alpha` when `LAT ≤ T` and
//! `w = beta` otherwise. `(alpha, beta) = (0, -1)` gives a hard constraint:
//! plain accuracy under the target, a steep penalty above it. Equal small
//! negative exponents give a soft constraint that trades accuracy for latency
//! smoothly on both sides of the target.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exponent used by the soft-constraint preset.
pub const SOFT_EXPONENT: f64 = -0.07;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("latency must be positive, got {0}")]
    NonPositiveLatency(f64),
    #[error("accuracy must lie in [0, 1], got {0}")]
    AccuracyOutOfRange(f64),
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Hard,
    Soft,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub target_latency_ms: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mode: RewardMode,
}

impl RewardConfig {
    pub fn hard(target_latency_ms: f64) -> Self {
        RewardConfig {
            target_latency_ms,
            alpha: 0.0,
            beta: -1.0,
            mode: RewardMode::Hard,
        }
    }

    pub fn soft(target_latency_ms: f64) -> Self {
        Self::soft_with(target_latency_ms, SOFT_EXPONENT)
    }

    pub fn soft_with(target_latency_ms: f64, exponent: f64) -> Self {
        RewardConfig {
            target_latency_ms,
            alpha: exponent,
            beta: exponent,
            mode: RewardMode::Soft,
        }
    }

    pub fn custom(target_latency_ms: f64, alpha: f64, beta: f64) -> Self {
        RewardConfig {
            target_latency_ms,
            alpha,
            beta,
            mode: RewardMode::Custom,
        }
    }

    pub fn check(&self) -> Result<(), RewardError> {
        let bad = |m: String| Err(RewardError::InvalidConfig(m));
        if !(self.target_latency_ms.is_finite() && self.target_latency_ms > 0.0) {
            return bad(format!("target latency {} must be positive", self.target_latency_ms));
        }
        if !(self.alpha.is_finite() && self.beta.is_finite()) {
            return bad("exponents must be finite".into());
        }
        if self.alpha > 0.0 || self.beta > 0.0 {
            return bad(format!("exponents must be <= 0, got ({}, {})", self.alpha, self.beta));
        }
        match self.mode {
            RewardMode::Hard if (self.alpha, self.beta) != (0.0, -1.0) => {
                bad("hard mode requires (alpha, beta) = (0, -1)".into())
            }
            RewardMode::Soft if self.alpha != self.beta => bad("soft mode requires alpha == beta".into()),
            _ => Ok(()),
        }
    }

    /// The exponent applied at a given latency.
    pub fn weight(&self, latency_ms: f64) -> f64 {
        if latency_ms <= self.target_latency_ms {
            self.alpha
        } else {
            self.beta
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub accuracy: f64,
    pub latency_ms: f64,
}

/// Objective value of a measured model.
pub fn reward(meas: Measurement, cfg: &RewardConfig) -> Result<f64, RewardError> {
    if !(meas.latency_ms > 0.0) {
        return Err(RewardError::NonPositiveLatency(meas.latency_ms));
    }
    if !(0.0..=1.0).contains(&meas.accuracy) {
        return Err(RewardError::AccuracyOutOfRange(meas.accuracy));
    }
    Ok(reward_unchecked(meas.accuracy, meas.latency_ms, cfg))
}

pub(crate) fn reward_unchecked(accuracy: f64, latency_ms: f64, cfg: &RewardConfig) -> f64 {
    let w = cfg.weight(latency_ms);
    if w == 0.0 {
        return accuracy;
    }
    accuracy * (latency_ms / cfg.target_latency_ms).powf(w)
}

/// Exponent that makes doubling the latency cost a factor `1 / (1 + gain)`:
/// `-log2(1 + gain)`.
pub fn calibrate_exponent(accuracy_gain_per_doubling: f64) -> f64 {
    -(1.0 + accuracy_gain_per_doubling).log2()
}

/// Reward of a fixed accuracy across an evenly spaced latency grid.
pub fn sweep(
    accuracy: f64,
    cfg: &RewardConfig,
    lat_min_ms: f64,
    lat_max_ms: f64,
    steps: usize,
) -> Result<Vec<(f64, f64)>, RewardError> {
    let n = steps.max(2);
    (0..n)
        .map(|i| {
            let lat = lat_min_ms + (lat_max_ms - lat_min_ms) * i as f64 / (n - 1) as f64;
            reward(
                Measurement {
                    accuracy,
                    latency_ms: lat,
                },
                cfg,
            )
            .map(|r| (lat, r))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(accuracy: f64, latency_ms: f64) -> Measurement {
        Measurement {
            accuracy,
            latency_ms,
        }
    }

    #[test]
    fn at_target_every_mode_returns_accuracy() {
        for cfg in [RewardConfig::hard(80.0), RewardConfig::soft(80.0), RewardConfig::custom(80.0, -0.3, -2.0)] {
            assert_eq!(reward(m(0.5, 80.0), &cfg).unwrap(), 0.5);
        }
    }

    #[test]
    fn hard_mode_double_latency_halves() {
        assert_eq!(reward(m(0.5, 160.0), &RewardConfig::hard(80.0)).unwrap(), 0.25);
    }

    #[test]
    fn soft_mode_double_latency() {
        let r = reward(m(0.5, 160.0), &RewardConfig::soft(80.0)).unwrap();
        assert!((r - 0.5 * 2f64.powf(-0.07)).abs() < 1e-15);
        assert!((r - 0.476319).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_positive_latency() {
        assert!(matches!(
            reward(m(0.5, 0.0), &RewardConfig::soft(80.0)),
            Err(RewardError::NonPositiveLatency(_))
        ));
    }

    #[test]
    fn config_checks() {
        assert!(RewardConfig::hard(80.0).check().is_ok());
        assert!(RewardConfig::soft(80.0).check().is_ok());
        assert!(RewardConfig::custom(80.0, 0.1, -1.0).check().is_err());
        assert!(RewardConfig::custom(0.0, 0.0, -1.0).check().is_err());
        let mut h = RewardConfig::hard(80.0);
        h.beta = -0.5;
        assert!(h.check().is_err());
    }

    #[test]
    fn calibration() {
        let e = calibrate_exponent(0.05);
        assert!((e - (-0.0704)).abs() < 1e-4);
        assert!((e - SOFT_EXPONENT).abs() < 1e-3);
        assert!(calibrate_exponent(1e-12).abs() < 1e-11);
        let cfg = RewardConfig::soft_with(80.0, e);
        let ratio = reward(m(0.6, 160.0), &cfg).unwrap() / reward(m(0.6, 80.0), &cfg).unwrap();
        assert!((ratio - 1.0 / 1.05).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn monotone_and_scaled(acc in 0.01f64..0.5, lat in 1.0f64..400.0, dl in 0.0f64..100.0,
                               alpha in -2.0f64..=0.0, beta in -2.0f64..=0.0, k in 0.1f64..2.0) {
            let cfg = RewardConfig::custom(80.0, alpha, beta);
            let r = reward(m(acc, lat), &cfg).unwrap();
            prop_assert!(reward(m(acc * 1.5, lat), &cfg).unwrap() > r);
            prop_assert!(reward(m(acc, lat + dl), &cfg).unwrap() <= r * (1.0 + 1e-12));
            let scaled = reward_unchecked(k * acc, lat, &cfg);
            prop_assert!((scaled - k * r).abs() <= 1e-12 * scaled.abs().max(1e-300));
        }

        #[test]
        fn hard_plateau(acc in 0.0f64..=1.0, lat in 1e-6f64..=80.0) {
            prop_assert_eq!(reward(m(acc, lat), &RewardConfig::hard(80.0)).unwrap(), acc);
        }

        #[test]
        fn continuous_at_target(alpha in -2.0f64..=0.0, beta in -2.0f64..=0.0) {
            let cfg = RewardConfig::custom(80.0, alpha, beta);
            let below = reward(m(0.7, 80.0 * (1.0 - 1e-9)), &cfg).unwrap();
            let above = reward(m(0.7, 80.0 * (1.0 + 1e-9)), &cfg).unwrap();
            prop_assert!((below - above).abs() < 1e-8);
        }
    }
}
