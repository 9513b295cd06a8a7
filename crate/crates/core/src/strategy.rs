//! Choosing between pooled contrastive learning with entropy minimization
//! and in-domain contrastive learning without it, from the size of the
//! label-distribution shift between the labeled source pool and the
//! unlabeled target pool.
//!
//! Small shift favors entropy minimization; large shift favors in-domain
//! contrast, since entropy minimization drifts toward the dominant target
//! class. Enabling both, or neither, is available for ablations only.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::LabelDistribution;
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 5.0;
pub const DEFAULT_ENTROPY_START_EPOCH: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftMeasure {
    pub source_ratio: f64,
    pub target_ratio: f64,
    /// `max(r, 1/r)` with `r = target_ratio / source_ratio`; always `>= 1`.
    pub shift: f64,
}

impl ShiftMeasure {
    pub fn from_ratios(source_ratio: f64, target_ratio: f64) -> Result<Self> {
        for (name, r) in [("source", source_ratio), ("target", target_ratio)] {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} pos:neg ratio must be positive and finite, got {r}"
                )));
            }
        }
        let r = target_ratio / source_ratio;
        Ok(ShiftMeasure {
            source_ratio,
            target_ratio,
            shift: r.max(1.0 / r),
        })
    }
}

pub fn measure_shift(source: &LabelDistribution, target: &LabelDistribution) -> Result<ShiftMeasure> {
    let ratio = |d: &LabelDistribution, role: &str| {
        d.ratio().filter(|r| *r > 0.0).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{role} distribution ({} pos / {} neg) has no defined pos:neg ratio",
                d.n_pos, d.n_neg
            ))
        })
    };
    ShiftMeasure::from_ratios(ratio(source, "source")?, ratio(target, "target")?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveMode {
    /// One InfoNCE over source and target rows together.
    Pooled,
    /// Separate InfoNCE per domain, summed.
    InDomain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub contrastive_mode: ContrastiveMode,
    pub entropy_enabled: bool,
    pub entropy_start_epoch: u32,
    /// Threshold the automatic rule compared against; `None` for manual picks.
    pub threshold_used: Option<f64>,
}

impl StrategyConfig {
    pub fn pooled_entropy() -> Self {
        StrategyConfig {
            contrastive_mode: ContrastiveMode::Pooled,
            entropy_enabled: true,
            entropy_start_epoch: DEFAULT_ENTROPY_START_EPOCH,
            threshold_used: None,
        }
    }

    pub fn in_domain() -> Self {
        StrategyConfig {
            contrastive_mode: ContrastiveMode::InDomain,
            entropy_enabled: false,
            entropy_start_epoch: DEFAULT_ENTROPY_START_EPOCH,
            threshold_used: None,
        }
    }

    /// True for the two recommended combinations: exactly one of in-domain
    /// contrast and entropy minimization.
    pub fn is_recommended(&self) -> bool {
        (self.contrastive_mode == ContrastiveMode::InDomain) != self.entropy_enabled
    }

    pub fn describe(&self) -> String {
        let mode = match self.contrastive_mode {
            ContrastiveMode::Pooled => "pooled",
            ContrastiveMode::InDomain => "in_domain",
        };
        if self.entropy_enabled {
            format!("{mode} + entropy (from epoch {})", self.entropy_start_epoch)
        } else {
            format!("{mode}, no entropy")
        }
    }
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig::pooled_entropy()
    }
}

/// Shift at or below `threshold` selects pooled contrast with entropy
/// minimization; above it, in-domain contrast without entropy.
pub fn select_strategy(shift: &ShiftMeasure, threshold: f64) -> Result<StrategyConfig> {
    if !(threshold > 1.0 && threshold.is_finite()) {
        return Err(Error::InvalidArgument(format!("shift threshold must exceed 1, got {threshold}")));
    }
    let base = if shift.shift <= threshold {
        StrategyConfig::pooled_entropy()
    } else {
        StrategyConfig::in_domain()
    };
    Ok(StrategyConfig {
        threshold_used: Some(threshold),
        ..base
    })
}

/// Operator-facing strategy choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyChoice {
    Auto,
    PooledEntropy,
    InDomain,
    /// In-domain contrast plus entropy minimization (ablation).
    Both,
    /// Pooled contrast without entropy minimization (ablation).
    Neither,
}

impl StrategyChoice {
    pub fn is_ablation(self) -> bool {
        matches!(self, StrategyChoice::Both | StrategyChoice::Neither)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyChoice::Auto => "auto",
            StrategyChoice::PooledEntropy => "pooled-entropy",
            StrategyChoice::InDomain => "in-domain",
            StrategyChoice::Both => "both",
            StrategyChoice::Neither => "neither",
        }
    }
}

impl fmt::Display for StrategyChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(StrategyChoice::Auto),
            "pooled-entropy" => Ok(StrategyChoice::PooledEntropy),
            "in-domain" => Ok(StrategyChoice::InDomain),
            "both" => Ok(StrategyChoice::Both),
            "neither" => Ok(StrategyChoice::Neither),
            other => Err(Error::InvalidArgument(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Resolves an operator choice. `auto` needs a shift measurement; the
/// ablation choices need `allow_ablation`.
pub fn resolve_strategy(
    choice: StrategyChoice,
    shift: Option<&ShiftMeasure>,
    threshold: f64,
    allow_ablation: bool,
    entropy_start_epoch: u32,
) -> Result<StrategyConfig> {
    if choice.is_ablation() && !allow_ablation {
        return Err(Error::InvalidArgument(format!(
            "strategy {choice} combines or drops both techniques; pass --allow-ablation to use it"
        )));
    }
    if entropy_start_epoch < 1 {
        return Err(Error::InvalidArgument("entropy_start_epoch must be at least 1".into()));
    }
    let resolved = match choice {
        StrategyChoice::Auto => {
            let shift = shift.ok_or_else(|| {
                Error::InvalidArgument("strategy auto needs a label-shift measurement".into())
            })?;
            select_strategy(shift, threshold)?
        }
        StrategyChoice::PooledEntropy => StrategyConfig::pooled_entropy(),
        StrategyChoice::InDomain => StrategyConfig::in_domain(),
        StrategyChoice::Both => StrategyConfig {
            entropy_enabled: true,
            ..StrategyConfig::in_domain()
        },
        StrategyChoice::Neither => StrategyConfig {
            entropy_enabled: false,
            ..StrategyConfig::pooled_entropy()
        },
    };
    Ok(StrategyConfig {
        entropy_start_epoch,
        ..resolved
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shift(target: f64) -> ShiftMeasure {
        ShiftMeasure::from_ratios(1.0, target).unwrap()
    }

    #[test]
    fn shift_examples() {
        assert!((shift(7.39).shift - 7.39).abs() < 1e-12);
        assert_eq!(shift(1.0).shift, 1.0);
        assert!((shift(1.0 / 7.39).shift - 7.39).abs() < 1e-12);
    }

    #[test]
    fn shift_from_distributions() {
        let src = LabelDistribution::new(1000, 1000).unwrap();
        let tgt = LabelDistribution::new(739, 100).unwrap();
        assert!((measure_shift(&src, &tgt).unwrap().shift - 7.39).abs() < 1e-12);
        let degenerate = LabelDistribution::new(10, 0).unwrap();
        assert!(measure_shift(&src, &degenerate).is_err());
        let no_pos = LabelDistribution::new(0, 10).unwrap();
        assert!(measure_shift(&no_pos, &tgt).is_err());
    }

    #[test]
    fn benchmark_shifts_select_best_configs() {
        for s in [1.15, 3.65] {
            let c = select_strategy(&shift(s), DEFAULT_THRESHOLD).unwrap();
            assert_eq!(c.contrastive_mode, ContrastiveMode::Pooled);
            assert!(c.entropy_enabled);
            assert_eq!(c.threshold_used, Some(5.0));
        }
        let c = select_strategy(&shift(7.39), DEFAULT_THRESHOLD).unwrap();
        assert_eq!(c.contrastive_mode, ContrastiveMode::InDomain);
        assert!(!c.entropy_enabled);
    }

    #[test]
    fn threshold_boundary_is_pooled() {
        let c = select_strategy(&shift(5.0), 5.0).unwrap();
        assert_eq!(c.contrastive_mode, ContrastiveMode::Pooled);
        assert!(select_strategy(&shift(2.0), 1.0).is_err());
    }

    #[test]
    fn ablations_need_flag() {
        assert!(resolve_strategy(StrategyChoice::Both, None, 5.0, false, 2).is_err());
        let both = resolve_strategy(StrategyChoice::Both, None, 5.0, true, 2).unwrap();
        assert!(both.entropy_enabled && both.contrastive_mode == ContrastiveMode::InDomain);
        assert!(!both.is_recommended());
        let neither = resolve_strategy(StrategyChoice::Neither, None, 5.0, true, 2).unwrap();
        assert!(!neither.entropy_enabled && neither.contrastive_mode == ContrastiveMode::Pooled);
        assert!(resolve_strategy(StrategyChoice::Auto, None, 5.0, false, 2).is_err());
        let auto = resolve_strategy(StrategyChoice::Auto, Some(&shift(7.39)), 5.0, false, 3).unwrap();
        assert_eq!(auto.entropy_start_epoch, 3);
        assert!(auto.is_recommended());
    }

    #[test]
    fn choice_round_trips_through_strings() {
        for c in [
            StrategyChoice::Auto,
            StrategyChoice::PooledEntropy,
            StrategyChoice::InDomain,
            StrategyChoice::Both,
            StrategyChoice::Neither,
        ] {
            assert_eq!(c.as_str().parse::<StrategyChoice>().unwrap(), c);
        }
    }
}
