//! Reward of a settle event: load spread, complete lines, peak height and,
//! optionally, the cost of the placed block.

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::billing::incremental_cost;
use crate::env::SettleReport;
use crate::scenario::{Profile, Tariff, HOURS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreadKind {
    Variance,
    StdDev,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Peak minimization only.
    Peak,
    /// Peak minimization with a cost penalty.
    PeakCost,
}

#[derive(Debug, Error, PartialEq)]
#[error("reward weight {name} = {value} must be finite and non-negative")]
pub struct RewardConfigError {
    pub name: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Spread weight.
    pub alpha1: f64,
    /// Complete-lines weight.
    pub alpha2: f64,
    /// Peak-height weight.
    pub alpha3: f64,
    /// Cost weight, used only by [`Objective::PeakCost`].
    pub alpha4: f64,
    pub spread: SpreadKind,
    pub objective: Objective,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { alpha1: 10.0, alpha2: 0.76, alpha3: 0.5, alpha4: 0.2, spread: SpreadKind::Variance, objective: Objective::Peak }
    }
}

impl RewardConfig {
    pub fn with_objective(self, objective: Objective) -> Self {
        Self { objective, ..self }
    }

    pub fn with_spread(self, spread: SpreadKind) -> Self {
        Self { spread, ..self }
    }

    pub fn validate(&self) -> Result<(), RewardConfigError> {
        for (name, value) in [("alpha1", self.alpha1), ("alpha2", self.alpha2), ("alpha3", self.alpha3), ("alpha4", self.alpha4)]
        {
            if !value.is_finite() || value < 0.0 {
                return Err(RewardConfigError { name, value });
            }
        }
        Ok(())
    }
}

/// Signed contributions to a reward; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown<T> {
    pub spread_term: T,
    pub lines_term: T,
    pub height_term: T,
    pub cost_term: T,
    pub total: T,
}

fn cast<T: FromPrimitive>(v: f64) -> T {
    T::from_f64(v).expect("finite reward input")
}

/// Population variance of the 24 column heights.
pub fn height_variance<T: Float + FromPrimitive>(heights: &Profile) -> T {
    let n: T = cast(HOURS as f64);
    let mean = heights.iter().map(|&h| cast::<T>(f64::from(h))).fold(T::zero(), |a, b| a + b) / n;
    heights
        .iter()
        .map(|&h| {
            let d = cast::<T>(f64::from(h)) - mean;
            d * d
        })
        .fold(T::zero(), |a, b| a + b)
        / n
}

/// `1 / (1 + var)` or `1 / (1 + std)`; in `(0, 1]`, 1 only for a flat profile.
pub fn spread_term<T: Float + FromPrimitive>(heights: &Profile, kind: SpreadKind) -> T {
    let var = height_variance::<T>(heights);
    let spread = match kind {
        SpreadKind::Variance => var,
        SpreadKind::StdDev => var.sqrt(),
    };
    T::one() / (T::one() + spread)
}

/// Rows filled across every column. Loads persist, so this is the minimum height.
pub fn complete_lines(heights: &Profile) -> u32 {
    heights.iter().copied().min().unwrap_or(0)
}

pub fn compute_reward<T: Float + FromPrimitive>(
    report: &SettleReport,
    config: &RewardConfig,
    tariff: &Tariff,
) -> RewardBreakdown<T> {
    if report.overflow {
        let height_term = -cast::<T>(config.alpha3 * f64::from(report.max_height));
        return RewardBreakdown {
            spread_term: T::zero(),
            lines_term: T::zero(),
            height_term,
            cost_term: T::zero(),
            total: height_term,
        };
    }
    let heights = &report.heights_after;
    let spread_term = cast::<T>(config.alpha1) * spread_term::<T>(heights, config.spread);
    let lines_term = cast::<T>(config.alpha2 * f64::from(complete_lines(heights)));
    let height_term = -cast::<T>(config.alpha3 * f64::from(report.peak_after()));
    let cost_term = match config.objective {
        Objective::Peak => T::zero(),
        Objective::PeakCost => {
            let cents = incremental_cost(&report.block, report.block.position(), tariff)
                .expect("settled block lies inside the day")
                .cents();
            -cast::<T>(config.alpha4 * cents)
        }
    };
    RewardBreakdown { spread_term, lines_term, height_term, cost_term, total: spread_term + lines_term + height_term + cost_term }
}
