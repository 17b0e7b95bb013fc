//! Time-of-use billing of hourly load profiles.
//!
//! One cell held for one hour is 0.5 kWh, so at an integer price of `p`
//! cents/kWh it costs exactly `p` half-cents. All sums stay in integers.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::LoadBlock;
use crate::scenario::{Profile, Tariff, HOURS};

/// Days billed per month.
pub const DAYS_PER_MONTH: i64 = 30;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BillingError {
    #[error("hour {0} is outside 0-23")]
    HourOutOfRange(usize),
    #[error("block of width {width} placed at hour {start} runs past hour {HOURS}")]
    BlockOverflow { start: usize, width: usize },
}

/// An exact amount of money in half-cent units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HalfCents(pub i64);

impl HalfCents {
    pub const ZERO: HalfCents = HalfCents(0);

    pub fn cents(self) -> f64 {
        self.0 as f64 / 2.0
    }

    pub fn dollars(self) -> f64 {
        self.0 as f64 / 200.0
    }
}

impl Add for HalfCents {
    type Output = HalfCents;
    fn add(self, rhs: Self) -> Self {
        HalfCents(self.0 + rhs.0)
    }
}

impl AddAssign for HalfCents {
    fn add_assign(&mut self, rhs: Self) {
        self.0 += rhs.0;
    }
}

impl Sub for HalfCents {
    type Output = HalfCents;
    fn sub(self, rhs: Self) -> Self {
        HalfCents(self.0 - rhs.0)
    }
}

impl Sum for HalfCents {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(HalfCents::ZERO, Add::add)
    }
}

impl fmt::Display for HalfCents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}c", self.cents())
    }
}

pub fn price_at_hour(tariff: &Tariff, hour: usize) -> Result<u32, BillingError> {
    tariff.hourly_prices().get(hour).copied().ok_or(BillingError::HourOutOfRange(hour))
}

fn cell_hour_cost(tariff: &Tariff, hour: usize, cells: u32) -> HalfCents {
    HalfCents(i64::from(cells) * i64::from(tariff.hourly_prices()[hour]))
}

pub fn daily_cost(profile: &Profile, tariff: &Tariff) -> HalfCents {
    (0..HOURS).map(|h| cell_hour_cost(tariff, h, profile[h])).sum()
}

/// Cost of a block alone when it starts at `placed_at`.
pub fn incremental_cost(block: &LoadBlock, placed_at: usize, tariff: &Tariff) -> Result<HalfCents, BillingError> {
    let width = block.width();
    if placed_at + width > HOURS {
        return Err(BillingError::BlockOverflow { start: placed_at, width });
    }
    Ok(block
        .column_cells()
        .iter()
        .enumerate()
        .map(|(i, &c)| cell_hour_cost(tariff, placed_at + i, c))
        .sum())
}

/// Per-hour, daily and monthly bill of a profile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BillReport {
    pub per_hour: [HalfCents; HOURS],
    pub daily: HalfCents,
}

impl BillReport {
    pub fn new(profile: &Profile, tariff: &Tariff) -> Self {
        let mut per_hour = [HalfCents::ZERO; HOURS];
        for (h, slot) in per_hour.iter_mut().enumerate() {
            *slot = cell_hour_cost(tariff, h, profile[h]);
        }
        let daily = per_hour.iter().copied().sum();
        Self { per_hour, daily }
    }

    pub fn daily_cost_cents(&self) -> f64 {
        self.daily.cents()
    }

    pub fn per_hour_cost_cents(&self) -> [f64; HOURS] {
        self.per_hour.map(HalfCents::cents)
    }

    pub fn monthly(&self) -> HalfCents {
        HalfCents(self.daily.0 * DAYS_PER_MONTH)
    }

    pub fn monthly_cost_dollars(&self) -> f64 {
        self.monthly().dollars()
    }
}

/// Formats an exact half-cent amount as dollars with two decimals.
pub fn format_dollars(amount: HalfCents) -> String {
    // 200 half-cents per dollar; the third decimal is always 0 or 5 before rounding.
    format!("{:.2}", amount.dollars())
}
