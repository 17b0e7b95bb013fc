//! The 24-column load-stacking simulation.
//!
//! A block hovers above the grid and can be moved left or right one hour at a
//! time, or dropped. Dropped blocks settle column by column: every column of
//! the block lands independently on the column below it, so the grid never
//! has holes.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{Profile, HOURS};

/// 25 kW at 0.5 kW per cell.
pub const DEFAULT_MAX_HEIGHT: u32 = 50;
/// Lateral moves allowed per block before a drop is forced.
pub const DEFAULT_LATERAL_MOVE_CAP: u32 = 24;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("base profile reaches {height} cells at hour {hour}, above the {max} cell limit")]
    BaseExceedsMax { hour: usize, height: u32, max: u32 },
    #[error("block {name:?} has invalid shape {cells:?}")]
    InvalidBlock { name: String, cells: Vec<u32> },
    #[error("episode already terminated")]
    EpisodeFinished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub max_height: u32,
    pub lateral_move_cap: u32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { max_height: DEFAULT_MAX_HEIGHT, lateral_move_cap: DEFAULT_LATERAL_MOVE_CAP }
    }
}

/// A shiftable load as a piece of per-hour cell columns.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LoadBlock {
    name: String,
    column_cells: Vec<u32>,
    position: usize,
}

impl LoadBlock {
    pub fn new(name: impl Into<String>, column_cells: Vec<u32>) -> Self {
        Self { name: name.into(), column_cells, position: 0 }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn column_cells(&self) -> &[u32] {
        &self.column_cells
    }

    pub fn width(&self) -> usize {
        self.column_cells.len()
    }

    /// Leftmost hour covered by the block.
    pub fn position(&self) -> usize {
        self.position
    }

    /// Largest legal position.
    pub fn max_position(&self) -> usize {
        HOURS.saturating_sub(self.width())
    }

    pub fn at(mut self, position: usize) -> Self {
        self.position = position.min(self.max_position());
        self
    }

    pub fn total_cells(&self) -> u32 {
        self.column_cells.iter().sum()
    }

    pub fn tallest_column(&self) -> u32 {
        self.column_cells.iter().copied().max().unwrap_or(0)
    }

    fn validate(&self) -> Result<(), EnvError> {
        if self.column_cells.is_empty() || self.width() > HOURS || self.column_cells.contains(&0) {
            return Err(EnvError::InvalidBlock { name: self.name.clone(), cells: self.column_cells.clone() });
        }
        Ok(())
    }
}

/// Settled aggregate load per hour.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridState {
    heights: Profile,
    max_height: u32,
}

impl GridState {
    pub fn new(heights: Profile, max_height: u32) -> Self {
        Self { heights, max_height }
    }

    pub fn heights(&self) -> &Profile {
        &self.heights
    }

    pub fn max_height(&self) -> u32 {
        self.max_height
    }

    pub fn peak(&self) -> u32 {
        self.heights.iter().copied().max().unwrap_or(0)
    }

    pub fn overflowed(&self) -> bool {
        self.heights.iter().any(|&h| h > self.max_height)
    }

    /// Stacks each block column onto the column beneath it. Overflow is left
    /// for the caller to detect.
    pub fn settle_block(&self, block: &LoadBlock) -> GridState {
        let mut next = self.clone();
        for (i, &c) in block.column_cells.iter().enumerate() {
            next.heights[block.position + i] += c;
        }
        next
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Left,
    Right,
    Drop,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Left, Action::Right, Action::Drop];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Action::Left => "left",
            Action::Right => "right",
            Action::Drop => "drop",
        };
        f.write_str(s)
    }
}

/// Arrival order of the block queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueueOrder {
    /// Scenario file order.
    Fixed,
    /// Deterministic shuffle from a seed.
    Shuffled(u64),
}

/// Everything a reward needs to know about one drop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SettleReport {
    pub heights_before: Profile,
    pub heights_after: Profile,
    /// The block at the position where it settled.
    pub block: LoadBlock,
    /// The drop was forced by the lateral-move cap.
    pub forced: bool,
    pub overflow: bool,
    pub max_height: u32,
}

impl SettleReport {
    pub fn peak_after(&self) -> u32 {
        self.heights_after.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Every block was placed.
    Completed,
    /// A settle pushed a column above the height limit.
    Overflow,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub appliance: String,
    pub start_hour: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub report: Option<SettleReport>,
    pub terminal: bool,
}

/// Full simulation state; cheap to clone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvState {
    config: EnvConfig,
    grid: GridState,
    active: Option<LoadBlock>,
    queue: VecDeque<LoadBlock>,
    steps_for_block: u32,
    placements: Vec<Placement>,
    termination: Option<Termination>,
}

impl EnvState {
    pub fn reset(
        config: EnvConfig,
        base_profile: Profile,
        blocks: Vec<LoadBlock>,
        order: QueueOrder,
    ) -> Result<Self, EnvError> {
        if let Some((hour, &height)) = base_profile.iter().enumerate().find(|(_, &h)| h > config.max_height) {
            return Err(EnvError::BaseExceedsMax { hour, height, max: config.max_height });
        }
        for b in &blocks {
            b.validate()?;
        }
        let mut blocks = blocks;
        if let QueueOrder::Shuffled(seed) = order {
            blocks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        let mut state = Self {
            config,
            grid: GridState::new(base_profile, config.max_height),
            active: None,
            queue: blocks.into(),
            steps_for_block: 0,
            placements: Vec::new(),
            termination: None,
        };
        state.activate_next();
        Ok(state)
    }

    fn activate_next(&mut self) {
        self.steps_for_block = 0;
        self.active = self.queue.pop_front().map(|b| {
            let start = (HOURS - b.width()) / 2;
            b.at(start)
        });
        if self.active.is_none() && self.termination.is_none() {
            self.termination = Some(Termination::Completed);
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn grid(&self) -> &GridState {
        &self.grid
    }

    pub fn active(&self) -> Option<&LoadBlock> {
        self.active.as_ref()
    }

    pub fn queue(&self) -> &VecDeque<LoadBlock> {
        &self.queue
    }

    pub fn steps_for_block(&self) -> u32 {
        self.steps_for_block
    }

    /// Start hours of the blocks settled so far, in settle order.
    pub fn placements(&self) -> &[Placement] {
        &self.placements
    }

    pub fn termination(&self) -> Option<Termination> {
        self.termination
    }

    pub fn is_terminal(&self) -> bool {
        self.termination.is_some()
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome, EnvError> {
        if self.termination.is_some() {
            return Err(EnvError::EpisodeFinished);
        }
        let Some(block) = self.active.as_mut() else {
            return Err(EnvError::EpisodeFinished);
        };
        let forced = action != Action::Drop && self.steps_for_block >= self.config.lateral_move_cap;
        match action {
            Action::Left if !forced => {
                block.position = block.position.saturating_sub(1);
                self.steps_for_block += 1;
                return Ok(StepOutcome { report: None, terminal: false });
            }
            Action::Right if !forced => {
                block.position = (block.position + 1).min(block.max_position());
                self.steps_for_block += 1;
                return Ok(StepOutcome { report: None, terminal: false });
            }
            _ => {}
        }

        let block = self.active.take().expect("active block checked above");
        let heights_before = *self.grid.heights();
        self.grid = self.grid.settle_block(&block);
        let overflow = self.grid.overflowed();
        self.placements.push(Placement { appliance: block.name.clone(), start_hour: block.position });
        let report = SettleReport {
            heights_before,
            heights_after: *self.grid.heights(),
            block,
            forced,
            overflow,
            max_height: self.config.max_height,
        };
        if overflow {
            self.termination = Some(Termination::Overflow);
            self.steps_for_block = 0;
        } else {
            self.activate_next();
        }
        Ok(StepOutcome { report: Some(report), terminal: self.termination.is_some() })
    }

    pub fn render(&self) -> StateImage {
        let rows = self.config.max_height as usize;
        let mut image = StateImage::empty(rows);
        for (col, &h) in self.grid.heights().iter().enumerate() {
            for row in 0..(h as usize).min(rows) {
                image.set(0, row, col);
            }
        }
        if let Some(block) = &self.active {
            let band = (block.tallest_column() as usize).min(rows);
            let base_row = rows - band;
            for (i, &c) in block.column_cells.iter().enumerate() {
                for k in 0..(c as usize).min(band) {
                    image.set(1, base_row + k, block.position + i);
                }
            }
        }
        image
    }
}

/// Two binary planes of `rows x 24`: settled load, then the active block.
/// Row 0 is the bottom of the grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StateImage {
    rows: usize,
    bits: Vec<u64>,
}

impl StateImage {
    pub const PLANES: usize = 2;
    pub const COLS: usize = HOURS;

    pub fn empty(rows: usize) -> Self {
        let n = Self::PLANES * rows * Self::COLS;
        Self { rows, bits: vec![0; n.div_ceil(64)] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    fn offset(&self, plane: usize, row: usize, col: usize) -> usize {
        debug_assert!(plane < Self::PLANES && row < self.rows && col < Self::COLS);
        (plane * self.rows + row) * Self::COLS + col
    }

    fn set(&mut self, plane: usize, row: usize, col: usize) {
        let i = self.offset(plane, row, col);
        self.bits[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, plane: usize, row: usize, col: usize) -> bool {
        let i = self.offset(plane, row, col);
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.bits.iter().map(|w| w.count_ones()).sum()
    }

    /// Rows after averaging groups of `factor` rows.
    pub fn downsampled_rows(&self, factor: usize) -> usize {
        self.rows.div_ceil(factor.max(1))
    }

    /// Writes the image as a `(planes, rows / factor, 24)` array, each output
    /// row the mean of `factor` consecutive input rows.
    pub fn write_input<T: crate::Scalar>(&self, factor: usize, out: &mut [T]) {
        let factor = factor.max(1);
        let out_rows = self.downsampled_rows(factor);
        assert_eq!(out.len(), Self::PLANES * out_rows * Self::COLS, "input buffer has the wrong size");
        out.fill(T::zero());
        let weight = T::one() / T::from_usize(factor).expect("small integer");
        for plane in 0..Self::PLANES {
            for row in 0..self.rows {
                let dst = (plane * out_rows + row / factor) * Self::COLS;
                for col in 0..Self::COLS {
                    if self.get(plane, row, col) {
                        out[dst + col] += weight;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(cells: Vec<u32>) -> EnvState {
        EnvState::reset(EnvConfig::default(), [0; HOURS], vec![LoadBlock::new("b", cells)], QueueOrder::Fixed).unwrap()
    }

    #[test]
    fn first_block_is_centred() {
        let s = single(vec![1]);
        assert_eq!(s.active().unwrap().position(), 11);
        let s = single(vec![2, 1]);
        assert_eq!(s.active().unwrap().position(), 11);
        let s = single(vec![1; 24]);
        assert_eq!(s.active().unwrap().position(), 0);
    }

    #[test]
    fn zero_blocks_is_already_complete() {
        let s = EnvState::reset(EnvConfig::default(), [3; HOURS], vec![], QueueOrder::Fixed).unwrap();
        assert!(s.active().is_none());
        assert_eq!(s.termination(), Some(Termination::Completed));
        let mut s = s;
        assert_eq!(s.step(Action::Drop), Err(EnvError::EpisodeFinished));
    }

    #[test]
    fn base_over_limit_is_rejected() {
        let mut base = [0; HOURS];
        base[5] = 51;
        let err = EnvState::reset(EnvConfig::default(), base, vec![], QueueOrder::Fixed).unwrap_err();
        assert_eq!(err, EnvError::BaseExceedsMax { hour: 5, height: 51, max: 50 });
    }

    #[test]
    fn lateral_moves_clamp_at_edges() {
        let mut s = single(vec![1]);
        s.active.as_mut().unwrap().position = 5;
        let out = s.step(Action::Left).unwrap();
        assert_eq!(out, StepOutcome { report: None, terminal: false });
        assert_eq!(s.active().unwrap().position(), 4);

        s.active.as_mut().unwrap().position = 0;
        s.step(Action::Left).unwrap();
        assert_eq!(s.active().unwrap().position(), 0);

        s.active.as_mut().unwrap().position = 23;
        s.step(Action::Right).unwrap();
        assert_eq!(s.active().unwrap().position(), 23);
    }

    #[test]
    fn drop_settles_columns_independently() {
        let mut s = single(vec![2, 1]);
        s.active.as_mut().unwrap().position = 3;
        let out = s.step(Action::Drop).unwrap();
        assert!(out.terminal);
        let report = out.report.unwrap();
        assert_eq!(report.heights_after[3], 2);
        assert_eq!(report.heights_after[4], 1);
        assert_eq!(s.termination(), Some(Termination::Completed));
        assert_eq!(s.placements(), &[Placement { appliance: "b".into(), start_hour: 3 }]);
    }

    #[test]
    fn settle_onto_uneven_columns() {
        let mut heights = [0; HOURS];
        heights[10] = 3;
        let grid = GridState::new(heights, 50);
        let next = grid.settle_block(&LoadBlock::new("b", vec![2, 1]).at(10));
        assert_eq!(next.heights()[10], 5);
        assert_eq!(next.heights()[11], 1);
    }

    #[test]
    fn overflow_terminates() {
        let mut base = [0; HOURS];
        base[11] = 50;
        let mut s =
            EnvState::reset(EnvConfig::default(), base, vec![LoadBlock::new("b", vec![1])], QueueOrder::Fixed).unwrap();
        let out = s.step(Action::Drop).unwrap();
        assert!(out.terminal);
        assert!(out.report.unwrap().overflow);
        assert_eq!(s.termination(), Some(Termination::Overflow));
    }

    #[test]
    fn reaching_the_limit_exactly_is_not_overflow() {
        let mut base = [0; HOURS];
        base[11] = 49;
        let mut s = EnvState::reset(
            EnvConfig::default(),
            base,
            vec![LoadBlock::new("a", vec![1]), LoadBlock::new("b", vec![1])],
            QueueOrder::Fixed,
        )
        .unwrap();
        let out = s.step(Action::Drop).unwrap();
        assert!(!out.terminal);
        assert!(!out.report.unwrap().overflow);
    }

    #[test]
    fn lateral_cap_forces_drop() {
        let config = EnvConfig { lateral_move_cap: 3, ..EnvConfig::default() };
        let mut s = EnvState::reset(config, [0; HOURS], vec![LoadBlock::new("b", vec![1])], QueueOrder::Fixed).unwrap();
        for _ in 0..3 {
            assert!(s.step(Action::Left).unwrap().report.is_none());
        }
        let out = s.step(Action::Left).unwrap();
        let report = out.report.unwrap();
        assert!(report.forced);
        assert_eq!(report.block.position(), 8);
        assert!(out.terminal);
    }

    #[test]
    fn shuffled_order_is_seeded() {
        let blocks: Vec<_> = (1..=6).map(|i| LoadBlock::new(format!("b{i}"), vec![i])).collect();
        let a = EnvState::reset(EnvConfig::default(), [0; HOURS], blocks.clone(), QueueOrder::Shuffled(9)).unwrap();
        let b = EnvState::reset(EnvConfig::default(), [0; HOURS], blocks.clone(), QueueOrder::Shuffled(9)).unwrap();
        assert_eq!(a, b);
        let fixed = EnvState::reset(EnvConfig::default(), [0; HOURS], blocks, QueueOrder::Fixed).unwrap();
        assert_eq!(fixed.active().unwrap().name(), "b1");
    }

    #[test]
    fn render_planes() {
        let empty = EnvState::reset(EnvConfig::default(), [0; HOURS], vec![], QueueOrder::Fixed).unwrap();
        assert_eq!(empty.render().count_ones(), 0);

        let mut base = [0; HOURS];
        base[0] = 2;
        let s = EnvState::reset(EnvConfig::default(), base, vec![LoadBlock::new("b", vec![2, 1])], QueueOrder::Fixed)
            .unwrap();
        let img = s.render();
        assert!(img.get(0, 0, 0) && img.get(0, 1, 0) && !img.get(0, 2, 0));
        // block [2, 1] at 11: staging band is the top two rows
        assert!(img.get(1, 48, 11) && img.get(1, 49, 11));
        assert!(img.get(1, 48, 12) && !img.get(1, 49, 12));
        assert_eq!(img.count_ones(), 2 + 3);
        assert_eq!(img, s.render());
    }

    #[test]
    fn downsampled_input_averages_row_pairs() {
        let mut base = [0; HOURS];
        base[0] = 3;
        let s = EnvState::reset(EnvConfig::default(), base, vec![], QueueOrder::Fixed).unwrap();
        let img = s.render();
        let mut input = vec![0f32; 2 * 25 * 24];
        img.write_input(2, &mut input);
        assert_eq!(input[0], 1.0);
        assert_eq!(input[24], 0.5);
        assert_eq!(input[48], 0.0);
    }
}
