//! Exact baseline scheduler.
//!
//! Depth-first branch and bound over block start hours. Schedules are ranked
//! by the objective, then by the sum of start hours, then by the start hours
//! listed in appliance-name order, so the optimum is unique regardless of
//! search order. Instances beyond the exhaustive limit fall back to a beam
//! search whose result is flagged as heuristic.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::billing::{daily_cost, incremental_cost, HalfCents};
use crate::env::{LoadBlock, DEFAULT_MAX_HEIGHT};
use crate::scenario::{CellQuantum, Profile, Tariff, HOURS};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("block {0:?} cannot be placed anywhere without exceeding the height limit")]
    Infeasible(String),
    #[error("no complete schedule fits under the height limit")]
    NoFeasibleSchedule,
    #[error("duplicate block name {0:?}")]
    DuplicateName(String),
    #[error("invalid block {0:?}")]
    InvalidBlock(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveObjective {
    MinPeak,
    MinCost,
    /// Lowest peak, then lowest cost among peak-optimal schedules.
    PeakThenCost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverQuality {
    Exact,
    Heuristic,
}

impl fmt::Display for SolverQuality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverQuality::Exact => "exact",
            SolverQuality::Heuristic => "heuristic",
        })
    }
}

/// Start hour per shiftable appliance and the resulting day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub assignments: BTreeMap<String, usize>,
    pub resulting_profile: Profile,
    pub peak_cells: u32,
    pub daily_cost: HalfCents,
}

impl Schedule {
    /// Builds a schedule and its metrics from start hours.
    pub fn from_assignments(
        base: &Profile,
        blocks: &[LoadBlock],
        assignments: BTreeMap<String, usize>,
        tariff: &Tariff,
    ) -> Result<Self, OracleError> {
        let resulting_profile = apply(base, blocks, &assignments)?;
        Ok(Self::with_profile(assignments, resulting_profile, tariff))
    }

    pub(crate) fn with_profile(assignments: BTreeMap<String, usize>, resulting_profile: Profile, tariff: &Tariff) -> Self {
        Self {
            peak_cells: resulting_profile.iter().copied().max().unwrap_or(0),
            daily_cost: daily_cost(&resulting_profile, tariff),
            assignments,
            resulting_profile,
        }
    }

    pub fn peak_kw(&self) -> f64 {
        CellQuantum::STANDARD.kw(self.peak_cells)
    }

    pub fn daily_cost_cents(&self) -> f64 {
        self.daily_cost.cents()
    }
}

fn apply(base: &Profile, blocks: &[LoadBlock], assignments: &BTreeMap<String, usize>) -> Result<Profile, OracleError> {
    let mut profile = *base;
    for b in blocks {
        let &start = assignments.get(b.name()).ok_or_else(|| OracleError::InvalidBlock(b.name().to_string()))?;
        if start + b.width() > HOURS {
            return Err(OracleError::InvalidBlock(b.name().to_string()));
        }
        for (i, &c) in b.column_cells().iter().enumerate() {
            profile[start + i] += c;
        }
    }
    Ok(profile)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Solution {
    pub schedule: Schedule,
    pub quality: SolverQuality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleConfig {
    pub max_height: u32,
    /// Largest block count solved exhaustively.
    pub exhaustive_limit: usize,
    pub beam_width: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { max_height: DEFAULT_MAX_HEIGHT, exhaustive_limit: 12, beam_width: 256 }
    }
}

/// Ranking key; smaller is better.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Rank {
    primary: i64,
    secondary: i64,
    start_sum: usize,
    by_name: Vec<usize>,
}

struct Problem<'a> {
    base: &'a Profile,
    /// Blocks in search order (largest first).
    blocks: Vec<&'a LoadBlock>,
    /// For each search-order block, its index in name order.
    name_rank: Vec<usize>,
    /// Per-block, per-start incremental cost.
    costs: Vec<Vec<HalfCents>>,
    /// Cheapest start cost of each block, suffix-summed over search order.
    cheapest_suffix: Vec<HalfCents>,
    total_cells: u32,
    objective: SolveObjective,
    max_height: u32,
}

impl<'a> Problem<'a> {
    fn new(
        base: &'a Profile,
        blocks: &'a [LoadBlock],
        objective: SolveObjective,
        tariff: &Tariff,
        max_height: u32,
    ) -> Result<Self, OracleError> {
        let mut names = HashSet::new();
        for b in blocks {
            if b.column_cells().is_empty() || b.width() > HOURS || b.column_cells().contains(&0) {
                return Err(OracleError::InvalidBlock(b.name().to_string()));
            }
            if !names.insert(b.name()) {
                return Err(OracleError::DuplicateName(b.name().to_string()));
            }
            let fits = (0..=HOURS - b.width())
                .any(|p| b.column_cells().iter().enumerate().all(|(i, &c)| base[p + i] + c <= max_height));
            if !fits {
                return Err(OracleError::Infeasible(b.name().to_string()));
            }
        }
        let mut order: Vec<&LoadBlock> = blocks.iter().collect();
        order.sort_by(|a, b| b.total_cells().cmp(&a.total_cells()).then_with(|| a.name().cmp(b.name())));
        let mut sorted_names: Vec<&str> = blocks.iter().map(LoadBlock::name).collect();
        sorted_names.sort_unstable();
        let name_rank = order.iter().map(|b| sorted_names.binary_search(&b.name()).expect("present")).collect();
        let costs: Vec<Vec<HalfCents>> = order
            .iter()
            .map(|b| (0..=HOURS - b.width()).map(|p| incremental_cost(b, p, tariff).expect("in range")).collect())
            .collect();
        let mut cheapest_suffix = vec![HalfCents::ZERO; order.len() + 1];
        for i in (0..order.len()).rev() {
            let cheapest = costs[i].iter().copied().min().unwrap_or(HalfCents::ZERO);
            cheapest_suffix[i] = cheapest_suffix[i + 1] + cheapest;
        }
        let total_cells = base.iter().sum::<u32>() + blocks.iter().map(LoadBlock::total_cells).sum::<u32>();
        Ok(Self { base, blocks: order, name_rank, costs, cheapest_suffix, total_cells, objective, max_height })
    }

    fn objective_pair(&self, peak: u32, cost: HalfCents) -> (i64, i64) {
        match self.objective {
            SolveObjective::MinPeak => (i64::from(peak), 0),
            SolveObjective::MinCost => (cost.0, 0),
            SolveObjective::PeakThenCost => (i64::from(peak), cost.0),
        }
    }

    fn rank(&self, profile: &Profile, cost: HalfCents, starts: &[usize]) -> Rank {
        let peak = profile.iter().copied().max().unwrap_or(0);
        let (primary, secondary) = self.objective_pair(peak, cost);
        let mut by_name = vec![0; starts.len()];
        for (i, &s) in starts.iter().enumerate() {
            by_name[self.name_rank[i]] = s;
        }
        Rank { primary, secondary, start_sum: starts.iter().sum(), by_name }
    }

    fn fits(&self, heights: &Profile, block: &LoadBlock, start: usize) -> bool {
        block.column_cells().iter().enumerate().all(|(i, &c)| heights[start + i] + c <= self.max_height)
    }

    /// Lower bound on the peak of any completion of a partial assignment.
    fn peak_bound(&self, heights: &Profile, depth: usize) -> u32 {
        let mut bound = heights.iter().copied().max().unwrap_or(0);
        bound = bound.max(self.total_cells.div_ceil(HOURS as u32));
        for b in &self.blocks[depth..] {
            let best = (0..=HOURS - b.width())
                .map(|p| b.column_cells().iter().enumerate().map(|(i, &c)| heights[p + i] + c).max().unwrap_or(0))
                .min()
                .unwrap_or(0);
            bound = bound.max(best);
        }
        bound
    }

    fn to_schedule(&self, starts: &[usize], tariff: &Tariff) -> Schedule {
        let assignments: BTreeMap<String, usize> =
            self.blocks.iter().zip(starts).map(|(b, &s)| (b.name().to_string(), s)).collect();
        let profile = apply(self.base, &self.blocks.iter().map(|b| (*b).clone()).collect::<Vec<_>>(), &assignments)
            .expect("search only emits valid starts");
        Schedule::with_profile(assignments, profile, tariff)
    }
}

struct Search<'p, 'a> {
    problem: &'p Problem<'a>,
    starts: Vec<usize>,
    best: Option<(Rank, Vec<usize>)>,
}

impl Search<'_, '_> {
    fn dfs(&mut self, heights: &mut Profile, depth: usize, cost: HalfCents, start_sum: usize) {
        let p = self.problem;
        if depth == p.blocks.len() {
            let rank = p.rank(heights, cost, &self.starts);
            if self.best.as_ref().is_none_or(|(best, _)| rank < *best) {
                self.best = Some((rank, self.starts.clone()));
            }
            return;
        }
        if let Some((best, _)) = &self.best {
            let peak_lb = if p.objective == SolveObjective::MinCost { 0 } else { p.peak_bound(heights, depth) };
            let cost_lb = cost + p.cheapest_suffix[depth];
            let (primary, secondary) = p.objective_pair(peak_lb, cost_lb);
            let lb = (primary, secondary, start_sum);
            if lb > (best.primary, best.secondary, best.start_sum) {
                return;
            }
        }
        let block = p.blocks[depth];
        for start in 0..=HOURS - block.width() {
            if !p.fits(heights, block, start) {
                continue;
            }
            for (i, &c) in block.column_cells().iter().enumerate() {
                heights[start + i] += c;
            }
            self.starts.push(start);
            self.dfs(heights, depth + 1, cost + p.costs[depth][start], start_sum + start);
            self.starts.pop();
            for (i, &c) in block.column_cells().iter().enumerate() {
                heights[start + i] -= c;
            }
        }
    }
}

fn beam_search(problem: &Problem<'_>, width: usize) -> Option<Vec<usize>> {
    #[derive(Clone)]
    struct Node {
        heights: Profile,
        cost: HalfCents,
        starts: Vec<usize>,
    }
    let mut beam = vec![Node { heights: *problem.base, cost: HalfCents::ZERO, starts: Vec::new() }];
    for (depth, block) in problem.blocks.iter().enumerate() {
        let mut next: Vec<(Rank, Node)> = Vec::new();
        for node in &beam {
            for start in 0..=HOURS - block.width() {
                if !problem.fits(&node.heights, block, start) {
                    continue;
                }
                let mut child = node.clone();
                for (i, &c) in block.column_cells().iter().enumerate() {
                    child.heights[start + i] += c;
                }
                child.cost += problem.costs[depth][start];
                child.starts.push(start);
                let peak = child.heights.iter().copied().max().unwrap_or(0);
                let (primary, secondary) = problem.objective_pair(peak, child.cost);
                let rank = Rank { primary, secondary, start_sum: child.starts.iter().sum(), by_name: child.starts.clone() };
                next.push((rank, child));
            }
        }
        next.sort_by(|a, b| a.0.cmp(&b.0));
        let mut seen = HashSet::new();
        beam = next.into_iter().filter(|(_, n)| seen.insert(n.heights)).map(|(_, n)| n).take(width).collect();
        if beam.is_empty() {
            return None;
        }
    }
    let best = beam.into_iter().next()?;
    Some(improve_locally(problem, best.starts))
}

/// Moves single blocks while that strictly improves the rank.
fn improve_locally(problem: &Problem<'_>, mut starts: Vec<usize>) -> Vec<usize> {
    let evaluate = |starts: &[usize]| -> Option<Rank> {
        let mut heights = *problem.base;
        let mut cost = HalfCents::ZERO;
        for (d, (b, &s)) in problem.blocks.iter().zip(starts).enumerate() {
            for (i, &c) in b.column_cells().iter().enumerate() {
                heights[s + i] += c;
            }
            cost += problem.costs[d][s];
        }
        heights.iter().all(|&h| h <= problem.max_height).then(|| problem.rank(&heights, cost, starts))
    };
    let mut current = evaluate(&starts).expect("beam output is feasible");
    loop {
        let mut improved = false;
        for d in 0..starts.len() {
            let original = starts[d];
            for s in 0..=HOURS - problem.blocks[d].width() {
                if s == original {
                    continue;
                }
                starts[d] = s;
                match evaluate(&starts) {
                    Some(rank) if rank < current => {
                        current = rank;
                        improved = true;
                        break;
                    }
                    _ => starts[d] = original,
                }
            }
        }
        if !improved {
            return starts;
        }
    }
}

/// Best schedule for `blocks` on top of `base` under `objective`.
pub fn solve(
    base: &Profile,
    blocks: &[LoadBlock],
    objective: SolveObjective,
    tariff: &Tariff,
    config: &OracleConfig,
) -> Result<Solution, OracleError> {
    let problem = Problem::new(base, blocks, objective, tariff, config.max_height)?;
    if blocks.len() <= config.exhaustive_limit {
        let mut search = Search { problem: &problem, starts: Vec::with_capacity(blocks.len()), best: None };
        let mut heights = *base;
        search.dfs(&mut heights, 0, HalfCents::ZERO, 0);
        let (_, starts) = search.best.ok_or(OracleError::NoFeasibleSchedule)?;
        Ok(Solution { schedule: problem.to_schedule(&starts, tariff), quality: SolverQuality::Exact })
    } else {
        let starts = beam_search(&problem, config.beam_width.max(1)).ok_or(OracleError::NoFeasibleSchedule)?;
        Ok(Solution { schedule: problem.to_schedule(&starts, tariff), quality: SolverQuality::Heuristic })
    }
}

/// Metrics of a schedule recomputed from its assignments alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verification {
    pub ok: bool,
    pub profile: Option<Profile>,
    pub peak_cells: Option<u32>,
    pub daily_cost: Option<HalfCents>,
    pub problems: Vec<String>,
}

/// Recomputes a schedule from scratch and checks its recorded metrics.
pub fn verify(schedule: &Schedule, base: &Profile, blocks: &[LoadBlock], tariff: &Tariff) -> Verification {
    let mut problems = Vec::new();
    let known: HashSet<&str> = blocks.iter().map(LoadBlock::name).collect();
    for name in schedule.assignments.keys() {
        if !known.contains(name.as_str()) {
            problems.push(format!("unknown appliance {name:?}"));
        }
    }
    let profile = match apply(base, blocks, &schedule.assignments) {
        Ok(p) => p,
        Err(e) => {
            problems.push(e.to_string());
            return Verification { ok: false, profile: None, peak_cells: None, daily_cost: None, problems };
        }
    };
    let peak = profile.iter().copied().max().unwrap_or(0);
    let cost = daily_cost(&profile, tariff);
    if profile != schedule.resulting_profile {
        problems.push("resulting profile does not match assignments".into());
    }
    if peak != schedule.peak_cells {
        problems.push(format!("recorded peak {} cells, recomputed {peak}", schedule.peak_cells));
    }
    if cost != schedule.daily_cost {
        problems.push(format!("recorded cost {}, recomputed {cost}", schedule.daily_cost));
    }
    Verification { ok: problems.is_empty(), profile: Some(profile), peak_cells: Some(peak), daily_cost: Some(cost), problems }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blocks(specs: &[(&str, &[u32])]) -> Vec<LoadBlock> {
        specs.iter().map(|(n, c)| LoadBlock::new(*n, c.to_vec())).collect()
    }

    /// Plain enumeration of every start combination.
    fn brute_force(base: &Profile, blocks: &[LoadBlock], objective: SolveObjective, tariff: &Tariff) -> (i64, i64) {
        fn rec(
            base: &mut Profile,
            blocks: &[LoadBlock],
            i: usize,
            cost: i64,
            objective: SolveObjective,
            tariff: &Tariff,
            best: &mut Option<(i64, i64)>,
        ) {
            if i == blocks.len() {
                let peak = i64::from(*base.iter().max().unwrap());
                let key = match objective {
                    SolveObjective::MinPeak => (peak, 0),
                    SolveObjective::MinCost => (cost, 0),
                    SolveObjective::PeakThenCost => (peak, cost),
                };
                if best.is_none_or(|b| key < b) {
                    *best = Some(key);
                }
                return;
            }
            let b = &blocks[i];
            for s in 0..=24 - b.width() {
                let mut c = 0;
                for (k, &v) in b.column_cells().iter().enumerate() {
                    base[s + k] += v;
                    c += i64::from(v) * i64::from(tariff.hourly_prices()[s + k]);
                }
                rec(base, blocks, i + 1, cost + c, objective, tariff, best);
                for (k, &v) in b.column_cells().iter().enumerate() {
                    base[s + k] -= v;
                }
            }
        }
        let mut best = None;
        rec(&mut base.clone(), blocks, 0, 0, objective, tariff, &mut best);
        best.unwrap()
    }

    #[test]
    fn no_blocks_is_identity() {
        let t = Tariff::standard_tou();
        let base = [2; HOURS];
        let sol = solve(&base, &[], SolveObjective::MinPeak, &t, &OracleConfig::default()).unwrap();
        assert_eq!(sol.schedule.peak_cells, 2);
        assert_eq!(sol.schedule.daily_cost, daily_cost(&base, &t));
        assert!(sol.schedule.assignments.is_empty());
    }

    #[test]
    fn single_cell_goes_off_peak_for_cost() {
        let t = Tariff::standard_tou();
        let sol = solve(&[0; HOURS], &blocks(&[("x", &[1])]), SolveObjective::MinCost, &t, &OracleConfig::default())
            .unwrap();
        assert_eq!(sol.schedule.daily_cost_cents(), 3.0);
        // ties broken by the lowest start hour
        assert_eq!(sol.schedule.assignments["x"], 0);
    }

    #[test]
    fn matches_brute_force_on_small_instances() {
        let t = Tariff::standard_tou();
        let mut base = [1; HOURS];
        base[13] = 4;
        base[20] = 3;
        let bs = blocks(&[("a", &[2, 1]), ("b", &[2, 2]), ("c", &[2]), ("d", &[3])]);
        for objective in [SolveObjective::MinPeak, SolveObjective::MinCost, SolveObjective::PeakThenCost] {
            let sol = solve(&base, &bs, objective, &t, &OracleConfig::default()).unwrap();
            let s = &sol.schedule;
            let got = match objective {
                SolveObjective::MinPeak => (i64::from(s.peak_cells), 0),
                SolveObjective::MinCost => (s.daily_cost.0 - daily_cost(&base, &t).0, 0),
                SolveObjective::PeakThenCost => (i64::from(s.peak_cells), s.daily_cost.0 - daily_cost(&base, &t).0),
            };
            assert_eq!(got, brute_force(&base, &bs, objective, &t), "{objective:?}");
            assert!(verify(s, &base, &bs, &t).ok);
        }
    }

    #[test]
    fn infeasible_block_is_reported() {
        let t = Tariff::standard_tou();
        let config = OracleConfig { max_height: 3, ..OracleConfig::default() };
        let err = solve(&[3; HOURS], &blocks(&[("x", &[1])]), SolveObjective::MinPeak, &t, &config).unwrap_err();
        assert_eq!(err, OracleError::Infeasible("x".into()));
    }

    #[test]
    fn large_instances_are_heuristic() {
        let t = Tariff::standard_tou();
        let bs: Vec<_> = (0..14).map(|i| LoadBlock::new(format!("b{i:02}"), vec![1 + i % 3, 1])).collect();
        let sol = solve(&[1; HOURS], &bs, SolveObjective::MinPeak, &t, &OracleConfig::default()).unwrap();
        assert_eq!(sol.quality, SolverQuality::Heuristic);
        assert!(verify(&sol.schedule, &[1; HOURS], &bs, &t).ok);
        // 14 blocks of at most 4 cells spread over 24 columns of height 1
        assert!(sol.schedule.peak_cells <= 4);
    }

    #[test]
    fn tampered_schedule_fails_verification() {
        let t = Tariff::standard_tou();
        let bs = blocks(&[("a", &[2, 1])]);
        let mut s = solve(&[0; HOURS], &bs, SolveObjective::MinPeak, &t, &OracleConfig::default()).unwrap().schedule;
        s.peak_cells += 1;
        let v = verify(&s, &[0; HOURS], &bs, &t);
        assert!(!v.ok);
        assert_eq!(v.peak_cells, Some(2));
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let t = Tariff::standard_tou();
        let err = solve(&[0; HOURS], &blocks(&[("a", &[1]), ("a", &[2])]), SolveObjective::MinPeak, &t, &OracleConfig::default())
            .unwrap_err();
        assert_eq!(err, OracleError::DuplicateName("a".into()));
    }
}
