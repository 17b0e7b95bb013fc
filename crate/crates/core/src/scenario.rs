//! Consumer appliance data, time-of-use tariffs and their JSON file format.
//!
//! Physical loads are quantized onto a lattice of 0.5 kW cells, one column per
//! hour. Off-lattice power values are rejected rather than rounded.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::LoadBlock;

/// Hours in the scheduling day, one simulation column each.
pub const HOURS: usize = 24;

/// Aggregate load per hour, in cells.
pub type Profile = [u32; HOURS];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{field}: {value} kW is not a positive multiple of {kw_per_cell} kW")]
    OffLattice { field: String, value: f64, kw_per_cell: f64 },
    #[error("{field}: declared duration {declared} h but {actual} hourly powers given")]
    DurationMismatch { field: String, declared: usize, actual: usize },
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("tariff{field}: {reason}")]
    Tariff { field: String, reason: String },
    #[error("cannot aggregate an empty list of consumers")]
    EmptyAggregation,
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field: field.into(), reason: reason.into() }
}

/// Power resolution of the simulation lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellQuantum {
    pub kw_per_cell: f64,
    pub hours_per_column: u32,
}

impl CellQuantum {
    pub const STANDARD: CellQuantum = CellQuantum { kw_per_cell: 0.5, hours_per_column: 1 };

    /// Number of cells for a power value, if it sits exactly on the lattice.
    pub fn cells_for(&self, kw: f64) -> Option<u32> {
        if !kw.is_finite() || kw <= 0.0 {
            return None;
        }
        let cells = kw / self.kw_per_cell;
        let rounded = cells.round();
        if rounded >= 1.0 && (cells - rounded).abs() < 1e-9 && rounded <= u32::MAX as f64 {
            Some(rounded as u32)
        } else {
            None
        }
    }

    pub fn kw(&self, cells: u32) -> f64 {
        f64::from(cells) * self.kw_per_cell
    }
}

impl Default for CellQuantum {
    fn default() -> Self {
        Self::STANDARD
    }
}

/// One appliance row: per-hour power draw plus scheduling flexibility.
#[derive(Debug, Clone, PartialEq)]
pub struct AppliancePowerProfile {
    name: String,
    hourly_cells: Vec<u32>,
    shiftable: bool,
    preferred_start: Option<usize>,
}

impl AppliancePowerProfile {
    /// Validates and quantizes an appliance. `field` prefixes error messages.
    pub fn new(
        name: impl Into<String>,
        powers_kw: &[f64],
        shiftable: bool,
        preferred_start: Option<usize>,
    ) -> Result<Self, ScenarioError> {
        Self::build(name.into(), powers_kw, shiftable, preferred_start, "appliance")
    }

    fn build(
        name: String,
        powers_kw: &[f64],
        shiftable: bool,
        preferred_start: Option<usize>,
        field: &str,
    ) -> Result<Self, ScenarioError> {
        if name.trim().is_empty() {
            return Err(invalid(format!("{field}.name"), "appliance name is empty"));
        }
        if powers_kw.is_empty() || powers_kw.len() > HOURS {
            return Err(invalid(
                format!("{field}.powers_kw"),
                format!("duration must be between 1 and {HOURS} hours, got {}", powers_kw.len()),
            ));
        }
        let quantum = CellQuantum::STANDARD;
        let hourly_cells = powers_kw
            .iter()
            .enumerate()
            .map(|(i, &kw)| {
                quantum.cells_for(kw).ok_or_else(|| ScenarioError::OffLattice {
                    field: format!("{field}.powers_kw[{i}]"),
                    value: kw,
                    kw_per_cell: quantum.kw_per_cell,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if !shiftable {
            let start = preferred_start.ok_or_else(|| {
                invalid(format!("{field}.preferred_start"), "non-shiftable appliance needs a preferred start hour")
            })?;
            if start >= HOURS {
                return Err(invalid(format!("{field}.preferred_start"), format!("hour {start} outside 0-23")));
            }
            if start + hourly_cells.len() > HOURS {
                return Err(invalid(
                    format!("{field}.preferred_start"),
                    format!("window {start}+{}h runs past midnight", hourly_cells.len()),
                ));
            }
        }
        Ok(Self { name, hourly_cells, shiftable, preferred_start: if shiftable { None } else { preferred_start } })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn hourly_cells(&self) -> &[u32] {
        &self.hourly_cells
    }

    pub fn hourly_powers_kw(&self) -> Vec<f64> {
        self.hourly_cells.iter().map(|&c| CellQuantum::STANDARD.kw(c)).collect()
    }

    pub fn duration(&self) -> usize {
        self.hourly_cells.len()
    }

    pub fn shiftable(&self) -> bool {
        self.shiftable
    }

    /// Fixed start hour of a non-shiftable appliance; `None` for shiftable ones.
    pub fn preferred_start(&self) -> Option<usize> {
        self.preferred_start
    }

    pub fn energy_cells(&self) -> u32 {
        self.hourly_cells.iter().sum()
    }

    fn renamed(&self, name: String) -> Self {
        Self { name, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsumerScenario {
    consumer_id: String,
    appliances: Vec<AppliancePowerProfile>,
}

/// Non-shiftable load summed per hour plus one block per shiftable appliance.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSet {
    pub base_profile: Profile,
    pub blocks: Vec<LoadBlock>,
}

impl BlockSet {
    pub fn total_cells(&self) -> u32 {
        self.base_profile.iter().sum::<u32>() + self.blocks.iter().map(LoadBlock::total_cells).sum::<u32>()
    }
}

impl ConsumerScenario {
    pub fn new(consumer_id: impl Into<String>, appliances: Vec<AppliancePowerProfile>) -> Result<Self, ScenarioError> {
        Self::build(consumer_id.into(), appliances, "consumer")
    }

    fn build(consumer_id: String, appliances: Vec<AppliancePowerProfile>, field: &str) -> Result<Self, ScenarioError> {
        if consumer_id.trim().is_empty() {
            return Err(invalid(format!("{field}.id"), "consumer id is empty"));
        }
        if appliances.is_empty() {
            return Err(invalid(format!("{field}.appliances"), "at least one appliance is required"));
        }
        let mut seen = HashSet::new();
        for (i, a) in appliances.iter().enumerate() {
            if !seen.insert(a.name()) {
                return Err(invalid(
                    format!("{field}.appliances[{i}].name"),
                    format!("duplicate appliance name {:?}", a.name()),
                ));
            }
        }
        Ok(Self { consumer_id, appliances })
    }

    pub fn consumer_id(&self) -> &str {
        &self.consumer_id
    }

    pub fn appliances(&self) -> &[AppliancePowerProfile] {
        &self.appliances
    }

    pub fn shiftable(&self) -> impl Iterator<Item = &AppliancePowerProfile> {
        self.appliances.iter().filter(|a| a.shiftable())
    }

    /// Daily energy in cell-hours (0.5 kWh each).
    pub fn total_energy_cells(&self) -> u32 {
        self.appliances.iter().map(AppliancePowerProfile::energy_cells).sum()
    }

    /// Splits the scenario into the fixed base profile and shiftable blocks,
    /// blocks in file order and initially parked at hour 0.
    pub fn to_blocks(&self) -> BlockSet {
        let mut base_profile = [0u32; HOURS];
        let mut blocks = Vec::new();
        for a in &self.appliances {
            match a.preferred_start() {
                Some(start) if !a.shiftable() => {
                    for (i, &c) in a.hourly_cells().iter().enumerate() {
                        base_profile[start + i] += c;
                    }
                }
                _ => blocks.push(LoadBlock::new(a.name(), a.hourly_cells().to_vec())),
            }
        }
        BlockSet { base_profile, blocks }
    }
}

/// Concatenates the appliances of several consumers into one scenario.
///
/// Appliance names are prefixed `"<consumer_id>/"`; a single consumer is
/// returned unchanged.
pub fn aggregate(scenarios: &[ConsumerScenario]) -> Result<ConsumerScenario, ScenarioError> {
    match scenarios {
        [] => Err(ScenarioError::EmptyAggregation),
        [single] => Ok(single.clone()),
        many => {
            let appliances = many
                .iter()
                .flat_map(|s| s.appliances.iter().map(move |a| a.renamed(format!("{}/{}", s.consumer_id, a.name))))
                .collect();
            ConsumerScenario::build(AGGREGATE_ID.to_string(), appliances, "aggregate")
        }
    }
}

/// Consumer id given to aggregated scenarios.
pub const AGGREGATE_ID: &str = "aggregate";

/// A time-of-use band: `[start, end)` hours at an integer price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TariffBand {
    pub start: usize,
    pub end: usize,
    pub cents_per_kwh: u32,
}

/// Piecewise-constant price schedule partitioning the day.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tariff {
    bands: Vec<TariffBand>,
    hourly: [u32; HOURS],
}

impl Tariff {
    pub fn new(bands: Vec<TariffBand>) -> Result<Self, ScenarioError> {
        if bands.is_empty() {
            return Err(ScenarioError::Tariff { field: String::new(), reason: "no price bands".into() });
        }
        let mut hourly = [0u32; HOURS];
        let mut expected_start = 0;
        for (i, band) in bands.iter().enumerate() {
            let field = format!("[{i}]");
            if band.start != expected_start {
                let reason = if band.start > expected_start {
                    format!("gap: hours {expected_start}-{} not covered", band.start)
                } else {
                    format!("overlap: band starts at {} but hours before {expected_start} are already priced", band.start)
                };
                return Err(ScenarioError::Tariff { field: format!("{field}.start"), reason });
            }
            if band.end <= band.start || band.end > HOURS {
                return Err(ScenarioError::Tariff {
                    field: format!("{field}.end"),
                    reason: format!("band {}-{} is empty or past hour {HOURS}", band.start, band.end),
                });
            }
            if band.cents_per_kwh == 0 {
                return Err(ScenarioError::Tariff {
                    field: format!("{field}.cents_per_kwh"),
                    reason: "price must be positive".into(),
                });
            }
            hourly[band.start..band.end].fill(band.cents_per_kwh);
            expected_start = band.end;
        }
        if expected_start != HOURS {
            return Err(ScenarioError::Tariff {
                field: String::new(),
                reason: format!("gap: hours {expected_start}-{HOURS} not covered"),
            });
        }
        Ok(Self { bands, hourly })
    }

    /// Off-peak 0-6 at 6, mid-peak 6-15 at 9, peak 15-22 at 15, off-peak 22-24 at 6 (cents/kWh).
    pub fn standard_tou() -> Self {
        let band = |start, end, cents_per_kwh| TariffBand { start, end, cents_per_kwh };
        Self::new(vec![band(0, 6, 6), band(6, 15, 9), band(15, 22, 15), band(22, 24, 6)])
            .expect("built-in tariff is a valid partition")
    }

    pub fn bands(&self) -> &[TariffBand] {
        &self.bands
    }

    /// Price per hour, cents/kWh.
    pub fn hourly_prices(&self) -> &[u32; HOURS] {
        &self.hourly
    }
}

/// A parsed scenario document: one tariff and any number of consumers.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub tariff: Tariff,
    pub consumers: Vec<ConsumerScenario>,
}

impl ScenarioFile {
    pub fn consumer(&self, id: &str) -> Option<&ConsumerScenario> {
        self.consumers.iter().find(|c| c.consumer_id() == id)
    }
}

/// Start hours of shiftable appliances for the "before" (unscheduled) day,
/// keyed by consumer id, then appliance name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementFile {
    pub consumers: BTreeMap<String, BTreeMap<String, usize>>,
}

impl PlacementFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Placement for a scenario; aggregated scenarios look up each
    /// `"<id>/<name>"` appliance under its own consumer.
    pub fn for_scenario(&self, scenario: &ConsumerScenario) -> Result<BTreeMap<String, usize>, ScenarioError> {
        let mut out = BTreeMap::new();
        for a in scenario.shiftable() {
            let (cid, name) = match self.consumers.get(scenario.consumer_id()) {
                Some(_) => (scenario.consumer_id(), a.name()),
                None => a.name().split_once('/').unwrap_or((scenario.consumer_id(), a.name())),
            };
            let start = self.consumers.get(cid).and_then(|m| m.get(name)).copied().ok_or_else(|| {
                invalid(format!("consumers.{cid}"), format!("no default start for appliance {name:?}"))
            })?;
            if start + a.duration() > HOURS {
                return Err(invalid(format!("consumers.{cid}.{name}"), format!("start {start} runs past midnight")));
            }
            out.insert(a.name().to_string(), start);
        }
        Ok(out)
    }
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    tariff: Vec<TariffBand>,
    #[serde(default)]
    consumers: Vec<RawConsumer>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawConsumer {
    id: String,
    appliances: Vec<RawAppliance>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawAppliance {
    name: String,
    powers_kw: Vec<f64>,
    #[serde(default)]
    duration_h: Option<usize>,
    shiftable: bool,
    #[serde(default)]
    preferred_start: Option<usize>,
}

/// Reads and validates a scenario document.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioFile, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    parse_scenario(&text)
}

/// Parses a scenario document from JSON text.
///
/// A single rated power with `duration_h > 1` is held constant across the
/// window; otherwise `duration_h`, when given, must equal the number of
/// hourly powers.
pub fn parse_scenario(text: &str) -> Result<ScenarioFile, ScenarioError> {
    let raw: RawFile = serde_json::from_str(text)?;
    let tariff = Tariff::new(raw.tariff)?;
    let mut consumers = Vec::with_capacity(raw.consumers.len());
    let mut ids = HashSet::new();
    for (ci, rc) in raw.consumers.into_iter().enumerate() {
        let cfield = format!("consumers[{ci}]");
        if !ids.insert(rc.id.clone()) {
            return Err(invalid(format!("{cfield}.id"), format!("duplicate consumer id {:?}", rc.id)));
        }
        let mut appliances = Vec::with_capacity(rc.appliances.len());
        for (ai, ra) in rc.appliances.into_iter().enumerate() {
            let afield = format!("{cfield}.appliances[{ai}]");
            let powers = match (ra.duration_h, ra.powers_kw.len()) {
                (Some(d), 1) if d > 1 => vec![ra.powers_kw[0]; d],
                (Some(d), n) if d != n => {
                    return Err(ScenarioError::DurationMismatch {
                        field: format!("{afield}.duration_h"),
                        declared: d,
                        actual: n,
                    })
                }
                _ => ra.powers_kw,
            };
            appliances.push(AppliancePowerProfile::build(ra.name, &powers, ra.shiftable, ra.preferred_start, &afield)?);
        }
        consumers.push(ConsumerScenario::build(rc.id, appliances, &cfield)?);
    }
    Ok(ScenarioFile { tariff, consumers })
}

impl fmt::Display for TariffBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}h @ {}c/kWh", self.start, self.end, self.cents_per_kwh)
    }
}
