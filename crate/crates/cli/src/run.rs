//! Run directories: manifest, checkpoint, log and the scenario they refer to.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use loadshift::agent::AgentConfig;
use loadshift::env::EnvConfig;
use loadshift::rewards::RewardConfig;
use loadshift::scenario::{aggregate, load_scenario, BlockSet, ConsumerScenario, PlacementFile, ScenarioFile, AGGREGATE_ID};
use loadshift::Tariff;
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const TRAINING_LOG: &str = "training_log.csv";
pub const SCHEDULE: &str = "schedule.csv";
pub const PROFILE: &str = "profile.csv";
pub const EVALUATION: &str = "evaluation.json";

/// Which consumers of a scenario file a command acts on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selection {
    One(String),
    /// Every consumer, one run each.
    All,
    /// All consumers merged into one scenario.
    Aggregate,
}

impl Selection {
    pub fn parse(s: &str) -> Self {
        match s {
            "all" => Selection::All,
            AGGREGATE_ID => Selection::Aggregate,
            id => Selection::One(id.to_string()),
        }
    }

    pub fn resolve(&self, file: &ScenarioFile) -> Result<Vec<ConsumerScenario>> {
        if file.consumers.is_empty() {
            bail!("scenario file has no consumers");
        }
        Ok(match self {
            Selection::One(id) => vec![lookup(file, id)?],
            Selection::All => file.consumers.clone(),
            Selection::Aggregate => vec![aggregate(&file.consumers)?],
        })
    }
}

/// A consumer by id; the aggregate id merges every consumer in the file.
pub fn lookup(file: &ScenarioFile, id: &str) -> Result<ConsumerScenario> {
    if let Some(c) = file.consumer(id) {
        return Ok(c.clone());
    }
    if id == AGGREGATE_ID {
        return Ok(aggregate(&file.consumers)?);
    }
    let known: Vec<&str> = file.consumers.iter().map(|c| c.consumer_id()).collect();
    bail!("consumer {id:?} not in scenario (known: {})", known.join(", "))
}

/// Everything needed to rebuild and re-evaluate a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub scenario_path: PathBuf,
    pub consumer: String,
    pub placement_path: Option<PathBuf>,
    pub precision: String,
    pub reward: RewardConfig,
    pub agent: AgentConfig,
    pub env: EnvConfig,
    pub checkpoint_every: usize,
    pub episodes_completed: u64,
    pub steps_done: u64,
}

impl Manifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn context(&self, placement_override: Option<&Path>) -> Result<RunContext> {
        let placement = placement_override.map(Path::to_path_buf).or_else(|| self.placement_path.clone());
        RunContext::new(&self.scenario_path, &self.consumer, placement.as_deref())
    }
}

/// A resolved consumer scenario with its tariff and "before" placement.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub scenario: ConsumerScenario,
    pub blocks: BlockSet,
    pub tariff: Tariff,
    /// Start hours of the unscheduled day, when a placement file was given.
    pub before: Option<BTreeMap<String, usize>>,
}

impl RunContext {
    pub fn new(scenario_path: &Path, consumer: &str, placement: Option<&Path>) -> Result<Self> {
        let file = load_scenario(scenario_path)?;
        let scenario = lookup(&file, consumer)?;
        Self::from_scenario(scenario, file.tariff, placement)
    }

    pub fn from_scenario(scenario: ConsumerScenario, tariff: Tariff, placement: Option<&Path>) -> Result<Self> {
        let placements = match placement {
            Some(p) => PlacementFile::load(p)?,
            None => PlacementFile::default(),
        };
        let before = match placement {
            _ if scenario.shiftable().next().is_none() => Some(BTreeMap::new()),
            Some(_) => Some(placements.for_scenario(&scenario)?),
            None => None,
        };
        let blocks = scenario.to_blocks();
        Ok(Self { scenario, blocks, tariff, before })
    }

    pub fn before(&self) -> Result<&BTreeMap<String, usize>> {
        match &self.before {
            Some(b) => Ok(b),
            None => bail!(
                "consumer {:?} has shiftable loads but no default placement file was given (use --placement)",
                self.scenario.consumer_id()
            ),
        }
    }
}

pub fn absolute(path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).with_context(|| format!("resolving {}", path.display()))
}

/// Run directories under `root`: `root` itself if it holds a manifest,
/// otherwise its immediate subdirectories that do, sorted by name.
pub fn find_runs(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join(MANIFEST).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut runs = Vec::new();
    for entry in fs::read_dir(root).with_context(|| format!("listing {}", root.display()))? {
        let path = entry?.path();
        if path.join(MANIFEST).is_file() {
            runs.push(path);
        }
    }
    runs.sort();
    if runs.is_empty() {
        bail!("no training runs under {}", root.display());
    }
    Ok(runs)
}
