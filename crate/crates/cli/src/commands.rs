use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use loadshift::agent::{self, AgentConfig, DqnAgent, Evaluation, TrainingLog};
use loadshift::billing::{daily_cost, HalfCents};
use loadshift::env::EnvConfig;
use loadshift::nn::{NetConfig, NetDepth};
use loadshift::oracle::{self, OracleConfig, Schedule, SolveObjective, SolverQuality};
use loadshift::rewards::{Objective, RewardConfig, SpreadKind};
use loadshift::scenario::{load_scenario, Profile};
use loadshift::CheckpointF32;

use crate::output::{aligned_table, kw, monthly_usd, write_profile, write_rows, write_schedule};
use crate::run::{
    absolute, find_runs, Manifest, RunContext, Selection, CHECKPOINT, EVALUATION, PROFILE, SCHEDULE, TRAINING_LOG,
};

/// Training options shared by `train` and `ablate`.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub scenario: PathBuf,
    pub consumer: String,
    pub placement: Option<PathBuf>,
    pub objective: Objective,
    pub spread: SpreadKind,
    pub episodes: usize,
    pub seed: u64,
    pub buffer_size: usize,
    pub net: NetDepth,
    pub target_sync: Option<u64>,
    pub checkpoint_every: usize,
}

impl TrainOptions {
    fn agent_config(&self) -> AgentConfig {
        let defaults = AgentConfig::default();
        AgentConfig {
            episodes: self.episodes,
            seed: self.seed,
            buffer_capacity: self.buffer_size,
            target_sync_steps: self.target_sync.unwrap_or(defaults.target_sync_steps),
            net: NetConfig::for_depth(self.net),
            ..defaults
        }
    }

    fn reward_config(&self) -> RewardConfig {
        RewardConfig::default().with_objective(self.objective).with_spread(self.spread)
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub consumer: String,
    pub log: TrainingLog,
    pub evaluation: Evaluation,
}

fn place(ctx: &RunContext, assignments: &std::collections::BTreeMap<String, usize>) -> Result<Schedule> {
    Ok(Schedule::from_assignments(&ctx.blocks.base_profile, &ctx.blocks.blocks, assignments.clone(), &ctx.tariff)?)
}

fn before_profile(ctx: &RunContext) -> Result<Profile> {
    Ok(place(ctx, ctx.before()?)?.resulting_profile)
}

/// Trains one consumer into `run_dir`.
pub fn train_one(opts: &TrainOptions, ctx: &RunContext, run_dir: &Path) -> Result<RunSummary> {
    ctx.before()?;
    fs::create_dir_all(run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    let env = EnvConfig::default();
    let reward = opts.reward_config();
    let mut manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        scenario_path: absolute(&opts.scenario)?,
        consumer: ctx.scenario.consumer_id().to_string(),
        placement_path: opts.placement.as_deref().map(absolute).transpose()?,
        precision: "f32".into(),
        reward,
        agent: opts.agent_config(),
        env,
        checkpoint_every: opts.checkpoint_every,
        episodes_completed: 0,
        steps_done: 0,
    };
    manifest.save(run_dir)?;
    let mut agent = DqnAgent::<f32>::new(manifest.agent.clone(), &env)?;
    let checkpoint_path = run_dir.join(CHECKPOINT);
    let every = opts.checkpoint_every;
    let log = agent.train(&ctx.blocks, &reward, &ctx.tariff, &env, |a, record| {
        if every > 0 && record.episode % every == 0 {
            a.checkpoint().save(&checkpoint_path)?;
        }
        Ok(())
    })?;
    agent.checkpoint().save(&checkpoint_path)?;
    fs::write(run_dir.join(TRAINING_LOG), log.to_csv())?;
    manifest.episodes_completed = agent.episodes_done();
    manifest.steps_done = agent.steps_done();
    manifest.save(run_dir)?;
    let evaluation = agent.evaluate(&ctx.blocks, &ctx.tariff, &env)?;
    write_evaluation(run_dir, ctx, &evaluation)?;
    Ok(RunSummary { consumer: manifest.consumer, log, evaluation })
}

pub fn train(opts: &TrainOptions, out: &Path) -> Result<Vec<RunSummary>> {
    let file = load_scenario(&opts.scenario)?;
    let mut summaries = Vec::new();
    for scenario in Selection::parse(&opts.consumer).resolve(&file)? {
        let id = scenario.consumer_id().to_string();
        let ctx = RunContext::from_scenario(scenario, file.tariff.clone(), opts.placement.as_deref())?;
        let summary = train_one(opts, &ctx, &out.join(&id))?;
        println!(
            "consumer {}: {} episodes, greedy peak {:.1} kW, daily cost {:.1} cents{}",
            summary.consumer,
            summary.log.episodes.len(),
            summary.evaluation.peak_kw(),
            summary.evaluation.schedule.daily_cost_cents(),
            if summary.evaluation.completed { "" } else { " (overflowed)" }
        );
        summaries.push(summary);
    }
    Ok(summaries)
}

fn load_agent_eval(run_dir: &Path, ctx: &RunContext, manifest: &Manifest) -> Result<Evaluation> {
    let ckpt = CheckpointF32::load(run_dir.join(CHECKPOINT))
        .with_context(|| format!("loading checkpoint in {}", run_dir.display()))?;
    if ckpt.network.config() != &manifest.agent.net {
        bail!("checkpoint architecture does not match the manifest in {}", run_dir.display());
    }
    Ok(agent::evaluate(&ckpt.network, manifest.agent.downsample, &ctx.blocks, &ctx.tariff, &manifest.env)?)
}

fn write_evaluation(run_dir: &Path, ctx: &RunContext, evaluation: &Evaluation) -> Result<()> {
    write_schedule(&run_dir.join(SCHEDULE), &evaluation.schedule.assignments, None)?;
    write_profile(&run_dir.join(PROFILE), &before_profile(ctx)?, &evaluation.schedule.resulting_profile)?;
    let summary = serde_json::json!({
        "completed": evaluation.completed,
        "peak_kw": evaluation.peak_kw(),
        "daily_cost_cents": evaluation.schedule.daily_cost_cents(),
        "monthly_cost_usd": evaluation.bill.monthly_cost_dollars(),
        "steps": evaluation.steps,
    });
    fs::write(run_dir.join(EVALUATION), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}

pub fn evaluate(run_dir: &Path, placement: Option<&Path>) -> Result<Evaluation> {
    let manifest = Manifest::load(run_dir)?;
    let ctx = manifest.context(placement)?;
    let evaluation = load_agent_eval(run_dir, &ctx, &manifest)?;
    write_evaluation(run_dir, &ctx, &evaluation)?;
    println!(
        "consumer {}: peak {:.1} kW, daily cost {:.1} cents, monthly ${:.2}{}",
        manifest.consumer,
        evaluation.peak_kw(),
        evaluation.schedule.daily_cost_cents(),
        evaluation.bill.monthly_cost_dollars(),
        if evaluation.completed { "" } else { " (overflowed)" }
    );
    Ok(evaluation)
}

pub fn export_profiles(run_dir: &Path, placement: Option<&Path>, out: Option<&Path>) -> Result<PathBuf> {
    let manifest = Manifest::load(run_dir)?;
    let ctx = manifest.context(placement)?;
    let evaluation = load_agent_eval(run_dir, &ctx, &manifest)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join(PROFILE));
    write_profile(&path, &before_profile(&ctx)?, &evaluation.schedule.resulting_profile)?;
    Ok(path)
}

pub fn run_oracle(
    scenario: &Path,
    consumer: &str,
    objective: SolveObjective,
    placement: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let file = load_scenario(scenario)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let targets = Selection::parse(consumer).resolve(&file)?;
    let many = targets.len() > 1;
    for scenario in targets {
        let id = scenario.consumer_id().to_string();
        let ctx = RunContext::from_scenario(scenario, file.tariff.clone(), placement)?;
        let solution = oracle::solve(&ctx.blocks.base_profile, &ctx.blocks.blocks, objective, &ctx.tariff, &OracleConfig::default())?;
        let dir = if many { out.join(&id) } else { out.to_path_buf() };
        fs::create_dir_all(&dir)?;
        write_schedule(&dir.join(SCHEDULE), &solution.schedule.assignments, Some(solution.quality))?;
        if placement.is_some() || ctx.blocks.blocks.is_empty() {
            write_profile(&dir.join(PROFILE), &before_profile(&ctx)?, &solution.schedule.resulting_profile)?;
        }
        println!(
            "consumer {id}: {} peak {:.1} kW, daily cost {:.1} cents",
            solution.quality,
            solution.schedule.peak_kw(),
            solution.schedule.daily_cost_cents()
        );
    }
    Ok(())
}

/// One row of the comparison report.
struct ReportRow {
    consumer: String,
    objective: String,
    before: Profile,
    rl: Profile,
    oracle: Profile,
    before_cost: HalfCents,
    rl_cost: HalfCents,
    oracle_cost: HalfCents,
    oracle_quality: SolverQuality,
    completed: bool,
}

impl ReportRow {
    fn cells(&self) -> Vec<String> {
        let peak = |p: &Profile| kw(p.iter().copied().max().unwrap_or(0));
        let savings = HalfCents(self.before_cost.0 - self.rl_cost.0);
        let pct = if self.before_cost.0 == 0 { 0.0 } else { 100.0 * savings.0 as f64 / self.before_cost.0 as f64 };
        vec![
            self.consumer.clone(),
            self.objective.clone(),
            peak(&self.before),
            peak(&self.rl),
            peak(&self.oracle),
            monthly_usd(self.before_cost),
            monthly_usd(self.rl_cost),
            monthly_usd(self.oracle_cost),
            self.oracle_quality.to_string(),
            monthly_usd(savings),
            format!("{pct:.2}"),
            if self.completed { "yes".into() } else { "no".into() },
        ]
    }
}

pub const REPORT_HEADER: [&str; 12] = [
    "consumer",
    "objective",
    "before_peak_kw",
    "rl_peak_kw",
    "oracle_peak_kw",
    "before_usd",
    "rl_usd",
    "oracle_usd",
    "oracle_quality",
    "savings_usd",
    "savings_pct",
    "completed",
];

pub fn report(runs_root: &Path, placement: Option<&Path>, out: &Path) -> Result<String> {
    let mut rows = Vec::new();
    for run_dir in find_runs(runs_root)? {
        let manifest = Manifest::load(&run_dir)?;
        let ctx = manifest.context(placement)?;
        let evaluation = load_agent_eval(&run_dir, &ctx, &manifest)?;
        let before = place(&ctx, ctx.before()?)?;
        let solution = oracle::solve(
            &ctx.blocks.base_profile,
            &ctx.blocks.blocks,
            SolveObjective::PeakThenCost,
            &ctx.tariff,
            &OracleConfig::default(),
        )?;
        for (what, schedule) in [("before", &before), ("oracle", &solution.schedule)] {
            let v = oracle::verify(schedule, &ctx.blocks.base_profile, &ctx.blocks.blocks, &ctx.tariff);
            if !v.ok {
                bail!("{what} schedule for {} failed verification: {}", manifest.consumer, v.problems.join("; "));
            }
        }
        if evaluation.completed {
            let v = oracle::verify(&evaluation.schedule, &ctx.blocks.base_profile, &ctx.blocks.blocks, &ctx.tariff);
            if !v.ok {
                bail!("RL schedule for {} failed verification: {}", manifest.consumer, v.problems.join("; "));
            }
        }
        let rl_profile = evaluation.schedule.resulting_profile;
        if daily_cost(&rl_profile, &ctx.tariff) != evaluation.bill.daily {
            bail!("RL bill for {} does not match its profile", manifest.consumer);
        }
        rows.push(ReportRow {
            consumer: manifest.consumer.clone(),
            objective: objective_name(manifest.reward.objective).into(),
            before: before.resulting_profile,
            rl: rl_profile,
            oracle: solution.schedule.resulting_profile,
            before_cost: before.daily_cost,
            rl_cost: evaluation.bill.daily,
            oracle_cost: solution.schedule.daily_cost,
            oracle_quality: solution.quality,
            completed: evaluation.completed,
        });
    }
    let individual: Vec<&ReportRow> =
        rows.iter().filter(|r| r.consumer != loadshift::scenario::AGGREGATE_ID).collect();
    let mut cells: Vec<Vec<String>> = rows.iter().map(ReportRow::cells).collect();
    if individual.len() > 1 {
        let sum = |f: &dyn Fn(&ReportRow) -> Profile| {
            let mut p = [0; 24];
            for r in &individual {
                for (a, b) in p.iter_mut().zip(f(r)) {
                    *a += b;
                }
            }
            p
        };
        let objectives: std::collections::BTreeSet<&str> = individual.iter().map(|r| r.objective.as_str()).collect();
        let all = ReportRow {
            consumer: "All".into(),
            objective: objectives.into_iter().collect::<Vec<_>>().join("+"),
            before: sum(&|r| r.before),
            rl: sum(&|r| r.rl),
            oracle: sum(&|r| r.oracle),
            before_cost: individual.iter().map(|r| r.before_cost).sum(),
            rl_cost: individual.iter().map(|r| r.rl_cost).sum(),
            oracle_cost: individual.iter().map(|r| r.oracle_cost).sum(),
            oracle_quality: if individual.iter().all(|r| r.oracle_quality == SolverQuality::Exact) {
                SolverQuality::Exact
            } else {
                SolverQuality::Heuristic
            },
            completed: individual.iter().all(|r| r.completed),
        };
        cells.push(all.cells());
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_rows(&out.join("report.csv"), &REPORT_HEADER, &cells)?;
    let text = aligned_table(&REPORT_HEADER, &cells);
    fs::write(out.join("report.txt"), &text)?;
    Ok(text)
}

pub fn objective_name(o: Objective) -> &'static str {
    match o {
        Objective::Peak => "peak",
        Objective::PeakCost => "peak_cost",
    }
}

/// Which hyperparameter an ablation sweeps.
#[derive(Debug, Clone)]
pub enum Study {
    NetDepth,
    BufferSize(Vec<usize>),
}

pub fn ablate(opts: &TrainOptions, study: &Study, out: &Path) -> Result<String> {
    let file = load_scenario(&opts.scenario)?;
    let targets = Selection::parse(&opts.consumer).resolve(&file)?;
    let variants: Vec<(String, TrainOptions)> = match study {
        Study::NetDepth => [NetDepth::Shallow, NetDepth::Deep]
            .into_iter()
            .map(|d| (format!("{d:?}").to_lowercase(), TrainOptions { net: d, ..opts.clone() }))
            .collect(),
        Study::BufferSize(sizes) => {
            sizes.iter().map(|&n| (format!("buffer_{n}"), TrainOptions { buffer_size: n, ..opts.clone() })).collect()
        }
    };
    let header = ["consumer", "variant", "episodes", "peak_kw", "daily_cost_cents", "completed", "mean_reward_last_100"];
    let mut rows = Vec::new();
    for scenario in targets {
        let id = scenario.consumer_id().to_string();
        let ctx = RunContext::from_scenario(scenario, file.tariff.clone(), opts.placement.as_deref())?;
        for (name, variant) in &variants {
            let summary = train_one(variant, &ctx, &out.join(&id).join(name))?;
            let tail: Vec<f64> = summary.log.episodes.iter().rev().take(100).map(|r| r.total_reward).collect();
            let mean = if tail.is_empty() { 0.0 } else { tail.iter().sum::<f64>() / tail.len() as f64 };
            rows.push(vec![
                id.clone(),
                name.clone(),
                summary.log.episodes.len().to_string(),
                format!("{:.1}", summary.evaluation.peak_kw()),
                format!("{:.1}", summary.evaluation.schedule.daily_cost_cents()),
                summary.evaluation.completed.to_string(),
                format!("{mean:.4}"),
            ]);
        }
    }
    fs::create_dir_all(out)?;
    write_rows(&out.join("ablation.csv"), &header, &rows)?;
    Ok(aligned_table(&header, &rows))
}
