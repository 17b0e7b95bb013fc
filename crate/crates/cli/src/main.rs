mod commands;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use loadshift::nn::NetDepth;
use loadshift::oracle::SolveObjective;
use loadshift::rewards::{Objective, SpreadKind};

use commands::{Study, TrainOptions};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Residential load shifting with a deep Q-network, an exact scheduling oracle and billing.
#[derive(Debug, Parser)]
#[command(name = "loadshift", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an agent for one consumer, every consumer ("all") or the merged "aggregate".
    Train(TrainArgs),
    /// Re-run the greedy policy of a finished run and rewrite its schedule and profile.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        placement: Option<PathBuf>,
    },
    /// Solve a consumer's schedule exactly (or heuristically for large instances).
    Oracle {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        consumer: String,
        #[arg(long, value_enum, default_value_t = OracleObjective::MinPeak)]
        objective: OracleObjective,
        #[arg(long)]
        placement: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare before, RL and oracle bills and peaks across runs.
    Report {
        /// A run directory or a directory of runs.
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        placement: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the hour-by-hour before/after load of a run as CSV.
    ExportProfiles {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        placement: Option<PathBuf>,
        /// Defaults to profile.csv inside the run.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train several variants and tabulate them.
    Ablate {
        #[arg(long, value_enum)]
        study: StudyKind,
        /// Buffer sizes for the buffer-size study.
        #[arg(long, value_delimiter = ',', default_values_t = [1000usize, 10000, 30000])]
        sizes: Vec<usize>,
        #[command(flatten)]
        train: TrainArgs,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    consumer: String,
    /// Start hours used as the "before" day.
    #[arg(long)]
    placement: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Peak)]
    objective: ObjectiveArg,
    #[arg(long, value_enum, default_value_t = SpreadArg::Var)]
    spread: SpreadArg,
    #[arg(long, default_value_t = 5000)]
    episodes: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 30_000)]
    buffer_size: usize,
    #[arg(long, value_enum, default_value_t = NetArg::Deep)]
    net: NetArg,
    /// Steps between target network syncs.
    #[arg(long)]
    target_sync: Option<u64>,
    /// Episodes between checkpoints; 0 writes only the final one.
    #[arg(long, default_value_t = 500)]
    checkpoint_every: usize,
    #[arg(long)]
    out: PathBuf,
}

impl TrainArgs {
    fn options(&self) -> TrainOptions {
        TrainOptions {
            scenario: self.scenario.clone(),
            consumer: self.consumer.clone(),
            placement: self.placement.clone(),
            objective: match self.objective {
                ObjectiveArg::Peak => Objective::Peak,
                ObjectiveArg::PeakCost => Objective::PeakCost,
            },
            spread: match self.spread {
                SpreadArg::Var => SpreadKind::Variance,
                SpreadArg::Std => SpreadKind::StdDev,
            },
            episodes: self.episodes,
            seed: self.seed,
            buffer_size: self.buffer_size,
            net: match self.net {
                NetArg::Shallow => NetDepth::Shallow,
                NetArg::Deep => NetDepth::Deep,
            },
            target_sync: self.target_sync,
            checkpoint_every: self.checkpoint_every,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Peak,
    PeakCost,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SpreadArg {
    Var,
    Std,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NetArg {
    Shallow,
    Deep,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OracleObjective {
    MinPeak,
    MinCost,
    PeakThenCost,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StudyKind {
    NetDepth,
    BufferSize,
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(args) => {
            commands::train(&args.options(), &args.out)?;
        }
        Command::Evaluate { run, placement } => {
            commands::evaluate(&run, placement.as_deref())?;
        }
        Command::Oracle { scenario, consumer, objective, placement, out } => {
            let objective = match objective {
                OracleObjective::MinPeak => SolveObjective::MinPeak,
                OracleObjective::MinCost => SolveObjective::MinCost,
                OracleObjective::PeakThenCost => SolveObjective::PeakThenCost,
            };
            commands::run_oracle(&scenario, &consumer, objective, placement.as_deref(), &out)?;
        }
        Command::Report { runs, placement, out } => {
            print!("{}", commands::report(&runs, placement.as_deref(), &out)?);
        }
        Command::ExportProfiles { run, placement, out } => {
            let path = commands::export_profiles(&run, placement.as_deref(), out.as_deref())?;
            println!("{}", path.display());
        }
        Command::Ablate { study, sizes, train } => {
            let study = match study {
                StudyKind::NetDepth => Study::NetDepth,
                StudyKind::BufferSize => Study::BufferSize(sizes),
            };
            print!("{}", commands::ablate(&train.options(), &study, &train.out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(ToString::to_string).collect();
            eprintln!("{}", serde_json::json!({ "error": chain[0], "causes": &chain[1..] }));
            ExitCode::FAILURE
        }
    }
}
