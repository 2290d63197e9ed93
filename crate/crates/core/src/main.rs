use std::error::Error as StdError;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use longnav::config::RunConfig;
use longnav::dataset::{generate_dataset, logs_to_jsonl, read_logs, read_map, write_map, Dataset};
use longnav::evaluation::{build_report, compare_strategies, registration_errors, ErrorSequence, Mode, Report, Source};
use longnav::strategy::{StrategyConfig, StrategyKind};

type AnyResult<T> = Result<T, Box<dyn StdError>>;

#[derive(Parser)]
#[command(name = "longnav", version, about = "Map management for long-term teach-and-repeat navigation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a world, teach it, and write the map snapshot and frame dataset.
    Generate(Common),
    /// Replay a dataset through strategies and write their logs.
    Replay {
        #[arg(long)]
        dataset: PathBuf,
        /// Map snapshot to start from instead of teaching from traversal 0.
        #[arg(long)]
        map: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Closed-loop simulation; writes logs and a report.
    Simulate(Common),
    /// Run every configured strategy on one source and write the report.
    Compare {
        /// Replay this dataset instead of simulating.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Rebuild the report from a log file.
    Report {
        #[arg(long)]
        logs: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON); defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sets both the world and the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: config `output_dir`, else `out`].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict to these strategies (repeatable).
    #[arg(long = "strategy")]
    strategies: Vec<StrategyKind>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    traversals: Option<u32>,
    #[arg(long = "interval-s")]
    interval_s: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Open,
    Closed,
}

impl Common {
    /// The configuration file with command-line overrides applied.
    fn load(&self) -> AnyResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seeds.world = s;
            cfg.seeds.run = s;
        }
        if !self.strategies.is_empty() {
            cfg.strategies = self
                .strategies
                .iter()
                .map(|&k| {
                    cfg.strategies
                        .iter()
                        .find(|s| s.kind == k)
                        .cloned()
                        .unwrap_or_else(|| StrategyConfig::new(k))
                })
                .collect();
        }
        if let Some(m) = self.mode {
            cfg.mode = match m {
                ModeArg::Open => Mode::OpenLoop,
                ModeArg::Closed => Mode::ClosedLoop,
            };
        }
        if let Some(n) = self.traversals {
            cfg.schedule.traversals = n;
        }
        if let Some(i) = self.interval_s {
            cfg.schedule.interval_s = i;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &RunConfig) -> AnyResult<PathBuf> {
        let dir = self
            .out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        Ok(dir)
    }
}

fn write(path: &Path, contents: &str) -> AnyResult<()> {
    fs::write(path, contents).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn print_report(report: &Report, dir: &Path) -> AnyResult<()> {
    report.write(dir)?;
    for s in &report.strategies {
        println!(
            "{:<12} mean {:>8.3} px  median {:>8.3} px  failures {:>5}  frames {}",
            s.name, s.mean_error_px, s.median_error_px, s.failures, s.frames
        );
    }
    println!("ranking: {}", report.ranking.join(" < "));
    println!("wrote {} and {}", dir.join("summary.json").display(), dir.join("cdf.csv").display());
    Ok(())
}

fn all_logs(logs: &[Vec<longnav::TraversalLog>]) -> String {
    logs.iter().map(|l| logs_to_jsonl(l)).collect()
}

fn run(cli: Cli) -> AnyResult<()> {
    match cli.command {
        Command::Generate(common) => {
            let cfg = common.load()?;
            let dir = common.out_dir(&cfg)?;
            let (dataset, map) = generate_dataset(&cfg.world_config(), &cfg.schedule, &cfg.offsets, cfg.seeds.run)?;
            dataset.write(&dir.join("dataset.jsonl"))?;
            write_map(&dir.join("map.json"), &map)?;
            println!("{} frames, sha256 {}", dataset.frames.len(), dataset.sha256());
        }
        Command::Replay { dataset, map, common } => {
            let cfg = common.load()?;
            let dir = common.out_dir(&cfg)?;
            let data = Dataset::read(&dataset)?;
            let map = map.as_deref().map(read_map).transpose()?;
            let opts = cfg.replay_options();
            let mut text = String::new();
            for s in &cfg.strategies {
                let logs = data.replay(s, &cfg.registration, map.clone(), &opts)?;
                let e = registration_errors(&s.label(), &logs, cfg.evaluation.penalty(opts.image_width));
                println!("{:<12} mean {:>8.3} px  failures {}", s.label(), e.mean(), e.failures());
                text.push_str(&logs_to_jsonl(&logs));
            }
            write(&dir.join("logs.jsonl"), &text)?;
        }
        Command::Simulate(common) => {
            let mut cfg = common.load()?;
            cfg.mode = Mode::ClosedLoop;
            let dir = common.out_dir(&cfg)?;
            let (report, logs) = compare_strategies(
                &cfg.simulation_source(),
                &cfg.strategies,
                &cfg.schedule,
                &cfg.registration,
                &cfg.evaluation,
            )?;
            write(&dir.join("logs.jsonl"), &all_logs(&logs))?;
            print_report(&report, &dir)?;
        }
        Command::Compare { dataset, common } => {
            let cfg = common.load()?;
            let dir = common.out_dir(&cfg)?;
            let source = match dataset {
                Some(path) => Source::Dataset {
                    path,
                    options: cfg.replay_options(),
                },
                None => cfg.simulation_source(),
            };
            let (report, logs) =
                compare_strategies(&source, &cfg.strategies, &cfg.schedule, &cfg.registration, &cfg.evaluation)?;
            write(&dir.join("logs.jsonl"), &all_logs(&logs))?;
            print_report(&report, &dir)?;
        }
        Command::Report { logs, common } => {
            let cfg = common.load()?;
            let dir = common.out_dir(&cfg)?;
            let penalty = cfg.evaluation.penalty(cfg.world.image_width);
            let seqs: Vec<ErrorSequence> = read_logs(&logs)?
                .iter()
                .map(|(name, l)| registration_errors(name, l, penalty))
                .collect();
            let report = build_report(&seqs, &cfg.evaluation, penalty, "report", None)?;
            print_report(&report, &dir)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // usage errors exit with status 2 here
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("LONGNAV_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("LONGNAV_THREADS ignored: {e}");
                }
            }
            _ => {
                eprintln!("error: LONGNAV_THREADS must be a positive integer, got {n:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
