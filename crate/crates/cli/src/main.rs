use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use ccopt::avg_opt::{
    build_problem1, build_problem2, build_problem3, solve_problem1, solve_problem2,
    solve_problem3, OptResult,
};
use ccopt::combinatorics::{check_enumeration, demand_count};
use ccopt::scheme::{average_load_exact, delivery};
use ccopt::subpack::{multi_start, SubpackConfig, DEFAULT_DELTA, DEFAULT_STARTS};
use ccopt::{DemandStats, Instance, Popularity};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

mod sweep;
mod verify;

#[derive(Parser)]
#[command(name = "ccopt", version, about = "Cache placement optimizer for coded multicast delivery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize the expected delivery load without a subpacketization budget.
    Optimize {
        #[command(flatten)]
        instance: InstanceArgs,
        #[arg(long, value_enum, default_value_t = Level::P2)]
        level: Level,
        /// Write the result JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the LP in text form.
        #[arg(long)]
        dump_lp: Option<PathBuf>,
    },
    /// Minimize the expected load with at most F_hat subfiles per file.
    Subpack {
        #[command(flatten)]
        instance: InstanceArgs,
        #[command(flatten)]
        subpack: SubpackArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-check the optimizers, load formulas and decoding on an instance.
    Verify {
        #[command(flatten)]
        instance: InstanceArgs,
    },
    /// Sweep one parameter and write a CSV of loads per scheme.
    Sweep(sweep::SweepArgs),
    /// Print the delivery plan of an optimized placement for one demand.
    Plan {
        #[command(flatten)]
        instance: InstanceArgs,
        #[arg(long, value_enum, default_value_t = Level::P2)]
        level: Level,
        /// Requested files, 1-based, one per user (e.g. 1,1,2).
        #[arg(long, value_delimiter = ',', required = true)]
        demand: Vec<usize>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Level {
    /// Full per-subset placement.
    P1,
    /// Symmetric placement ordered by popularity.
    P2,
    /// Placement shared by all files (uniform popularity only).
    P3,
}

#[derive(Args, Clone, Debug)]
pub struct InstanceArgs {
    /// Instance JSON file; overrides the other instance flags.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// Number of users.
    #[arg(long = "K", default_value_t = 3)]
    pub users: usize,
    /// Number of files.
    #[arg(long = "N", default_value_t = 4)]
    pub files: usize,
    /// Cache size in files [default: 1, or a grid for verify].
    #[arg(long = "M")]
    pub memory: Option<f64>,
    /// Zipf exponent of the file popularity.
    #[arg(long, default_value_t = 0.0, conflicts_with = "popularity_file")]
    pub gamma: f64,
    /// JSON array of file probabilities, most popular first.
    #[arg(long)]
    pub popularity_file: Option<PathBuf>,
}

impl InstanceArgs {
    pub fn load(&self) -> Result<Instance> {
        self.load_with(None)
    }

    /// Loads the instance, with `memory` overriding both `--M` and the file.
    pub fn load_with(&self, memory: Option<f64>) -> Result<Instance> {
        if let Some(path) = &self.instance {
            let text = read(path)?;
            let inst = Instance::from_json(&text)
                .with_context(|| format!("parsing instance {}", path.display()))?;
            return match memory.or(self.memory) {
                Some(m) => Ok(inst.with_memory(m)?),
                None => Ok(inst),
            };
        }
        let pop = match &self.popularity_file {
            Some(path) => {
                let probs: Vec<f64> = serde_json::from_str(&read(path)?)
                    .with_context(|| format!("parsing popularity {}", path.display()))?;
                Popularity::new(probs)?
            }
            None => ccopt::zipf(self.files, self.gamma)?,
        };
        let m = memory.or(self.memory).unwrap_or(1.0);
        Ok(Instance::new(self.users, self.files, m, pop)?)
    }
}

#[derive(Args, Clone, Debug)]
pub struct SubpackArgs {
    /// Largest number of nonzero subfiles per file.
    #[arg(long = "f-hat")]
    pub f_hat: Option<usize>,
    /// Stop when an iteration lowers the load by at most this much.
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    /// Number of random starting points.
    #[arg(long, default_value_t = DEFAULT_STARTS)]
    pub starts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SubpackArgs {
    pub fn config(&self, f_hat: usize) -> SubpackConfig {
        SubpackConfig {
            f_hat,
            delta: self.delta,
            starts: self.starts,
            seed: self.seed,
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

pub fn solve_level(inst: &Instance, stats: Option<&DemandStats>, level: Level) -> Result<OptResult> {
    Ok(match level {
        Level::P1 => solve_problem1(inst)?,
        Level::P2 => match stats {
            Some(s) => solve_problem2(inst, s)?,
            None => solve_problem2(inst, &DemandStats::compute(&inst.popularity, inst.users)?)?,
        },
        Level::P3 => solve_problem3(inst)?,
    })
}

/// Exact expected load of the result's placement when enumeration is allowed.
fn exact_load(inst: &Instance, result: &OptResult) -> Option<f64> {
    check_enumeration(demand_count(inst.files, inst.users)).ok()?;
    average_load_exact(inst, &result.param.to_partition(inst)).ok()
}

fn cmd_optimize(args: &InstanceArgs, level: Level, out: Option<&Path>, dump: Option<&Path>) -> Result<()> {
    let inst = args.load()?;
    if let Some(path) = dump {
        let lp = match level {
            Level::P1 => build_problem1(&inst)?.lp,
            Level::P2 => build_problem2(&inst, &DemandStats::compute(&inst.popularity, inst.users)?),
            Level::P3 => build_problem3(&inst)?,
        };
        fs::write(path, lp.to_string()).with_context(|| format!("writing {}", path.display()))?;
    }
    let result = solve_level(&inst, None, level)?;
    let violations = result.param.to_partition(&inst).validate(&inst);
    let record = json!({
        "M": inst.memory,
        "scheme": format!("{level:?}").to_lowercase(),
        "load": result.objective,
        "level": result.level,
        "iterations": result.iterations,
        "max_residual": result.max_residual,
        "duality_gap": result.duality_gap,
        "exact_load": exact_load(&inst, &result),
        "violations": violations,
        "instance": inst,
        "param": result.param,
    });
    emit(&serde_json::to_string_pretty(&record)?, out)
}

fn cmd_subpack(args: &InstanceArgs, sp: &SubpackArgs, out: Option<&Path>) -> Result<()> {
    let inst = args.load()?;
    let Some(f_hat) = sp.f_hat else {
        bail!("--f-hat is required");
    };
    let cfg = sp.config(f_hat);
    let stats = DemandStats::compute(&inst.popularity, inst.users)?;
    let result = multi_start(&inst, &stats, &cfg)?;
    let record = json!({
        "instance": inst,
        "config": cfg,
        "load": result.result.objective,
        "result": result,
    });
    emit(&serde_json::to_string_pretty(&record)?, out)
}

fn cmd_plan(args: &InstanceArgs, level: Level, demand: &[usize]) -> Result<()> {
    let inst = args.load()?;
    if let Some(&bad) = demand.iter().find(|&&d| d == 0 || d > inst.files) {
        bail!("requested file {bad} outside 1..={}", inst.files);
    }
    let d: Vec<usize> = demand.iter().map(|f| f - 1).collect();
    let result = solve_level(&inst, None, level)?;
    let plan = delivery(&inst, &result.param.to_partition(&inst), &d)?;
    let record = json!({
        "demand": demand,
        "load": plan.load(),
        "plan": plan,
    });
    emit(&serde_json::to_string_pretty(&record)?, None)
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Optimize {
            instance,
            level,
            out,
            dump_lp,
        } => cmd_optimize(instance, *level, out.as_deref(), dump_lp.as_deref())?,
        Command::Subpack {
            instance,
            subpack,
            out,
        } => cmd_subpack(instance, subpack, out.as_deref())?,
        Command::Verify { instance } => return verify::run(instance),
        Command::Sweep(args) => sweep::run(args)?,
        Command::Plan {
            instance,
            level,
            demand,
        } => cmd_plan(instance, *level, demand)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
