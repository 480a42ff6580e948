use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use ccopt::avg_opt::{baseline_mn_load, baseline_yu_placement};
use ccopt::subpack::{multi_start, partition_l0};
use ccopt::{DemandStats, Error, Instance};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::{solve_level, InstanceArgs, Level, SubpackArgs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    M,
    FHat,
    Gamma,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scheme {
    P1,
    P2,
    P3,
    Yu,
    Mn,
    Dc,
}

impl Scheme {
    fn name(self) -> &'static str {
        match self {
            Scheme::P1 => "p1",
            Scheme::P2 => "p2",
            Scheme::P3 => "p3",
            Scheme::Yu => "yu",
            Scheme::Mn => "mn",
            Scheme::Dc => "dc",
        }
    }
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[command(flatten)]
    pub subpack: SubpackArgs,
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Grid values, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "p2,yu,mn")]
    pub schemes: Vec<Scheme>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write 0 in the wall_ms column so repeated runs produce identical files.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Serialize)]
struct Row {
    axis_value: f64,
    scheme: &'static str,
    avg_load: f64,
    subpack_max: usize,
    iterations: usize,
    wall_ms: u128,
}

struct Point {
    inst: Instance,
    f_hat: Option<usize>,
}

fn grid_point(args: &SweepArgs, base: &Instance, v: f64) -> Result<Point> {
    let f_hat = args.subpack.f_hat;
    Ok(match args.axis {
        Axis::M => Point {
            inst: base.with_memory(v)?,
            f_hat,
        },
        Axis::Gamma => Point {
            inst: Instance::zipf(base.users, base.files, base.memory, v)?,
            f_hat,
        },
        Axis::FHat => {
            if v < 1.0 || v.fract() != 0.0 {
                bail!("F_hat grid value {v} is not a positive integer");
            }
            Point {
                inst: base.clone(),
                f_hat: Some(v as usize),
            }
        }
    })
}

/// Evaluates one scheme at one grid point. `None` when the scheme does not
/// apply there (the uniform LP under nonuniform popularity).
fn evaluate(args: &SweepArgs, point: &Point, scheme: Scheme) -> Result<Option<(f64, usize, usize)>> {
    let inst = &point.inst;
    let max_l0 = |x| partition_l0(&x).into_iter().max().unwrap_or(0);
    Ok(Some(match scheme {
        Scheme::P1 | Scheme::P2 | Scheme::P3 => {
            let level = match scheme {
                Scheme::P1 => Level::P1,
                Scheme::P2 => Level::P2,
                _ => Level::P3,
            };
            let r = match solve_level(inst, None, level) {
                Ok(r) => r,
                Err(e) if matches!(e.downcast_ref::<Error>(), Some(Error::NonUniformPopularity)) => {
                    return Ok(None)
                }
                Err(e) => return Err(e),
            };
            (r.objective, max_l0(r.param.to_partition(inst)), r.iterations)
        }
        Scheme::Yu => {
            let (z, load) = baseline_yu_placement(inst)?;
            (load, max_l0(z.expand(inst.files).expand()), 0)
        }
        Scheme::Mn => {
            let (z, _) = baseline_yu_placement(inst)?;
            (baseline_mn_load(inst)?, max_l0(z.expand(inst.files).expand()), 0)
        }
        Scheme::Dc => {
            let Some(f_hat) = point.f_hat else {
                bail!("scheme dc needs --f-hat unless the axis is f-hat");
            };
            let stats = DemandStats::compute(&inst.popularity, inst.users)?;
            let r = multi_start(inst, &stats, &args.subpack.config(f_hat))?;
            let worst = r.l0.iter().copied().max().unwrap_or(0);
            (r.result.objective, worst, r.result.iterations)
        }
    }))
}

pub fn run(args: &SweepArgs) -> Result<()> {
    let base = args.instance.load()?;
    if args.schemes.is_empty() {
        bail!("no schemes selected");
    }
    let points: Vec<(f64, Point)> = args
        .values
        .iter()
        .map(|&v| Ok((v, grid_point(args, &base, v)?)))
        .collect::<Result<_>>()?;
    let jobs: Vec<(f64, &Point, Scheme)> = points
        .iter()
        .flat_map(|(v, p)| args.schemes.iter().map(move |&s| (*v, p, s)))
        .collect();

    let mut rows: Vec<Row> = jobs
        .par_iter()
        .map(|&(v, point, scheme)| {
            let start = Instant::now();
            let out = evaluate(args, point, scheme)
                .with_context(|| format!("{} at {v}", scheme.name()))?;
            let wall_ms = if args.no_timing {
                0
            } else {
                start.elapsed().as_millis()
            };
            Ok(out.map(|(avg_load, subpack_max, iterations)| Row {
                axis_value: v,
                scheme: scheme.name(),
                avg_load,
                subpack_max,
                iterations,
                wall_ms,
            }))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    rows.sort_by(|a, b| {
        a.axis_value
            .total_cmp(&b.axis_value)
            .then(a.scheme.cmp(b.scheme))
    });

    let sink: Box<dyn std::io::Write> = match &args.out {
        Some(path) => Box::new(
            std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        ),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
