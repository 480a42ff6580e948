//! Average-load minimization with at most `F_hat` nonzero subfiles per file.
//!
//! For a file whose subfile sizes are nonnegative and sum to one, having at
//! most `F_hat` nonzero entries is the same as its `F_hat` largest entries
//! summing to at least one. That turns the count budget into a reverse-convex
//! constraint `||U_n y||_F >= 1`, which the DC iteration linearizes at the
//! current point and re-solves as an LP until the load stops improving.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::avg_opt::{
    build_problem1, build_problem2, problem1_var, problem2_var, solve_problem1_lp,
    solve_problem2_lp, OptParam, OptResult,
};
use crate::combinatorics::{binomial, choose, subsets_of_size, DemandStats};
use crate::error::{Error, Result};
use crate::lp::{solve, LinearProgram};
use crate::model::{Instance, PartitionParam, SymmetricParam, FEAS_TOL};
use crate::scheme::symmetric_load_coefficients;

/// Entries at or below this magnitude do not count as subfiles.
pub const L0_TOL: f64 = 1e-9;
/// Slack allowed on `||U_n y||_F >= 1` when judging a DC result.
pub const NORM_TOL: f64 = 1e-6;
/// Default stopping threshold on the per-iteration load decrease.
pub const DEFAULT_DELTA: f64 = 1e-4;
pub const DEFAULT_STARTS: usize = 100;
/// Safety cap on DC iterations per run.
pub const MAX_DC_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubpackConfig {
    /// Largest number of nonzero subfiles allowed per file.
    pub f_hat: usize,
    pub delta: f64,
    pub starts: usize,
    pub seed: u64,
}

impl SubpackConfig {
    pub fn new(f_hat: usize) -> Self {
        Self {
            f_hat,
            delta: DEFAULT_DELTA,
            starts: DEFAULT_STARTS,
            seed: 0,
        }
    }

    pub fn validate(&self, inst: &Instance) -> Result<()> {
        if self.f_hat == 0 || self.f_hat > inst.num_subsets() {
            return Err(Error::InvalidArgument(format!(
                "F_hat = {} outside 1..={}",
                self.f_hat,
                inst.num_subsets()
            )));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::InvalidArgument(format!("delta = {}", self.delta)));
        }
        if self.starts == 0 {
            return Err(Error::InvalidArgument("starts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Number of entries with magnitude above [`L0_TOL`].
pub fn l0(v: &[f64]) -> usize {
    v.iter().filter(|x| x.abs() > L0_TOL).count()
}

/// Sum of the `f_hat` largest magnitudes.
pub fn largest_f_norm(v: &[f64], f_hat: usize) -> Result<f64> {
    if f_hat > v.len() {
        return Err(Error::InvalidArgument(format!(
            "F_hat = {f_hat} exceeds vector length {}",
            v.len()
        )));
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    Ok(mags[..f_hat].iter().sum())
}

/// Subfile sizes of `file` in subset order: `y[n][s]` repeated `C(K, s)` times.
pub fn apply_un(y: &SymmetricParam, file: usize) -> Vec<f64> {
    let k = y.users;
    let mut out = Vec::with_capacity(1 << k);
    for s in 0..=k {
        let band = choose(k, s) as usize;
        out.extend(std::iter::repeat_n(y.y[file][s], band));
    }
    out
}

/// Subgradient of `y -> ||U_n y||_F` over all `N (K+1)` coordinates.
///
/// Types are visited by decreasing `y[n][s]` (ties by increasing `s`); each
/// takes its full band `C(K, s)` while that fits in the budget and the first
/// one that does not fit takes the remainder. The block sums to `F_hat`.
pub fn subgradient(y: &SymmetricParam, file: usize, f_hat: usize) -> Vec<f64> {
    let k = y.users;
    let mut g = vec![0.0; y.files() * (k + 1)];
    let row = &y.y[file];
    let mut types: Vec<usize> = (0..=k).collect();
    types.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    let mut used = 0usize;
    for s in types {
        let band = choose(k, s) as usize;
        let take = band.min(f_hat - used);
        g[file * (k + 1) + s] = take as f64;
        used += take;
        if used == f_hat {
            break;
        }
    }
    g
}

/// Symmetric LP plus, for every file, the budget constraint linearized at
/// `y_t`. Since the norm is positively homogeneous, its linearization at
/// `y_t` is `g_n(y_t) . y` exactly, so each row reads `g_n . y >= 1`.
pub fn build_linearized_lp(
    inst: &Instance,
    stats: &DemandStats,
    y_t: &SymmetricParam,
    cfg: &SubpackConfig,
) -> LinearProgram {
    let mut lp = build_problem2(inst, stats);
    for n in 0..inst.files {
        let g = subgradient(y_t, n, cfg.f_hat);
        let row = g
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, v)| (j, *v))
            .collect();
        lp.add_ge(row, 1.0);
    }
    lp
}

/// Random starting point meeting every constraint and the budget. A cached
/// type `t` is drawn among those whose band fits in `F_hat`. If the band
/// leaves room for one more subfile, each file keeps a random uncached part
/// next to type `t`; otherwise a random number of the most popular files
/// sit entirely in type `t` and the rest stay uncached.
pub fn random_feasible<R: Rng + ?Sized>(
    inst: &Instance,
    cfg: &SubpackConfig,
    rng: &mut R,
) -> SymmetricParam {
    let k = inst.users;
    let types: Vec<usize> = (1..=k)
        .filter(|&s| choose(k, s) <= cfg.f_hat as f64)
        .collect();
    let mut y = vec![vec![0.0; k + 1]; inst.files];
    let Some(&t) = types.choose(rng) else {
        for row in &mut y {
            row[0] = 1.0;
        }
        return SymmetricParam::new(k, y);
    };
    let band = choose(k, t);
    let c: Vec<f64> = if band + 1.0 <= cfg.f_hat as f64 {
        let mut c: Vec<f64> = (0..inst.files).map(|_| rng.gen::<f64>()).collect();
        c.sort_by(|a, b| b.total_cmp(a));
        let used: f64 = c.iter().sum::<f64>() * t as f64 / k as f64;
        if used > inst.memory {
            let scale = inst.memory / used;
            for v in &mut c {
                *v *= scale;
            }
        }
        c
    } else {
        let most = ((inst.memory * k as f64 / t as f64 + FEAS_TOL).floor() as usize).min(inst.files);
        let whole = rng.gen_range(0..=most);
        (0..inst.files).map(|n| if n < whole { 1.0 } else { 0.0 }).collect()
    };
    for (row, cn) in y.iter_mut().zip(&c) {
        row[t] = cn / band;
        row[0] = 1.0 - cn;
    }
    SymmetricParam::new(k, y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubpackResult {
    #[serde(flatten)]
    pub result: OptResult,
    /// Nonzero subfiles per file.
    pub l0: Vec<usize>,
    /// `||U_n y||_F - 1` per file; nonnegative when the budget holds.
    pub norm_margin: Vec<f64>,
    /// Budget met: every margin above `-NORM_TOL` and every count within `F_hat`.
    pub feasible: bool,
    /// Load after each DC step, starting from the initial point.
    pub history: Vec<f64>,
    /// DC runs (or LPs, for the oracles) that ended feasible.
    pub feasible_runs: usize,
    /// Index of the start that produced this result.
    pub run: usize,
}

fn assess(y: &SymmetricParam, f_hat: usize) -> (Vec<usize>, Vec<f64>, bool) {
    let mut counts = Vec::with_capacity(y.files());
    let mut margins = Vec::with_capacity(y.files());
    for n in 0..y.files() {
        let x = apply_un(y, n);
        counts.push(l0(&x));
        margins.push(largest_f_norm(&x, f_hat).expect("F_hat within subset count") - 1.0);
    }
    let ok = counts.iter().all(|&c| c <= f_hat) && margins.iter().all(|&m| m >= -NORM_TOL);
    (counts, margins, ok)
}

fn symmetric_objective(inst: &Instance, stats: &DemandStats, y: &SymmetricParam) -> f64 {
    symmetric_load_coefficients(inst, stats)
        .iter()
        .zip(&y.y)
        .map(|(c, r)| c.iter().zip(r).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

/// Runs the DC iteration from `y0` until the load drops by at most `delta`.
pub fn dc_solve(
    inst: &Instance,
    stats: &DemandStats,
    cfg: &SubpackConfig,
    y0: &SymmetricParam,
) -> Result<SubpackResult> {
    cfg.validate(inst)?;
    let mut y = y0.clone();
    let mut current = symmetric_objective(inst, stats, &y);
    let mut history = vec![current];
    let mut pivots = 0;
    let mut last = None;
    for _ in 0..MAX_DC_ITERATIONS {
        let lp = build_linearized_lp(inst, stats, &y, cfg);
        let step = solve_problem2_lp(inst, &lp)?;
        pivots += step.iterations;
        let OptParam::Symmetric(next) = &step.param else {
            unreachable!("symmetric LP yields a symmetric parameter")
        };
        let decrease = current - step.objective;
        y = next.clone();
        current = step.objective;
        history.push(current);
        last = Some(step);
        if decrease <= cfg.delta {
            break;
        }
    }
    let mut result = last.expect("at least one DC iteration");
    result.iterations = pivots;
    let (l0, norm_margin, feasible) = assess(&y, cfg.f_hat);
    Ok(SubpackResult {
        result,
        l0,
        norm_margin,
        feasible,
        history,
        feasible_runs: usize::from(feasible),
        run: 0,
    })
}

/// Best feasible DC result over `cfg.starts` random starts; start `i` is
/// seeded with `cfg.seed + i`.
pub fn multi_start(inst: &Instance, stats: &DemandStats, cfg: &SubpackConfig) -> Result<SubpackResult> {
    cfg.validate(inst)?;
    let runs: Vec<Option<SubpackResult>> = (0..cfg.starts)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
            let y0 = random_feasible(inst, cfg, &mut rng);
            match dc_solve(inst, stats, cfg, &y0) {
                Ok(mut r) if r.feasible => {
                    r.run = i;
                    Some(r)
                }
                _ => None,
            }
        })
        .collect();
    let feasible_runs = runs.iter().flatten().count();
    let best = runs
        .into_iter()
        .flatten()
        .min_by(|a, b| {
            a.result
                .objective
                .total_cmp(&b.result.objective)
                .then(a.run.cmp(&b.run))
        })
        .ok_or(Error::NoFeasibleRun { runs: cfg.starts })?;
    Ok(SubpackResult {
        feasible_runs,
        ..best
    })
}

/// Inclusion-maximal sets of subfile types whose bands fit in `f_hat`.
pub fn maximal_type_supports(users: usize, f_hat: usize) -> Vec<Vec<usize>> {
    let fits = |set: &[usize]| set.iter().map(|&s| choose(users, s)).sum::<f64>() <= f_hat as f64;
    let mut out = Vec::new();
    for size in 1..=users + 1 {
        for set in subsets_of_size(0..users + 1, size) {
            if !fits(&set) {
                continue;
            }
            let maximal = (0..=users)
                .filter(|s| !set.contains(s))
                .all(|s| {
                    let mut bigger = set.clone();
                    bigger.push(s);
                    !fits(&bigger)
                });
            if maximal {
                out.push(set);
            }
        }
    }
    out
}

/// Largest user and file counts accepted by [`support_oracle`].
pub const ORACLE_MAX_USERS: usize = 4;
pub const ORACLE_MAX_FILES: usize = 4;

fn for_each_assignment(choices: usize, slots: usize, mut f: impl FnMut(&[usize])) {
    let mut pick = vec![0usize; slots];
    loop {
        f(&pick);
        let Some(pos) = (0..slots).rev().find(|&i| pick[i] + 1 < choices) else {
            return;
        };
        pick[pos] += 1;
        for p in &mut pick[pos + 1..] {
            *p = 0;
        }
    }
}

/// Global optimum of the budgeted symmetric problem: solves the symmetric LP
/// with every per-file type support that fits the budget and keeps the best.
pub fn support_oracle(inst: &Instance, stats: &DemandStats, f_hat: usize) -> Result<SubpackResult> {
    SubpackConfig::new(f_hat).validate(inst)?;
    if inst.users > ORACLE_MAX_USERS || inst.files > ORACLE_MAX_FILES {
        return Err(Error::TooLarge {
            what: "support oracle",
            detail: format!(
                "K = {}, N = {} (limits {ORACLE_MAX_USERS}, {ORACLE_MAX_FILES})",
                inst.users, inst.files
            ),
        });
    }
    let k = inst.users;
    let supports = maximal_type_supports(k, f_hat);
    let base = build_problem2(inst, stats);
    let mut best: Option<OptResult> = None;
    let mut solved = 0usize;
    let mut failure = None;
    for_each_assignment(supports.len(), inst.files, |pick| {
        if failure.is_some() {
            return;
        }
        let mut lp = base.clone();
        for (n, &choice) in pick.iter().enumerate() {
            for s in (0..=k).filter(|s| !supports[choice].contains(s)) {
                lp.set_bounds(problem2_var(inst, n, s), 0.0, 0.0);
            }
        }
        match solve(&lp) {
            Ok(sol) if sol.is_optimal() => {
                solved += 1;
                if best.as_ref().is_none_or(|b| sol.objective < b.objective) {
                    match solve_problem2_lp(inst, &lp) {
                        Ok(r) => best = Some(r),
                        Err(e) => failure = Some(e),
                    }
                }
            }
            Ok(_) => {}
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let best = best.ok_or(Error::NoFeasibleRun { runs: 0 })?;
    let OptParam::Symmetric(y) = &best.param else {
        unreachable!("symmetric LP yields a symmetric parameter")
    };
    let (l0, norm_margin, feasible) = assess(y, f_hat);
    Ok(SubpackResult {
        history: vec![best.objective],
        result: best,
        l0,
        norm_margin,
        feasible,
        feasible_runs: solved,
        run: 0,
    })
}

/// Largest number of joint supports [`problem4_oracle`] will enumerate.
pub const PROBLEM4_MAX_SUPPORTS: u128 = 100_000;

/// Global optimum of the budgeted full-placement problem by enumerating,
/// per file, every set of `F_hat` user subsets allowed to be nonzero.
pub fn problem4_oracle(inst: &Instance, f_hat: usize) -> Result<OptResult> {
    SubpackConfig::new(f_hat).validate(inst)?;
    let per_file = binomial(inst.num_subsets() as u64, f_hat as u64);
    let joint = per_file.pow(inst.files as u32);
    let fits = joint <= PROBLEM4_MAX_SUPPORTS.into();
    if !fits {
        return Err(Error::TooLarge {
            what: "full-support oracle",
            detail: format!("{joint} joint supports"),
        });
    }
    let base = build_problem1(inst)?.lp;
    let supports = subsets_of_size(0..inst.num_subsets(), f_hat);
    let mut best: Option<OptResult> = None;
    let mut failure = None;
    for_each_assignment(supports.len(), inst.files, |pick| {
        if failure.is_some() {
            return;
        }
        let mut lp = base.clone();
        for (n, &choice) in pick.iter().enumerate() {
            for i in (0..inst.num_subsets()).filter(|i| !supports[choice].contains(i)) {
                lp.set_bounds(problem1_var(inst, n, i), 0.0, 0.0);
            }
        }
        match solve_problem1_lp(inst, &lp) {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.objective < b.objective) {
                    best = Some(r);
                }
            }
            Err(Error::LpNotOptimal(_)) => {}
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    best.ok_or(Error::NoFeasibleRun { runs: 0 })
}

/// Nonzero subfiles per file of a full placement.
pub fn partition_l0(x: &PartitionParam) -> Vec<usize> {
    x.x.iter().map(|row| l0(row)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UniformParam;

    #[test]
    fn l0_examples() {
        let y = UniformParam::mn_point(4, 2).unwrap().expand(1);
        assert_eq!(l0(&apply_un(&y, 0)), 6);
        assert_eq!(l0(&[0.0; 8]), 0);
        assert_eq!(l0(&[0.125; 8]), 8);
        assert_eq!(l0(&[1e-10, -1e-10, 2e-9]), 1);
    }

    #[test]
    fn largest_norm_examples() {
        assert!((largest_f_norm(&[0.5, 0.3, 0.2], 2).unwrap() - 0.8).abs() < 1e-15);
        assert!((largest_f_norm(&[0.5, 0.3, 0.2], 3).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(largest_f_norm(&[0.4, 0.4, 0.2], 1).unwrap(), 0.4);
        assert!(largest_f_norm(&[0.4], 2).is_err());
    }

    #[test]
    fn apply_un_examples() {
        let y = SymmetricParam::new(1, vec![vec![0.3, 0.7]]);
        assert_eq!(apply_un(&y, 0), vec![0.3, 0.7]);
        let y = SymmetricParam::new(2, vec![vec![0.1, 0.2, 0.5], vec![0.2, 0.3, 0.2]]);
        assert_eq!(apply_un(&y, 1), vec![0.2, 0.3, 0.3, 0.2]);
        assert_eq!(apply_un(&y, 1), y.expand().x[1]);
    }

    #[test]
    fn subgradient_examples() {
        let y = SymmetricParam::new(2, vec![vec![0.1, 0.4, 0.1]]);
        assert_eq!(subgradient(&y, 0, 2), vec![0.0, 2.0, 0.0]);
        assert_eq!(subgradient(&y, 0, 4), vec![1.0, 2.0, 1.0]);
        // ties broken toward the lower type
        let y = SymmetricParam::new(2, vec![vec![0.25, 0.25, 0.25]]);
        assert_eq!(subgradient(&y, 0, 3), vec![1.0, 2.0, 0.0]);
        assert_eq!(subgradient(&y, 0, 2), vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn maximal_supports_fit_budget() {
        let sup = maximal_type_supports(3, 4);
        assert!(sup.contains(&vec![0, 1]));
        assert!(sup.contains(&vec![0, 3]));
        assert!(!sup.contains(&vec![0]));
        for set in maximal_type_supports(4, 6) {
            assert!(set.iter().map(|&s| choose(4, s)).sum::<f64>() <= 6.0);
        }
    }

    #[test]
    fn random_start_is_feasible() {
        let inst = Instance::zipf(3, 4, 1.3, 1.0).unwrap();
        let cfg = SubpackConfig::new(4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let y = random_feasible(&inst, &cfg, &mut rng);
            assert!(y.validate(&inst).is_empty(), "{:?}", y.validate(&inst));
            let (_, _, ok) = assess(&y, cfg.f_hat);
            assert!(ok);
        }
        let zero = Instance::zipf(3, 4, 0.0, 1.0).unwrap();
        let y = random_feasible(&zero, &cfg, &mut rng);
        assert!(y.y.iter().all(|r| r[0] == 1.0));
        let a = random_feasible(&inst, &cfg, &mut ChaCha8Rng::seed_from_u64(5));
        let b = random_feasible(&inst, &cfg, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn full_budget_matches_unconstrained() {
        let inst = Instance::zipf(3, 3, 1.0, 1.0).unwrap();
        let stats = DemandStats::compute(&inst.popularity, 3).unwrap();
        let p2 = crate::avg_opt::solve_problem2(&inst, &stats).unwrap();
        let mut cfg = SubpackConfig::new(8);
        cfg.starts = 3;
        let y0 = random_feasible(&inst, &cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let dc = dc_solve(&inst, &stats, &cfg, &y0).unwrap();
        assert!((dc.result.objective - p2.objective).abs() < 1e-9);
        let oracle = support_oracle(&inst, &stats, 8).unwrap();
        assert!((oracle.result.objective - p2.objective).abs() < 1e-9);
        let lp = build_linearized_lp(&inst, &stats, &y0, &cfg);
        assert_eq!(lp.num_rows(), build_problem2(&inst, &stats).num_rows() + 3);
    }

    #[test]
    fn oracle_guard() {
        let inst = Instance::uniform(5, 2, 1.0).unwrap();
        let stats = DemandStats::compute(&inst.popularity, 5).unwrap();
        assert!(matches!(
            support_oracle(&inst, &stats, 4),
            Err(Error::TooLarge { .. })
        ));
    }
}
