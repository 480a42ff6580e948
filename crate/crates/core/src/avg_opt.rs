//! Average-load minimization at the three parameterization levels, the
//! closed-form uniform optimum and two reference schemes.

use serde::{Deserialize, Serialize};

use crate::combinatorics::{check_enumeration, choose, demand_count, for_each_demand, DemandStats};
use crate::error::{Error, Result};
use crate::lp::{solve, LinearProgram, LpSolution};
use crate::model::{
    Instance, PartitionParam, SubsetOrder, SymmetricParam, UniformParam, FEAS_TOL,
};
use crate::scheme::{average_load_exact, representatives, symmetric_load_coefficients};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptLevel {
    /// One variable per (file, user subset).
    #[serde(rename = "full-x")]
    Full,
    /// One variable per (file, subset cardinality).
    #[serde(rename = "symmetric-y")]
    Symmetric,
    /// One variable per subset cardinality.
    #[serde(rename = "uniform-z")]
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OptParam {
    Full(PartitionParam),
    Symmetric(SymmetricParam),
    Uniform(UniformParam),
}

impl OptParam {
    /// The full placement this parameter describes.
    pub fn to_partition(&self, inst: &Instance) -> PartitionParam {
        match self {
            OptParam::Full(x) => x.clone(),
            OptParam::Symmetric(y) => y.expand(),
            OptParam::Uniform(z) => z.expand(inst.files).expand(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub level: OptLevel,
    pub param: OptParam,
    /// Expected delivery load at `param`.
    pub objective: f64,
    /// Simplex pivots, summed over every LP solved.
    pub iterations: usize,
    pub max_residual: f64,
    pub duality_gap: f64,
}

impl OptResult {
    fn from_lp(level: OptLevel, param: OptParam, sol: &LpSolution) -> Self {
        Self {
            level,
            param,
            objective: sol.objective,
            iterations: sol.iterations,
            max_residual: sol.max_residual,
            duality_gap: sol.duality_gap,
        }
    }
}

/// Variable layout of the full-placement LP: `x` first, then one epigraph
/// variable per (demand, transmitted subset).
#[derive(Debug, Clone)]
pub struct Problem1 {
    pub lp: LinearProgram,
    /// Number of leading placement variables, `N * 2^K`.
    pub placement_vars: usize,
}

/// Index of `x[n][S]` in the full-placement LP.
pub fn problem1_var(inst: &Instance, file: usize, subset_pos: usize) -> usize {
    file * inst.num_subsets() + subset_pos
}

/// Full-placement LP. Each max over a message's constituents becomes an
/// epigraph variable bounded below by every constituent.
pub fn build_problem1(inst: &Instance) -> Result<Problem1> {
    let k = inst.users;
    let subsets = inst.num_subsets();
    let required = demand_count(inst.files, k).and_then(|c| c.checked_mul(subsets as u128));
    check_enumeration(required)?;
    let order = SubsetOrder::new(k);
    let nx = inst.files * subsets;

    // (probability, demand, mask) for every epigraph variable
    let mut epigraph: Vec<(f64, Vec<usize>, u32)> = Vec::new();
    for_each_demand(&inst.popularity, k, |d, prob| {
        let reps = representatives(d).iter().fold(0u32, |m, &u| m | 1 << u);
        for &mask in order.masks() {
            if mask & reps != 0 {
                epigraph.push((prob, d.to_vec(), mask));
            }
        }
    });

    let mut lp = LinearProgram::new(nx + epigraph.len());
    for j in 0..nx {
        lp.set_bounds(j, 0.0, 1.0);
    }
    for (e, (prob, d, mask)) in epigraph.iter().enumerate() {
        let tv = nx + e;
        lp.objective[tv] = *prob;
        let mut rest = *mask;
        while rest != 0 {
            let u = rest.trailing_zeros();
            rest &= rest - 1;
            let xv = problem1_var(inst, d[u as usize], order.index_of(mask & !(1 << u)));
            lp.add_le(vec![(xv, 1.0), (tv, -1.0)], 0.0);
        }
    }
    for n in 0..inst.files {
        lp.add_eq(
            (0..subsets).map(|i| (problem1_var(inst, n, i), 1.0)).collect(),
            1.0,
        );
    }
    for u in 0..k {
        let mut row = Vec::new();
        for n in 0..inst.files {
            for (i, &mask) in order.masks().iter().enumerate() {
                if mask >> u & 1 == 1 {
                    row.push((problem1_var(inst, n, i), 1.0));
                }
            }
        }
        lp.add_le(row, inst.memory);
    }
    Ok(Problem1 {
        lp,
        placement_vars: nx,
    })
}

fn partition_from_solution(inst: &Instance, x: &[f64]) -> PartitionParam {
    let subsets = inst.num_subsets();
    let mut param = PartitionParam::new(
        inst.users,
        (0..inst.files)
            .map(|n| x[n * subsets..(n + 1) * subsets].to_vec())
            .collect(),
    );
    param.clamp_noise();
    param
}

pub fn solve_problem1(inst: &Instance) -> Result<OptResult> {
    solve_problem1_lp(inst, &build_problem1(inst)?.lp)
}

/// Solves a (possibly restricted) full-placement LP built by [`build_problem1`].
pub fn solve_problem1_lp(inst: &Instance, lp: &LinearProgram) -> Result<OptResult> {
    let sol = solve(lp)?.into_optimal()?;
    let param = partition_from_solution(inst, &sol.x);
    Ok(OptResult::from_lp(OptLevel::Full, OptParam::Full(param), &sol))
}

/// Index of `y[n][s]` in the symmetric LP.
pub fn problem2_var(inst: &Instance, file: usize, s: usize) -> usize {
    file * (inst.users + 1) + s
}

/// Symmetric LP over `y[n][s]` with popularity-ordered subfile sizes.
pub fn build_problem2(inst: &Instance, stats: &DemandStats) -> LinearProgram {
    let k = inst.users;
    let c = symmetric_load_coefficients(inst, stats);
    let mut lp = LinearProgram::new(inst.files * (k + 1));
    lp.objective = c.into_iter().flatten().collect();
    for j in 0..lp.num_vars() {
        lp.set_bounds(j, 0.0, 1.0);
    }
    for n in 0..inst.files {
        lp.add_eq(
            (0..=k).map(|s| (problem2_var(inst, n, s), choose(k, s))).collect(),
            1.0,
        );
    }
    let mut cache = Vec::new();
    for n in 0..inst.files {
        for s in 1..=k {
            cache.push((problem2_var(inst, n, s), choose(k - 1, s - 1)));
        }
    }
    lp.add_le(cache, inst.memory);
    for n in 0..inst.files.saturating_sub(1) {
        for s in 1..=k {
            lp.add_le(
                vec![
                    (problem2_var(inst, n + 1, s), 1.0),
                    (problem2_var(inst, n, s), -1.0),
                ],
                0.0,
            );
        }
    }
    lp
}

pub fn solve_problem2(inst: &Instance, stats: &DemandStats) -> Result<OptResult> {
    solve_problem2_lp(inst, &build_problem2(inst, stats))
}

/// Solves a symmetric LP whose first `N * (K+1)` variables are `y`.
pub fn solve_problem2_lp(inst: &Instance, lp: &LinearProgram) -> Result<OptResult> {
    let sol = solve(lp)?.into_optimal()?;
    let mut y = SymmetricParam::from_flat(inst.users, inst.files, &sol.x);
    y.clamp_noise();
    Ok(OptResult::from_lp(
        OptLevel::Symmetric,
        OptParam::Symmetric(y),
        &sol,
    ))
}

/// Objective coefficients of the uniform LP, one per subset cardinality.
pub fn problem3_coefficients(users: usize, files: usize) -> Result<Vec<f64>> {
    let k = users;
    let max_u = k.min(files);
    let pu = (1..=max_u)
        .map(|u| crate::combinatorics::p_double_prime(u, k, files))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..=k)
        .map(|s| {
            let spared: f64 = (1..=max_u)
                .map(|u| pu[u - 1] * choose(k - u, s + 1))
                .sum();
            choose(k, s + 1) - spared
        })
        .collect())
}

/// Uniform LP over `z[s]`; requires uniform popularity.
pub fn build_problem3(inst: &Instance) -> Result<LinearProgram> {
    if !inst.popularity.is_uniform() {
        return Err(Error::NonUniformPopularity);
    }
    let k = inst.users;
    let mut lp = LinearProgram::new(k + 1);
    lp.objective = problem3_coefficients(k, inst.files)?;
    for s in 0..=k {
        lp.set_bounds(s, 0.0, 1.0);
    }
    lp.add_eq((0..=k).map(|s| (s, choose(k, s))).collect(), 1.0);
    lp.add_le(
        (1..=k).map(|s| (s, choose(k, s) * s as f64)).collect(),
        inst.t(),
    );
    Ok(lp)
}

pub fn solve_problem3(inst: &Instance) -> Result<OptResult> {
    let sol = solve(&build_problem3(inst)?)?.into_optimal()?;
    let mut z = UniformParam::new(inst.users, sol.x.clone());
    z.clamp_noise();
    Ok(OptResult::from_lp(OptLevel::Uniform, OptParam::Uniform(z), &sol))
}

fn integer_t(users: usize, files: usize, memory: f64) -> Option<usize> {
    let t = users as f64 * memory / files as f64;
    let r = t.round();
    ((t - r).abs() <= FEAS_TOL && r >= 0.0 && r <= users as f64).then_some(r as usize)
}

/// Optimal uniform placement and its load when `KM/N` is an integer `t`:
/// all mass on type-`t` subfiles.
pub fn closed_form_uniform(users: usize, files: usize, memory: f64) -> Result<(UniformParam, f64)> {
    let Some(t) = integer_t(users, files, memory) else {
        return Err(Error::InvalidArgument(format!(
            "KM/N = {} is not an integer in 0..={users}; use memory sharing",
            users as f64 * memory / files as f64
        )));
    };
    Ok((UniformParam::mn_point(users, t)?, uniform_load_at(users, files, t)?))
}

fn uniform_load_at(users: usize, files: usize, t: usize) -> Result<f64> {
    let k = users;
    let worst = (k - t) as f64 / (t + 1) as f64;
    let spared: f64 = (1..=k.min(files))
        .map(|u| {
            Ok(crate::combinatorics::p_double_prime(u, k, files)? * choose(k - u, t + 1)
                / choose(k, t))
        })
        .sum::<Result<f64>>()?;
    Ok(worst - spared)
}

/// Convex weights over `points` (by input position) that reach `memory` on
/// the lower convex envelope. At most two weights are nonzero.
pub fn memory_sharing_weights(points: &[(f64, f64)], memory: f64) -> Result<Vec<(usize, f64)>> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no memory-load points".into()));
    }
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        points[a]
            .0
            .total_cmp(&points[b].0)
            .then(points[a].1.total_cmp(&points[b].1))
    });
    idx.dedup_by(|b, a| (points[*a].0 - points[*b].0).abs() <= 1e-12);
    let lo = points[idx[0]].0;
    let hi = points[idx[idx.len() - 1]].0;
    if memory < lo - 1e-12 || memory > hi + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "cache size {memory} outside [{lo}, {hi}]"
        )));
    }
    // lower hull by the monotone chain
    let mut hull: Vec<usize> = Vec::new();
    for i in idx {
        let p = points[i];
        while hull.len() >= 2 {
            let (a, b) = (points[hull[hull.len() - 2]], points[hull[hull.len() - 1]]);
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let memory = memory.clamp(lo, hi);
    for w in hull.windows(2) {
        let (m0, m1) = (points[w[0]].0, points[w[1]].0);
        if memory <= m1 {
            let frac = (memory - m0) / (m1 - m0);
            if frac <= 0.0 {
                return Ok(vec![(w[0], 1.0)]);
            }
            if frac >= 1.0 {
                return Ok(vec![(w[1], 1.0)]);
            }
            return Ok(vec![(w[0], 1.0 - frac), (w[1], frac)]);
        }
    }
    Ok(vec![(hull[hull.len() - 1], 1.0)])
}

/// Load at cache size `memory` on the lower convex envelope of `points`.
pub fn memory_sharing(points: &[(f64, f64)], memory: f64) -> Result<f64> {
    Ok(memory_sharing_weights(points, memory)?
        .into_iter()
        .map(|(i, w)| w * points[i].1)
        .sum())
}

fn grid_memory(t: usize, inst: &Instance) -> f64 {
    t as f64 * inst.files as f64 / inst.users as f64
}

/// Worst-case load of uncoded prefetching, `(K - t)/(t + 1)`, memory-shared.
pub fn baseline_mn_load(inst: &Instance) -> Result<f64> {
    let k = inst.users;
    let points: Vec<(f64, f64)> = (0..=k)
        .map(|t| (grid_memory(t, inst), (k - t) as f64 / (t + 1) as f64))
        .collect();
    memory_sharing(&points, inst.memory)
}

/// Expected loads of the uniform placements at every integer `t`, evaluated
/// by exact enumeration under the instance popularity.
pub fn yu_points(inst: &Instance) -> Result<Vec<(f64, f64)>> {
    (0..=inst.users)
        .map(|t| {
            let x = UniformParam::mn_point(inst.users, t)?
                .expand(inst.files)
                .expand();
            Ok((grid_memory(t, inst), average_load_exact(inst, &x)?))
        })
        .collect()
}

/// Uniform placement with repeat-aware delivery, memory-shared.
pub fn baseline_yu_load(inst: &Instance) -> Result<f64> {
    memory_sharing(&yu_points(inst)?, inst.memory)
}

/// Memory-shared uniform placement behind [`baseline_yu_load`], with its load.
pub fn baseline_yu_placement(inst: &Instance) -> Result<(UniformParam, f64)> {
    let points = yu_points(inst)?;
    let mut z = vec![0.0; inst.users + 1];
    let mut load = 0.0;
    for (t, w) in memory_sharing_weights(&points, inst.memory)? {
        z[t] += w / choose(inst.users, t);
        load += w * points[t].1;
    }
    Ok((UniformParam::new(inst.users, z), load))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn problem1_sizes() {
        let inst = Instance::uniform(3, 4, 1.0).unwrap();
        let p = build_problem1(&inst).unwrap();
        assert_eq!(p.placement_vars, 32);
        let big = Instance::uniform(4, 40, 1.0).unwrap();
        assert!(matches!(
            build_problem1(&big),
            Err(Error::EnumerationLimit { .. })
        ));
    }

    #[test]
    fn problem1_full_memory_is_zero() {
        let inst = Instance::zipf(2, 2, 2.0, 1.0).unwrap();
        let r = solve_problem1(&inst).unwrap();
        assert!(r.objective.abs() < 1e-12);
    }

    #[test]
    fn problem2_shape() {
        let inst = Instance::zipf(3, 4, 1.0, 1.0).unwrap();
        let stats = DemandStats::compute(&inst.popularity, 3).unwrap();
        let lp = build_problem2(&inst, &stats);
        assert_eq!(lp.num_vars(), 16);
        assert_eq!(lp.eq.len(), 4);
        assert_eq!(lp.ub.len(), 1 + 3 * 3);
    }

    #[test]
    fn problem3_small() {
        let inst = Instance::uniform(2, 2, 1.0).unwrap();
        let r = solve_problem3(&inst).unwrap();
        assert!((r.objective - 0.5).abs() < 1e-12);
        assert_eq!(build_problem3(&inst).unwrap().num_vars(), 3);
        let zero = Instance::uniform(3, 4, 0.0).unwrap();
        let expected: f64 = (1..=3)
            .map(|u| u as f64 * crate::combinatorics::p_double_prime(u, 3, 4).unwrap())
            .sum();
        assert!((solve_problem3(&zero).unwrap().objective - expected).abs() < 1e-12);
        let skewed = Instance::zipf(2, 2, 1.0, 1.0).unwrap();
        assert!(matches!(
            build_problem3(&skewed),
            Err(Error::NonUniformPopularity)
        ));
    }

    #[test]
    fn closed_form_examples() {
        let (z, load) = closed_form_uniform(2, 2, 1.0).unwrap();
        assert_eq!(z.z, vec![0.0, 0.5, 0.0]);
        assert!((load - 0.5).abs() < 1e-15);
        assert_eq!(closed_form_uniform(3, 5, 5.0).unwrap().1, 0.0);
        assert!(closed_form_uniform(3, 4, 1.0).is_err());
    }

    #[test]
    fn memory_sharing_interpolates() {
        let pts = [(0.0, 2.0), (1.0, 1.0), (2.0, 0.0)];
        assert!((memory_sharing(&pts, 0.5).unwrap() - 1.5).abs() < 1e-15);
        assert_eq!(memory_sharing(&pts, 1.0).unwrap(), 1.0);
        assert!(memory_sharing(&pts, 2.5).is_err());
        // a point above the envelope is bypassed
        let pts = [(0.0, 2.0), (1.0, 1.8), (2.0, 0.0)];
        assert!((memory_sharing(&pts, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(memory_sharing_weights(&pts, 1.0).unwrap(), vec![(0, 0.5), (2, 0.5)]);
    }

    #[test]
    fn yu_placement_is_feasible() {
        let inst = Instance::zipf(3, 4, 2.2, 1.2).unwrap();
        let (z, load) = baseline_yu_placement(&inst).unwrap();
        assert!(z.validate(&inst).is_empty());
        let exact = average_load_exact(&inst, &z.expand(4).expand()).unwrap();
        assert!((exact - load).abs() < 1e-12);
    }

    #[test]
    fn yu_matches_closed_form_under_uniform_popularity() {
        for (k, n) in [(2, 2), (3, 4), (4, 3)] {
            for t in 0..=k {
                let m = t as f64 * n as f64 / k as f64;
                let inst = Instance::uniform(k, n, m).unwrap();
                let yu = baseline_yu_load(&inst).unwrap();
                let (_, cf) = closed_form_uniform(k, n, m).unwrap();
                assert!((yu - cf).abs() < 1e-12, "K={k} N={n} t={t}");
                assert!(yu <= baseline_mn_load(&inst).unwrap() + 1e-12);
            }
        }
    }
}
