//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every check prints exactly one PASS/FAIL line; exits nonzero on failure.

mod common;

use std::time::{Duration, Instant};

use ccopt::avg_opt::{
    baseline_mn_load, baseline_yu_load, closed_form_uniform, solve_problem1, solve_problem2,
    solve_problem3, OptParam,
};
use ccopt::combinatorics::{p_prime_enumerate, p_prime_formula, zipf, DemandStats};
use ccopt::model::Instance;
use ccopt::scheme::{average_load_exact, average_load_mc, average_load_symmetric, decode_check};
use ccopt::subpack::{
    apply_un, largest_f_norm, multi_start, problem4_oracle, subgradient, support_oracle,
    SubpackConfig,
};
use ccopt::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn within_time(limit: Duration, start: Instant) -> (bool, String) {
    let took = start.elapsed();
    (took <= limit, format!("{:.2} s of {} s", took.as_secs_f64(), limit.as_secs()))
}

fn all_demands(users: usize, files: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut d = vec![0; users];
    loop {
        out.push(d.clone());
        let Some(pos) = (0..users).rev().find(|&k| d[k] + 1 < files) else {
            return out;
        };
        d[pos] += 1;
        d[pos + 1..].iter_mut().for_each(|v| *v = 0);
    }
}

/// Uniform LP optimum against the closed form, including its support.
fn closed_form_uniform_optimum() -> Result<Outcome> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut support_ok = true;
    let mut cases = 0;
    for k in 2..=4 {
        for n in [2, 4, 6] {
            for t in 0..=k {
                let m = t as f64 * n as f64 / k as f64;
                let inst = Instance::uniform(k, n, m)?;
                let lp = solve_problem3(&inst)?;
                let (z_star, load) = closed_form_uniform(k, n, m)?;
                worst = worst.max((lp.objective - load).abs());
                let OptParam::Uniform(z) = &lp.param else { unreachable!() };
                for s in 0..=k {
                    let on_support = z.z[s].abs() > 1e-9;
                    if on_support != (s == t) || (z.z[s] - z_star.z[s]).abs() > 1e-8 {
                        support_ok = false;
                    }
                }
                cases += 1;
            }
        }
    }
    let (fast, time) = within_time(Duration::from_secs(5), start);
    outcome(
        worst <= 1e-8 && support_ok && fast,
        format!("{cases} cases, max |LP - closed form| = {worst:.2e}, support ok = {support_ok}, {time}"),
    )
}

/// Full-placement optimum equals the symmetric one (and the uniform one
/// when popularity is uniform).
fn symmetric_conditions_lossless() -> Result<Outcome> {
    let start = Instant::now();
    let mut worst12 = 0.0f64;
    let mut worst23 = 0.0f64;
    for gamma in [0.0, 0.5, 1.0, 2.0] {
        for m in 0..=4 {
            let inst = Instance::zipf(3, 4, m as f64, gamma)?;
            let stats = DemandStats::compute(&inst.popularity, 3)?;
            let p1 = solve_problem1(&inst)?;
            let p2 = solve_problem2(&inst, &stats)?;
            worst12 = worst12.max((p1.objective - p2.objective).abs());
            if gamma == 0.0 {
                let p3 = solve_problem3(&inst)?;
                worst23 = worst23.max((p2.objective - p3.objective).abs());
            }
        }
    }
    let (fast, time) = within_time(Duration::from_secs(120), start);
    outcome(
        worst12 <= 1e-7 && worst23 <= 1e-7 && fast,
        format!("max |P1 - P2| = {worst12:.2e}, max |P2 - P3| = {worst23:.2e}, {time}"),
    )
}

/// Closed-form symmetric load equals the enumerated expected load.
fn symmetric_load_matches_enumeration() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for (k, n) in [(3, 4), (4, 3)] {
        for gamma in [0.5, 1.5] {
            let inst = Instance::zipf(k, n, n as f64, gamma)?;
            let stats = DemandStats::compute(&inst.popularity, k)?;
            for _ in 0..20 {
                let y = common::random_monotone_y(k, n, &mut rng);
                assert!(y.validate(&inst).is_empty());
                let closed = average_load_symmetric(&inst, &y, &stats)?;
                let brute = average_load_exact(&inst, &y.expand())?;
                worst = worst.max((closed - brute).abs());
                cases += 1;
            }
        }
    }
    outcome(worst <= 1e-9, format!("{cases} placements, max error {worst:.2e}"))
}

/// Occupancy formula against exhaustive demand enumeration.
fn leftover_probability_formula() -> Result<Outcome> {
    let mut worst = 0.0f64;
    let mut worst_spread = 0.0f64;
    let mut cases = 0;
    for k in 2..=4 {
        for n in 2..=4 {
            for gamma in [0.0, 1.0, 2.0] {
                let pop = zipf(n, gamma)?;
                for u in 1..=k.min(n) {
                    let mut sums = Vec::new();
                    for i in 1..=k - u {
                        let mut sum = 0.0;
                        for file in 0..n {
                            let f = p_prime_formula(i, u, file, &pop, k)?;
                            let e = p_prime_enumerate(i, u, file, &pop, k)?;
                            worst = worst.max((f - e).abs());
                            sum += f;
                            cases += 1;
                        }
                        sums.push(sum);
                    }
                    if let (Some(lo), Some(hi)) = (
                        sums.iter().copied().reduce(f64::min),
                        sums.iter().copied().reduce(f64::max),
                    ) {
                        worst_spread = worst_spread.max(hi - lo);
                    }
                }
            }
        }
    }
    outcome(
        worst <= 1e-12 && worst_spread <= 1e-12,
        format!("{cases} entries, max error {worst:.2e}, max spread over i {worst_spread:.2e}"),
    )
}

/// Every user decodes under the optimized and under random placements.
fn decodability() -> Result<Outcome> {
    let inst = Instance::zipf(3, 4, 1.5, 1.0)?;
    let stats = DemandStats::compute(&inst.popularity, 3)?;
    let mut placements = vec![solve_problem2(&inst, &stats)?.param.to_partition(&inst)];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let x = common::random_partition(3, 4, inst.memory, &mut rng);
        assert!(x.validate(&inst).is_empty());
        placements.push(x);
    }
    let mut checked = 0;
    let mut failed = 0;
    for x in &placements {
        for d in all_demands(3, 4) {
            checked += 1;
            if !decode_check(&inst, x, &d)? {
                failed += 1;
            }
        }
    }
    outcome(
        failed == 0 && checked == 11 * 64,
        format!("{checked} (placement, demand) pairs, {failed} failures"),
    )
}

/// Sampled load agrees with the exact one and is reproducible.
fn monte_carlo_consistency() -> Result<Outcome> {
    let inst = Instance::zipf(3, 4, 1.0, 1.5)?;
    let stats = DemandStats::compute(&inst.popularity, 3)?;
    let x = solve_problem2(&inst, &stats)?.param.to_partition(&inst);
    let exact = average_load_exact(&inst, &x)?;
    let a = average_load_mc(&inst, &x, 100_000, 99)?;
    let b = average_load_mc(&inst, &x, 100_000, 99)?;
    let same = serde_json::to_string(&a)? == serde_json::to_string(&b)?
        && a.mean.to_bits() == b.mean.to_bits()
        && a.stderr.to_bits() == b.stderr.to_bits();
    let diff = (a.mean - exact).abs();
    outcome(
        diff <= 3.0 * a.stderr && same,
        format!(
            "|mean - exact| = {diff:.2e}, 3 stderr = {:.2e}, reproducible = {same}",
            3.0 * a.stderr
        ),
    )
}

/// Multi-start DC against the exhaustive support oracle.
fn dc_against_oracle() -> Result<Outcome> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut budget_ok = true;
    let mut sandwich_ok = true;
    for m in [1.0, 2.0] {
        for f_hat in [2, 4, 6] {
            for gamma in [0.0, 1.0] {
                let inst = Instance::zipf(3, 3, m, gamma)?;
                let stats = DemandStats::compute(&inst.popularity, 3)?;
                let cfg = SubpackConfig::new(f_hat);
                let dc = multi_start(&inst, &stats, &cfg)?;
                let oracle = support_oracle(&inst, &stats, f_hat)?;
                let p2 = solve_problem2(&inst, &stats)?;
                worst = worst.max((dc.result.objective - oracle.result.objective).abs());
                budget_ok &= dc.l0.iter().all(|&c| c <= f_hat);
                sandwich_ok &= dc.result.objective >= oracle.result.objective - 1e-9
                    && oracle.result.objective >= p2.objective - 1e-9;
            }
        }
    }
    let (fast, time) = within_time(Duration::from_secs(300), start);
    outcome(
        worst <= 1e-3 && budget_ok && sandwich_ok && fast,
        format!(
            "max |DC - oracle| = {worst:.2e}, budget met = {budget_ok}, P2 <= oracle <= DC = {sandwich_ok}, {time}"
        ),
    )
}

/// Full-support budgeted optimum equals the symmetric budgeted optimum.
fn full_support_budget_equivalence() -> Result<Outcome> {
    let mut worst = 0.0f64;
    let mut values = Vec::new();
    for gamma in [0.0, 1.0] {
        for f_hat in [2, 3] {
            let inst = Instance::zipf(2, 3, 1.0, gamma)?;
            let stats = DemandStats::compute(&inst.popularity, 2)?;
            let full = problem4_oracle(&inst, f_hat)?;
            let sym = support_oracle(&inst, &stats, f_hat)?;
            worst = worst.max((full.objective - sym.result.objective).abs());
            values.push(format!("{:.5}", full.objective));
        }
    }
    outcome(
        worst <= 1e-7,
        format!("optima [{}], max gap {worst:.2e}", values.join(", ")),
    )
}

/// Optimized load never exceeds either reference scheme.
fn baseline_dominance() -> Result<Outcome> {
    let mut ordered = true;
    let mut monotone = true;
    let mut prev = [f64::INFINITY; 3];
    let template = Instance::zipf(4, 10, 0.0, 1.5)?;
    let stats = DemandStats::compute(&template.popularity, 4)?;
    let mut worst_gain = f64::INFINITY;
    for m in 0..=10 {
        let inst = template.with_memory(m as f64)?;
        let opt = solve_problem2(&inst, &stats)?.objective;
        let yu = baseline_yu_load(&inst)?;
        let mn = baseline_mn_load(&inst)?;
        ordered &= opt <= yu + 1e-9 && yu <= mn + 1e-9;
        for (p, v) in prev.iter_mut().zip([opt, yu, mn]) {
            monotone &= v <= *p + 1e-9;
            *p = v;
        }
        worst_gain = worst_gain.min(yu - opt);
    }
    outcome(
        ordered && monotone,
        format!("P2 <= Yu <= MN on 11 points = {ordered}, nonincreasing = {monotone}, min(Yu - P2) = {worst_gain:.2e}"),
    )
}

/// First-order inequality of the largest-F norm at random feasible pairs.
fn subgradient_inequality() -> Result<Outcome> {
    let (k, n, f_hat) = (4, 4, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = f64::NEG_INFINITY;
    let mut sums_ok = true;
    for _ in 0..100 {
        let y = common::random_monotone_y(k, n, &mut rng);
        let y2 = common::random_monotone_y(k, n, &mut rng);
        for file in 0..n {
            let g = subgradient(&y, file, f_hat);
            sums_ok &= g.iter().sum::<f64>() == f_hat as f64;
            let here = largest_f_norm(&apply_un(&y, file), f_hat)?;
            let there = largest_f_norm(&apply_un(&y2, file), f_hat)?;
            let step: f64 = g
                .iter()
                .zip(y2.flat().iter().zip(y.flat()))
                .map(|(gi, (b, a))| gi * (b - a))
                .sum();
            worst = worst.max(here + step - there);
        }
    }
    outcome(
        worst <= 1e-12 && sums_ok,
        format!("max violation {worst:.2e}, blocks sum to F_hat = {sums_ok}"),
    )
}

fn main() {
    let checks: [(&str, fn() -> Result<Outcome>); 10] = [
        ("closed-form uniform optimum", closed_form_uniform_optimum),
        ("symmetric conditions lossless", symmetric_conditions_lossless),
        ("symmetric load formula", symmetric_load_matches_enumeration),
        ("leftover-request probabilities", leftover_probability_formula),
        ("decodability", decodability),
        ("monte carlo consistency", monte_carlo_consistency),
        ("DC vs support oracle", dc_against_oracle),
        ("full-support budget equivalence", full_support_budget_equivalence),
        ("baseline dominance", baseline_dominance),
        ("subgradient inequality", subgradient_inequality),
    ];
    let mut failures = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "acceptance {:>2} {}: {name}: {detail}",
            i + 1,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!("acceptance: {} of {} passed", checks.len() - failures, checks.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
