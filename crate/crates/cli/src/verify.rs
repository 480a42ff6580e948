use anyhow::Result;
use ccopt::avg_opt::{solve_problem1, solve_problem2, solve_problem3, OptParam};
use ccopt::combinatorics::{for_each_demand, p_prime_enumerate, p_prime_formula};
use ccopt::scheme::{average_load_exact, average_load_symmetric, decode_check};
use ccopt::{DemandStats, Instance, PartitionParam};

use crate::InstanceArgs;

const TOL: f64 = 1e-7;

struct Report {
    failures: usize,
}

impl Report {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        if !ok {
            self.failures += 1;
        }
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }

    fn close(&mut self, name: &str, a: f64, b: f64) {
        let diff = (a - b).abs();
        self.check(name, diff <= TOL, format!("{a:.10} vs {b:.10} (diff {diff:.2e})"));
    }
}

fn check_p_prime(report: &mut Report, inst: &Instance) -> Result<()> {
    let k = inst.users;
    let mut worst = 0.0f64;
    let mut count = 0;
    for u in 1..=k.min(inst.files) {
        for i in 1..=k - u {
            for n in 0..inst.files {
                let f = p_prime_formula(i, u, n, &inst.popularity, k)?;
                let e = p_prime_enumerate(i, u, n, &inst.popularity, k)?;
                worst = worst.max((f - e).abs());
                count += 1;
            }
        }
    }
    report.check(
        "repeat probabilities vs enumeration",
        worst <= 1e-12,
        format!("{count} values, max diff {worst:.2e}"),
    );
    Ok(())
}

fn check_decoding(report: &mut Report, name: &str, inst: &Instance, x: &PartitionParam) -> Result<()> {
    let mut demands = 0usize;
    let mut failed = 0usize;
    let mut error = None;
    for_each_demand(&inst.popularity, inst.users, |d, _| {
        if error.is_some() {
            return;
        }
        demands += 1;
        match decode_check(inst, x, d) {
            Ok(true) => {}
            Ok(false) => failed += 1,
            Err(e) => error = Some(e),
        }
    });
    if let Some(e) = error {
        return Err(e.into());
    }
    report.check(name, failed == 0, format!("{demands} demands, {failed} undecodable"));
    Ok(())
}

fn check_memory(report: &mut Report, inst: &Instance, stats: &DemandStats) -> Result<()> {
    let m = inst.memory;
    println!("-- M = {m}");
    let p1 = solve_problem1(inst)?;
    let p2 = solve_problem2(inst, stats)?;
    report.close(&format!("M={m} full vs symmetric optimum"), p1.objective, p2.objective);

    let x1 = p1.param.to_partition(inst);
    let x2 = p2.param.to_partition(inst);
    for (label, x) in [("full", &x1), ("symmetric", &x2)] {
        let v = x.validate(inst);
        report.check(
            &format!("M={m} {label} placement feasible"),
            v.is_empty(),
            format!("{} violations", v.len()),
        );
    }
    report.close(
        &format!("M={m} full optimum vs exact load"),
        p1.objective,
        average_load_exact(inst, &x1)?,
    );

    let OptParam::Symmetric(y) = &p2.param else {
        unreachable!("symmetric LP yields a symmetric parameter")
    };
    report.close(
        &format!("M={m} symmetric load formula vs enumeration"),
        average_load_symmetric(inst, y, stats)?,
        average_load_exact(inst, &x2)?,
    );

    if inst.popularity.is_uniform() {
        let p3 = solve_problem3(inst)?;
        report.close(&format!("M={m} symmetric vs uniform optimum"), p2.objective, p3.objective);
    }

    check_decoding(report, &format!("M={m} full placement decodes"), inst, &x1)?;
    check_decoding(report, &format!("M={m} symmetric placement decodes"), inst, &x2)?;
    Ok(())
}

/// Runs the cross-checks; returns whether all passed.
pub fn run(args: &InstanceArgs) -> Result<bool> {
    let base = args.load()?;
    let grid: Vec<f64> = match args.memory {
        Some(m) => vec![m],
        None if args.instance.is_some() => vec![base.memory],
        None => (0..=base.files).map(|m| m as f64).collect(),
    };
    println!(
        "instance: K={} N={} popularity={:?}",
        base.users,
        base.files,
        base.popularity.probs()
    );
    let stats = DemandStats::compute(&base.popularity, base.users)?;
    let mut report = Report { failures: 0 };
    check_p_prime(&mut report, &base)?;
    for m in grid {
        check_memory(&mut report, &base.with_memory(m)?, &stats)?;
    }
    if report.failures == 0 {
        println!("all checks passed");
    } else {
        println!("{} checks failed", report.failures);
    }
    Ok(report.failures == 0)
}
