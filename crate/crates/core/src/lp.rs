//! Dense two-phase simplex for small linear programs.
//!
//! Problems are stated as
//!
//! ```text
//! minimize    c'x
//! subject to  A_eq x  = b_eq
//!             A_ub x <= b_ub
//!             lo <= x <= hi
//! ```
//!
//! and converted internally to `x >= 0` standard form: finite lower bounds
//! are shifted out, variables bounded only above are reflected, free
//! variables are split and finite upper bounds become rows. Pricing is
//! Dantzig's rule, switching to Bland's rule during runs of degenerate
//! pivots so the method cannot cycle. At the end the basis is refactored
//! with an LU decomposition to clean the primal values and recover duals.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest magnitude accepted as a pivot element.
pub const PIVOT_TOL: f64 = 1e-10;
/// Reduced costs above `-COST_TOL` count as nonnegative.
pub const COST_TOL: f64 = 1e-9;
/// Phase-one objective above this value means infeasible.
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_RUN: usize = 50;

/// One linear constraint row, stored sparsely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub eq: Vec<Constraint>,
    pub ub: Vec<Constraint>,
    /// `(lo, hi)` per variable; infinite values mean unbounded.
    pub bounds: Vec<(f64, f64)>,
}

impl LinearProgram {
    /// `num_vars` variables with zero cost and bounds `[0, inf)`.
    pub fn new(num_vars: usize) -> Self {
        Self {
            objective: vec![0.0; num_vars],
            eq: Vec::new(),
            ub: Vec::new(),
            bounds: vec![(0.0, f64::INFINITY); num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.eq.len() + self.ub.len()
    }

    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) {
        self.bounds[var] = (lo, hi);
    }

    pub fn add_eq(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.eq.push(Constraint { coeffs, rhs });
    }

    pub fn add_le(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.ub.push(Constraint { coeffs, rhs });
    }

    /// Stored as the negated `<=` row.
    pub fn add_ge(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        let coeffs = coeffs.into_iter().map(|(j, a)| (j, -a)).collect();
        self.ub.push(Constraint { coeffs, rhs: -rhs });
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.bounds.len() != n {
            return Err(Error::MalformedLp(format!(
                "{} bounds for {n} variables",
                self.bounds.len()
            )));
        }
        if let Some(j) = self.objective.iter().position(|c| !c.is_finite()) {
            return Err(Error::MalformedLp(format!("objective entry {j} not finite")));
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY
            {
                return Err(Error::MalformedLp(format!(
                    "variable {j} has bounds [{lo}, {hi}]"
                )));
            }
        }
        for (kind, rows) in [("equality", &self.eq), ("inequality", &self.ub)] {
            for (r, row) in rows.iter().enumerate() {
                if !row.rhs.is_finite() {
                    return Err(Error::MalformedLp(format!("{kind} row {r} rhs not finite")));
                }
                for &(j, a) in &row.coeffs {
                    if j >= n || !a.is_finite() {
                        return Err(Error::MalformedLp(format!(
                            "{kind} row {r} has entry ({j}, {a})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_residual(&self, x: &[f64]) -> f64 {
        let dot = |row: &Constraint| row.coeffs.iter().map(|&(j, a)| a * x[j]).sum::<f64>();
        let eq = self.eq.iter().map(|r| (dot(r) - r.rhs).abs());
        let ub = self.ub.iter().map(|r| (dot(r) - r.rhs).max(0.0));
        let bounds = self
            .bounds
            .iter()
            .zip(x)
            .map(|(&(lo, hi), &v)| (lo - v).max(v - hi).max(0.0));
        eq.chain(ub).chain(bounds).fold(0.0, f64::max)
    }
}

impl fmt::Display for LinearProgram {
    /// Human-readable dump in an LP-file-like layout.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn terms(f: &mut fmt::Formatter<'_>, coeffs: &[(usize, f64)]) -> fmt::Result {
            if coeffs.is_empty() {
                return write!(f, " 0");
            }
            for &(j, a) in coeffs {
                let sign = if a < 0.0 { '-' } else { '+' };
                write!(f, " {sign} {} x{j}", a.abs())?;
            }
            Ok(())
        }
        writeln!(f, "minimize")?;
        write!(f, "  obj:")?;
        let obj: Vec<(usize, f64)> = self
            .objective
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(j, c)| (j, *c))
            .collect();
        terms(f, &obj)?;
        writeln!(f)?;
        writeln!(f, "subject to")?;
        for (r, row) in self.eq.iter().enumerate() {
            write!(f, "  e{r}:")?;
            terms(f, &row.coeffs)?;
            writeln!(f, " = {}", row.rhs)?;
        }
        for (r, row) in self.ub.iter().enumerate() {
            write!(f, "  u{r}:")?;
            terms(f, &row.coeffs)?;
            writeln!(f, " <= {}", row.rhs)?;
        }
        writeln!(f, "bounds")?;
        for (j, (lo, hi)) in self.bounds.iter().enumerate() {
            writeln!(f, "  {lo} <= x{j} <= {hi}")?;
        }
        writeln!(f, "end")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal point; meaningful only when optimal.
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Largest row or bound violation of `x`.
    pub max_residual: f64,
    /// `|c'x - b'y|` for the refactored basis duals.
    pub duality_gap: f64,
    /// Most negative reduced cost, clipped at zero.
    pub dual_infeasibility: f64,
}

impl LpSolution {
    fn failed(status: LpStatus, n: usize, iterations: usize) -> Self {
        Self {
            status,
            x: vec![0.0; n],
            objective: f64::NAN,
            iterations,
            max_residual: f64::NAN,
            duality_gap: f64::NAN,
            dual_infeasibility: f64::NAN,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// Turns a non-optimal status into [`Error::LpNotOptimal`].
    pub fn into_optimal(self) -> Result<Self> {
        match self.status {
            LpStatus::Optimal => Ok(self),
            s => Err(Error::LpNotOptimal(s)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Pivot cap; `None` scales it with the problem size.
    pub max_iterations: Option<usize>,
    /// Largest dense tableau (rows times columns) the solver will allocate.
    pub max_tableau_entries: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: None,
            max_tableau_entries: 40_000_000,
        }
    }
}

pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    solve_with(lp, &SolverOptions::default())
}

#[derive(Debug, Clone, Copy)]
enum VarMap {
    Fixed(f64),
    Shift { col: usize, lo: f64 },
    Reflect { col: usize, hi: f64 },
    Split { pos: usize, neg: usize },
}

struct StandardForm {
    maps: Vec<VarMap>,
    cols: usize,
    cost: Vec<f64>,
    cost_offset: f64,
    /// Sparse rows over structural columns, rhs, and whether the row is `<=`.
    rows: Vec<(Vec<(usize, f64)>, f64, bool)>,
}

impl StandardForm {
    fn build(lp: &LinearProgram) -> Self {
        let mut maps = Vec::with_capacity(lp.num_vars());
        let mut cols = 0;
        for &(lo, hi) in &lp.bounds {
            let m = if lo == hi {
                VarMap::Fixed(lo)
            } else if lo.is_finite() {
                cols += 1;
                VarMap::Shift { col: cols - 1, lo }
            } else if hi.is_finite() {
                cols += 1;
                VarMap::Reflect { col: cols - 1, hi }
            } else {
                cols += 2;
                VarMap::Split {
                    pos: cols - 2,
                    neg: cols - 1,
                }
            };
            maps.push(m);
        }

        let transform = |coeffs: &[(usize, f64)], rhs: f64| -> (Vec<(usize, f64)>, f64) {
            let mut sparse = Vec::with_capacity(coeffs.len());
            let mut rhs = rhs;
            for &(j, a) in coeffs {
                match maps[j] {
                    VarMap::Fixed(v) => rhs -= a * v,
                    VarMap::Shift { col, lo } => {
                        sparse.push((col, a));
                        rhs -= a * lo;
                    }
                    VarMap::Reflect { col, hi } => {
                        sparse.push((col, -a));
                        rhs -= a * hi;
                    }
                    VarMap::Split { pos, neg } => {
                        sparse.push((pos, a));
                        sparse.push((neg, -a));
                    }
                }
            }
            (sparse, rhs)
        };

        let mut rows = Vec::new();
        for r in &lp.eq {
            let (d, b) = transform(&r.coeffs, r.rhs);
            rows.push((d, b, false));
        }
        for r in &lp.ub {
            let (d, b) = transform(&r.coeffs, r.rhs);
            rows.push((d, b, true));
        }
        for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
            if let VarMap::Shift { col, .. } = maps[j] {
                if hi.is_finite() {
                    rows.push((vec![(col, 1.0)], hi - lo, true));
                }
            }
        }

        let obj: Vec<(usize, f64)> = lp.objective.iter().copied().enumerate().collect();
        let (sparse_cost, neg_offset) = transform(&obj, 0.0);
        let mut cost = vec![0.0; cols];
        for (c, a) in sparse_cost {
            cost[c] += a;
        }
        Self {
            maps,
            cols,
            cost,
            cost_offset: -neg_offset,
            rows,
        }
    }

    fn recover(&self, xs: &[f64]) -> Vec<f64> {
        self.maps
            .iter()
            .map(|m| match *m {
                VarMap::Fixed(v) => v,
                VarMap::Shift { col, lo } => lo + xs[col],
                VarMap::Reflect { col, hi } => hi - xs[col],
                VarMap::Split { pos, neg } => xs[pos] - xs[neg],
            })
            .collect()
    }
}

struct Tableau {
    m: usize,
    /// Row stride: all columns plus the rhs.
    w: usize,
    t: Vec<f64>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    iterations: usize,
    max_iterations: usize,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        self.t[r * self.w + self.w - 1]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.w;
        let inv = 1.0 / self.t[r * w + c];
        for v in &mut self.t[r * w..(r + 1) * w] {
            *v *= inv;
        }
        self.t[r * w + c] = 1.0;
        let nz: Vec<(usize, f64)> = self.t[r * w..(r + 1) * w]
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, v)| (j, *v))
            .collect();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let factor = self.t[i * w + c];
            if factor == 0.0 {
                continue;
            }
            let row = &mut self.t[i * w..(i + 1) * w];
            for &(j, v) in &nz {
                row[j] -= factor * v;
            }
            row[c] = 0.0;
        }
        let factor = self.obj[c];
        if factor != 0.0 {
            for &(j, v) in &nz {
                self.obj[j] -= factor * v;
            }
            self.obj[c] = 0.0;
        }
        self.basis[r] = c;
        self.iterations += 1;
    }

    /// Sets the objective row to reduced costs for `cost` (one per column).
    fn price_out(&mut self, cost: &[f64]) {
        let w = self.w;
        self.obj.clear();
        self.obj.extend_from_slice(cost);
        self.obj.push(0.0);
        for r in 0..self.m {
            let cb = cost[self.basis[r]];
            if cb == 0.0 {
                continue;
            }
            for (o, &v) in self.obj.iter_mut().zip(&self.t[r * w..(r + 1) * w]) {
                *o -= cb * v;
            }
        }
    }

    fn run(&mut self, allowed: usize) -> PhaseEnd {
        let w = self.w;
        let mut degenerate = 0usize;
        loop {
            let bland = degenerate >= DEGENERATE_RUN;
            let entering = if bland {
                (0..allowed).find(|&j| self.obj[j] < -COST_TOL)
            } else {
                let mut best: Option<(usize, f64)> = None;
                for j in 0..allowed {
                    let d = self.obj[j];
                    if d < -COST_TOL && best.is_none_or(|(_, b)| d < b) {
                        best = Some((j, d));
                    }
                }
                best.map(|(j, _)| j)
            };
            let Some(c) = entering else {
                return PhaseEnd::Optimal;
            };
            if self.iterations >= self.max_iterations {
                return PhaseEnd::IterationLimit;
            }
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.t[r * w + c];
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(r).max(0.0) / a;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((br, b)) => {
                        if ratio < b - 1e-12
                            || (ratio <= b + 1e-12 && self.basis[r] < self.basis[br])
                        {
                            Some((r, ratio))
                        } else {
                            Some((br, b))
                        }
                    }
                };
            }
            let Some((r, ratio)) = leave else {
                return PhaseEnd::Unbounded;
            };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(r, c);
        }
    }
}

pub fn solve_with(lp: &LinearProgram, opts: &SolverOptions) -> Result<LpSolution> {
    lp.validate()?;
    let sf = StandardForm::build(lp);
    let m = sf.rows.len();
    let n_le = sf.rows.iter().filter(|r| r.2).count();
    let needs_art: Vec<bool> = sf.rows.iter().map(|(_, b, le)| !*le || *b < 0.0).collect();
    let n_art = needs_art.iter().filter(|a| **a).count();
    let slack_start = sf.cols;
    let art_start = sf.cols + n_le;
    let total = art_start + n_art;
    let w = total + 1;
    if m.saturating_mul(w) > opts.max_tableau_entries {
        return Err(Error::TooLarge {
            what: "dense simplex",
            detail: format!("{m} rows by {w} columns"),
        });
    }

    let mut t = vec![0.0; m * w];
    let mut basis = vec![0; m];
    let mut next_slack = slack_start;
    let mut next_art = art_start;
    for (r, (sparse, b, le)) in sf.rows.iter().enumerate() {
        let row = &mut t[r * w..(r + 1) * w];
        for &(c, a) in sparse {
            row[c] += a;
        }
        row[w - 1] = *b;
        if *le {
            row[next_slack] = 1.0;
        }
        if *b < 0.0 {
            for v in row.iter_mut() {
                *v = -*v;
            }
        }
        if needs_art[r] {
            row[next_art] = 1.0;
            basis[r] = next_art;
            next_art += 1;
        } else {
            basis[r] = next_slack;
        }
        if *le {
            next_slack += 1;
        }
    }
    let a0 = t.clone();

    let max_iterations = opts
        .max_iterations
        .unwrap_or_else(|| 10_000usize.max(50 * (m + total)));
    let mut tab = Tableau {
        m,
        w,
        t,
        obj: Vec::with_capacity(w),
        basis,
        iterations: 0,
        max_iterations,
    };

    // phase one: minimize the sum of artificials
    if n_art > 0 {
        let mut cost1 = vec![0.0; total];
        for c in &mut cost1[art_start..] {
            *c = 1.0;
        }
        tab.price_out(&cost1);
        match tab.run(total) {
            PhaseEnd::Optimal => {}
            PhaseEnd::IterationLimit => {
                return Ok(LpSolution::failed(
                    LpStatus::IterationLimit,
                    lp.num_vars(),
                    tab.iterations,
                ))
            }
            PhaseEnd::Unbounded => unreachable!("phase one is bounded below by zero"),
        }
        let infeasibility = -tab.obj[w - 1];
        if infeasibility > FEASIBILITY_TOL {
            return Ok(LpSolution::failed(
                LpStatus::Infeasible,
                lp.num_vars(),
                tab.iterations,
            ));
        }
        // pivot remaining artificials out; rows with no other entry are redundant
        for r in 0..m {
            if tab.basis[r] < art_start {
                continue;
            }
            let row = &tab.t[r * w..r * w + art_start];
            let pick = row
                .iter()
                .enumerate()
                .filter(|(_, v)| v.abs() > PIVOT_TOL)
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(j, _)| j);
            if let Some(j) = pick {
                tab.pivot(r, j);
            }
        }
    }

    let mut cost2 = vec![0.0; total];
    cost2[..sf.cols].copy_from_slice(&sf.cost);
    tab.price_out(&cost2);
    match tab.run(art_start) {
        PhaseEnd::Optimal => {}
        PhaseEnd::Unbounded => {
            return Ok(LpSolution::failed(
                LpStatus::Unbounded,
                lp.num_vars(),
                tab.iterations,
            ))
        }
        PhaseEnd::IterationLimit => {
            return Ok(LpSolution::failed(
                LpStatus::IterationLimit,
                lp.num_vars(),
                tab.iterations,
            ))
        }
    }

    let mut xs = vec![0.0; total];
    for r in 0..m {
        xs[tab.basis[r]] = tab.rhs(r);
    }
    let tableau_x = sf.recover(&xs);
    let tableau_residual = lp.max_residual(&tableau_x);

    let (x, duality_gap, dual_infeasibility) =
        match refine(&a0, m, w, &tab.basis, &cost2, art_start, sf.cost_offset) {
            Some(refined) => {
                let mut xs = vec![0.0; total];
                for (r, &b) in tab.basis.iter().enumerate() {
                    xs[b] = refined.x_basic[r];
                }
                let x = sf.recover(&xs);
                let x = if lp.max_residual(&x) <= tableau_residual {
                    x
                } else {
                    tableau_x
                };
                let primal = lp.objective_value(&x);
                (
                    x,
                    (primal - refined.dual_objective).abs(),
                    refined.dual_infeasibility,
                )
            }
            None => (tableau_x, f64::NAN, f64::NAN),
        };
    let objective = lp.objective_value(&x);
    Ok(LpSolution {
        status: LpStatus::Optimal,
        max_residual: lp.max_residual(&x),
        x,
        objective,
        iterations: tab.iterations,
        duality_gap,
        dual_infeasibility,
    })
}

struct Refined {
    x_basic: Vec<f64>,
    dual_objective: f64,
    dual_infeasibility: f64,
}

/// Refactors the final basis from the original rows, solving `B x_B = b` and
/// `B' y = c_B`.
fn refine(
    a0: &[f64],
    m: usize,
    w: usize,
    basis: &[usize],
    cost: &[f64],
    art_start: usize,
    cost_offset: f64,
) -> Option<Refined> {
    if m == 0 {
        return Some(Refined {
            x_basic: Vec::new(),
            dual_objective: cost_offset,
            dual_infeasibility: 0.0,
        });
    }
    let b_mat = DMatrix::from_fn(m, m, |i, r| a0[i * w + basis[r]]);
    let rhs = DVector::from_fn(m, |i, _| a0[i * w + w - 1]);
    let cb = DVector::from_fn(m, |r, _| cost[basis[r]]);
    let lu = b_mat.clone().lu();
    let x_basic = lu.solve(&rhs)?;
    let y = b_mat.transpose().lu().solve(&cb)?;
    let mut is_basic = vec![false; w];
    for &b in basis {
        is_basic[b] = true;
    }
    let mut worst = 0.0f64;
    for j in (0..art_start).filter(|&j| !is_basic[j]) {
        let col_dot: f64 = (0..m).map(|i| a0[i * w + j] * y[i]).sum();
        worst = worst.max(col_dot - cost[j]);
    }
    Some(Refined {
        x_basic: x_basic.iter().copied().collect(),
        dual_objective: y.dot(&rhs) + cost_offset,
        dual_infeasibility: worst.max(0.0),
    })
}
