//! Exact combinatorial primitives and the demand statistics used as
//! coefficients of the symmetric load objective.
//!
//! Requests are modelled as `K` balls thrown i.i.d. into `N` bins, bin `n`
//! being hit with probability `p_n`. Two families of probabilities come out
//! of that model:
//!
//! * `P'(i, u, n)`: probability that exactly `u` distinct files are requested
//!   and that, after removing one request per distinct file, the `i`-th
//!   smallest leftover request is file `n`;
//! * `P''(u)`: probability that exactly `u` distinct files are requested.
//!
//! Integer coefficients are computed with arbitrary-width integers and only
//! converted to `f64` when multiplied into a probability.

use std::collections::HashMap;
use std::ops::Range;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of cases any exhaustive enumeration may visit.
pub const DEFAULT_ENUMERATION_LIMIT: u128 = 1_000_000;

/// Environment variable overriding [`DEFAULT_ENUMERATION_LIMIT`].
pub const ENUMERATION_LIMIT_ENV: &str = "CCOPT_MAX_ENUM";

/// Largest user count accepted by the closed-form `P'` evaluation.
pub const MAX_FORMULA_USERS: usize = 8;
/// Largest file count accepted by the closed-form `P'` evaluation.
pub const MAX_FORMULA_FILES: usize = 12;

const POPULARITY_SUM_TOL: f64 = 1e-12;

/// Current enumeration guard, honouring `CCOPT_MAX_ENUM`.
pub fn enumeration_limit() -> u128 {
    std::env::var(ENUMERATION_LIMIT_ENV)
        .ok()
        .and_then(|v| v.trim().replace('_', "").parse::<u128>().ok())
        .unwrap_or(DEFAULT_ENUMERATION_LIMIT)
}

/// Number of demand vectors `N^K`, or `None` on overflow.
pub fn demand_count(files: usize, users: usize) -> Option<u128> {
    (files as u128).checked_pow(u32::try_from(users).ok()?)
}

/// Fails with [`Error::EnumerationLimit`] when `count` exceeds the guard.
pub fn check_enumeration(count: Option<u128>) -> Result<u128> {
    let limit = enumeration_limit();
    match count {
        Some(c) if c <= limit => Ok(c),
        Some(c) => Err(Error::EnumerationLimit { required: c, limit }),
        None => Err(Error::EnumerationLimit {
            required: u128::MAX,
            limit,
        }),
    }
}

/// Exact binomial coefficient; `C(n, k) = 0` when `k > n`.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// `C(n, k)` as a float. Exact for every value below 2^53.
pub fn choose(n: usize, k: usize) -> f64 {
    to_f64(&binomial(n as u64, k as u64))
}

pub fn factorial(n: u64) -> BigUint {
    (2..=n).fold(BigUint::one(), |acc, v| acc * v)
}

/// Trinomial coefficient `K! / (m1! m2! (K - m1 - m2)!)`.
pub fn multinomial3(total: u64, m1: u64, m2: u64) -> Result<BigUint> {
    if m1 + m2 > total {
        return Err(Error::InvalidArgument(format!(
            "multinomial parts {m1} + {m2} exceed total {total}"
        )));
    }
    Ok(binomial(total, m1) * binomial(total - m1, m2))
}

/// Stirling number of the second kind via `S(K,u) = u S(K-1,u) + S(K-1,u-1)`.
pub fn stirling2(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    // row[j] holds S(i, j) for the current i
    let mut row = vec![BigUint::zero(); k + 1];
    row[0] = BigUint::one();
    for i in 1..=n {
        let upper = i.min(k);
        for j in (1..=upper).rev() {
            let carried = std::mem::take(&mut row[j]) * j as u64;
            row[j] = carried + &row[j - 1];
        }
        row[0] = BigUint::zero();
    }
    std::mem::take(&mut row[k])
}

/// All vectors of `parts` positive integers summing to `total`, in
/// lexicographic order. `(0, 0)` yields the single empty vector.
pub fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 0 {
            if left == 0 {
                out.push(prefix.clone());
            }
            return;
        }
        if left < parts {
            return;
        }
        for first in 1..=left - (parts - 1) {
            prefix.push(first);
            rec(left - first, parts - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(total, parts, &mut Vec::with_capacity(parts), &mut out);
    out
}

/// All `size`-element subsets of `ground`, each sorted, in lexicographic order.
pub fn subsets_of_size(ground: Range<usize>, size: usize) -> Vec<Vec<usize>> {
    let items: Vec<usize> = ground.collect();
    if size > items.len() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut pick: Vec<usize> = (0..size).collect();
    loop {
        out.push(pick.iter().map(|&p| items[p]).collect());
        // advance the rightmost position that still has room
        let Some(pos) = (0..size).rev().find(|&j| pick[j] != j + items.len() - size) else {
            break;
        };
        pick[pos] += 1;
        for j in pos + 1..size {
            pick[j] = pick[j - 1] + 1;
        }
    }
    out
}

fn to_f64(v: &BigUint) -> f64 {
    v.to_f64().unwrap_or(f64::INFINITY)
}

/// File request probabilities, sorted from most to least popular.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Popularity(Vec<f64>);

impl Popularity {
    /// Validates nonnegativity, unit mass (within 1e-12) and nonincreasing order.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidPopularity("no files".into()));
        }
        if let Some(bad) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidPopularity(format!(
                "entry {bad} is {}",
                probs[bad]
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > POPULARITY_SUM_TOL {
            return Err(Error::InvalidPopularity(format!("mass is {total}, not 1")));
        }
        if let Some(w) = probs.windows(2).position(|w| w[0] < w[1]) {
            return Err(Error::InvalidPopularity(format!(
                "not sorted: p[{w}] = {} < p[{}] = {}",
                probs[w],
                w + 1,
                probs[w + 1]
            )));
        }
        Ok(Self(probs))
    }

    /// Normalizes nonnegative weights to unit mass. Order is still checked.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::InvalidPopularity(format!("weight total {total}")));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(files: usize) -> Result<Self> {
        zipf(files, 0.0)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, file: usize) -> f64 {
        self.0[file]
    }

    pub fn is_uniform(&self) -> bool {
        let target = 1.0 / self.0.len() as f64;
        self.0.iter().all(|p| (p - target).abs() <= POPULARITY_SUM_TOL)
    }

    /// `sum_{n' >= file} p_{n'}`; zero past the end.
    pub fn tail(&self, file: usize) -> f64 {
        self.0.get(file..).map_or(0.0, |t| t.iter().sum())
    }
}

impl TryFrom<Vec<f64>> for Popularity {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Popularity> for Vec<f64> {
    fn from(value: Popularity) -> Self {
        value.0
    }
}

/// Zipf popularity `p_n = n^-gamma / sum_m m^-gamma`.
pub fn zipf(files: usize, gamma: f64) -> Result<Popularity> {
    if files == 0 {
        return Err(Error::InvalidPopularity("no files".into()));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::InvalidPopularity(format!("zipf exponent {gamma}")));
    }
    let weights: Vec<f64> = (1..=files).map(|n| (n as f64).powf(-gamma)).collect();
    let total: f64 = weights.iter().sum();
    Popularity::new(weights.into_iter().map(|w| w / total).collect())
}

/// Calls `f(d, Pr[d])` for every demand vector in lexicographic order.
pub fn for_each_demand(pop: &Popularity, users: usize, mut f: impl FnMut(&[usize], f64)) {
    let files = pop.len();
    let mut d = vec![0usize; users];
    loop {
        let prob = d.iter().map(|&n| pop.get(n)).product();
        f(&d, prob);
        let Some(pos) = (0..users).rev().find(|&k| d[k] + 1 < files) else {
            return;
        };
        d[pos] += 1;
        for slot in &mut d[pos + 1..] {
            *slot = 0;
        }
    }
}

/// Requests left after removing one request per distinct file, sorted
/// ascending by file index. Its length is `K - u`.
pub fn leftover_requests(d: &[usize]) -> Vec<usize> {
    let mut sorted = d.to_vec();
    sorted.sort_unstable();
    let mut rest = Vec::with_capacity(d.len());
    for (pos, &file) in sorted.iter().enumerate() {
        if pos > 0 && sorted[pos - 1] == file {
            rest.push(file);
        }
    }
    rest
}

pub fn distinct_files(d: &[usize]) -> usize {
    d.len() - leftover_requests(d).len()
}

fn check_p_prime_args(i: usize, u: usize, file: usize, files: usize, users: usize) -> Result<()> {
    if u == 0 || u > users.min(files) {
        return Err(Error::InvalidArgument(format!(
            "distinct count u = {u} outside 1..={}",
            users.min(files)
        )));
    }
    if i == 0 || i > users - u {
        return Err(Error::InvalidArgument(format!(
            "leftover rank i = {i} outside 1..={} for u = {u}",
            users - u
        )));
    }
    if file >= files {
        return Err(Error::InvalidArgument(format!("file {file} out of range")));
    }
    Ok(())
}

/// Closed-form evaluator for `P'`, memoizing the per-zone occupancy sums.
struct PPrimeEvaluator<'a> {
    pop: &'a Popularity,
    users: usize,
    zones: HashMap<(usize, usize, usize, usize), f64>,
}

impl<'a> PPrimeEvaluator<'a> {
    fn new(pop: &'a Popularity, users: usize) -> Result<Self> {
        if users > MAX_FORMULA_USERS || pop.len() > MAX_FORMULA_FILES {
            return Err(Error::TooLarge {
                what: "closed-form P' evaluation",
                detail: format!(
                    "K = {users}, N = {} (limits K <= {MAX_FORMULA_USERS}, N <= {MAX_FORMULA_FILES})",
                    pop.len()
                ),
            });
        }
        Ok(Self {
            pop,
            users,
            zones: HashMap::new(),
        })
    }

    /// Probability that `balls` labelled balls all land in `bins`, occupying
    /// exactly `occupied` of them: the sum over occupied sets `L` and positive
    /// compositions `alpha` of `balls!/prod alpha! * prod p^alpha`.
    fn zone(&mut self, bins: Range<usize>, occupied: usize, balls: usize) -> f64 {
        let key = (bins.start, bins.end, occupied, balls);
        if let Some(&v) = self.zones.get(&key) {
            return v;
        }
        let comps = compositions(balls, occupied);
        let mut total = 0.0;
        if !comps.is_empty() {
            let head = factorial(balls as u64);
            for set in subsets_of_size(bins.clone(), occupied) {
                for alpha in &comps {
                    let denom = alpha
                        .iter()
                        .fold(BigUint::one(), |acc, &a| acc * factorial(a as u64));
                    let coeff = to_f64(&(&head / denom));
                    let weight: f64 = set
                        .iter()
                        .zip(alpha)
                        .map(|(&f, &a)| self.pop.get(f).powi(a as i32))
                        .product();
                    total += coeff * weight;
                }
            }
        }
        self.zones.insert(key, total);
        total
    }

    fn eval(&mut self, i: usize, u: usize, file: usize) -> Result<f64> {
        let files = self.pop.len();
        let users = self.users;
        check_p_prime_args(i, u, file, files, users)?;
        let rank = file + 1;
        // Range of `a`, the number of occupied bins more popular than `rank`.
        let (a_lo, a_hi) = match (u <= rank, u + rank <= files + 1) {
            (true, true) => (0, u - 1),
            (true, false) => (u + rank - 1 - files, u - 1),
            (false, true) => (0, rank - 1),
            (false, false) => (u + rank - 1 - files, rank - 1),
        };
        let p_n = self.pop.get(file);
        let mut total = 0.0;
        for a in a_lo..=a_hi {
            // At most i-1 leftovers in bins before `rank` and at least i in
            // bins up to `rank`. The boundary cases a = 0 and a = u-1 are
            // covered because an empty zone only admits zero balls.
            let upper = users as isize - i as isize - a as isize - 1;
            if upper < (u - a - 1) as isize {
                continue;
            }
            for b1 in a..=i + a - 1 {
                for b2 in (u - a - 1)..=upper as usize {
                    if b1 + b2 > users {
                        continue;
                    }
                    let low = self.zone(0..file, a, b1);
                    if low == 0.0 {
                        continue;
                    }
                    let high = self.zone(file + 1..files, u - a - 1, b2);
                    if high == 0.0 {
                        continue;
                    }
                    let coeff = to_f64(&multinomial3(users as u64, b1 as u64, b2 as u64)?);
                    total += coeff * p_n.powi((users - b1 - b2) as i32) * low * high;
                }
            }
        }
        Ok(total)
    }
}

/// `P'(i, u, n)` by the closed-form occupancy sums. `file` is 0-based.
pub fn p_prime_formula(
    i: usize,
    u: usize,
    file: usize,
    pop: &Popularity,
    users: usize,
) -> Result<f64> {
    PPrimeEvaluator::new(pop, users)?.eval(i, u, file)
}

/// `P'(i, u, n)` by exhaustive enumeration of all `N^K` demand vectors.
pub fn p_prime_enumerate(
    i: usize,
    u: usize,
    file: usize,
    pop: &Popularity,
    users: usize,
) -> Result<f64> {
    check_p_prime_args(i, u, file, pop.len(), users)?;
    check_enumeration(demand_count(pop.len(), users))?;
    let mut total = 0.0;
    for_each_demand(pop, users, |d, prob| {
        let rest = leftover_requests(d);
        if d.len() - rest.len() == u && rest[i - 1] == file {
            total += prob;
        }
    });
    Ok(total)
}

/// Uniform-popularity `P''(u) = S(K,u) * C(N,u) * u! / N^K`.
pub fn p_double_prime(u: usize, users: usize, files: usize) -> Result<f64> {
    if u == 0 || u > users.min(files) {
        return Err(Error::InvalidArgument(format!(
            "distinct count u = {u} outside 1..={}",
            users.min(files)
        )));
    }
    let falling = binomial(files as u64, u as u64) * factorial(u as u64);
    let num = stirling2(users, u) * falling;
    let den = BigUint::from(files as u64).pow(users as u32);
    Ok(to_f64(&num) / to_f64(&den))
}

/// `Pr[exactly u distinct files requested]` for `u = 0..=K`, any popularity.
pub fn distinct_count_distribution(pop: &Popularity, users: usize) -> Vec<f64> {
    // g[b][j]: probability mass of assigning b labelled balls to the files
    // seen so far with j of them occupied
    let mut g = vec![vec![0.0; users + 1]; users + 1];
    g[0][0] = 1.0;
    for &p in pop.probs() {
        let mut next = vec![vec![0.0; users + 1]; users + 1];
        for b in 0..=users {
            for j in 0..=users {
                let cur = g[b][j];
                if cur == 0.0 {
                    continue;
                }
                for c in 0..=users - b {
                    let jj = if c > 0 { j + 1 } else { j };
                    if jj > users {
                        continue;
                    }
                    next[b + c][jj] += cur * choose(b + c, c) * p.powi(c as i32);
                }
            }
        }
        g = next;
    }
    std::mem::take(&mut g[users])
}

/// All `P'` and `P''` coefficients of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandStats {
    pub users: usize,
    pub files: usize,
    /// `p_prime[u-1][i-1][n]`.
    pub p_prime: Vec<Vec<Vec<f64>>>,
    /// `p_double_prime[u-1] = Pr[u distinct files requested]`.
    pub p_double_prime: Vec<f64>,
}

impl DemandStats {
    pub fn compute(pop: &Popularity, users: usize) -> Result<Self> {
        let files = pop.len();
        let max_u = users.min(files);
        let mut eval = PPrimeEvaluator::new(pop, users)?;
        let mut p_prime = Vec::with_capacity(max_u);
        for u in 1..=max_u {
            let mut by_rank = Vec::with_capacity(users - u);
            for i in 1..=users - u {
                let row = (0..files)
                    .map(|n| eval.eval(i, u, n))
                    .collect::<Result<Vec<_>>>()?;
                by_rank.push(row);
            }
            p_prime.push(by_rank);
        }
        let p_double_prime = if pop.is_uniform() {
            (1..=max_u)
                .map(|u| p_double_prime(u, users, files))
                .collect::<Result<Vec<_>>>()?
        } else {
            distinct_count_distribution(pop, users)[1..=max_u].to_vec()
        };
        Ok(Self {
            users,
            files,
            p_prime,
            p_double_prime,
        })
    }

    /// `P'(i, u, n)`; zero outside the valid index range.
    pub fn p_prime(&self, i: usize, u: usize, file: usize) -> f64 {
        if u == 0 || i == 0 {
            return 0.0;
        }
        self.p_prime
            .get(u - 1)
            .and_then(|t| t.get(i - 1))
            .and_then(|r| r.get(file))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn p_double_prime(&self, u: usize) -> f64 {
        if u == 0 {
            return 0.0;
        }
        self.p_double_prime.get(u - 1).copied().unwrap_or(0.0)
    }

    /// Largest number of distinct requested files, `min(K, N)`.
    pub fn max_distinct(&self) -> usize {
        self.users.min(self.files)
    }
}
