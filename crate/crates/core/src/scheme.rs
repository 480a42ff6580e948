//! Placement and coded delivery simulator.
//!
//! Only subfile lengths are tracked. A message for user subset `S` XORs the
//! subfiles `W[d_k, S \ {k}]` for `k` in `S`, zero-padded to the longest one.
//! Subsets that contain no representative user are skipped since those
//! messages can be rebuilt from the others.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{check_enumeration, choose, demand_count, for_each_demand, DemandStats};
use crate::error::{Error, Result};
use crate::model::{users_of_mask, Instance, PartitionParam, SubsetOrder, SymmetricParam};

/// Subfiles at or below this size are treated as absent.
pub const ZERO_TOL: f64 = 1e-9;

/// One requested file per user, 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demand(pub Vec<usize>);

impl Demand {
    pub fn new(d: Vec<usize>, inst: &Instance) -> Result<Self> {
        if d.len() != inst.users {
            return Err(Error::InvalidArgument(format!(
                "demand has {} entries for K = {}",
                d.len(),
                inst.users
            )));
        }
        if let Some(&bad) = d.iter().find(|&&n| n >= inst.files) {
            return Err(Error::InvalidArgument(format!("file {bad} out of range")));
        }
        Ok(Self(d))
    }
}

/// Lowest-indexed user requesting each distinct file, ascending.
pub fn representatives(d: &[usize]) -> Vec<usize> {
    (0..d.len())
        .filter(|&k| !d[..k].contains(&d[k]))
        .collect()
}

fn representative_mask(d: &[usize]) -> u32 {
    representatives(d).iter().fold(0, |m, &k| m | 1 << k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub mask: u32,
    pub length: f64,
}

impl Serialize for Message {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            subset: Vec<usize>,
            length: f64,
        }
        Repr {
            subset: users_of_mask(self.mask),
            length: self.length,
        }
        .serialize(serializer)
    }
}

/// Messages sent for one demand. Users in the JSON form are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeliveryPlan {
    #[serde(serialize_with = "one_based")]
    pub representatives: Vec<usize>,
    pub messages: Vec<Message>,
}

fn one_based<S: serde::Serializer>(v: &[usize], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|k| k + 1))
}

impl DeliveryPlan {
    pub fn load(&self) -> f64 {
        self.messages.iter().map(|m| m.length).sum()
    }
}

fn message_length(x: &PartitionParam, order: &SubsetOrder, d: &[usize], mask: u32) -> f64 {
    let mut longest = 0.0f64;
    let mut rest = mask;
    while rest != 0 {
        let k = rest.trailing_zeros();
        rest &= rest - 1;
        longest = longest.max(x.x[d[k as usize]][order.index_of(mask & !(1 << k))]);
    }
    longest
}

fn check_shapes(inst: &Instance, x: &PartitionParam, d: &[usize]) -> Result<()> {
    if x.users != inst.users || x.files() != inst.files {
        return Err(Error::InvalidArgument(
            "placement shape does not match instance".into(),
        ));
    }
    Demand::new(d.to_vec(), inst).map(|_| ())
}

/// Messages for demand `d`, largest subsets first, ascending bitmask within a
/// cardinality. Zero-length messages are kept.
pub fn delivery(inst: &Instance, x: &PartitionParam, d: &[usize]) -> Result<DeliveryPlan> {
    check_shapes(inst, x, d)?;
    let order = SubsetOrder::new(inst.users);
    let reps = representative_mask(d);
    let mut messages = order
        .masks()
        .iter()
        .filter(|&&m| m & reps != 0)
        .map(|&mask| Message {
            mask,
            length: message_length(x, &order, d, mask),
        })
        .collect::<Vec<_>>();
    messages.sort_by_key(|m| (std::cmp::Reverse(m.mask.count_ones()), m.mask));
    Ok(DeliveryPlan {
        representatives: representatives(d),
        messages,
    })
}

fn load_unchecked(x: &PartitionParam, order: &SubsetOrder, d: &[usize]) -> f64 {
    let reps = representative_mask(d);
    order
        .masks()
        .iter()
        .filter(|&&m| m & reps != 0)
        .map(|&m| message_length(x, order, d, m))
        .sum()
}

/// Normalized delivery load for a single demand.
pub fn load(inst: &Instance, x: &PartitionParam, d: &[usize]) -> Result<f64> {
    check_shapes(inst, x, d)?;
    Ok(load_unchecked(x, &SubsetOrder::new(inst.users), d))
}

/// Compensated (Neumaier) running sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Expected load over all `N^K` demands.
pub fn average_load_exact(inst: &Instance, x: &PartitionParam) -> Result<f64> {
    check_enumeration(demand_count(inst.files, inst.users))?;
    check_shapes(inst, x, &vec![0; inst.users])?;
    let order = SubsetOrder::new(inst.users);
    let mut acc = NeumaierSum::default();
    for_each_demand(&inst.popularity, inst.users, |d, prob| {
        acc.add(prob * load_unchecked(x, &order, d));
    });
    Ok(acc.value())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    /// Standard error of the mean; zero for a single trial.
    pub stderr: f64,
    pub trials: usize,
}

/// Sampled expected load from `trials` i.i.d. demands.
pub fn average_load_mc(
    inst: &Instance,
    x: &PartitionParam,
    trials: usize,
    seed: u64,
) -> Result<McEstimate> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    check_shapes(inst, x, &vec![0; inst.users])?;
    let order = SubsetOrder::new(inst.users);
    let dist = WeightedIndex::new(inst.popularity.probs())
        .map_err(|e| Error::InvalidPopularity(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = vec![0; inst.users];
    // Welford accumulation
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..trials {
        for slot in &mut d {
            *slot = dist.sample(&mut rng);
        }
        let v = load_unchecked(x, &order, &d);
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let stderr = if trials > 1 {
        (m2 / (trials - 1) as f64 / trials as f64).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate {
        mean,
        stderr,
        trials,
    })
}

/// Whether every user recovers its requested file from its cache and the
/// messages of the delivery plan for `d`.
pub fn decode_check(inst: &Instance, x: &PartitionParam, d: &[usize]) -> Result<bool> {
    let plan = delivery(inst, x, d)?;
    decode_check_plan(inst, x, d, &plan)
}

/// Decodability of an arbitrary set of messages.
///
/// Each nonzero subfile is a symbol. A user knows the symbols it caches; each
/// message is the XOR of its nonzero constituents. The user decodes iff every
/// missing symbol of its file lies in the GF(2) span of the messages after
/// cancelling known symbols.
pub fn decode_check_plan(
    inst: &Instance,
    x: &PartitionParam,
    d: &[usize],
    plan: &DeliveryPlan,
) -> Result<bool> {
    check_shapes(inst, x, d)?;
    let order = SubsetOrder::new(inst.users);
    let subsets = order.len();
    let symbol = |file: usize, mask: u32| file * subsets + order.index_of(mask);
    let width = inst.files * subsets;
    let nonzero = |file: usize, mask: u32| x.x[file][order.index_of(mask)] > ZERO_TOL;

    for k in 0..inst.users {
        let cached = |mask: u32| mask >> k & 1 == 1;
        let mut basis = Gf2Basis::new(width);
        for msg in &plan.messages {
            let mut row = BitRow::new(width);
            let mut rest = msg.mask;
            while rest != 0 {
                let j = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                let sub = msg.mask & !(1 << j);
                if nonzero(d[j], sub) && !cached(sub) {
                    row.flip(symbol(d[j], sub));
                }
            }
            basis.insert(row);
        }
        for &mask in order.masks() {
            if cached(mask) || !nonzero(d[k], mask) {
                continue;
            }
            let mut target = BitRow::new(width);
            target.flip(symbol(d[k], mask));
            if !basis.spans(target) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[derive(Clone)]
struct BitRow(Vec<u64>);

impl BitRow {
    fn new(width: usize) -> Self {
        Self(vec![0; width.div_ceil(64)])
    }

    fn flip(&mut self, bit: usize) {
        self.0[bit / 64] ^= 1 << (bit % 64);
    }

    fn get(&self, bit: usize) -> bool {
        self.0[bit / 64] >> (bit % 64) & 1 == 1
    }

    fn xor(&mut self, other: &BitRow) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a ^= b;
        }
    }

    fn leading(&self) -> Option<usize> {
        self.0
            .iter()
            .enumerate()
            .find(|(_, w)| **w != 0)
            .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
    }
}

/// Row-echelon basis keyed by pivot bit.
struct Gf2Basis {
    rows: Vec<Option<BitRow>>,
}

impl Gf2Basis {
    fn new(width: usize) -> Self {
        Self {
            rows: vec![None; width],
        }
    }

    fn reduce(&self, mut row: BitRow) -> BitRow {
        while let Some(p) = row.leading() {
            match &self.rows[p] {
                Some(b) => row.xor(b),
                None => break,
            }
        }
        row
    }

    fn insert(&mut self, row: BitRow) {
        let row = self.reduce(row);
        if let Some(p) = row.leading() {
            debug_assert!(row.get(p));
            self.rows[p] = Some(row);
        }
    }

    fn spans(&self, target: BitRow) -> bool {
        // full reduction: clear every bit that has a pivot row
        let mut row = target;
        loop {
            let pivot = row
                .0
                .iter()
                .enumerate()
                .flat_map(|(i, &w)| {
                    (0..64)
                        .filter(move |b| w >> b & 1 == 1)
                        .map(move |b| i * 64 + b)
                })
                .find(|&bit| self.rows[bit].is_some());
            match pivot {
                Some(bit) => row.xor(self.rows[bit].as_ref().expect("pivot row")),
                None => return row.leading().is_none(),
            }
        }
    }
}

/// Linear coefficients `c[n][s]` with average load `sum c[n][s] * y[n][s]`
/// for symmetric placements ordered by popularity.
///
/// The first part charges every message the subfile of the most popular file
/// it touches; the second removes messages with no representative user.
pub fn symmetric_load_coefficients(inst: &Instance, stats: &DemandStats) -> Vec<Vec<f64>> {
    let k = inst.users;
    let pop = &inst.popularity;
    let mut c = vec![vec![0.0; k + 1]; inst.files];
    for s in 1..=k {
        let weight = choose(k, s);
        for (n, row) in c.iter_mut().enumerate() {
            let at = pop.tail(n).powi(s as i32);
            let below = pop.tail(n + 1).powi(s as i32);
            row[s - 1] += weight * (at - below);
        }
    }
    for u in 1..=stats.max_distinct() {
        for s in 1..=k - u {
            for i in 1..=k - u {
                let w = choose(k - u - i, s - 1);
                if w == 0.0 {
                    continue;
                }
                for (n, row) in c.iter_mut().enumerate() {
                    row[s - 1] -= w * stats.p_prime(i, u, n);
                }
            }
        }
    }
    c
}

/// Expected load of a symmetric placement via the closed-form coefficients.
pub fn average_load_symmetric(
    inst: &Instance,
    y: &SymmetricParam,
    stats: &DemandStats,
) -> Result<f64> {
    if y.users != inst.users || y.files() != inst.files {
        return Err(Error::InvalidArgument(
            "placement shape does not match instance".into(),
        ));
    }
    if let Some((file, ty)) = y.first_order_violation() {
        return Err(Error::NotMonotone { file, ty });
    }
    let c = symmetric_load_coefficients(inst, stats);
    let mut acc = NeumaierSum::default();
    for (cr, yr) in c.iter().zip(&y.y) {
        for (a, b) in cr.iter().zip(yr) {
            acc.add(a * b);
        }
    }
    Ok(acc.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UniformParam;

    fn mn(inst: &Instance, t: usize) -> PartitionParam {
        UniformParam::mn_point(inst.users, t)
            .unwrap()
            .expand(inst.files)
            .expand()
    }

    #[test]
    fn representatives_lowest_index() {
        assert_eq!(representatives(&[0, 0, 1]), vec![0, 2]);
        assert_eq!(representatives(&[2, 0, 1]), vec![0, 1, 2]);
        assert_eq!(representatives(&[1, 1, 1]), vec![0]);
    }

    #[test]
    fn delivery_mn_point() {
        let inst = Instance::uniform(2, 2, 1.0).unwrap();
        let x = mn(&inst, 1);
        let plan = delivery(&inst, &x, &[0, 1]).unwrap();
        let nonzero: Vec<_> = plan.messages.iter().filter(|m| m.length > 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(nonzero[0].mask, 0b11);
        assert!((nonzero[0].length - 0.5).abs() < 1e-15);
        assert!((load(&inst, &x, &[0, 1]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(plan.messages[0].mask, 0b11);
    }

    #[test]
    fn delivery_skips_subsets_without_representatives() {
        let inst = Instance::uniform(2, 2, 1.0).unwrap();
        let x = mn(&inst, 1);
        let plan = delivery(&inst, &x, &[0, 0]).unwrap();
        let masks: Vec<u32> = plan.messages.iter().map(|m| m.mask).collect();
        assert_eq!(masks, vec![0b11, 0b01]);
    }

    #[test]
    fn empty_cache_loads() {
        let inst = Instance::uniform(2, 2, 0.0).unwrap();
        let x = PartitionParam::empty_cache(2, 2);
        let plan = delivery(&inst, &x, &[0, 1]).unwrap();
        for m in &plan.messages {
            let expected = if m.mask.count_ones() == 1 { 1.0 } else { 0.0 };
            assert_eq!(m.length, expected);
        }
        assert_eq!(load(&inst, &x, &[0, 1]).unwrap(), 2.0);
        assert!((average_load_exact(&inst, &x).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn average_load_corner_cases() {
        let inst = Instance::uniform(2, 2, 1.0).unwrap();
        assert!((average_load_exact(&inst, &mn(&inst, 1)).unwrap() - 0.5).abs() < 1e-15);
        let full = Instance::uniform(3, 2, 2.0).unwrap();
        let x = mn(&full, 3);
        assert_eq!(average_load_exact(&full, &x).unwrap(), 0.0);
        assert!(decode_check(&full, &x, &[0, 1, 1]).unwrap());
        assert!(delivery(&full, &x, &[0, 1, 1])
            .unwrap()
            .messages
            .iter()
            .all(|m| m.length == 0.0));
    }

    #[test]
    fn plan_json_is_one_based() {
        let inst = Instance::uniform(2, 2, 1.0).unwrap();
        let plan = delivery(&inst, &mn(&inst, 1), &[0, 0]).unwrap();
        let v = serde_json::to_value(&plan).unwrap();
        assert_eq!(v["representatives"], serde_json::json!([1]));
        assert_eq!(v["messages"][0]["subset"], serde_json::json!([1, 2]));
        assert_eq!(v["messages"][1]["subset"], serde_json::json!([1]));
    }

    #[test]
    fn mutilated_plan_fails_to_decode() {
        let inst = Instance::uniform(3, 4, 1.0).unwrap();
        let x = mn(&inst, 1);
        let d = [0, 1, 2];
        let mut plan = delivery(&inst, &x, &d).unwrap();
        assert!(decode_check_plan(&inst, &x, &d, &plan).unwrap());
        let pos = plan.messages.iter().position(|m| m.length > 0.0).unwrap();
        plan.messages.remove(pos);
        assert!(!decode_check_plan(&inst, &x, &d, &plan).unwrap());
    }

    #[test]
    fn mc_single_trial_and_determinism() {
        let inst = Instance::zipf(3, 4, 1.0, 1.5).unwrap();
        let x = mn(&inst, 1);
        let a = average_load_mc(&inst, &x, 1000, 7).unwrap();
        let b = average_load_mc(&inst, &x, 1000, 7).unwrap();
        assert_eq!(a, b);
        let one = average_load_mc(&inst, &x, 1, 3).unwrap();
        assert_eq!(one.stderr, 0.0);
        assert!(average_load_mc(&inst, &x, 0, 3).is_err());
    }

    #[test]
    fn symmetric_rejects_unordered() {
        let inst = Instance::zipf(2, 2, 1.0, 1.0).unwrap();
        let stats = DemandStats::compute(&inst.popularity, 2).unwrap();
        let y = SymmetricParam::new(2, vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.5, 0.0]]);
        assert!(matches!(
            average_load_symmetric(&inst, &y, &stats),
            Err(Error::NotMonotone { .. })
        ));
    }

    #[test]
    fn symmetric_full_caching_is_zero() {
        let inst = Instance::zipf(3, 3, 3.0, 1.0).unwrap();
        let stats = DemandStats::compute(&inst.popularity, 3).unwrap();
        let y = UniformParam::mn_point(3, 3).unwrap().expand(3);
        assert!(average_load_symmetric(&inst, &y, &stats).unwrap().abs() < 1e-15);
    }
}
