//! Caching instances and the three placement parameterizations.
//!
//! * [`PartitionParam`]: one size per (file, user subset), `N * 2^K` values;
//! * [`SymmetricParam`]: one size per (file, subset cardinality), `N * (K+1)`;
//! * [`UniformParam`]: one size per subset cardinality, shared by all files.
//!
//! All sizes are fractions of a file. Users are 0-based in code; a subset of
//! users is a bitmask with bit `k` set when user `k` belongs to it.

use serde::{Deserialize, Serialize};

use crate::combinatorics::{choose, zipf, Popularity};
use crate::error::{Error, Result};

/// Feasibility tolerance shared by every constraint check.
pub const FEAS_TOL: f64 = 1e-9;

/// Largest user count for which per-subset parameters are materialized.
pub const MAX_USERS: usize = 20;

/// A caching problem: `K` users, `N` files, cache size `M` (in files).
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub users: usize,
    pub files: usize,
    pub memory: f64,
    pub popularity: Popularity,
}

impl Instance {
    pub fn new(users: usize, files: usize, memory: f64, popularity: Popularity) -> Result<Self> {
        if users == 0 || users > MAX_USERS {
            return Err(Error::InvalidInstance(format!(
                "K = {users} outside 1..={MAX_USERS}"
            )));
        }
        if files == 0 {
            return Err(Error::InvalidInstance("N must be at least 1".into()));
        }
        if !(memory.is_finite() && (0.0..=files as f64).contains(&memory)) {
            return Err(Error::InvalidInstance(format!(
                "M = {memory} outside [0, {files}]"
            )));
        }
        if popularity.len() != files {
            return Err(Error::InvalidInstance(format!(
                "popularity has {} entries for N = {files}",
                popularity.len()
            )));
        }
        Ok(Self {
            users,
            files,
            memory,
            popularity,
        })
    }

    pub fn zipf(users: usize, files: usize, memory: f64, gamma: f64) -> Result<Self> {
        Self::new(users, files, memory, zipf(files, gamma)?)
    }

    pub fn uniform(users: usize, files: usize, memory: f64) -> Result<Self> {
        Self::zipf(users, files, memory, 0.0)
    }

    /// Same instance with a different cache size.
    pub fn with_memory(&self, memory: f64) -> Result<Self> {
        Self::new(self.users, self.files, memory, self.popularity.clone())
    }

    /// Cache fraction scaled to users, `t = KM/N`.
    pub fn t(&self) -> f64 {
        self.users as f64 * self.memory / self.files as f64
    }

    pub fn num_subsets(&self) -> usize {
        1 << self.users
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: InstanceJson = serde_json::from_str(text)?;
        raw.try_into()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&InstanceJson::from(self))?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum PopularityJson {
    Explicit(Vec<f64>),
    Zipf { zipf_gamma: f64 },
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceJson {
    #[serde(rename = "K")]
    users: usize,
    #[serde(rename = "N")]
    files: usize,
    #[serde(rename = "M")]
    memory: f64,
    popularity: PopularityJson,
}

impl TryFrom<InstanceJson> for Instance {
    type Error = Error;

    fn try_from(raw: InstanceJson) -> Result<Self> {
        let pop = match raw.popularity {
            PopularityJson::Explicit(p) => Popularity::new(p)?,
            PopularityJson::Zipf { zipf_gamma } => zipf(raw.files, zipf_gamma)?,
        };
        Instance::new(raw.users, raw.files, raw.memory, pop)
    }
}

impl From<&Instance> for InstanceJson {
    fn from(inst: &Instance) -> Self {
        Self {
            users: inst.users,
            files: inst.files,
            memory: inst.memory,
            popularity: PopularityJson::Explicit(inst.popularity.probs().to_vec()),
        }
    }
}

impl Serialize for Instance {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        InstanceJson::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Instance {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = InstanceJson::deserialize(deserializer)?;
        raw.try_into().map_err(serde::de::Error::custom)
    }
}

/// Dense ordering of user subsets by (cardinality, ascending bitmask).
///
/// Subsets of equal cardinality are contiguous, so position `i` falls in the
/// band of type `|S|`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetOrder {
    users: usize,
    masks: Vec<u32>,
    index: Vec<usize>,
}

impl SubsetOrder {
    pub fn new(users: usize) -> Self {
        assert!(users <= MAX_USERS, "too many users for subset order");
        let mut masks: Vec<u32> = (0..1u32 << users).collect();
        masks.sort_by_key(|&m| (m.count_ones(), m));
        let mut index = vec![0; masks.len()];
        for (i, &m) in masks.iter().enumerate() {
            index[m as usize] = i;
        }
        Self {
            users,
            masks,
            index,
        }
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Dense position of a subset bitmask.
    pub fn index_of(&self, mask: u32) -> usize {
        self.index[mask as usize]
    }

    /// Bitmask stored at a dense position.
    pub fn mask_at(&self, index: usize) -> u32 {
        self.masks[index]
    }

    pub fn masks(&self) -> &[u32] {
        &self.masks
    }

    /// First dense position of the type-`s` band.
    pub fn band_start(&self, s: usize) -> usize {
        (0..s).map(|j| choose(self.users, j) as usize).sum()
    }
}

/// Dense position of a subset given as 1-based user labels.
pub fn subset_index(users_in: &[usize], users: usize) -> Result<usize> {
    let mask = mask_from_users(users_in, users)?;
    Ok(SubsetOrder::new(users).index_of(mask))
}

/// Inverse of [`subset_index`]: ascending 1-based user labels.
pub fn subset_at(index: usize, users: usize) -> Result<Vec<usize>> {
    if index >= 1 << users {
        return Err(Error::InvalidArgument(format!(
            "subset position {index} out of range for K = {users}"
        )));
    }
    Ok(users_of_mask(SubsetOrder::new(users).mask_at(index)))
}

pub fn mask_from_users(users_in: &[usize], users: usize) -> Result<u32> {
    let mut mask = 0u32;
    for &k in users_in {
        if k == 0 || k > users {
            return Err(Error::InvalidArgument(format!(
                "user {k} outside 1..={users}"
            )));
        }
        mask |= 1 << (k - 1);
    }
    Ok(mask)
}

/// Ascending 1-based user labels of a bitmask.
pub fn users_of_mask(mask: u32) -> Vec<usize> {
    (0..32).filter(|k| mask >> k & 1 == 1).map(|k| k + 1).collect()
}

/// Which constraint a [`Violation`] breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Parameter shape does not match the instance.
    Shape,
    /// A subfile size outside `[0, 1]`.
    SizeBounds,
    /// Subfile sizes of a file do not add up to one file.
    FileMass,
    /// A cache stores more than `M` files worth of data.
    CacheCapacity,
    /// A subfile type grows as popularity drops.
    PopularityOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Offending file, if the constraint is per file.
    pub file: Option<usize>,
    /// Offending subset position, type, or user, depending on `kind`.
    pub entry: Option<usize>,
    /// Amount by which the constraint is exceeded.
    pub excess: f64,
}

impl Violation {
    fn new(kind: ViolationKind, file: Option<usize>, entry: Option<usize>, excess: f64) -> Self {
        Self {
            kind,
            file,
            entry,
            excess,
        }
    }
}

fn shape(detail: usize) -> Violation {
    Violation::new(ViolationKind::Shape, None, Some(detail), f64::INFINITY)
}

fn check_bounds(out: &mut Vec<Violation>, v: f64, file: Option<usize>, entry: usize) {
    let excess = if v.is_nan() {
        f64::INFINITY
    } else {
        (-v).max(v - 1.0)
    };
    if excess > FEAS_TOL {
        out.push(Violation::new(
            ViolationKind::SizeBounds,
            file,
            Some(entry),
            excess,
        ));
    }
}

/// Maps simplex noise just outside `[0, 1]` back onto the boundary.
pub fn clamp_noise(v: f64) -> f64 {
    if v < 0.0 && v > -FEAS_TOL {
        0.0
    } else if v > 1.0 && v < 1.0 + FEAS_TOL {
        1.0
    } else {
        v
    }
}

/// Full placement: `x[n][i]` is the size of subfile `(n, S)` where `i` is the
/// position of `S` in [`SubsetOrder`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionParam {
    #[serde(rename = "K")]
    pub users: usize,
    pub x: Vec<Vec<f64>>,
}

impl PartitionParam {
    pub fn new(users: usize, x: Vec<Vec<f64>>) -> Self {
        Self { users, x }
    }

    /// Every file entirely uncached.
    pub fn empty_cache(users: usize, files: usize) -> Self {
        let mut x = vec![vec![0.0; 1 << users]; files];
        for row in &mut x {
            row[0] = 1.0;
        }
        Self { users, x }
    }

    pub fn files(&self) -> usize {
        self.x.len()
    }

    /// Size of subfile `(file, mask)` for a raw bitmask.
    pub fn get(&self, order: &SubsetOrder, file: usize, mask: u32) -> f64 {
        self.x[file][order.index_of(mask)]
    }

    /// Data cached by each user, in files.
    pub fn cache_usage(&self) -> Vec<f64> {
        let order = SubsetOrder::new(self.users);
        let mut usage = vec![0.0; self.users];
        for row in &self.x {
            for (i, &v) in row.iter().enumerate() {
                let mask = order.mask_at(i);
                for (k, slot) in usage.iter_mut().enumerate() {
                    if mask >> k & 1 == 1 {
                        *slot += v;
                    }
                }
            }
        }
        usage
    }

    pub fn clamp_noise(&mut self) {
        for v in self.x.iter_mut().flatten() {
            *v = clamp_noise(*v);
        }
    }

    pub fn validate(&self, inst: &Instance) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.users != inst.users || self.x.len() != inst.files {
            out.push(shape(self.x.len()));
            return out;
        }
        for (n, row) in self.x.iter().enumerate() {
            if row.len() != inst.num_subsets() {
                out.push(shape(row.len()));
                return out;
            }
            for (i, &v) in row.iter().enumerate() {
                check_bounds(&mut out, v, Some(n), i);
            }
            let mass: f64 = row.iter().sum();
            if (mass - 1.0).abs() > FEAS_TOL {
                out.push(Violation::new(
                    ViolationKind::FileMass,
                    Some(n),
                    None,
                    (mass - 1.0).abs(),
                ));
            }
        }
        for (k, used) in self.cache_usage().into_iter().enumerate() {
            if used > inst.memory + FEAS_TOL {
                out.push(Violation::new(
                    ViolationKind::CacheCapacity,
                    None,
                    Some(k),
                    used - inst.memory,
                ));
            }
        }
        out
    }
}

/// Placement whose subfile sizes depend only on the file and the number of
/// users caching the subfile: `y[n][s]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricParam {
    #[serde(rename = "K")]
    pub users: usize,
    pub y: Vec<Vec<f64>>,
}

impl SymmetricParam {
    pub fn new(users: usize, y: Vec<Vec<f64>>) -> Self {
        Self { users, y }
    }

    /// Reads an LP solution laid out as `v[n * (K+1) + s]`.
    pub fn from_flat(users: usize, files: usize, v: &[f64]) -> Self {
        let y = (0..files)
            .map(|n| v[n * (users + 1)..(n + 1) * (users + 1)].to_vec())
            .collect();
        Self { users, y }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.y.iter().flatten().copied().collect()
    }

    pub fn files(&self) -> usize {
        self.y.len()
    }

    /// Data cached by any single user, in files.
    pub fn cache_usage(&self) -> f64 {
        let k = self.users;
        self.y
            .iter()
            .map(|row| {
                (1..=k)
                    .map(|s| choose(k - 1, s - 1) * row[s])
                    .sum::<f64>()
            })
            .sum()
    }

    pub fn clamp_noise(&mut self) {
        for v in self.y.iter_mut().flatten() {
            *v = clamp_noise(*v);
        }
    }

    /// Returns the first `(file, type)` where a less popular file has a
    /// larger cached subfile, if any.
    pub fn first_order_violation(&self) -> Option<(usize, usize)> {
        for n in 0..self.y.len().saturating_sub(1) {
            for s in 1..=self.users {
                if self.y[n + 1][s] > self.y[n][s] + FEAS_TOL {
                    return Some((n, s));
                }
            }
        }
        None
    }

    pub fn validate(&self, inst: &Instance) -> Vec<Violation> {
        let mut out = Vec::new();
        let k = inst.users;
        if self.users != k
            || self.y.len() != inst.files
            || self.y.iter().any(|r| r.len() != k + 1)
        {
            out.push(shape(self.y.len()));
            return out;
        }
        for (n, row) in self.y.iter().enumerate() {
            for (s, &v) in row.iter().enumerate() {
                check_bounds(&mut out, v, Some(n), s);
            }
            let mass: f64 = row.iter().enumerate().map(|(s, v)| choose(k, s) * v).sum();
            if (mass - 1.0).abs() > FEAS_TOL {
                out.push(Violation::new(
                    ViolationKind::FileMass,
                    Some(n),
                    None,
                    (mass - 1.0).abs(),
                ));
            }
        }
        let used = self.cache_usage();
        if used > inst.memory + FEAS_TOL {
            out.push(Violation::new(
                ViolationKind::CacheCapacity,
                None,
                None,
                used - inst.memory,
            ));
        }
        for n in 0..inst.files.saturating_sub(1) {
            for s in 1..=k {
                let excess = self.y[n + 1][s] - self.y[n][s];
                if excess > FEAS_TOL {
                    out.push(Violation::new(
                        ViolationKind::PopularityOrder,
                        Some(n + 1),
                        Some(s),
                        excess,
                    ));
                }
            }
        }
        out
    }

    /// Full placement with `x[n][S] = y[n][|S|]`.
    pub fn expand(&self) -> PartitionParam {
        let order = SubsetOrder::new(self.users);
        let x = self
            .y
            .iter()
            .map(|row| {
                order
                    .masks()
                    .iter()
                    .map(|m| row[m.count_ones() as usize])
                    .collect()
            })
            .collect();
        PartitionParam::new(self.users, x)
    }
}

/// Placement shared by all files: `z[s]` per subset cardinality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformParam {
    #[serde(rename = "K")]
    pub users: usize,
    pub z: Vec<f64>,
}

impl UniformParam {
    pub fn new(users: usize, z: Vec<f64>) -> Self {
        Self { users, z }
    }

    /// Uncoded-prefetching point for integer `t`: all mass on type-`t`
    /// subfiles, each of size `1 / C(K, t)`.
    pub fn mn_point(users: usize, t: usize) -> Result<Self> {
        if t > users {
            return Err(Error::InvalidArgument(format!(
                "t = {t} exceeds K = {users}"
            )));
        }
        let mut z = vec![0.0; users + 1];
        z[t] = 1.0 / choose(users, t);
        Ok(Self { users, z })
    }

    pub fn clamp_noise(&mut self) {
        for v in &mut self.z {
            *v = clamp_noise(*v);
        }
    }

    pub fn validate(&self, inst: &Instance) -> Vec<Violation> {
        let mut out = Vec::new();
        let k = inst.users;
        if self.users != k || self.z.len() != k + 1 {
            out.push(shape(self.z.len()));
            return out;
        }
        for (s, &v) in self.z.iter().enumerate() {
            check_bounds(&mut out, v, None, s);
        }
        let mass: f64 = self.z.iter().enumerate().map(|(s, v)| choose(k, s) * v).sum();
        if (mass - 1.0).abs() > FEAS_TOL {
            out.push(Violation::new(
                ViolationKind::FileMass,
                None,
                None,
                (mass - 1.0).abs(),
            ));
        }
        let stored: f64 = self
            .z
            .iter()
            .enumerate()
            .map(|(s, v)| choose(k, s) * s as f64 * v)
            .sum();
        if stored > inst.t() + FEAS_TOL {
            out.push(Violation::new(
                ViolationKind::CacheCapacity,
                None,
                None,
                stored - inst.t(),
            ));
        }
        out
    }

    /// Symmetric placement with every file using `z`.
    pub fn expand(&self, files: usize) -> SymmetricParam {
        SymmetricParam::new(self.users, vec![self.z.clone(); files])
    }
}

/// Full placement of a symmetric parameter.
pub fn expand_y(y: &SymmetricParam) -> PartitionParam {
    y.expand()
}

/// Symmetric placement of a uniform parameter.
pub fn expand_z(z: &UniformParam, inst: &Instance) -> SymmetricParam {
    z.expand(inst.files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_order_small() {
        assert_eq!(subset_index(&[], 2).unwrap(), 0);
        assert_eq!(subset_index(&[1], 2).unwrap(), 1);
        assert_eq!(subset_index(&[2], 2).unwrap(), 2);
        assert_eq!(subset_index(&[1, 2], 2).unwrap(), 3);
        assert_eq!(subset_index(&[2], 3).unwrap(), 2);
        for k in 1..=5 {
            for i in 0..1 << k {
                assert_eq!(subset_index(&subset_at(i, k).unwrap(), k).unwrap(), i);
            }
        }
        let order = SubsetOrder::new(4);
        assert_eq!(order.band_start(2), 5);
        assert!(subset_index(&[3], 2).is_err());
    }

    #[test]
    fn expand_y_examples() {
        let y = SymmetricParam::new(2, vec![vec![1.0, 0.0, 0.0]]);
        assert_eq!(y.expand().x, vec![vec![1.0, 0.0, 0.0, 0.0]]);
        let y = SymmetricParam::new(2, vec![vec![0.0, 0.5, 0.0]]);
        assert_eq!(y.expand().x, vec![vec![0.0, 0.5, 0.5, 0.0]]);
    }

    #[test]
    fn mn_point_is_feasible() {
        let inst = Instance::uniform(4, 8, 2.0).unwrap();
        let z = UniformParam::mn_point(4, 1).unwrap();
        assert!(z.validate(&inst).is_empty());
        let y = z.expand(8);
        assert!(y.validate(&inst).is_empty());
        assert!((y.cache_usage() - 2.0).abs() < 1e-12);
        let x = y.expand();
        assert!(x.validate(&inst).is_empty());
        for used in x.cache_usage() {
            assert!((used - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn order_violation_is_reported() {
        let inst = Instance::uniform(2, 2, 1.0).unwrap();
        let y = SymmetricParam::new(2, vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.5, 0.0]]);
        let v = y.validate(&inst);
        assert!(v
            .iter()
            .any(|e| e.kind == ViolationKind::PopularityOrder && e.file == Some(1)));
        assert_eq!(y.first_order_violation(), Some((0, 1)));
    }

    #[test]
    fn file_mass_violation_is_reported() {
        let inst = Instance::uniform(2, 2, 1.0).unwrap();
        let mut x = PartitionParam::empty_cache(2, 2);
        x.x[1][0] = 0.9;
        let v = x.validate(&inst);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::FileMass);
        assert_eq!(v[0].file, Some(1));
    }

    #[test]
    fn capacity_violation_is_reported() {
        let inst = Instance::uniform(2, 2, 0.5).unwrap();
        let x = UniformParam::mn_point(2, 1).unwrap().expand(2).expand();
        let v = x.validate(&inst);
        assert_eq!(v.len(), 2);
        assert!(v.iter().all(|e| e.kind == ViolationKind::CacheCapacity));
    }

    #[test]
    fn instance_json_roundtrip() {
        let inst = Instance::from_json(r#"{"K":3,"N":4,"M":1.5,"popularity":{"zipf_gamma":1.0}}"#)
            .unwrap();
        assert_eq!(inst.users, 3);
        assert!((inst.popularity.get(0) - 12.0 / 25.0).abs() < 1e-15);
        let back = Instance::from_json(&inst.to_json().unwrap()).unwrap();
        assert_eq!(back, inst);
        let explicit =
            Instance::from_json(r#"{"K":2,"N":2,"M":1,"popularity":[0.75,0.25]}"#).unwrap();
        assert_eq!(explicit.popularity.probs(), &[0.75, 0.25]);
        assert!(Instance::from_json(r#"{"K":2,"N":2,"M":3,"popularity":[0.5,0.5]}"#).is_err());
    }

    #[test]
    fn clamp_noise_only_touches_noise() {
        assert_eq!(clamp_noise(-1e-12), 0.0);
        assert_eq!(clamp_noise(1.0 + 1e-12), 1.0);
        assert_eq!(clamp_noise(-1e-3), -1e-3);
    }
}
