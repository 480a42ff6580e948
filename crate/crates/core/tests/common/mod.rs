//! Random parameter generators shared by the integration tests.
#![allow(dead_code)]

use ccopt::combinatorics::choose;
use ccopt::model::{PartitionParam, SymmetricParam};
use rand::Rng;

/// Random symmetric placement with every cached type nonincreasing in the
/// file index. Cache usage is at most `N`, so it fits any instance with `M = N`.
pub fn random_monotone_y<R: Rng>(users: usize, files: usize, rng: &mut R) -> SymmetricParam {
    let k = users;
    let mut w = vec![vec![0.0; k + 1]; files];
    for s in 1..=k {
        let mut col: Vec<f64> = (0..files).map(|_| rng.gen::<f64>()).collect();
        col.sort_by(|a, b| b.total_cmp(a));
        for (n, v) in col.into_iter().enumerate() {
            w[n][s] = v;
        }
    }
    let heaviest = w
        .iter()
        .map(|r| r[1..].iter().sum::<f64>())
        .fold(0.0, f64::max);
    let scale = rng.gen::<f64>() / heaviest;
    let y = w
        .into_iter()
        .map(|r| {
            let mut row = vec![0.0; k + 1];
            for s in 1..=k {
                row[s] = r[s] * scale / choose(k, s);
            }
            row[0] = 1.0 - (1..=k).map(|s| choose(k, s) * row[s]).sum::<f64>();
            row
        })
        .collect();
    SymmetricParam::new(k, y)
}

/// Random full placement with cache usage at most `memory` for every user.
/// Roughly a third of the subfiles are forced to zero.
pub fn random_partition<R: Rng>(users: usize, files: usize, memory: f64, rng: &mut R) -> PartitionParam {
    let subsets = 1usize << users;
    let mut x: Vec<Vec<f64>> = (0..files)
        .map(|_| {
            let mut row: Vec<f64> = (0..subsets)
                .map(|_| if rng.gen_bool(0.35) { 0.0 } else { rng.gen::<f64>() })
                .collect();
            row[0] += 1e-3;
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
            row
        })
        .collect();
    let param = PartitionParam::new(users, x.clone());
    let worst = param.cache_usage().into_iter().fold(0.0, f64::max);
    if worst > memory {
        let lambda = memory / worst;
        for row in &mut x {
            for v in row.iter_mut() {
                *v *= lambda;
            }
            row[0] += 1.0 - lambda;
        }
    }
    PartitionParam::new(users, x)
}
