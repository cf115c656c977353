//! Seeded random instances shared by the integration tests.

#![allow(dead_code)]

use cacheopt::smooth_opt::project_feasible;
use cacheopt::{CachingParameter, SystemInstance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` files of random size, one tier per entry of `users` with strictly
/// increasing caches, nonincreasing random popularity.
pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, users: &[usize]) -> SystemInstance {
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..5.0)).collect();
    let total: f64 = v.iter().sum();
    let mut fr: Vec<f64> = (0..users.len())
        .map(|_| rng.random_range(0.02..0.9))
        .collect();
    fr.sort_by(f64::total_cmp);
    let caches: Vec<f64> = fr
        .iter()
        .enumerate()
        .map(|(i, f)| (f + 0.02 * i as f64) * total)
        .collect();
    let mut pop: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    pop.sort_by(|a, b| b.total_cmp(a));
    let s: f64 = pop.iter().sum();
    pop.iter_mut().for_each(|p| *p /= s);
    SystemInstance::new(v, caches, users.to_vec(), pop).unwrap()
}

/// `N <= 3` files and `K <= 3` users split over one to `K` tiers.
pub fn random_small(rng: &mut ChaCha8Rng) -> SystemInstance {
    let n = rng.random_range(1..=3);
    let k: usize = rng.random_range(1..=3);
    let tiers = rng.random_range(1..=k);
    let mut users = vec![1; tiers];
    for _ in tiers..k {
        let t = rng.random_range(0..tiers);
        users[t] += 1;
    }
    random_instance(rng, n, &users)
}

/// Uniform draw projected onto the feasible set.
pub fn random_feasible(rng: &mut ChaCha8Rng, inst: &SystemInstance) -> CachingParameter {
    let t = inst.n_tiers();
    let n = inst.n_files();
    let raw: Vec<f64> = (0..t * n).map(|_| rng.random_range(0.0..1.2)).collect();
    project_feasible(&CachingParameter::new(t, n, raw).unwrap(), inst).unwrap()
}
