//! Expectations over random active-user sets. Every quantity of interest
//! depends on the active set only through its per-tier counts, so exact
//! enumeration walks count vectors with binomial weights.

use std::collections::BTreeMap;

use cacheopt::simulator::Welford;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, CliResult};

/// Enumerate when there are at most this many count vectors, sample otherwise.
pub const ENUMERATION_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivityMode {
    Enumerate,
    Sample { samples: usize, seed: u64 },
}

impl ActivityMode {
    pub fn auto(tier_users: &[usize], samples: usize, seed: u64) -> Self {
        let vectors = tier_users
            .iter()
            .try_fold(1usize, |acc, &l| acc.checked_mul(l + 1))
            .unwrap_or(usize::MAX);
        if vectors <= ENUMERATION_LIMIT {
            ActivityMode::Enumerate
        } else {
            ActivityMode::Sample { samples, seed }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivityAverage {
    pub mean: f64,
    /// Zero under exact enumeration.
    pub stderr: f64,
}

fn binomial_pmf(n: usize, k: usize, p: f64) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

fn check_probs(tier_users: &[usize], probs: &[f64]) -> CliResult<()> {
    if probs.len() != tier_users.len() {
        return Err(CliError::Config(format!(
            "{} activity probabilities for {} tiers",
            probs.len(),
            tier_users.len()
        )));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(CliError::Config(format!(
            "activity probability {p} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Every count vector with positive probability and its probability.
pub fn count_distribution(
    tier_users: &[usize],
    probs: &[f64],
) -> CliResult<Vec<(Vec<usize>, f64)>> {
    check_probs(tier_users, probs)?;
    let mut out = vec![(Vec::new(), 1.0)];
    for (&l, &p) in tier_users.iter().zip(probs) {
        let mut next = Vec::with_capacity(out.len() * (l + 1));
        for (counts, w) in &out {
            for a in 0..=l {
                let pa = binomial_pmf(l, a, p);
                if pa > 0.0 {
                    let mut c: Vec<usize> = counts.clone();
                    c.push(a);
                    next.push((c, w * pa));
                }
            }
        }
        out = next;
    }
    Ok(out)
}

/// Component-wise expectation of `f(counts)` over active sets where each user
/// of tier `t` is active independently with probability `probs[t]`. `f` is
/// called once per distinct count vector.
pub fn activity_average<F>(
    tier_users: &[usize],
    probs: &[f64],
    mode: ActivityMode,
    mut f: F,
) -> CliResult<Vec<ActivityAverage>>
where
    F: FnMut(&[usize]) -> CliResult<Vec<f64>>,
{
    check_probs(tier_users, probs)?;
    let mut cache: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    let mut eval = |counts: &[usize]| -> CliResult<Vec<f64>> {
        if let Some(v) = cache.get(counts) {
            return Ok(v.clone());
        }
        let v = f(counts)?;
        cache.insert(counts.to_vec(), v.clone());
        Ok(v)
    };
    match mode {
        ActivityMode::Enumerate => {
            let mut acc: Vec<f64> = Vec::new();
            for (counts, w) in count_distribution(tier_users, probs)? {
                let v = eval(&counts)?;
                if acc.is_empty() {
                    acc = vec![0.0; v.len()];
                }
                for (a, x) in acc.iter_mut().zip(&v) {
                    *a += w * x;
                }
            }
            Ok(acc
                .into_iter()
                .map(|mean| ActivityAverage { mean, stderr: 0.0 })
                .collect())
        }
        ActivityMode::Sample { samples, seed } => {
            if samples < 2 {
                return Err(CliError::Config("need at least 2 activity samples".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut stats: Vec<Welford> = Vec::new();
            for _ in 0..samples {
                let counts: Vec<usize> = tier_users
                    .iter()
                    .zip(probs)
                    .map(|(&l, &p)| (0..l).filter(|_| rng.random::<f64>() < p).count())
                    .collect();
                let v = eval(&counts)?;
                if stats.is_empty() {
                    stats = vec![Welford::default(); v.len()];
                }
                for (s, x) in stats.iter_mut().zip(&v) {
                    s.push(*x);
                }
            }
            Ok(stats
                .iter()
                .map(|s| ActivityAverage {
                    mean: s.mean(),
                    stderr: s.stderr(),
                })
                .collect())
        }
    }
}
