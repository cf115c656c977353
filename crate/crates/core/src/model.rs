//! System description: library, cache tiers, popularity, and the caching
//! parameter that the optimizers search over.
//!
//! Files and caches are measured in real-valued data units. Users sharing a
//! cache size form a tier; tiers are kept in strictly increasing order of
//! cache size.

use std::ops::Range;

use crate::error::{Error, Result};

/// Absolute tolerance applied to the per-tier memory constraint.
pub const FEASIBILITY_TOL: f64 = 1e-9;

const POPULARITY_TOL: f64 = 1e-12;

/// Library, cache tiers and file popularity.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemInstance {
    file_sizes: Vec<f64>,
    tier_cache_sizes: Vec<f64>,
    tier_user_counts: Vec<usize>,
    popularity: Vec<f64>,
}

impl SystemInstance {
    /// Builds an instance from tiers that are already strictly increasing in
    /// cache size.
    pub fn new(
        file_sizes: Vec<f64>,
        tier_cache_sizes: Vec<f64>,
        tier_user_counts: Vec<usize>,
        popularity: Vec<f64>,
    ) -> Result<Self> {
        if file_sizes.is_empty() {
            return Err(Error::InvalidInstance("library has no files".into()));
        }
        if let Some((n, v)) = file_sizes
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::InvalidInstance(format!(
                "file {} has non-positive size {v}",
                n + 1
            )));
        }
        if tier_cache_sizes.is_empty() {
            return Err(Error::InvalidInstance("no cache tiers".into()));
        }
        if tier_cache_sizes.len() != tier_user_counts.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} tier user counts", tier_cache_sizes.len()),
                got: format!("{}", tier_user_counts.len()),
            });
        }
        let total: f64 = file_sizes.iter().sum();
        for (t, &m) in tier_cache_sizes.iter().enumerate() {
            if !m.is_finite() || m < 0.0 || m > total * (1.0 + 1e-12) {
                return Err(Error::InvalidInstance(format!(
                    "tier {} cache size {m} outside [0, {total}]",
                    t + 1
                )));
            }
        }
        if tier_cache_sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInstance(
                "tier cache sizes must be strictly increasing".into(),
            ));
        }
        if popularity.len() != file_sizes.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} popularity entries", file_sizes.len()),
                got: format!("{}", popularity.len()),
            });
        }
        if popularity.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInstance(
                "popularity entries must be nonnegative".into(),
            ));
        }
        let mass: f64 = popularity.iter().sum();
        if (mass - 1.0).abs() > POPULARITY_TOL {
            return Err(Error::InvalidInstance(format!(
                "popularity sums to {mass}, not 1"
            )));
        }
        if popularity.windows(2).any(|w| w[1] > w[0] + POPULARITY_TOL) {
            return Err(Error::InvalidInstance(
                "popularity must be nonincreasing in the file index".into(),
            ));
        }
        Ok(Self {
            file_sizes,
            tier_cache_sizes,
            tier_user_counts,
            popularity,
        })
    }

    /// Builds an instance from one cache size per user. Users with equal cache
    /// sizes are merged into one tier.
    pub fn from_user_caches(
        file_sizes: Vec<f64>,
        user_caches: &[f64],
        popularity: Vec<f64>,
    ) -> Result<Self> {
        let mut caches = user_caches.to_vec();
        if caches.iter().any(|m| m.is_nan()) {
            return Err(Error::InvalidInstance("cache size is NaN".into()));
        }
        caches.sort_by(f64::total_cmp);
        let mut sizes: Vec<f64> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for m in caches {
            match sizes.last() {
                Some(&last) if last == m => *counts.last_mut().unwrap() += 1,
                _ => {
                    sizes.push(m);
                    counts.push(1);
                }
            }
        }
        Self::new(file_sizes, sizes, counts, popularity)
    }

    pub fn n_files(&self) -> usize {
        self.file_sizes.len()
    }

    pub fn n_tiers(&self) -> usize {
        self.tier_cache_sizes.len()
    }

    pub fn file_sizes(&self) -> &[f64] {
        &self.file_sizes
    }

    pub fn file_size(&self, n: usize) -> f64 {
        self.file_sizes[n]
    }

    pub fn tier_cache_sizes(&self) -> &[f64] {
        &self.tier_cache_sizes
    }

    pub fn tier_user_counts(&self) -> &[usize] {
        &self.tier_user_counts
    }

    pub fn popularity(&self) -> &[f64] {
        &self.popularity
    }

    pub fn total_size(&self) -> f64 {
        self.file_sizes.iter().sum()
    }

    pub fn max_file_size(&self) -> f64 {
        self.file_sizes.iter().copied().fold(f64::MIN, f64::max)
    }

    pub fn min_cache_size(&self) -> f64 {
        self.tier_cache_sizes[0]
    }

    /// Layout with every user of every tier active.
    pub fn full_layout(&self) -> Result<TierLayout> {
        TierLayout::new(self.tier_user_counts.clone())
    }

    /// Same library and caches with a different popularity vector.
    pub fn with_popularity(&self, popularity: Vec<f64>) -> Result<Self> {
        Self::new(
            self.file_sizes.clone(),
            self.tier_cache_sizes.clone(),
            self.tier_user_counts.clone(),
            popularity,
        )
    }
}

/// Number of (active or assumed) users per tier, with users numbered
/// consecutively tier by tier.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TierLayout {
    per_tier_counts: Vec<usize>,
    cumulative: Vec<usize>,
    user_tier: Vec<usize>,
}

impl TierLayout {
    pub fn new(per_tier_counts: Vec<usize>) -> Result<Self> {
        let total: usize = per_tier_counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidArgument(
                "tier layout must contain at least one user".into(),
            ));
        }
        Ok(Self::build(per_tier_counts))
    }

    fn build(per_tier_counts: Vec<usize>) -> Self {
        let mut cumulative = Vec::with_capacity(per_tier_counts.len());
        let mut user_tier = Vec::new();
        let mut acc = 0;
        for (t, &k) in per_tier_counts.iter().enumerate() {
            acc += k;
            cumulative.push(acc);
            user_tier.extend(std::iter::repeat_n(t, k));
        }
        Self {
            per_tier_counts,
            cumulative,
            user_tier,
        }
    }

    pub fn per_tier_counts(&self) -> &[usize] {
        &self.per_tier_counts
    }

    pub fn count(&self, t: usize) -> usize {
        self.per_tier_counts[t]
    }

    pub fn n_tiers(&self) -> usize {
        self.per_tier_counts.len()
    }

    /// Total number of users `K`.
    pub fn total(&self) -> usize {
        self.user_tier.len()
    }

    /// Prefix sums `I_t`, one per tier.
    pub fn cumulative_index(&self) -> &[usize] {
        &self.cumulative
    }

    /// Zero-based user indices belonging to tier `t`.
    pub fn tier_range(&self, t: usize) -> Range<usize> {
        let end = self.cumulative[t];
        end - self.per_tier_counts[t]..end
    }

    pub fn tier_of(&self, user: usize) -> usize {
        self.user_tier[user]
    }

    pub fn user_tiers(&self) -> &[usize] {
        &self.user_tier
    }

    /// Bitmask of the users in tier `t`.
    pub fn tier_mask(&self, t: usize) -> u64 {
        let r = self.tier_range(t);
        if r.is_empty() {
            0
        } else {
            (u64::MAX >> (64 - r.len())) << r.start
        }
    }

    pub fn check_against(&self, instance: &SystemInstance) -> Result<()> {
        if self.n_tiers() != instance.n_tiers() {
            return Err(Error::DimensionMismatch {
                expected: format!("layout over {} tiers", instance.n_tiers()),
                got: format!("{}", self.n_tiers()),
            });
        }
        Ok(())
    }
}

/// Fraction `q[t][n]` of file `n` cached by every user of tier `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CachingParameter {
    n_tiers: usize,
    n_files: usize,
    values: Vec<f64>,
}

impl CachingParameter {
    pub fn new(n_tiers: usize, n_files: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_tiers * n_files {
            return Err(Error::DimensionMismatch {
                expected: format!("{n_tiers}x{n_files} entries"),
                got: format!("{}", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "caching parameter has non-finite entries".into(),
            ));
        }
        Ok(Self {
            n_tiers,
            n_files,
            values,
        })
    }

    pub fn filled(n_tiers: usize, n_files: usize, value: f64) -> Self {
        Self {
            n_tiers,
            n_files,
            values: vec![value; n_tiers * n_files],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_tiers = rows.len();
        let n_files = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_files) {
            return Err(Error::InvalidArgument(
                "ragged caching parameter rows".into(),
            ));
        }
        Self::new(n_tiers, n_files, rows.concat())
    }

    pub fn zeros_for(instance: &SystemInstance) -> Self {
        Self::filled(instance.n_tiers(), instance.n_files(), 0.0)
    }

    pub fn n_tiers(&self) -> usize {
        self.n_tiers
    }

    pub fn n_files(&self) -> usize {
        self.n_files
    }

    #[inline]
    pub fn get(&self, t: usize, n: usize) -> f64 {
        self.values[t * self.n_files + n]
    }

    #[inline]
    pub fn set(&mut self, t: usize, n: usize, v: f64) {
        self.values[t * self.n_files + n] = v;
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_files..(t + 1) * self.n_files]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.values[t * self.n_files..(t + 1) * self.n_files]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_tiers).map(|t| self.row(t).to_vec()).collect()
    }

    pub fn check_dims(&self, instance: &SystemInstance) -> Result<()> {
        if self.n_tiers != instance.n_tiers() || self.n_files != instance.n_files() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", instance.n_tiers(), instance.n_files()),
                got: format!("{}x{}", self.n_tiers, self.n_files),
            });
        }
        Ok(())
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TierUsage {
    pub tier: usize,
    pub used: f64,
    pub capacity: f64,
}

/// Outcome of [`check_feasible`]; lists every violated entry and tier.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// `(t, n, q)` entries outside `[0, 1]`.
    pub box_violations: Vec<(usize, usize, f64)>,
    pub memory_violations: Vec<TierUsage>,
    pub tier_usage: Vec<TierUsage>,
}

pub fn check_feasible(
    instance: &SystemInstance,
    q: &CachingParameter,
) -> Result<FeasibilityReport> {
    q.check_dims(instance)?;
    let mut box_violations = Vec::new();
    let mut tier_usage = Vec::with_capacity(instance.n_tiers());
    for t in 0..instance.n_tiers() {
        let mut used = 0.0;
        for n in 0..instance.n_files() {
            let v = q.get(t, n);
            if !(-FEASIBILITY_TOL..=1.0 + FEASIBILITY_TOL).contains(&v) {
                box_violations.push((t, n, v));
            }
            used += v * instance.file_size(n);
        }
        tier_usage.push(TierUsage {
            tier: t,
            used,
            capacity: instance.tier_cache_sizes()[t],
        });
    }
    let memory_violations: Vec<TierUsage> = tier_usage
        .iter()
        .filter(|u| u.used > u.capacity + FEASIBILITY_TOL)
        .cloned()
        .collect();
    Ok(FeasibilityReport {
        feasible: box_violations.is_empty() && memory_violations.is_empty(),
        box_violations,
        memory_violations,
        tier_usage,
    })
}

/// Zipf popularity `p_n ∝ n^-gamma`.
pub fn zipf_popularity(n_files: usize, gamma: f64) -> Result<Vec<f64>> {
    if n_files == 0 {
        return Err(Error::InvalidArgument(
            "zipf needs at least one file".into(),
        ));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "zipf exponent must be nonnegative, got {gamma}"
        )));
    }
    let weights: Vec<f64> = (1..=n_files).map(|n| (n as f64).powf(-gamma)).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// `K_t = ceil(prob_t * L_t)`, the expected number of active users per tier
/// rounded up.
pub fn expected_active_layout(
    activity_prob: &[f64],
    tier_user_counts: &[usize],
) -> Result<TierLayout> {
    if activity_prob.len() != tier_user_counts.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} activity probabilities", tier_user_counts.len()),
            got: format!("{}", activity_prob.len()),
        });
    }
    let counts = activity_prob
        .iter()
        .zip(tier_user_counts)
        .map(|(&p, &l)| {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "activity probability {p} outside [0, 1]"
                )));
            }
            // Guard against products such as 0.1 * 10 landing just above an integer.
            let mean = p * l as f64;
            Ok((mean - 1e-9).ceil().max(0.0) as usize)
        })
        .collect::<Result<Vec<_>>>()?;
    TierLayout::new(counts)
}

/// Parameters of an arithmetic-sequence scenario: `V_n = v1 + (n-1) dv`,
/// `M_t = m1 + (t-1) dm`, Zipf popularity with exponent `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArithmeticScenario {
    pub v1: f64,
    pub dv: f64,
    pub n_files: usize,
    pub m1: f64,
    pub dm: f64,
    pub n_tiers: usize,
    pub gamma: f64,
    pub tier_users: Vec<usize>,
}

pub fn build_arithmetic_scenario(s: &ArithmeticScenario) -> Result<SystemInstance> {
    if s.n_files == 0 || s.n_tiers == 0 {
        return Err(Error::InvalidArgument(
            "scenario needs at least one file and one tier".into(),
        ));
    }
    if s.tier_users.len() != s.n_tiers {
        return Err(Error::DimensionMismatch {
            expected: format!("{} tier user counts", s.n_tiers),
            got: format!("{}", s.tier_users.len()),
        });
    }
    let file_sizes: Vec<f64> = (0..s.n_files).map(|n| s.v1 + n as f64 * s.dv).collect();
    if let Some((n, v)) = file_sizes.iter().enumerate().find(|(_, v)| **v <= 0.0) {
        return Err(Error::InvalidInstance(format!(
            "file {} has non-positive size {v}",
            n + 1
        )));
    }
    let caches: Vec<f64> = (0..s.n_tiers).map(|t| s.m1 + t as f64 * s.dm).collect();
    if s.n_tiers > 1 && s.dm <= 0.0 {
        return Err(Error::InvalidInstance(
            "cache size sequence must be strictly increasing".into(),
        ));
    }
    let popularity = zipf_popularity(s.n_files, s.gamma)?;
    SystemInstance::new(file_sizes, caches, s.tier_users.clone(), popularity)
}
