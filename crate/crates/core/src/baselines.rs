//! Uniform caching parameters of the reference schemes, adapted to unequal
//! sizes by running them at the largest file size and/or smallest cache.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;
use crate::model::{CachingParameter, SystemInstance};

/// Scheme identifiers used on the command line and in CSV output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Baseline {
    UniformAliDec,
    TierUniform,
    FileUniform,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [
        Baseline::UniformAliDec,
        Baseline::TierUniform,
        Baseline::FileUniform,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Baseline::UniformAliDec => "uniform-alidec",
            Baseline::TierUniform => "tier-uniform",
            Baseline::FileUniform => "file-uniform",
        }
    }

    pub fn parameter(self, instance: &SystemInstance) -> CachingParameter {
        match self {
            Baseline::UniformAliDec => uniform_min_cache_max_file(instance),
            Baseline::TierUniform => tier_uniform_max_file(instance),
            Baseline::FileUniform => file_uniform_min_cache(instance),
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.id() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown baseline scheme '{s}'")))
    }
}

/// `q = min M / (N max V)` everywhere.
pub fn uniform_min_cache_max_file(instance: &SystemInstance) -> CachingParameter {
    let q = instance.min_cache_size() / (instance.n_files() as f64 * instance.max_file_size());
    CachingParameter::filled(instance.n_tiers(), instance.n_files(), q.clamp(0.0, 1.0))
}

/// `q_t = M_t / (N max V)` for every file of tier `t`.
pub fn tier_uniform_max_file(instance: &SystemInstance) -> CachingParameter {
    let denom = instance.n_files() as f64 * instance.max_file_size();
    let rows: Vec<Vec<f64>> = instance
        .tier_cache_sizes()
        .iter()
        .map(|m| vec![(m / denom).clamp(0.0, 1.0); instance.n_files()])
        .collect();
    CachingParameter::from_rows(&rows).expect("rows have equal length")
}

/// `q = min M / sum V`: the same fraction of every file.
pub fn file_uniform_min_cache(instance: &SystemInstance) -> CachingParameter {
    let q = instance.min_cache_size() / instance.total_size();
    CachingParameter::filled(instance.n_tiers(), instance.n_files(), q.clamp(0.0, 1.0))
}
