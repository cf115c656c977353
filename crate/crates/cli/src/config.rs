//! TOML configuration.
//!
//! ```toml
//! [scenario]
//! objective = "worst"        # or "average"
//! n_files = 4                # V_n = v1 + (n-1) dv
//! v1 = 13.0
//! dv = -4.0
//! # v_mean = 25.5            # alternative to v1: v1 = v_mean - (n_files-1)/2 dv
//! # file_sizes = [13, 9, 5, 1]
//! n_tiers = 4                # M_t = m0 (m1 + (t-1) dm)
//! m1 = 5.0
//! dm = 1.0
//! # m_mean = 5.25            # alternative to m1: m1 = m_mean - (n_tiers-1)/2 dm
//! # cache_sizes = [5, 6, 7, 8]
//! m0 = 1.0
//! gamma = 0.0                # Zipf exponent
//! # popularity = [0.4, 0.3, 0.2, 0.1]
//! tier_users = 1             # L_t, scalar or per-tier list
//! # active = [1, 1, 1, 1]    # K_t, defaults to tier_users
//! # activity_prob = 0.5      # per-user activity, scalar or per-tier list
//!
//! [sweep]
//! variable = "T"             # N | T | dV | dM | M0 | gamma
//! values = [1, 2, 3, 4]
//! schemes = ["uniform-alidec", "tier-uniform", "file-uniform", "sca", "smooth"]
//! converse = true
//! simulate = false
//!
//! [solver]
//! c = 1.0
//! starts = 8
//! seed = 0
//! trials = 200
//! scale = 1000
//! sca_max_iter = 50
//! sca_max_vars = 1000        # skip sca where the inner GP is larger
//! budget = 5e6
//! activity_samples = 2000
//! timing = false
//!
//! # Caching parameter used by `evaluate` and `simulate`, one row per tier.
//! # parameter = [[0.1, 0.2, 0.3, 0.4], ...]
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use cacheopt::baselines::Baseline;
use cacheopt::model::{expected_active_layout, zipf_popularity};
use cacheopt::{CachingParameter, Objective, SystemInstance, TierLayout};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

/// A value given once for all tiers or once per tier.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum PerTier<T> {
    One(T),
    Each(Vec<T>),
}

impl<T: Clone> PerTier<T> {
    pub fn expand(&self, n_tiers: usize, what: &str) -> CliResult<Vec<T>> {
        match self {
            PerTier::One(v) => Ok(vec![v.clone(); n_tiers]),
            PerTier::Each(v) if v.len() == n_tiers => Ok(v.clone()),
            PerTier::Each(v) => Err(CliError::Config(format!(
                "{what} has {} entries for {n_tiers} tiers",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveName {
    #[default]
    Worst,
    Average,
}

impl From<ObjectiveName> for Objective {
    fn from(o: ObjectiveName) -> Self {
        match o {
            ObjectiveName::Worst => Objective::WorstCase,
            ObjectiveName::Average => Objective::Average,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn one_user() -> PerTier<usize> {
    PerTier::One(1)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub objective: ObjectiveName,
    pub n_files: Option<usize>,
    pub v1: Option<f64>,
    #[serde(default)]
    pub dv: f64,
    pub v_mean: Option<f64>,
    pub file_sizes: Option<Vec<f64>>,
    pub n_tiers: Option<usize>,
    pub m1: Option<f64>,
    #[serde(default)]
    pub dm: f64,
    pub m_mean: Option<f64>,
    pub cache_sizes: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub m0: f64,
    #[serde(default)]
    pub gamma: f64,
    pub popularity: Option<Vec<f64>>,
    #[serde(default = "one_user")]
    pub tier_users: PerTier<usize>,
    pub active: Option<PerTier<usize>>,
    pub activity_prob: Option<PerTier<f64>>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            objective: ObjectiveName::Worst,
            n_files: None,
            v1: None,
            dv: 0.0,
            v_mean: None,
            file_sizes: None,
            n_tiers: None,
            m1: None,
            dm: 0.0,
            m_mean: None,
            cache_sizes: None,
            m0: 1.0,
            gamma: 0.0,
            popularity: None,
            tier_users: one_user(),
            active: None,
            activity_prob: None,
        }
    }
}

/// Arithmetic sequence `first + i step`, where `first` comes either directly
/// or from the sequence mean.
fn arithmetic(
    len: usize,
    first: Option<f64>,
    mean: Option<f64>,
    step: f64,
    name: &str,
) -> CliResult<Vec<f64>> {
    let first = match (first, mean) {
        (Some(f), None) => f,
        (None, Some(m)) => m - (len as f64 - 1.0) / 2.0 * step,
        (Some(_), Some(_)) => {
            return Err(CliError::Config(format!(
                "give either {name}1 or {name}_mean, not both"
            )))
        }
        (None, None) => {
            return Err(CliError::Config(format!(
                "missing {name}1 (or {name}_mean)"
            )))
        }
    };
    Ok((0..len).map(|i| first + i as f64 * step).collect())
}

impl Scenario {
    pub fn objective(&self) -> Objective {
        self.objective.into()
    }

    pub fn file_sizes(&self) -> CliResult<Vec<f64>> {
        if let Some(v) = &self.file_sizes {
            return Ok(v.clone());
        }
        let n = self
            .n_files
            .ok_or_else(|| CliError::Config("missing n_files (or file_sizes)".into()))?;
        arithmetic(n, self.v1, self.v_mean, self.dv, "v")
    }

    pub fn cache_sizes(&self) -> CliResult<Vec<f64>> {
        let base = match &self.cache_sizes {
            Some(m) => m.clone(),
            None => {
                let t = self
                    .n_tiers
                    .ok_or_else(|| CliError::Config("missing n_tiers (or cache_sizes)".into()))?;
                arithmetic(t, self.m1, self.m_mean, self.dm, "m")?
            }
        };
        Ok(base.into_iter().map(|m| m * self.m0).collect())
    }

    pub fn instance(&self) -> CliResult<SystemInstance> {
        let files = self.file_sizes()?;
        let caches = self.cache_sizes()?;
        let users = self.tier_users.expand(caches.len(), "tier_users")?;
        let popularity = match &self.popularity {
            Some(p) => p.clone(),
            None => zipf_popularity(files.len(), self.gamma)?,
        };
        Ok(SystemInstance::new(files, caches, users, popularity)?)
    }

    pub fn activity_prob(&self, n_tiers: usize) -> CliResult<Option<Vec<f64>>> {
        self.activity_prob
            .as_ref()
            .map(|p| p.expand(n_tiers, "activity_prob"))
            .transpose()
    }

    /// Users per tier the load is optimized for: `active` if given, else
    /// `ceil(prob L_t)` when an activity probability is set, else `L`.
    pub fn design_counts(&self, instance: &SystemInstance) -> CliResult<Vec<usize>> {
        let t = instance.n_tiers();
        if let Some(a) = &self.active {
            let a = a.expand(t, "active")?;
            if let Some(t) = a
                .iter()
                .zip(instance.tier_user_counts())
                .position(|(k, l)| k > l)
            {
                return Err(CliError::Config(format!(
                    "active count of tier {} exceeds its users",
                    t + 1
                )));
            }
            return Ok(a);
        }
        match self.activity_prob(t)? {
            Some(p) => {
                if p.iter().all(|&x| x == 0.0) {
                    return Ok(vec![0; t]);
                }
                Ok(expected_active_layout(&p, instance.tier_user_counts())?
                    .per_tier_counts()
                    .to_vec())
            }
            None => Ok(instance.tier_user_counts().to_vec()),
        }
    }

    pub fn build(&self) -> CliResult<(SystemInstance, TierLayout)> {
        let instance = self.instance()?;
        let layout = TierLayout::new(self.design_counts(&instance)?)?;
        Ok((instance, layout))
    }

    /// Copy of the scenario with the swept quantity set to `value`.
    pub fn with_sweep(&self, variable: SweepVariable, value: f64) -> CliResult<Scenario> {
        let mut s = self.clone();
        let count = |v: f64| -> CliResult<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(CliError::Config(format!(
                    "sweep value {v} is not a positive integer"
                )))
            }
        };
        let conflict = |field: &str| {
            CliError::Config(format!(
                "cannot sweep {variable} when {field} is given explicitly"
            ))
        };
        match variable {
            SweepVariable::N => {
                if s.file_sizes.is_some() {
                    return Err(conflict("file_sizes"));
                }
                if s.popularity.is_some() {
                    return Err(conflict("popularity"));
                }
                s.n_files = Some(count(value)?);
            }
            SweepVariable::T => {
                if s.cache_sizes.is_some() {
                    return Err(conflict("cache_sizes"));
                }
                s.n_tiers = Some(count(value)?);
            }
            SweepVariable::DV => {
                if s.file_sizes.is_some() {
                    return Err(conflict("file_sizes"));
                }
                s.dv = value;
            }
            SweepVariable::DM => {
                if s.cache_sizes.is_some() {
                    return Err(conflict("cache_sizes"));
                }
                s.dm = value;
            }
            SweepVariable::M0 => s.m0 = value,
            SweepVariable::Gamma => {
                if s.popularity.is_some() {
                    return Err(conflict("popularity"));
                }
                s.gamma = value;
            }
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum SweepVariable {
    N,
    T,
    #[serde(rename = "dV")]
    DV,
    #[serde(rename = "dM")]
    DM,
    M0,
    #[serde(rename = "gamma")]
    Gamma,
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepVariable::N => "N",
            SweepVariable::T => "T",
            SweepVariable::DV => "dV",
            SweepVariable::DM => "dM",
            SweepVariable::M0 => "M0",
            SweepVariable::Gamma => "gamma",
        })
    }
}

/// Achievable schemes a sweep can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(try_from = "String")]
pub enum Scheme {
    Baseline(Baseline),
    Sca,
    Smooth,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Baseline(Baseline::UniformAliDec),
        Scheme::Baseline(Baseline::TierUniform),
        Scheme::Baseline(Baseline::FileUniform),
        Scheme::Sca,
        Scheme::Smooth,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Scheme::Baseline(b) => b.id(),
            Scheme::Sca => "sca",
            Scheme::Smooth => "smooth",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Scheme {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "sca" => Ok(Scheme::Sca),
            "smooth" => Ok(Scheme::Smooth),
            _ => s
                .parse::<Baseline>()
                .map(Scheme::Baseline)
                .map_err(|_| CliError::Config(format!("unknown scheme '{s}'"))),
        }
    }
}

impl TryFrom<String> for Scheme {
    type Error = CliError;

    fn try_from(s: String) -> CliResult<Self> {
        s.parse()
    }
}

fn all_schemes() -> Vec<Scheme> {
    Scheme::ALL.to_vec()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    #[serde(default = "all_schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default = "yes")]
    pub converse: bool,
    #[serde(default)]
    pub simulate: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Solver {
    pub c: f64,
    pub starts: usize,
    pub seed: u64,
    pub trials: u64,
    pub scale: u64,
    pub sca_max_iter: usize,
    /// SCA is skipped on points whose inner GP would exceed this many variables.
    pub sca_max_vars: usize,
    pub budget: f64,
    pub activity_samples: usize,
    /// Fill the wall-time column. Off by default so reruns are byte-identical.
    pub timing: bool,
}

impl Default for Solver {
    fn default() -> Self {
        Self {
            c: 1.0,
            starts: 8,
            seed: 0,
            trials: 200,
            scale: 1000,
            sca_max_iter: 50,
            sca_max_vars: 1000,
            budget: cacheopt::load_eval::DEFAULT_BUDGET,
            activity_samples: 2000,
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub scenario: Scenario,
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub solver: Solver,
    pub parameter: Option<Vec<Vec<f64>>>,
}

impl Config {
    pub fn from_toml_str(s: &str) -> CliResult<Self> {
        toml::from_str(s).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn parameter(&self) -> CliResult<Option<CachingParameter>> {
        self.parameter
            .as_ref()
            .map(|rows| {
                CachingParameter::from_rows(rows).map_err(|e| CliError::Config(e.to_string()))
            })
            .transpose()
    }
}
