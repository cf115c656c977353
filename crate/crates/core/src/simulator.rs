//! Finite-granularity Monte Carlo of random placement and coded delivery.
//!
//! Every file is cut into `round(V_n * scale)` data units. Each user caches a
//! uniformly random subset of `round(q V_n scale)` units of every file; the
//! server then sends, for every nonempty user subset `S`, the XOR of the
//! pieces `W_{d_j, S \ {j}}` zero-padded to the longest one. The simulator
//! counts those lengths exactly, independently of the closed-form loads.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::load_eval::DemandVector;
use crate::model::{check_feasible, CachingParameter, SystemInstance, TierLayout};

/// Largest user count the bitmask representation supports.
pub const MAX_USERS: usize = 20;

/// Which user holds which data unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlacementState {
    scale: u64,
    n_users: usize,
    /// Per file, per data unit: bitmask of the users caching it.
    holders: Vec<Vec<u32>>,
}

impl PlacementState {
    pub fn scale(&self) -> u64 {
        self.scale
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn units(&self, file: usize) -> usize {
        self.holders[file].len()
    }

    /// Number of units of `file` cached by `user`.
    pub fn cached_units(&self, user: usize, file: usize) -> usize {
        self.holders[file]
            .iter()
            .filter(|&&m| m >> user & 1 == 1)
            .count()
    }

    pub fn holder_masks(&self, file: usize) -> &[u32] {
        &self.holders[file]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryMeasurement {
    /// Message length in data units for subset mask `s`, at index `s - 1`.
    pub subset_lengths: Vec<u64>,
    pub total_units: u64,
    /// `total_units / scale`.
    pub load: f64,
    pub demand: DemandVector,
}

/// Number of units of a file of size `v` at this scale.
pub fn file_units(v: f64, scale: u64) -> usize {
    (v * scale as f64).round_ties_even() as usize
}

/// Draws a placement. Fails if some file has no unit at this scale or `q` is
/// infeasible.
pub fn place(
    instance: &SystemInstance,
    layout: &TierLayout,
    q: &CachingParameter,
    scale: u64,
    seed: u64,
) -> Result<PlacementState> {
    check_placement_inputs(instance, layout, q, scale)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(place_with(instance, layout, q, scale, &mut rng))
}

fn check_placement_inputs(
    instance: &SystemInstance,
    layout: &TierLayout,
    q: &CachingParameter,
    scale: u64,
) -> Result<()> {
    layout.check_against(instance)?;
    if layout.total() > MAX_USERS {
        return Err(Error::InvalidArgument(format!(
            "simulator supports at most {MAX_USERS} users, got {}",
            layout.total()
        )));
    }
    if let Some(n) = instance
        .file_sizes()
        .iter()
        .position(|&v| file_units(v, scale) == 0)
    {
        return Err(Error::InvalidArgument(format!(
            "scale {scale} leaves file {n} (size {}) without data units",
            instance.file_size(n)
        )));
    }
    if !check_feasible(instance, q)?.feasible {
        return Err(Error::Infeasible(
            "cannot place an infeasible caching parameter".into(),
        ));
    }
    Ok(())
}

fn place_with<R: Rng>(
    instance: &SystemInstance,
    layout: &TierLayout,
    q: &CachingParameter,
    scale: u64,
    rng: &mut R,
) -> PlacementState {
    let mut holders: Vec<Vec<u32>> = instance
        .file_sizes()
        .iter()
        .map(|&v| vec![0u32; file_units(v, scale)])
        .collect();
    for (user, &t) in layout.user_tiers().iter().enumerate() {
        for (n, units) in holders.iter_mut().enumerate() {
            let len = units.len();
            let count = ((q.get(t, n) * instance.file_size(n) * scale as f64).round_ties_even()
                as usize)
                .min(len);
            for idx in sample(rng, len, count) {
                units[idx] |= 1 << user;
            }
        }
    }
    PlacementState {
        scale,
        n_users: layout.total(),
        holders,
    }
}

/// Delivery load for one demand under a placement.
pub fn deliver(state: &PlacementState, demand: &DemandVector) -> Result<DeliveryMeasurement> {
    let k = state.n_users;
    if demand.len() != k {
        return Err(Error::DimensionMismatch {
            expected: format!("{k} demands"),
            got: format!("{}", demand.len()),
        });
    }
    if let Some(&f) = demand.entries().iter().find(|&&f| f >= state.holders.len()) {
        return Err(Error::InvalidArgument(format!(
            "demand for unknown file {f}"
        )));
    }
    let n_masks = 1usize << k;
    // hist[f][A]: units of file f cached by exactly the users in A
    let mut hist: Vec<Option<Vec<u64>>> = vec![None; state.holders.len()];
    for &f in demand.entries() {
        hist[f].get_or_insert_with(|| {
            let mut h = vec![0u64; n_masks];
            for &m in &state.holders[f] {
                h[m as usize] += 1;
            }
            h
        });
    }
    let mut subset_lengths = Vec::with_capacity(n_masks - 1);
    for s in 1..n_masks {
        let len = (0..k)
            .filter(|j| s >> j & 1 == 1)
            .map(|j| {
                let h = hist[demand.entries()[j]]
                    .as_ref()
                    .expect("histogram built for every demand");
                h[s & !(1 << j)]
            })
            .max()
            .unwrap_or(0);
        subset_lengths.push(len);
    }
    let total_units: u64 = subset_lengths.iter().sum();
    Ok(DeliveryMeasurement {
        load: total_units as f64 / state.scale as f64,
        subset_lengths,
        total_units,
        demand: demand.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimMode {
    FixedDemand(DemandVector),
    PopularityRandom,
}

/// Streaming mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * self.n as f64 * other.n as f64 / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: u64,
}

/// Generator for trial `index`: one ChaCha stream per trial under `seed`.
fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Mean and standard error of the descaled load over independent
/// placements (and, in popularity mode, demands drawn from the popularity).
pub fn monte_carlo(
    instance: &SystemInstance,
    layout: &TierLayout,
    q: &CachingParameter,
    scale: u64,
    trials: u64,
    seed: u64,
    mode: &SimMode,
) -> Result<MonteCarloEstimate> {
    if trials < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 trials, got {trials}"
        )));
    }
    check_placement_inputs(instance, layout, q, scale)?;
    if let SimMode::FixedDemand(d) = mode {
        DemandVector::new(d.entries().to_vec(), layout, instance.n_files())?;
    }
    let popularity = WeightedIndex::new(instance.popularity())
        .map_err(|e| Error::InvalidInstance(format!("popularity is not a distribution: {e}")))?;
    let loads: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, i);
            let state = place_with(instance, layout, q, scale, &mut rng);
            let demand = match mode {
                SimMode::FixedDemand(d) => d.clone(),
                SimMode::PopularityRandom => DemandVector::new(
                    (0..layout.total())
                        .map(|_| popularity.sample(&mut rng))
                        .collect(),
                    layout,
                    instance.n_files(),
                )?,
            };
            deliver(&state, &demand).map(|m| m.load)
        })
        .collect::<Result<_>>()?;
    let mut acc = Welford::default();
    loads.iter().for_each(|&x| acc.push(x));
    Ok(MonteCarloEstimate {
        mean: acc.mean(),
        stderr: acc.stderr(),
        trials,
    })
}
