//! Projected gradient descent on the smoothed loads, multi-start, plus the
//! bound on how much the smoothed optimum can lose against the true one.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::load_eval::{
    subset_log_mass, LoadEvaluator, Objective, SmoothingConfig, DEFAULT_BUDGET,
};
use crate::model::{CachingParameter, SystemInstance, TierLayout};

/// Exact loads are recorded in the trace every this many iterations.
const CHECKPOINT_EVERY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGradConfig {
    pub c: f64,
    pub starts: usize,
    /// Stop a start once a step moves no entry of `q` by more than this.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub initial_step: f64,
    pub shrink: f64,
    pub armijo: f64,
    /// Evaluation budget handed to the load evaluator.
    pub budget: f64,
}

impl Default for ProjectedGradConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            starts: 8,
            tol: 1e-9,
            max_iter: 500,
            seed: 0,
            initial_step: 1.0,
            shrink: 0.5,
            armijo: 1e-4,
            budget: DEFAULT_BUDGET,
        }
    }
}

impl ProjectedGradConfig {
    pub fn validate(&self) -> Result<()> {
        SmoothingConfig::new(self.c)?;
        let positive = [self.tol, self.initial_step, self.armijo];
        if self.starts == 0
            || self.max_iter == 0
            || positive.iter().any(|v| !(*v > 0.0 && v.is_finite()))
        {
            return Err(Error::InvalidArgument(
                "starts, max_iter, tol, initial_step and armijo must be positive".into(),
            ));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "shrink must lie in (0, 1), got {}",
                self.shrink
            )));
        }
        Ok(())
    }
}

/// Euclidean projection onto `0 <= q <= 1`, `sum_n q_{t,n} V_n <= M_t`.
/// Tiers decouple; each is `clip(q_hat - lambda V, 0, 1)` with `lambda >= 0`
/// found by bisection.
pub fn project_feasible(
    q_hat: &CachingParameter,
    instance: &SystemInstance,
) -> Result<CachingParameter> {
    q_hat.check_dims(instance)?;
    let v = instance.file_sizes();
    let mut out = q_hat.clone();
    for t in 0..instance.n_tiers() {
        let m = instance.tier_cache_sizes()[t];
        let row = q_hat.row(t);
        let at = |lambda: f64| -> Vec<f64> {
            row.iter()
                .zip(v)
                .map(|(q, vn)| {
                    let x = q - lambda * vn;
                    if x.is_nan() {
                        0.0
                    } else {
                        x.clamp(0.0, 1.0)
                    }
                })
                .collect()
        };
        let used = |q: &[f64]| q.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        let clipped = at(0.0);
        if used(&clipped) <= m {
            out.row_mut(t).copy_from_slice(&clipped);
            continue;
        }
        let mut lo = 0.0;
        let mut hi = row
            .iter()
            .zip(v)
            .map(|(q, vn)| q / vn)
            .fold(0.0f64, f64::max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if used(&at(mid)) <= m {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        out.row_mut(t).copy_from_slice(&at(hi));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub start: usize,
    pub iteration: usize,
    pub smoothed: f64,
    /// Exact load, recorded at checkpoints and at the last iterate.
    pub exact: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartSummary {
    pub start: usize,
    pub smoothed: f64,
    pub exact: f64,
    pub iterations: usize,
    pub q: CachingParameter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothReport {
    pub best_start: usize,
    pub starts: Vec<StartSummary>,
    pub trace: Vec<TracePoint>,
}

impl SmoothReport {
    pub fn best(&self) -> &StartSummary {
        &self.starts[self.best_start]
    }

    /// `start,iteration,smoothed,exact` rows; `exact` is empty between
    /// checkpoints.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::InvalidArgument(format!("writing trace: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["start", "iteration", "smoothed", "exact"])
            .map_err(io)?;
        for p in &self.trace {
            w.write_record([
                p.start.to_string(),
                p.iteration.to_string(),
                format!("{:.12e}", p.smoothed),
                p.exact.map(|e| format!("{e:.12e}")).unwrap_or_default(),
            ])
            .map_err(io)?;
        }
        w.flush()
            .map_err(|e| Error::InvalidArgument(format!("writing trace: {e}")))
    }
}

/// Random feasible start for `(seed, index)`: uniform draws, projected.
pub fn random_start(
    instance: &SystemInstance,
    seed: u64,
    index: usize,
) -> Result<CachingParameter> {
    let mut rng = start_rng(seed, index);
    let values: Vec<f64> = (0..instance.n_tiers() * instance.n_files())
        .map(|_| rng.random::<f64>())
        .collect();
    project_feasible(
        &CachingParameter::new(instance.n_tiers(), instance.n_files(), values)?,
        instance,
    )
}

/// Minimizes the smoothed load from `config.starts` random feasible starts.
pub fn minimize_smoothed(
    instance: &SystemInstance,
    layout: &TierLayout,
    config: &ProjectedGradConfig,
    objective: Objective,
) -> Result<(CachingParameter, SmoothReport)> {
    minimize_smoothed_with_starts(instance, layout, config, objective, &[])
}

/// As [`minimize_smoothed`], with `extra` starting points appended after the
/// random ones. The winner is the start whose final point has the lowest
/// exact load, ties going to the lower index.
pub fn minimize_smoothed_with_starts(
    instance: &SystemInstance,
    layout: &TierLayout,
    config: &ProjectedGradConfig,
    objective: Objective,
    extra: &[CachingParameter],
) -> Result<(CachingParameter, SmoothReport)> {
    config.validate()?;
    let ev = LoadEvaluator::with_budget(instance, layout, config.budget)?;
    let smoothing = SmoothingConfig::new(config.c)?;
    let mut inits = (0..config.starts)
        .map(|i| random_start(instance, config.seed, i))
        .collect::<Result<Vec<_>>>()?;
    for q in extra {
        inits.push(project_feasible(q, instance)?);
    }
    let runs: Vec<(StartSummary, Vec<TracePoint>)> = inits
        .par_iter()
        .enumerate()
        .map(|(i, q0)| descend(&ev, smoothing, objective, config, i, q0))
        .collect::<Result<_>>()?;

    let mut best = 0;
    for (i, (s, _)) in runs.iter().enumerate() {
        if s.exact < runs[best].0.exact {
            best = i;
        }
    }
    let mut starts = Vec::with_capacity(runs.len());
    let mut trace = Vec::new();
    for (s, t) in runs {
        starts.push(s);
        trace.extend(t);
    }
    let q = starts[best].q.clone();
    Ok((
        q,
        SmoothReport {
            best_start: best,
            starts,
            trace,
        },
    ))
}

fn descend(
    ev: &LoadEvaluator,
    smoothing: SmoothingConfig,
    objective: Objective,
    config: &ProjectedGradConfig,
    start: usize,
    q0: &CachingParameter,
) -> Result<(StartSummary, Vec<TracePoint>)> {
    let inst = ev.instance();
    let mut q = q0.clone();
    let (mut f, mut g) = ev.smoothed_with_gradient(&q, smoothing, objective)?;
    let mut trace = vec![TracePoint {
        start,
        iteration: 0,
        smoothed: f,
        exact: Some(ev.exact(&q, objective)?),
    }];
    let mut iterations = 0;
    for it in 1..=config.max_iter {
        let mut step = config.initial_step;
        let mut accepted = None;
        while step > 1e-16 {
            let mut trial = q.clone();
            for (x, d) in trial.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *x -= step * d;
            }
            let trial = project_feasible(&trial, inst)?;
            let decrease: f64 = g
                .as_slice()
                .iter()
                .zip(trial.as_slice().iter().zip(q.as_slice()))
                .map(|(gi, (a, b))| gi * (a - b))
                .sum();
            let ft = ev.smoothed(&trial, smoothing, objective)?;
            if ft <= f + config.armijo * decrease {
                accepted = Some((trial, ft));
                break;
            }
            step *= config.shrink;
        }
        let Some((next, fnext)) = accepted else { break };
        let moved = next.max_abs_diff(&q);
        iterations = it;
        q = next;
        let (fv, gv) = ev.smoothed_with_gradient(&q, smoothing, objective)?;
        debug_assert!((fv - fnext).abs() <= 1e-12 * fv.abs().max(1.0));
        f = fv;
        g = gv;
        let done = moved <= config.tol;
        trace.push(TracePoint {
            start,
            iteration: it,
            smoothed: f,
            exact: (done || it % CHECKPOINT_EVERY == 0)
                .then(|| ev.exact(&q, objective))
                .transpose()?,
        });
        if done {
            break;
        }
    }
    let exact = ev.exact(&q, objective)?;
    if let Some(last) = trace.last_mut() {
        last.exact = Some(exact);
    }
    Ok((
        StartSummary {
            start,
            smoothed: f,
            exact,
            iterations,
            q,
        },
        trace,
    ))
}

/// Bound on `R(q smoothed) - R*`:
/// `(1/c)(sum_{i=1}^K C(K,i) ln i + K ln N)` for the worst case, without the
/// `K ln N` term for the average.
pub fn increment_bound(k: usize, n: usize, c: f64, objective: Objective) -> Result<f64> {
    if k == 0 || n == 0 || !(c >= 1.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "increment bound needs K >= 1, N >= 1, c >= 1 (got K={k}, N={n}, c={c})"
        )));
    }
    let mass = subset_log_mass(k);
    Ok(match objective {
        Objective::WorstCase => (mass + k as f64 * (n as f64).ln()) / c,
        Objective::Average => mass / c,
    })
}

/// Closed-form growth cap on the worst-case bound at `c = 1`:
/// `min{(K/2 - 1) 2^K + 1, (2^K - 1) ln K} + K ln N`.
pub fn increment_growth_cap(k: usize, n: usize) -> f64 {
    let p = 2f64.powi(k as i32);
    let a = (k as f64 / 2.0 - 1.0) * p + 1.0;
    let b = (p - 1.0) * (k as f64).ln();
    a.min(b) + k as f64 * (n as f64).ln()
}

/// Generator of start `index`: one ChaCha stream per start under a common seed.
pub fn start_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}
