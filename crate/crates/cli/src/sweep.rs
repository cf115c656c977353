//! Scheme and bound sweeps, deterministic or averaged over random activity.

use std::io::Write;
use std::time::Instant;

use cacheopt::baselines::Baseline;
use cacheopt::converse::{converse_average, converse_worst_case, ActiveSet};
use cacheopt::sca::{solve_sca_multistart, ScaOptions};
use cacheopt::simulator::{monte_carlo, SimMode};
use cacheopt::smooth_opt::{minimize_smoothed_with_starts, ProjectedGradConfig};
use cacheopt::{
    CachingParameter, LoadEvaluator, Objective, SmoothingConfig, SystemInstance, TierLayout,
};
use rayon::prelude::*;

use crate::activity::{activity_average, ActivityMode};
use crate::config::{Config, PerTier, Scenario, Scheme, Solver, SweepVariable};
use crate::error::{CliError, CliResult};

pub const CSV_HEADER: [&str; 9] = [
    "sweep_value",
    "scheme",
    "exact_load",
    "smoothed_load",
    "sim_mean",
    "sim_stderr",
    "converse",
    "wall_time_s",
    "status",
];

/// Scheme id of the converse rows.
pub const CONVERSE_ID: &str = "converse";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub scenario: Scenario,
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub converse: bool,
    pub simulate: bool,
    pub solver: Solver,
    pub large: bool,
}

impl SweepSpec {
    pub fn from_config(cfg: &Config, large: bool) -> CliResult<Self> {
        let sweep = cfg
            .sweep
            .as_ref()
            .ok_or_else(|| CliError::Config("config has no [sweep] section".into()))?;
        let spec = Self {
            scenario: cfg.scenario.clone(),
            variable: sweep.variable,
            values: sweep.values.clone(),
            schemes: sweep.schemes.clone(),
            converse: sweep.converse,
            simulate: sweep.simulate,
            solver: cfg.solver.clone(),
            large,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.values.is_empty() {
            return Err(CliError::Config("sweep has no values".into()));
        }
        if self.schemes.is_empty() && !self.converse {
            return Err(CliError::Config("sweep has no schemes and no bound".into()));
        }
        if self.large && self.schemes.contains(&Scheme::Sca) {
            return Err(CliError::Config(
                "--large runs support the smoothed solver only, drop 'sca'".into(),
            ));
        }
        validate_solver(&self.solver, self.simulate)
    }
}

pub fn validate_solver(s: &Solver, simulate: bool) -> CliResult<()> {
    if !(s.c >= 1.0 && s.c.is_finite()) {
        return Err(CliError::Config(format!(
            "smoothing constant c must be >= 1, got {}",
            s.c
        )));
    }
    if s.starts == 0 {
        return Err(CliError::Config("starts must be at least 1".into()));
    }
    if s.sca_max_iter == 0 {
        return Err(CliError::Config("sca_max_iter must be at least 1".into()));
    }
    if !(s.budget > 0.0) {
        return Err(CliError::Config("budget must be positive".into()));
    }
    if simulate && (s.trials < 2 || s.scale == 0) {
        return Err(CliError::Config(
            "simulation needs trials >= 2 and scale >= 1".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sweep_value: f64,
    pub scheme: String,
    pub exact: Option<f64>,
    pub smoothed: Option<f64>,
    pub sim_mean: Option<f64>,
    pub sim_stderr: Option<f64>,
    pub converse: Option<f64>,
    pub wall_time: Option<f64>,
    pub status: String,
}

impl SweepRow {
    fn empty(sweep_value: f64, scheme: &str, status: String) -> Self {
        Self {
            sweep_value,
            scheme: scheme.to_string(),
            exact: None,
            smoothed: None,
            sim_mean: None,
            sim_stderr: None,
            converse: None,
            wall_time: None,
            status,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_rows<W: Write>(rows: &[SweepRow], out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.sweep_value.to_string(),
            r.scheme.clone(),
            fmt_opt(r.exact),
            fmt_opt(r.smoothed),
            fmt_opt(r.sim_mean),
            fmt_opt(r.sim_stderr),
            fmt_opt(r.converse),
            fmt_opt(r.wall_time),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn distinct_baselines(instance: &SystemInstance) -> Vec<CachingParameter> {
    let mut out: Vec<CachingParameter> = Vec::new();
    for b in Baseline::ALL {
        let q = b.parameter(instance);
        if out.iter().all(|p| p.max_abs_diff(&q) > 0.0) {
            out.push(q);
        }
    }
    out
}

/// Caching parameter chosen by `scheme`. Both optimizers also start from
/// every baseline, so they never end above the best baseline.
pub fn design(
    scheme: Scheme,
    instance: &SystemInstance,
    layout: &TierLayout,
    objective: Objective,
    solver: &Solver,
) -> CliResult<CachingParameter> {
    match scheme {
        Scheme::Baseline(b) => Ok(b.parameter(instance)),
        Scheme::Smooth => {
            let cfg = smooth_config(solver);
            let extra = distinct_baselines(instance);
            Ok(minimize_smoothed_with_starts(instance, layout, &cfg, objective, &extra)?.0)
        }
        Scheme::Sca => {
            let opts = sca_options(solver);
            Ok(solve_sca_multistart(
                instance,
                layout,
                &distinct_baselines(instance),
                objective,
                &opts,
            )?
            .0)
        }
    }
}

pub fn smooth_config(solver: &Solver) -> ProjectedGradConfig {
    ProjectedGradConfig {
        c: solver.c,
        starts: solver.starts,
        seed: solver.seed,
        budget: solver.budget,
        ..Default::default()
    }
}

pub fn sca_options(solver: &Solver) -> ScaOptions {
    ScaOptions {
        max_iter: solver.sca_max_iter,
        max_gp_vars: solver.sca_max_vars,
        ..Default::default()
    }
}

pub fn converse_value(
    instance: &SystemInstance,
    counts: &[usize],
    objective: Objective,
) -> CliResult<f64> {
    if counts.iter().sum::<usize>() == 0 {
        return Ok(0.0);
    }
    let active = ActiveSet::new(instance, counts.to_vec())?;
    Ok(match objective {
        Objective::WorstCase => converse_worst_case(instance, &active).value,
        Objective::Average => converse_average(instance, &active).value,
    })
}

fn sim_seed(seed: u64, point: usize, scheme: usize) -> u64 {
    seed ^ ((point as u64) << 32) ^ ((scheme as u64) << 16)
}

/// Errors that stop the whole sweep instead of marking a row.
fn is_fatal(e: &CliError) -> bool {
    matches!(e, CliError::Config(_) | CliError::Io(_) | CliError::Csv(_))
}

fn failure_status(scheme: Scheme, e: &CliError) -> String {
    match (scheme, e) {
        (Scheme::Sca, CliError::Core(cacheopt::Error::ModelTooLarge { .. })) => {
            format!("skipped: {e}")
        }
        _ => format!("failed: {e}"),
    }
}

fn mark_all(spec: &SweepSpec, value: f64, status: String) -> Vec<SweepRow> {
    let mut rows: Vec<SweepRow> = spec
        .schemes
        .iter()
        .map(|s| SweepRow::empty(value, s.id(), status.clone()))
        .collect();
    if spec.converse {
        rows.push(SweepRow::empty(value, CONVERSE_ID, status));
    }
    rows
}

fn point_instance(
    spec: &SweepSpec,
    value: f64,
) -> CliResult<std::result::Result<(Scenario, SystemInstance), String>> {
    let scenario = spec.scenario.with_sweep(spec.variable, value)?;
    match scenario.instance() {
        Ok(inst) => Ok(Ok((scenario, inst))),
        Err(CliError::Core(e)) => Ok(Err(format!("invalid: {e}"))),
        Err(e) => Err(e),
    }
}

fn deterministic_point(spec: &SweepSpec, point: usize, value: f64) -> CliResult<Vec<SweepRow>> {
    let (scenario, instance) = match point_instance(spec, value)? {
        Ok(x) => x,
        Err(status) => return Ok(mark_all(spec, value, status)),
    };
    let objective = scenario.objective();
    let counts = scenario.design_counts(&instance)?;
    let layout = TierLayout::new(counts.clone())?;
    let ev = LoadEvaluator::with_budget(&instance, &layout, spec.solver.budget)?;
    let smoothing = SmoothingConfig::new(spec.solver.c)?;
    let bound = if spec.converse {
        Some(converse_value(&instance, &counts, objective)?)
    } else {
        None
    };

    let mut rows = Vec::new();
    for (si, &scheme) in spec.schemes.iter().enumerate() {
        let started = Instant::now();
        let evaluated = design(scheme, &instance, &layout, objective, &spec.solver).and_then(|q| {
            let exact = ev.exact(&q, objective)?;
            let smoothed = ev.smoothed(&q, smoothing, objective)?;
            let sim = if spec.simulate {
                let mode = match objective {
                    Objective::WorstCase => SimMode::FixedDemand(ev.worst_case_with_demand(&q)?.1),
                    Objective::Average => SimMode::PopularityRandom,
                };
                let seed = sim_seed(spec.solver.seed, point, si);
                let est = monte_carlo(
                    &instance,
                    &layout,
                    &q,
                    spec.solver.scale,
                    spec.solver.trials,
                    seed,
                    &mode,
                )?;
                Some((est.mean, est.stderr))
            } else {
                None
            };
            Ok((exact, smoothed, sim))
        });
        let row = match evaluated {
            Ok((exact, smoothed, sim)) => SweepRow {
                sweep_value: value,
                scheme: scheme.id().to_string(),
                exact: Some(exact),
                smoothed: Some(smoothed),
                sim_mean: sim.map(|s| s.0),
                sim_stderr: sim.map(|s| s.1),
                converse: bound,
                wall_time: spec.solver.timing.then(|| started.elapsed().as_secs_f64()),
                status: "ok".into(),
            },
            Err(e) if is_fatal(&e) => return Err(e),
            Err(e) => SweepRow::empty(value, scheme.id(), failure_status(scheme, &e)),
        };
        rows.push(row);
    }
    if let Some(b) = bound {
        rows.push(SweepRow {
            converse: Some(b),
            status: "ok".into(),
            ..SweepRow::empty(value, CONVERSE_ID, String::new())
        });
    }
    Ok(rows)
}

fn activity_point(
    spec: &SweepSpec,
    point: usize,
    value: f64,
    probs: Option<&PerTier<f64>>,
) -> CliResult<Vec<SweepRow>> {
    let (scenario, instance) = match point_instance(spec, value)? {
        Ok(x) => x,
        Err(status) => return Ok(mark_all(spec, value, status)),
    };
    let objective = scenario.objective();
    let users = instance.tier_user_counts().to_vec();
    let probs = match probs {
        Some(p) => p.expand(instance.n_tiers(), "activity probability")?,
        None => scenario.activity_prob(instance.n_tiers())?.ok_or_else(|| {
            CliError::Config("random-activity needs scenario.activity_prob or --prob".into())
        })?,
    };
    let mut scenario = scenario;
    scenario.activity_prob = Some(PerTier::Each(probs.clone()));
    let counts = scenario.design_counts(&instance)?;
    let smoothing = SmoothingConfig::new(spec.solver.c)?;
    let started = Instant::now();

    // Designs are made once for the expected layout, then evaluated on every
    // realized active set.
    let mut designs: Vec<(usize, std::result::Result<CachingParameter, String>)> = Vec::new();
    if counts.iter().sum::<usize>() == 0 {
        if probs.iter().any(|&p| p > 0.0) {
            return Err(CliError::Config(
                "design layout has no users but activity is positive".into(),
            ));
        }
        for si in 0..spec.schemes.len() {
            designs.push((si, Ok(CachingParameter::zeros_for(&instance))));
        }
    } else {
        let layout = TierLayout::new(counts)?;
        LoadEvaluator::with_budget(&instance, &layout, spec.solver.budget)?;
        for (si, &scheme) in spec.schemes.iter().enumerate() {
            match design(scheme, &instance, &layout, objective, &spec.solver) {
                Ok(q) => designs.push((si, Ok(q))),
                Err(e) if is_fatal(&e) => return Err(e),
                Err(e) => designs.push((si, Err(failure_status(scheme, &e)))),
            }
        }
    }
    let good: Vec<&CachingParameter> = designs
        .iter()
        .filter_map(|(_, q)| q.as_ref().ok())
        .collect();

    let mode = ActivityMode::auto(
        &users,
        spec.solver.activity_samples,
        sim_seed(spec.solver.seed, point, 0),
    );
    let averages = activity_average(&users, &probs, mode, |a| {
        let mut out = Vec::with_capacity(2 * good.len() + 1);
        if a.iter().sum::<usize>() == 0 {
            out.resize(2 * good.len() + 1, 0.0);
            return Ok(out);
        }
        let ev = LoadEvaluator::with_budget(
            &instance,
            &TierLayout::new(a.to_vec())?,
            spec.solver.budget,
        )?;
        for q in &good {
            out.push(ev.exact(q, objective)?);
            out.push(ev.smoothed(q, smoothing, objective)?);
        }
        out.push(converse_value(&instance, a, objective)?);
        Ok(out)
    })?;
    let status = match mode {
        ActivityMode::Enumerate => "ok".to_string(),
        ActivityMode::Sample { samples, .. } => format!("sampled {samples}"),
    };
    let bound = averages.last().map(|a| a.mean).filter(|_| spec.converse);
    let elapsed = spec.solver.timing.then(|| started.elapsed().as_secs_f64());

    let mut rows = Vec::new();
    let mut k = 0;
    for (si, q) in &designs {
        let id = spec.schemes[*si].id();
        match q {
            Ok(_) => {
                rows.push(SweepRow {
                    exact: Some(averages[2 * k].mean),
                    smoothed: Some(averages[2 * k + 1].mean),
                    converse: bound,
                    wall_time: elapsed,
                    status: status.clone(),
                    ..SweepRow::empty(value, id, String::new())
                });
                k += 1;
            }
            Err(s) => rows.push(SweepRow::empty(value, id, s.clone())),
        }
    }
    if let Some(b) = bound {
        rows.push(SweepRow {
            converse: Some(b),
            status,
            ..SweepRow::empty(value, CONVERSE_ID, String::new())
        });
    }
    Ok(rows)
}

fn run(
    spec: &SweepSpec,
    f: impl Fn(usize, f64) -> CliResult<Vec<SweepRow>> + Sync,
) -> CliResult<Vec<SweepRow>> {
    spec.validate()?;
    let per_point: Vec<CliResult<Vec<SweepRow>>> = spec
        .values
        .par_iter()
        .enumerate()
        .map(|(i, &v)| f(i, v))
        .collect();
    let mut keyed = Vec::new();
    for (i, rows) in per_point.into_iter().enumerate() {
        for (j, r) in rows?.into_iter().enumerate() {
            keyed.push(((i, j), r));
        }
    }
    keyed.sort_by_key(|(k, _)| *k);
    Ok(keyed.into_iter().map(|(_, r)| r).collect())
}

/// One row per (sweep value, scheme) plus one converse row per value.
pub fn run_sweep(spec: &SweepSpec) -> CliResult<Vec<SweepRow>> {
    run(spec, |i, v| deterministic_point(spec, i, v))
}

/// As [`run_sweep`], with every load and bound averaged over random active
/// sets. `probs` overrides the scenario's per-tier activity probabilities.
pub fn run_random_activity(
    spec: &SweepSpec,
    probs: Option<&PerTier<f64>>,
) -> CliResult<Vec<SweepRow>> {
    run(spec, |i, v| activity_point(spec, i, v, probs))
}
