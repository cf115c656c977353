//! Single-instance subcommands. Each writes one CSV and returns a short
//! human-readable summary.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use cacheopt::baselines::Baseline;
use cacheopt::converse::{converse_average, converse_worst_case, ActiveSet};
use cacheopt::model::check_feasible;
use cacheopt::sca::solve_sca_multistart;
use cacheopt::simulator::{monte_carlo, SimMode};
use cacheopt::smooth_opt::minimize_smoothed_with_starts;
use cacheopt::{
    CachingParameter, LoadEvaluator, Objective, SmoothingConfig, SystemInstance, TierLayout,
};

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::presets::{preset, LARGE_BUDGET};
use crate::sweep::{sca_options, smooth_config, validate_solver};

/// Loads `--config` or `--preset` (exactly one of them).
pub fn load_config(
    config: Option<&Path>,
    preset_name: Option<&str>,
    large: bool,
) -> CliResult<Config> {
    let mut cfg = match (config, preset_name) {
        (Some(p), None) => Config::load(p)?,
        (None, Some(name)) => preset(name, large)?,
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "give either --config or --preset, not both".into(),
            ))
        }
        (None, None) => {
            return Err(CliError::Config(
                "one of --config or --preset is required".into(),
            ))
        }
    };
    if large {
        cfg.solver.budget = cfg.solver.budget.max(LARGE_BUDGET);
    }
    Ok(cfg)
}

fn fmt_q(q: &CachingParameter) -> String {
    let mut s = String::new();
    for t in 0..q.n_tiers() {
        let row: Vec<String> = q.row(t).iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(s, "  tier {}: [{}]", t + 1, row.join(", "));
    }
    s
}

struct Setup {
    instance: SystemInstance,
    layout: TierLayout,
    objective: Objective,
}

fn setup(cfg: &Config) -> CliResult<Setup> {
    let (instance, layout) = cfg.scenario.build()?;
    Ok(Setup {
        objective: cfg.scenario.objective(),
        instance,
        layout,
    })
}

/// Baselines plus the configured parameter, if any.
fn fixed_schemes(
    cfg: &Config,
    instance: &SystemInstance,
) -> CliResult<Vec<(String, CachingParameter)>> {
    let mut out: Vec<(String, CachingParameter)> = Baseline::ALL
        .iter()
        .map(|b| (b.id().to_string(), b.parameter(instance)))
        .collect();
    if let Some(q) = cfg.parameter()? {
        let report = check_feasible(instance, &q)?;
        if !report.feasible {
            return Err(CliError::Config(
                "configured parameter violates the cache constraints".into(),
            ));
        }
        out.push(("parameter".into(), q));
    }
    Ok(out)
}

pub fn evaluate<W: Write>(cfg: &Config, out: W) -> CliResult<String> {
    validate_solver(&cfg.solver, false)?;
    let s = setup(cfg)?;
    let ev = LoadEvaluator::with_budget(&s.instance, &s.layout, cfg.solver.budget)?;
    let smoothing = SmoothingConfig::new(cfg.solver.c)?;
    let bound = crate::sweep::converse_value(&s.instance, s.layout.per_tier_counts(), s.objective)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scheme",
        "objective",
        "exact_load",
        "smoothed_load",
        "converse",
    ])?;
    let mut summary = String::new();
    for (id, q) in fixed_schemes(cfg, &s.instance)? {
        let exact = ev.exact(&q, s.objective)?;
        let smoothed = ev.smoothed(&q, smoothing, s.objective)?;
        w.write_record([
            id.clone(),
            s.objective.as_str().to_string(),
            exact.to_string(),
            smoothed.to_string(),
            bound.to_string(),
        ])?;
        let _ = writeln!(summary, "{id}: {} load {exact}", s.objective.as_str());
    }
    w.flush()?;
    Ok(summary)
}

pub fn simulate<W: Write>(cfg: &Config, out: W) -> CliResult<String> {
    validate_solver(&cfg.solver, true)?;
    let s = setup(cfg)?;
    let ev = LoadEvaluator::with_budget(&s.instance, &s.layout, cfg.solver.budget)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scheme",
        "objective",
        "analytic_load",
        "sim_mean",
        "sim_stderr",
        "trials",
    ])?;
    let mut summary = String::new();
    for (i, (id, q)) in fixed_schemes(cfg, &s.instance)?.into_iter().enumerate() {
        let mode = match s.objective {
            Objective::WorstCase => SimMode::FixedDemand(ev.worst_case_with_demand(&q)?.1),
            Objective::Average => SimMode::PopularityRandom,
        };
        let analytic = ev.exact(&q, s.objective)?;
        let seed = cfg.solver.seed ^ ((i as u64) << 16);
        let est = monte_carlo(
            &s.instance,
            &s.layout,
            &q,
            cfg.solver.scale,
            cfg.solver.trials,
            seed,
            &mode,
        )?;
        w.write_record([
            id.clone(),
            s.objective.as_str().to_string(),
            analytic.to_string(),
            est.mean.to_string(),
            est.stderr.to_string(),
            est.trials.to_string(),
        ])?;
        let _ = writeln!(
            summary,
            "{id}: analytic {analytic}, simulated {} +/- {}",
            est.mean, est.stderr
        );
    }
    w.flush()?;
    Ok(summary)
}

pub fn converse<W: Write>(cfg: &Config, out: W) -> CliResult<String> {
    let s = setup(cfg)?;
    let active = ActiveSet::from_layout(&s.instance, &s.layout)?;
    let worst = converse_worst_case(&s.instance, &active);
    let avg = converse_average(&s.instance, &active);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["objective", "converse", "m", "n_prime"])?;
    w.write_record([
        "worst".to_string(),
        worst.value.to_string(),
        worst.m.to_string(),
        String::new(),
    ])?;
    w.write_record([
        "average".to_string(),
        avg.value.to_string(),
        avg.m.to_string(),
        avg.n_prime.map(|n| n.to_string()).unwrap_or_default(),
    ])?;
    w.flush()?;
    Ok(format!(
        "worst-case converse {}\naverage converse {}\n",
        worst.value, avg.value
    ))
}

pub fn optimize_sca<W: Write>(cfg: &Config, out: W) -> CliResult<String> {
    validate_solver(&cfg.solver, false)?;
    let s = setup(cfg)?;
    let inits: Vec<CachingParameter> = Baseline::ALL
        .iter()
        .map(|b| b.parameter(&s.instance))
        .collect();
    let (q, report, start) = solve_sca_multistart(
        &s.instance,
        &s.layout,
        &inits,
        s.objective,
        &sca_options(&cfg.solver),
    )?;
    report.write_csv(out)?;
    Ok(format!(
        "sca from {}: {} load {} after {} iterations ({})\n{}",
        Baseline::ALL[start].id(),
        s.objective.as_str(),
        report.final_load(),
        report.iterations,
        report.status.as_str(),
        fmt_q(&q)
    ))
}

pub fn optimize_smooth<W: Write>(cfg: &Config, out: W) -> CliResult<String> {
    validate_solver(&cfg.solver, false)?;
    let s = setup(cfg)?;
    let extra: Vec<CachingParameter> = Baseline::ALL
        .iter()
        .map(|b| b.parameter(&s.instance))
        .collect();
    let (q, report) = minimize_smoothed_with_starts(
        &s.instance,
        &s.layout,
        &smooth_config(&cfg.solver),
        s.objective,
        &extra,
    )?;
    report.write_trace_csv(out)?;
    let best = report.best();
    Ok(format!(
        "smoothed optimum from start {}: {} load {} (smoothed {})\n{}",
        best.start,
        s.objective.as_str(),
        best.exact,
        best.smoothed,
        fmt_q(&q)
    ))
}
