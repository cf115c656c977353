//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Built with `harness = false`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use cacheopt::baselines::Baseline;
use cacheopt::converse::{converse_average, converse_worst_case, distinct_fraction, ActiveSet};
use cacheopt::load_eval::subset_log_mass;
use cacheopt::sca::{lift, solve_sca_multistart, ScaOptions, ScaStatus};
use cacheopt::simulator::{monte_carlo, SimMode};
use cacheopt::smooth_opt::{
    increment_bound, increment_growth_cap, minimize_smoothed_with_starts, project_feasible,
    ProjectedGradConfig,
};
use cacheopt::{CachingParameter, LoadEvaluator, Objective, SmoothingConfig, SystemInstance};
use cacheopt_cli::presets::preset;
use cacheopt_cli::{run_sweep, Scheme, SweepSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const OBJECTIVES: [Objective; 2] = [Objective::WorstCase, Objective::Average];

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn random_instance(rng: &mut ChaCha8Rng, n: usize, users: &[usize]) -> SystemInstance {
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

/// `N <= 3`, `K <= 3`.
fn random_small(rng: &mut ChaCha8Rng) -> SystemInstance {
    let n = rng.random_range(1..=3);
    let k: usize = rng.random_range(1..=3);
    let tiers = rng.random_range(1..=k);
    let mut users = vec![1; tiers];
    for _ in tiers..k {
        users[rng.random_range(0..tiers)] += 1;
    }
    random_instance(rng, n, &users)
}

fn random_feasible(rng: &mut ChaCha8Rng, inst: &SystemInstance) -> CachingParameter {
    let (t, n) = (inst.n_tiers(), inst.n_files());
    let raw: Vec<f64> = (0..t * n).map(|_| rng.random_range(0.0..1.2)).collect();
    project_feasible(&CachingParameter::new(t, n, raw).unwrap(), inst).unwrap()
}

fn baselines(inst: &SystemInstance) -> Vec<CachingParameter> {
    Baseline::ALL.iter().map(|b| b.parameter(inst)).collect()
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let started = Instant::now();
    let mut worst_dev: f64 = 0.0;
    let mut misses = Vec::new();
    for i in 0..100u64 {
        let inst = random_small(&mut rng);
        let layout = inst.full_layout().unwrap();
        let ev = LoadEvaluator::new(&inst, &layout).unwrap();
        let q = random_feasible(&mut rng, &inst);
        let obj = OBJECTIVES[i as usize % 2];
        let (analytic, mode) = match obj {
            Objective::WorstCase => {
                let (l, d) = ev.worst_case_with_demand(&q).unwrap();
                (l, SimMode::FixedDemand(d))
            }
            Objective::Average => (ev.average(&q).unwrap(), SimMode::PopularityRandom),
        };
        let est = monte_carlo(&inst, &layout, &q, 10_000, 200, i, &mode).unwrap();
        let tol = (0.01 * analytic).max(3.0 * est.stderr);
        let dev = (est.mean - analytic).abs();
        if dev > tol + 1e-12 {
            misses.push(format!(
                "instance {i}: simulated {:.6} analytic {analytic:.6} stderr {:.1e}",
                est.mean, est.stderr
            ));
        }
        worst_dev = worst_dev.max(dev / tol.max(1e-300));
    }
    let took = started.elapsed();
    ensure!(
        misses.is_empty(),
        "{} of 100 outside tolerance, {took:.1?}; {}",
        misses.len(),
        misses.join("; ")
    );
    ensure!(took < Duration::from_secs(120), "took {took:?}");
    Ok(format!(
        "100 instances, largest deviation {worst_dev:.2} of tolerance, {took:.1?}"
    ))
}

fn lifting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let inst = random_small(&mut rng);
        let layout = inst.full_layout().unwrap();
        let ev = LoadEvaluator::new(&inst, &layout).unwrap();
        let q = random_feasible(&mut rng, &inst);
        let scale = inst.total_size();
        for obj in OBJECTIVES {
            let gap = (lift(&inst, &layout, &q, obj).unwrap().objective
                - ev.exact(&q, obj).unwrap())
            .abs();
            ensure!(gap <= 5e-9 * scale, "point {i} {obj:?}: gap {gap}");
            worst = worst.max(gap / scale);
        }
    }
    Ok(format!(
        "50 points, both objectives, largest gap {worst:.1e} x sum V"
    ))
}

fn sca_convergence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut most = 0;
    for i in 0..10 {
        let inst = random_small(&mut rng);
        let layout = inst.full_layout().unwrap();
        let ev = LoadEvaluator::new(&inst, &layout).unwrap();
        let starts = baselines(&inst);
        for obj in OBJECTIVES {
            let (q, rep, _) =
                solve_sca_multistart(&inst, &layout, &starts, obj, &ScaOptions::default())
                    .map_err(|e| format!("instance {i}: {e}"))?;
            ensure!(
                rep.status == ScaStatus::Converged && rep.iterations <= 50,
                "instance {i} {obj:?}: {} after {} iterations",
                rep.status.as_str(),
                rep.iterations
            );
            ensure!(
                rep.trace.windows(2).all(|w| w[1] <= w[0] + 1e-7),
                "instance {i}: trace rises"
            );
            let fin = ev.exact(&q, obj).unwrap();
            for b in &starts {
                ensure!(
                    fin <= ev.exact(b, obj).unwrap() + 1e-6,
                    "instance {i} {obj:?}: above a baseline"
                );
            }
            most = most.max(rep.iterations);
        }
    }
    Ok(format!(
        "10 instances, both objectives, at most {most} iterations"
    ))
}

fn sandwich() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for i in 0..200 {
        let inst = random_small(&mut rng);
        let layout = inst.full_layout().unwrap();
        let ev = LoadEvaluator::new(&inst, &layout).unwrap();
        let q = random_feasible(&mut rng, &inst);
        let c = [1.0, 5.0, 10.0][i % 3];
        let obj = OBJECTIVES[(i / 3) % 2];
        let gap = ev
            .smoothed(&q, SmoothingConfig::new(c).unwrap(), obj)
            .unwrap()
            - ev.exact(&q, obj).unwrap();
        let bound = increment_bound(layout.total(), inst.n_files(), c, obj).unwrap();
        ensure!(
            gap >= -1e-12 && gap <= bound + 1e-12,
            "draw {i}: gap {gap} bound {bound}"
        );
    }
    Ok("200 draws".into())
}

fn increments() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for i in 0..6 {
        let inst = random_small(&mut rng);
        let layout = inst.full_layout().unwrap();
        let ev = LoadEvaluator::new(&inst, &layout).unwrap();
        let starts = baselines(&inst);
        for obj in OBJECTIVES {
            let (qs, _, _) =
                solve_sca_multistart(&inst, &layout, &starts, obj, &ScaOptions::default())
                    .map_err(|e| e.to_string())?;
            let mut found: Vec<f64> = starts.iter().map(|q| ev.exact(q, obj).unwrap()).collect();
            found.push(ev.exact(&qs, obj).unwrap());
            let mut smooth = Vec::new();
            for c in [1.0, 5.0, 10.0] {
                let cfg = ProjectedGradConfig {
                    c,
                    starts: 4,
                    seed: i,
                    ..Default::default()
                };
                let (q, _) =
                    minimize_smoothed_with_starts(&inst, &layout, &cfg, obj, &starts).unwrap();
                smooth.push((c, ev.exact(&q, obj).unwrap()));
            }
            found.extend(smooth.iter().map(|s| s.1));
            let best = found.iter().cloned().fold(f64::INFINITY, f64::min);
            for (c, load) in smooth {
                let bound = increment_bound(layout.total(), inst.n_files(), c, obj).unwrap();
                ensure!(
                    load - best <= bound + 1e-12 * best.abs().max(1.0),
                    "instance {i} {obj:?} c={c}: {load} - {best} > {bound}"
                );
            }
        }
    }
    for k in 1..=20 {
        for n in [1, 3, 50] {
            for obj in OBJECTIVES {
                let base = increment_bound(k, n, 1.0, obj).unwrap();
                for c in [2.0, 10.0, 100.0] {
                    let b = increment_bound(k, n, c, obj).unwrap();
                    ensure!(
                        (b * c - base).abs() <= 1e-12 * base.max(1.0),
                        "bound*c varies at K={k}"
                    );
                }
            }
            let b = increment_bound(k, n, 1.0, Objective::WorstCase).unwrap();
            ensure!(
                b <= increment_growth_cap(k, n) * (1.0 + 1e-12),
                "K={k} N={n} above closed form"
            );
            ensure!(subset_log_mass(k) <= b + 1e-12, "K={k}");
        }
    }
    Ok("6 instances x 3 values of c; bound*c constant and below closed forms for K <= 20".into())
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let inst = random_small(&mut rng);
        let layout = inst.full_layout().unwrap();
        let ev = LoadEvaluator::new(&inst, &layout).unwrap();
        let q = random_feasible(&mut rng, &inst);
        let s = SmoothingConfig::new([1.0, 5.0, 10.0][i % 3]).unwrap();
        let obj = OBJECTIVES[i % 2];
        let (_, g) = ev.smoothed_with_gradient(&q, s, obj).unwrap();
        let mut diff: f64 = 0.0;
        let mut norm: f64 = 0.0;
        for j in 0..q.as_slice().len() {
            let mut up = q.clone();
            up.as_mut_slice()[j] += h;
            let mut dn = q.clone();
            dn.as_mut_slice()[j] -= h;
            let fd =
                (ev.smoothed(&up, s, obj).unwrap() - ev.smoothed(&dn, s, obj).unwrap()) / (2.0 * h);
            diff = diff.max((fd - g.as_slice()[j]).abs());
            norm = norm.max(g.as_slice()[j].abs());
        }
        let rel = diff / norm.max(1e-12);
        ensure!(rel < 1e-5, "point {i}: relative error {rel:.2e}");
        worst = worst.max(rel);
    }
    Ok(format!("50 points, largest relative error {worst:.1e}"))
}

fn converse_validity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    for i in 0..30 {
        let inst = random_small(&mut rng);
        let layout = inst.full_layout().unwrap();
        let ev = LoadEvaluator::new(&inst, &layout).unwrap();
        let active = ActiveSet::from_layout(&inst, &layout).unwrap();
        let worst = converse_worst_case(&inst, &active).value;
        let avg = converse_average(&inst, &active).value;
        let mut schemes = baselines(&inst);
        for obj in OBJECTIVES {
            let cfg = ProjectedGradConfig {
                c: 10.0,
                starts: 2,
                seed: i,
                ..Default::default()
            };
            let start = schemes[..3].to_vec();
            schemes.push(
                minimize_smoothed_with_starts(&inst, &layout, &cfg, obj, &start)
                    .unwrap()
                    .0,
            );
        }
        schemes.push(random_feasible(&mut rng, &inst));
        for q in &schemes {
            ensure!(
                worst <= ev.worst_case(q).unwrap() + 1e-9,
                "instance {i}: worst-case converse too high"
            );
            ensure!(
                avg <= ev.average(q).unwrap() + 1e-9,
                "instance {i}: average converse too high"
            );
        }
    }
    for np in 1..=8 {
        for m in 1..=8 {
            let want = 1.0 - (1.0 - 1.0 / np as f64).powi(m as i32);
            ensure!(
                (distinct_fraction(m, np) - want).abs() <= 1e-12,
                "Stirling identity at N'={np} m={m}"
            );
        }
    }
    Ok("30 instances x 6 schemes; Stirling identity for N', m <= 8".into())
}

fn preset_ordering() -> Outcome {
    let started = Instant::now();
    for name in ["fig2b", "fig5b"] {
        let cfg = preset(name, false).map_err(|e| e.to_string())?;
        let mut spec = SweepSpec::from_config(&cfg, false).map_err(|e| e.to_string())?;
        spec.schemes.retain(|s| *s != Scheme::Sca);
        spec.simulate = false;
        let rows = run_sweep(&spec).map_err(|e| e.to_string())?;
        for &v in &spec.values {
            let at: Vec<_> = rows.iter().filter(|r| r.sweep_value == v).collect();
            let smooth = at
                .iter()
                .find(|r| r.scheme == "smooth")
                .and_then(|r| r.exact);
            let smooth = smooth.ok_or_else(|| format!("{name} at {v}: no smoothed load"))?;
            for b in Baseline::ALL {
                let base = at
                    .iter()
                    .find(|r| r.scheme == b.id())
                    .and_then(|r| r.exact)
                    .unwrap();
                ensure!(
                    smooth <= base + 1e-9,
                    "{name} T={v}: smooth {smooth} above {} {base}",
                    b.id()
                );
            }
        }
    }
    let took = started.elapsed();
    ensure!(took < Duration::from_secs(300), "took {took:?}");
    Ok(format!("fig2b and fig5b, T = 1..4, {took:.1?}"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run{run}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_cacheopt"))
            .args([
                "sweep",
                "--preset",
                "fig2b",
                "--seed",
                "7",
                "--out",
                out.to_str().unwrap(),
            ])
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
        outputs.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    ensure!(outputs[0] == outputs[1], "CSV differs between runs");
    Ok(format!(
        "fig2b sweep twice, {} identical bytes",
        outputs[0].len()
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("oracle equivalence", oracle_equivalence),
        ("lifting", lifting),
        ("sca monotone convergence", sca_convergence),
        ("smoothing sandwich", sandwich),
        ("increments", increments),
        ("gradients", gradients),
        ("converse validity", converse_validity),
        ("preset ordering", preset_ordering),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome =
            catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(msg) => println!("criterion {} {name}: PASS ({msg})", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({msg})", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
