mod common;

use cacheopt::baselines::Baseline;
use cacheopt::load_eval::subset_log_mass;
use cacheopt::model::check_feasible;
use cacheopt::sca::{solve_sca_multistart, ScaOptions};
use cacheopt::smooth_opt::{
    increment_bound, increment_growth_cap, minimize_smoothed_with_starts, project_feasible,
    ProjectedGradConfig,
};
use cacheopt::{CachingParameter, LoadEvaluator, Objective};
use proptest::prelude::*;

fn dist(a: &CachingParameter, b: &CachingParameter) -> f64 {
    (0..a.n_tiers())
        .flat_map(|t| {
            a.row(t)
                .iter()
                .zip(b.row(t))
                .map(|(x, y)| (x - y).powi(2))
                .collect::<Vec<_>>()
        })
        .sum::<f64>()
        .sqrt()
}

fn raw(rng: &mut rand_chacha::ChaCha8Rng, t: usize, n: usize) -> CachingParameter {
    use rand::Rng;
    CachingParameter::new(
        t,
        n,
        (0..t * n).map(|_| rng.random_range(-0.5..1.5)).collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn projection_is_feasible_idempotent_and_nonexpansive(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let inst = common::random_small(&mut rng);
        let (t, n) = (inst.n_tiers(), inst.n_files());
        let a = raw(&mut rng, t, n);
        let b = raw(&mut rng, t, n);
        let pa = project_feasible(&a, &inst).unwrap();
        let pb = project_feasible(&b, &inst).unwrap();
        prop_assert!(check_feasible(&inst, &pa).unwrap().feasible);
        let again = project_feasible(&pa, &inst).unwrap();
        prop_assert!(dist(&pa, &again) <= 1e-9);
        prop_assert!(dist(&pa, &pb) <= dist(&a, &b) + 1e-9);
    }

    #[test]
    fn bound_times_c_is_constant(k in 1usize..=12, n in 1usize..=50) {
        for obj in [Objective::WorstCase, Objective::Average] {
            let base = increment_bound(k, n, 1.0, obj).unwrap();
            for c in [2.0, 10.0, 100.0] {
                let b = increment_bound(k, n, c, obj).unwrap();
                prop_assert!((b * c - base).abs() <= 1e-12 * base.max(1.0));
            }
        }
    }
}

#[test]
fn bound_is_below_growth_cap() {
    for k in 1..=20 {
        for n in [1, 2, 5, 50] {
            let b = increment_bound(k, n, 1.0, Objective::WorstCase).unwrap();
            let cap = increment_growth_cap(k, n);
            assert!(b <= cap + 1e-9 * cap.max(1.0), "K={k} N={n}: {b} > {cap}");
        }
        assert!(subset_log_mass(k) >= 0.0);
    }
}

#[test]
fn average_bound_drops_the_library_term() {
    let w = increment_bound(3, 7, 2.0, Objective::WorstCase).unwrap();
    let a = increment_bound(3, 7, 2.0, Objective::Average).unwrap();
    assert!((w - a - 3.0 * 7f64.ln() / 2.0).abs() < 1e-12);
}

#[test]
fn invalid_bound_arguments_are_rejected() {
    assert!(increment_bound(0, 2, 1.0, Objective::WorstCase).is_err());
    assert!(increment_bound(2, 0, 1.0, Objective::WorstCase).is_err());
    assert!(increment_bound(2, 2, 0.5, Objective::Average).is_err());
}

#[test]
fn smoothed_optimum_is_within_increment_of_best_found() {
    let mut rng = common::rng(31);
    for i in 0..8 {
        let inst = common::random_small(&mut rng);
        let layout = inst.full_layout().unwrap();
        let ev = LoadEvaluator::new(&inst, &layout).unwrap();
        let bases: Vec<CachingParameter> =
            Baseline::ALL.iter().map(|b| b.parameter(&inst)).collect();
        for obj in [Objective::WorstCase, Objective::Average] {
            let (q_sca, _, _) =
                solve_sca_multistart(&inst, &layout, &bases, obj, &ScaOptions::default()).unwrap();
            let sca = ev.exact(&q_sca, obj).unwrap();
            for c in [1.0, 5.0, 10.0] {
                let cfg = ProjectedGradConfig {
                    c,
                    starts: 4,
                    seed: i,
                    ..Default::default()
                };
                let (q, rep) =
                    minimize_smoothed_with_starts(&inst, &layout, &cfg, obj, &bases).unwrap();
                let got = ev.exact(&q, obj).unwrap();
                assert!((got - rep.best().exact).abs() < 1e-12);
                for b in &bases {
                    assert!(got <= ev.exact(b, obj).unwrap() + 1e-9, "{i} {obj:?} c={c}");
                }
                let best = got.min(sca);
                let bound = increment_bound(layout.total(), inst.n_files(), c, obj).unwrap();
                assert!(
                    got - best <= bound + 1e-12 * best.abs().max(1.0),
                    "{i} {obj:?} c={c}: {got} vs {best}, bound {bound}"
                );
            }
        }
    }
}

#[test]
fn same_seed_same_optimum() {
    let mut rng = common::rng(32);
    let inst = common::random_instance(&mut rng, 3, &[1, 2]);
    let layout = inst.full_layout().unwrap();
    let cfg = ProjectedGradConfig {
        c: 5.0,
        starts: 3,
        seed: 9,
        ..Default::default()
    };
    let a = minimize_smoothed_with_starts(&inst, &layout, &cfg, Objective::Average, &[]).unwrap();
    let b = minimize_smoothed_with_starts(&inst, &layout, &cfg, Objective::Average, &[]).unwrap();
    assert_eq!(a.0, b.0);
}
