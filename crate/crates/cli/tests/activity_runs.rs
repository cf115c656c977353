use cacheopt::converse::{converse_worst_case, ActiveSet};
use cacheopt::SystemInstance;
use cacheopt_cli::activity::{activity_average, ActivityMode};
use cacheopt_cli::config::PerTier;
use cacheopt_cli::{run_random_activity, run_sweep, Config, SweepSpec};

fn spec(activity: &str) -> SweepSpec {
    let cfg = Config::from_toml_str(&format!(
        r#"
        [scenario]
        objective = "average"
        n_files = 3
        v1 = 3.0
        dv = -1.0
        n_tiers = 2
        m1 = 0.5
        dm = 1.0
        gamma = 0.8
        tier_users = [2, 1]
        {activity}

        [sweep]
        variable = "M0"
        values = [1.0, 1.5]
        schemes = ["uniform-alidec", "tier-uniform", "file-uniform", "smooth"]

        [solver]
        starts = 2
        "#
    ))
    .unwrap();
    SweepSpec::from_config(&cfg, false).unwrap()
}

#[test]
fn certain_activity_matches_the_deterministic_sweep() {
    let det = run_sweep(&spec("")).unwrap();
    let rnd = run_random_activity(&spec("activity_prob = 0.5"), Some(&PerTier::One(1.0))).unwrap();
    assert_eq!(det.len(), rnd.len());
    for (a, b) in det.iter().zip(&rnd) {
        assert_eq!((a.sweep_value, &a.scheme), (b.sweep_value, &b.scheme));
        for (x, y) in [
            (a.exact, b.exact),
            (a.smoothed, b.smoothed),
            (a.converse, b.converse),
        ] {
            match (x, y) {
                (Some(x), Some(y)) => {
                    assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()), "{a:?} vs {b:?}")
                }
                (x, y) => assert_eq!(x, y),
            }
        }
    }
}

#[test]
fn silent_users_cost_nothing() {
    let rows = run_random_activity(&spec("activity_prob = 0.0"), None).unwrap();
    for r in rows {
        assert_eq!(r.status, "ok");
        assert_eq!(r.exact.or(r.converse), Some(0.0), "{r:?}");
    }
}

#[test]
fn sampling_agrees_with_enumeration() {
    let inst = SystemInstance::new(
        vec![3.0, 2.0, 1.0],
        vec![0.5, 1.5],
        vec![4, 2],
        vec![0.5, 0.3, 0.2],
    )
    .unwrap();
    let users = [4, 2];
    let probs = [0.6, 0.3];
    let f = |a: &[usize]| {
        if a.iter().sum::<usize>() == 0 {
            return Ok(vec![0.0]);
        }
        Ok(vec![
            converse_worst_case(&inst, &ActiveSet::new(&inst, a.to_vec()).unwrap()).value,
        ])
    };
    let exact = activity_average(&users, &probs, ActivityMode::Enumerate, f).unwrap()[0];
    let sampled = activity_average(
        &users,
        &probs,
        ActivityMode::Sample {
            samples: 4000,
            seed: 3,
        },
        f,
    )
    .unwrap()[0];
    assert_eq!(exact.stderr, 0.0);
    assert!(sampled.stderr > 0.0);
    assert!(
        (exact.mean - sampled.mean).abs() <= 3.0 * sampled.stderr,
        "{exact:?} vs {sampled:?}"
    );
}
