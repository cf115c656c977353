//! Lower bounds on the minimum worst-case and average loads that hold for
//! any placement.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::model::{SystemInstance, TierLayout};

/// Active users per tier and their cache sizes in increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet {
    counts: Vec<usize>,
    sorted_caches: Vec<f64>,
}

impl ActiveSet {
    pub fn new(instance: &SystemInstance, counts: Vec<usize>) -> Result<Self> {
        if counts.len() != instance.n_tiers() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} tiers", instance.n_tiers()),
                got: format!("{}", counts.len()),
            });
        }
        for (t, (&a, &k)) in counts.iter().zip(instance.tier_user_counts()).enumerate() {
            if a > k {
                return Err(Error::InvalidArgument(format!(
                    "tier {t} has {a} active users but only {k} users"
                )));
            }
        }
        if counts.iter().sum::<usize>() == 0 {
            return Err(Error::InvalidArgument("active set is empty".into()));
        }
        // tier caches are strictly increasing, so tier order is sorted order
        let sorted_caches = counts
            .iter()
            .zip(instance.tier_cache_sizes())
            .flat_map(|(&a, &m)| std::iter::repeat_n(m, a))
            .collect();
        Ok(Self {
            counts,
            sorted_caches,
        })
    }

    pub fn from_layout(instance: &SystemInstance, layout: &TierLayout) -> Result<Self> {
        Self::new(instance, layout.per_tier_counts().to_vec())
    }

    pub fn full(instance: &SystemInstance) -> Result<Self> {
        Self::new(instance, instance.tier_user_counts().to_vec())
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.sorted_caches.len()
    }

    pub fn sorted_caches(&self) -> &[f64] {
        &self.sorted_caches
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConverseValue {
    pub value: f64,
    /// Number of users in the maximizing cut.
    pub m: usize,
    /// Number of files kept by the maximizing reduction (average bound only).
    pub n_prime: Option<usize>,
}

/// Stirling number of the second kind.
pub fn stirling2(m: usize, j: usize) -> Result<BigUint> {
    if j > m {
        return Err(Error::InvalidArgument(format!("S({m}, {j}) needs j <= m")));
    }
    // row[k] = S(i, k)
    let mut row = vec![BigUint::zero(); j + 1];
    row[0] = BigUint::one();
    for i in 1..=m {
        for k in (1..=j.min(i)).rev() {
            row[k] = &row[k] * BigUint::from(k) + &row[k - 1];
        }
        row[0] = BigUint::zero();
    }
    Ok(row[j].clone())
}

fn binomial(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

fn factorial(n: usize) -> BigUint {
    (1..=n).fold(BigUint::one(), |acc, i| acc * BigUint::from(i))
}

fn big_ratio(num: &BigUint, den: &BigUint) -> f64 {
    // scale both down together when they exceed f64 range
    let shift = den.bits().saturating_sub(1000);
    let n = (num >> shift).to_f64().unwrap_or(f64::INFINITY);
    let d = (den >> shift).to_f64().unwrap_or(f64::INFINITY);
    n / d
}

fn prefix_sums(xs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    std::iter::once(0.0)
        .chain(xs.iter().map(|x| {
            acc += x;
            acc
        }))
        .collect()
}

/// Worst-case converse:
/// `max_m (m/N) sum V - min{ sum_{l<=m} P_l / (N-l+1), (m/N) P_m }`,
/// `P_l` the sum of the `l` smallest active caches, clamped at zero.
pub fn converse_worst_case(instance: &SystemInstance, active: &ActiveSet) -> ConverseValue {
    let n = instance.n_files();
    let total = instance.total_size();
    let p = prefix_sums(active.sorted_caches());
    let mut best = ConverseValue {
        value: 0.0,
        m: 1,
        n_prime: None,
    };
    let mut stepped = 0.0;
    for m in 1..=n.min(active.total()) {
        stepped += p[m] / (n - m + 1) as f64;
        let frac = m as f64 / n as f64;
        let v = frac * total - stepped.min(frac * p[m]);
        if v > best.value {
            best.value = v;
            best.m = m;
        }
    }
    best
}

/// `sum_j C(N'-1, j-1) j! S(m, j) / N'^m`: expected fraction of the first
/// `N'` files requested by `m` uniform draws.
pub fn distinct_fraction(m: usize, n_prime: usize) -> f64 {
    let mut num = BigUint::zero();
    for j in 1..=m.min(n_prime) {
        num += binomial(n_prime - 1, j - 1) * factorial(j) * stirling2(m, j).expect("j <= m");
    }
    big_ratio(&num, &BigUint::from(n_prime).pow(m as u32))
}

/// Converse on the average load when demands are uniform over the first
/// `N'` files, for one set of caches given in increasing order. Returns the
/// value and the maximizing `m`.
pub fn converse_average_uniform(
    sorted_caches: &[f64],
    n_prime: usize,
    instance: &SystemInstance,
) -> Result<(f64, usize)> {
    if n_prime == 0 || n_prime > instance.n_files() {
        return Err(Error::InvalidArgument(format!(
            "N' must lie in 1..={}, got {n_prime}",
            instance.n_files()
        )));
    }
    if sorted_caches.is_empty() {
        return Err(Error::InvalidArgument("cache multiset is empty".into()));
    }
    let head: f64 = instance.file_sizes()[..n_prime].iter().sum();
    let p = prefix_sums(sorted_caches);
    let np = n_prime as f64;
    let mut best = (0.0, 1);
    let mut stepped = 0.0;
    for m in 1..=n_prime.min(sorted_caches.len()) {
        stepped += p[m] / np;
        let miss = 1.0 - (1.0 - 1.0 / np).powi(m as i32);
        let v = distinct_fraction(m, n_prime) * head - stepped.min(miss * p[m]);
        if v > best.0 {
            best = (v, m);
        }
    }
    Ok(best)
}

/// Average-load converse: for every `N'`, users request one of the first
/// `N'` files with probability `N' p_{N'}`; subsets of requesting users are
/// grouped by how many come from each tier.
pub fn converse_average(instance: &SystemInstance, active: &ActiveSet) -> ConverseValue {
    let la = active.total();
    let counts = active.counts();
    let caches = instance.tier_cache_sizes();
    let p = instance.popularity();

    // every per-tier composition (c_t <= L_{a,t}) except the empty one
    let mut compositions: Vec<Vec<usize>> = vec![vec![]];
    for &a in counts {
        compositions = compositions
            .into_iter()
            .flat_map(|prefix| {
                (0..=a).map(move |c| {
                    let mut v = prefix.clone();
                    v.push(c);
                    v
                })
            })
            .collect();
    }
    compositions.retain(|c| c.iter().any(|&x| x > 0));
    let multiplicities: Vec<f64> = compositions
        .iter()
        .map(|c| {
            let m: BigUint = c
                .iter()
                .zip(counts)
                .map(|(&ci, &a)| binomial(a, ci))
                .product();
            big_ratio(&m, &BigUint::one())
        })
        .collect();

    let mut best = ConverseValue {
        value: 0.0,
        m: 1,
        n_prime: Some(1),
    };
    for n_prime in 1..=instance.n_files() {
        let x = (n_prime as f64 * p[n_prime - 1]).clamp(0.0, 1.0);
        let mut total = 0.0;
        let mut arg_m = 1;
        let mut arg_v = f64::NEG_INFINITY;
        for (comp, mult) in compositions.iter().zip(&multiplicities) {
            let i: usize = comp.iter().sum();
            let weight = x.powi(i as i32) * (1.0 - x).powi((la - i) as i32);
            if weight == 0.0 {
                continue;
            }
            let sub: Vec<f64> = comp
                .iter()
                .zip(caches)
                .flat_map(|(&c, &m)| std::iter::repeat_n(m, c))
                .collect();
            let (v, m) =
                converse_average_uniform(&sub, n_prime, instance).expect("valid N' and subset");
            total += weight * mult * v;
            if weight * mult * v > arg_v {
                arg_v = weight * mult * v;
                arg_m = m;
            }
        }
        if total > best.value {
            best = ConverseValue {
                value: total,
                m: arg_m,
                n_prime: Some(n_prime),
            };
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn big(n: u64) -> BigUint {
        BigUint::from(n)
    }

    #[test]
    fn stirling_values() {
        assert_eq!(stirling2(0, 0).unwrap(), big(1));
        assert_eq!(stirling2(3, 2).unwrap(), big(3));
        assert_eq!(stirling2(4, 2).unwrap(), big(7));
        assert_eq!(stirling2(5, 3).unwrap(), big(25));
        assert_eq!(stirling2(4, 0).unwrap(), big(0));
        assert!(stirling2(2, 3).is_err());
        // large values stay exact: S(30, 15)
        assert_eq!(
            stirling2(30, 15).unwrap().to_string(),
            "12879868072770626040000"
        );
    }

    #[test]
    fn worst_case_examples() {
        let inst = SystemInstance::new(vec![1.0, 1.0], vec![0.0], vec![2], vec![0.5, 0.5]).unwrap();
        let c = converse_worst_case(&inst, &ActiveSet::full(&inst).unwrap());
        assert!((c.value - 2.0).abs() < 1e-15);
        assert_eq!(c.m, 2);

        let inst = SystemInstance::new(vec![1.0, 1.0], vec![1.0], vec![2], vec![0.5, 0.5]).unwrap();
        let c = converse_worst_case(&inst, &ActiveSet::full(&inst).unwrap());
        assert!((c.value - 0.5).abs() < 1e-15);
        assert_eq!(c.m, 1);

        let inst = SystemInstance::new(vec![1.0, 2.0], vec![3.0], vec![1], vec![0.5, 0.5]).unwrap();
        assert_eq!(
            converse_worst_case(&inst, &ActiveSet::full(&inst).unwrap()).value,
            0.0
        );
    }

    #[test]
    fn average_uniform_examples() {
        let inst =
            SystemInstance::new(vec![3.0, 2.0, 1.0], vec![0.0], vec![1], vec![0.5, 0.3, 0.2])
                .unwrap();
        for np in 1..=3 {
            let head: f64 = inst.file_sizes()[..np].iter().sum();
            let (v, m) = converse_average_uniform(&[0.0], np, &inst).unwrap();
            assert!((v - head / np as f64).abs() < 1e-15);
            assert_eq!(m, 1);
        }
        let (v, _) = converse_average_uniform(&[6.0, 6.0], 3, &inst).unwrap();
        assert!(v.abs() < 1e-12);
        assert!(converse_average_uniform(&[0.0], 4, &inst).is_err());
        assert!(converse_average_uniform(&[], 1, &inst).is_err());
    }

    #[test]
    fn average_examples() {
        let inst = SystemInstance::new(vec![1.0, 1.0], vec![0.0], vec![1], vec![0.5, 0.5]).unwrap();
        let c = converse_average(&inst, &ActiveSet::full(&inst).unwrap());
        assert!((c.value - 1.0).abs() < 1e-15);
        assert_eq!(c.n_prime, Some(2));

        // uniform popularity, N' = N: weight sits on the full set
        let inst = SystemInstance::new(
            vec![2.0, 1.0, 1.0],
            vec![0.5, 1.0],
            vec![2, 1],
            vec![1.0 / 3.0; 3],
        )
        .unwrap();
        let active = ActiveSet::full(&inst).unwrap();
        let full = converse_average_uniform(active.sorted_caches(), 3, &inst)
            .unwrap()
            .0;
        let c = converse_average(&inst, &active);
        assert!(c.value >= full - 1e-12);

        let inst = SystemInstance::new(vec![1.0, 1.0], vec![2.0], vec![2], vec![0.5, 0.5]).unwrap();
        assert_eq!(
            converse_average(&inst, &ActiveSet::full(&inst).unwrap()).value,
            0.0
        );
    }

    #[test]
    fn active_set_validation() {
        let inst = SystemInstance::new(vec![1.0], vec![0.0, 0.5], vec![2, 1], vec![1.0]).unwrap();
        assert!(ActiveSet::new(&inst, vec![0, 0]).is_err());
        assert!(ActiveSet::new(&inst, vec![3, 0]).is_err());
        assert!(ActiveSet::new(&inst, vec![1]).is_err());
        let a = ActiveSet::new(&inst, vec![2, 1]).unwrap();
        assert_eq!(a.sorted_caches(), &[0.0, 0.0, 0.5]);
        assert_eq!(a.total(), 3);
    }
}
