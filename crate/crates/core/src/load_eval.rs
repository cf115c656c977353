//! Exact and log-sum-exp smoothed loads of the parameterized scheme.
//!
//! Users inside a tier are exchangeable, so demand vectors are grouped into
//! classes: one nondecreasing multiset of requested files per tier. A class
//! carries its multiplicity (number of raw demand vectors it stands for).
//!
//! The length of the coded message for subset `S` and member `j` only depends
//! on the file `j` requests and on how many users of every tier are in
//! `S \ {j}`. Those per-tier counts are encoded once per layout as a
//! "pattern", so an evaluation reduces to table lookups.

use crate::error::{Error, Result};
use crate::model::{CachingParameter, SystemInstance, TierLayout};

/// Default cap on subset-term evaluations per objective evaluation.
pub const DEFAULT_BUDGET: f64 = 5e6;

/// Which load is being evaluated or optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    WorstCase,
    Average,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::WorstCase => "worst",
            Objective::Average => "average",
        }
    }
}

/// Files requested by the users of a layout, zero-based, users ordered tier
/// by tier.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DemandVector(Vec<usize>);

impl DemandVector {
    pub fn new(entries: Vec<usize>, layout: &TierLayout, n_files: usize) -> Result<Self> {
        if entries.len() != layout.total() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} demands", layout.total()),
                got: format!("{}", entries.len()),
            });
        }
        if let Some(&bad) = entries.iter().find(|&&f| f >= n_files) {
            return Err(Error::InvalidArgument(format!(
                "demand for file index {bad} but library has {n_files} files"
            )));
        }
        Ok(Self(entries))
    }

    pub fn entries(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Smoothing parameter `c` of the log-sum-exp bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingConfig {
    c: f64,
}

impl SmoothingConfig {
    pub fn new(c: f64) -> Result<Self> {
        if !(c.is_finite() && c >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "smoothing parameter must be finite and >= 1, got {c}"
            )));
        }
        Ok(Self { c })
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self { c: 1.0 }
    }
}

/// A symmetry class of demand vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandClass {
    /// Representative demand, nondecreasing inside each tier.
    pub files: Vec<usize>,
    /// Number of demand vectors in the class.
    pub multiplicity: f64,
}

/// Number of demand classes: `prod_t C(N + K_t - 1, K_t)`.
pub fn class_count(layout: &TierLayout, n_files: usize) -> f64 {
    layout
        .per_tier_counts()
        .iter()
        .map(|&k| multiset_count(n_files, k))
        .product()
}

fn multiset_count(n: usize, k: usize) -> f64 {
    // C(n + k - 1, k)
    let mut acc = 1.0;
    for i in 1..=k {
        acc *= (n + k - i) as f64 / i as f64;
    }
    acc.round()
}

/// Subset-term evaluations needed for one pass over all classes.
pub fn evaluation_cost(layout: &TierLayout, n_files: usize) -> f64 {
    let k = layout.total() as i32;
    class_count(layout, n_files) * k as f64 * 2f64.powi(k - 1)
}

/// Enumerates the demand classes of a layout.
pub fn enumerate_classes(layout: &TierLayout, n_files: usize) -> Vec<DemandClass> {
    let per_tier: Vec<Vec<(Vec<usize>, f64)>> = layout
        .per_tier_counts()
        .iter()
        .map(|&k| tier_multisets(n_files, k))
        .collect();
    let mut out = vec![DemandClass {
        files: Vec::with_capacity(layout.total()),
        multiplicity: 1.0,
    }];
    for options in per_tier {
        let mut next = Vec::with_capacity(out.len() * options.len());
        for prefix in &out {
            for (files, mult) in &options {
                let mut f = prefix.files.clone();
                f.extend_from_slice(files);
                next.push(DemandClass {
                    files: f,
                    multiplicity: prefix.multiplicity * mult,
                });
            }
        }
        out = next;
    }
    out
}

/// Nondecreasing sequences of length `k` over `0..n`, with their multinomial
/// counts `k! / prod c_f!`.
fn tier_multisets(n: usize, k: usize) -> Vec<(Vec<usize>, f64)> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(
        n: usize,
        k: usize,
        start: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<(Vec<usize>, f64)>,
    ) {
        if cur.len() == k {
            out.push((cur.clone(), multinomial_of_runs(cur)));
            return;
        }
        for f in start..n {
            cur.push(f);
            rec(n, k, f, cur, out);
            cur.pop();
        }
    }
    rec(n, k, 0, &mut cur, &mut out);
    out
}

fn multinomial_of_runs(sorted: &[usize]) -> f64 {
    let mut acc = 1.0;
    let mut placed = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        // multiply by C(placed + run, run)
        for r in 1..=(j - i) {
            acc *= (placed + r) as f64 / r as f64;
        }
        placed += j - i;
        i = j;
    }
    acc.round()
}

/// One coded message: for every member of the subset, its user index and
/// the pattern of `S \ {j}`.
#[derive(Debug, Clone)]
struct SubsetGroup {
    members: Vec<(usize, usize)>,
}

/// Per-layout precomputation shared by every evaluation.
#[derive(Debug, Clone)]
pub struct LoadEvaluator {
    instance: SystemInstance,
    layout: TierLayout,
    classes: Vec<DemandClass>,
    groups: Vec<SubsetGroup>,
    /// Tiers with at least one user.
    active_tiers: Vec<usize>,
    /// Per active tier: the count of its users inside `S \ {j}` for each pattern.
    pattern_counts: Vec<Vec<usize>>,
}

/// Per-evaluation lookup table: `prod[f][pattern] = V_f * prod_t q^a (1-q)^(K_t-a)`.
struct TermTable {
    n_patterns: usize,
    values: Vec<f64>,
}

impl TermTable {
    #[inline]
    fn get(&self, file: usize, pattern: usize) -> f64 {
        self.values[file * self.n_patterns + pattern]
    }
}

impl LoadEvaluator {
    pub fn new(instance: &SystemInstance, layout: &TierLayout) -> Result<Self> {
        Self::with_budget(instance, layout, DEFAULT_BUDGET)
    }

    pub fn with_budget(
        instance: &SystemInstance,
        layout: &TierLayout,
        budget: f64,
    ) -> Result<Self> {
        layout.check_against(instance)?;
        let k = layout.total();
        if k > 40 {
            return Err(Error::BudgetExceeded {
                required: f64::INFINITY,
                budget,
            });
        }
        let required = evaluation_cost(layout, instance.n_files());
        if required > budget {
            return Err(Error::BudgetExceeded { required, budget });
        }

        let active_tiers: Vec<usize> = (0..layout.n_tiers())
            .filter(|&t| layout.count(t) > 0)
            .collect();
        let strides: Vec<usize> = active_tiers
            .iter()
            .scan(1usize, |acc, &t| {
                let s = *acc;
                *acc *= layout.count(t) + 1;
                Some(s)
            })
            .collect();
        let n_patterns: usize = active_tiers.iter().map(|&t| layout.count(t) + 1).product();
        let pattern_counts: Vec<Vec<usize>> = active_tiers
            .iter()
            .zip(&strides)
            .map(|(&t, &stride)| {
                (0..n_patterns)
                    .map(|p| (p / stride) % (layout.count(t) + 1))
                    .collect()
            })
            .collect();
        let tier_masks: Vec<u64> = active_tiers.iter().map(|&t| layout.tier_mask(t)).collect();

        let mut groups = Vec::with_capacity((1usize << k) - 1);
        for mask in 1u64..(1u64 << k) {
            let mut members = Vec::with_capacity(mask.count_ones() as usize);
            for j in 0..k {
                if mask >> j & 1 == 0 {
                    continue;
                }
                let rest = mask & !(1u64 << j);
                let pattern = tier_masks
                    .iter()
                    .zip(&strides)
                    .map(|(tm, s)| (rest & tm).count_ones() as usize * s)
                    .sum();
                members.push((j, pattern));
            }
            groups.push(SubsetGroup { members });
        }

        Ok(Self {
            instance: instance.clone(),
            layout: layout.clone(),
            classes: enumerate_classes(layout, instance.n_files()),
            groups,
            active_tiers,
            pattern_counts,
        })
    }

    pub fn instance(&self) -> &SystemInstance {
        &self.instance
    }

    pub fn layout(&self) -> &TierLayout {
        &self.layout
    }

    pub fn classes(&self) -> &[DemandClass] {
        &self.classes
    }

    /// Probability of the class under the instance popularity.
    pub fn class_probability(&self, class: &DemandClass) -> f64 {
        let p = self.instance.popularity();
        class.multiplicity * class.files.iter().map(|&f| p[f]).product::<f64>()
    }

    pub(crate) fn n_patterns(&self) -> usize {
        self.pattern_counts.first().map_or(1, Vec::len)
    }

    /// Member lists `(user, pattern)` of every nonempty subset, in a fixed order.
    pub(crate) fn subset_groups(&self) -> impl Iterator<Item = &[(usize, usize)]> {
        self.groups.iter().map(|g| g.members.as_slice())
    }

    pub(crate) fn n_subsets(&self) -> usize {
        self.groups.len()
    }

    /// Number of users of tier `t` inside `S \ {j}` for the given pattern.
    pub(crate) fn pattern_tier_count(&self, pattern: usize, tier: usize) -> usize {
        match self.active_tiers.iter().position(|&t| t == tier) {
            Some(i) => self.pattern_counts[i][pattern],
            None => 0,
        }
    }

    fn check_q(&self, q: &CachingParameter) -> Result<()> {
        q.check_dims(&self.instance)
    }

    fn term_table(&self, q: &CachingParameter) -> TermTable {
        let n_files = self.instance.n_files();
        let n_patterns = self.n_patterns();
        let mut values = vec![0.0; n_files * n_patterns];
        for f in 0..n_files {
            let vf = self.instance.file_size(f);
            for p in 0..n_patterns {
                let mut v = vf;
                for (i, &t) in self.active_tiers.iter().enumerate() {
                    let a = self.pattern_counts[i][p];
                    let b = self.layout.count(t) - a;
                    let qt = q.get(t, f);
                    v *= qt.powi(a as i32) * (1.0 - qt).powi(b as i32);
                }
                values[f * n_patterns + p] = v;
            }
        }
        TermTable { n_patterns, values }
    }

    /// Subset term for member `j` of `S` under `demand`.
    pub fn subset_term(
        &self,
        q: &CachingParameter,
        demand: &DemandVector,
        mask: u64,
        j: usize,
    ) -> Result<f64> {
        self.check_q(q)?;
        if mask >> j & 1 == 0 {
            return Err(Error::InvalidArgument(format!(
                "user {j} is not in the subset"
            )));
        }
        let f = demand.entries()[j];
        let rest = mask & !(1u64 << j);
        let mut v = self.instance.file_size(f);
        for (u, &t) in self.layout.user_tiers().iter().enumerate() {
            let qt = q.get(t, f);
            v *= if rest >> u & 1 == 1 { qt } else { 1.0 - qt };
        }
        Ok(v)
    }

    fn class_load(&self, table: &TermTable, files: &[usize]) -> f64 {
        self.groups
            .iter()
            .map(|g| {
                g.members
                    .iter()
                    .map(|&(j, p)| table.get(files[j], p))
                    .fold(0.0, f64::max)
            })
            .sum()
    }

    fn class_smoothed(&self, table: &TermTable, files: &[usize], c: f64) -> f64 {
        self.groups
            .iter()
            .map(|g| lse_scaled(g.members.iter().map(|&(j, p)| table.get(files[j], p)), c))
            .sum()
    }

    /// Load for one specific demand vector.
    pub fn demand_load(&self, q: &CachingParameter, demand: &DemandVector) -> Result<f64> {
        self.check_q(q)?;
        if demand.len() != self.layout.total() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} demands", self.layout.total()),
                got: format!("{}", demand.len()),
            });
        }
        let table = self.term_table(q);
        Ok(self.class_load(&table, demand.entries()))
    }

    /// Worst-case load and a maximizing demand vector.
    pub fn worst_case_with_demand(&self, q: &CachingParameter) -> Result<(f64, DemandVector)> {
        self.check_q(q)?;
        let table = self.term_table(q);
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (i, class) in self.classes.iter().enumerate() {
            let v = self.class_load(&table, &class.files);
            if v > best {
                best = v;
                arg = i;
            }
        }
        Ok((best.max(0.0), DemandVector(self.classes[arg].files.clone())))
    }

    pub fn worst_case(&self, q: &CachingParameter) -> Result<f64> {
        self.worst_case_with_demand(q).map(|(v, _)| v)
    }

    pub fn average(&self, q: &CachingParameter) -> Result<f64> {
        self.check_q(q)?;
        let table = self.term_table(q);
        Ok(self
            .classes
            .iter()
            .map(|class| {
                let w = self.class_probability(class);
                if w == 0.0 {
                    0.0
                } else {
                    w * self.class_load(&table, &class.files)
                }
            })
            .sum())
    }

    pub fn exact(&self, q: &CachingParameter, objective: Objective) -> Result<f64> {
        match objective {
            Objective::WorstCase => self.worst_case(q),
            Objective::Average => self.average(q),
        }
    }

    /// Double log-sum-exp upper bound on the worst-case load. The outer sum
    /// runs over raw demand vectors, so each class enters with its
    /// multiplicity.
    pub fn smoothed_worst_case(
        &self,
        q: &CachingParameter,
        smoothing: SmoothingConfig,
    ) -> Result<f64> {
        self.check_q(q)?;
        let c = smoothing.c();
        let table = self.term_table(q);
        let mut acc = OnlineLse::default();
        for class in &self.classes {
            let g = self.class_smoothed(&table, &class.files, c);
            acc.push(c * g + class.multiplicity.ln());
        }
        Ok(acc.value() / c)
    }

    /// Upper bound on the average load with only the per-subset max smoothed.
    pub fn smoothed_average(
        &self,
        q: &CachingParameter,
        smoothing: SmoothingConfig,
    ) -> Result<f64> {
        self.check_q(q)?;
        let c = smoothing.c();
        let table = self.term_table(q);
        Ok(self
            .classes
            .iter()
            .map(|class| {
                let w = self.class_probability(class);
                if w == 0.0 {
                    0.0
                } else {
                    w * self.class_smoothed(&table, &class.files, c)
                }
            })
            .sum())
    }

    pub fn smoothed(
        &self,
        q: &CachingParameter,
        smoothing: SmoothingConfig,
        objective: Objective,
    ) -> Result<f64> {
        match objective {
            Objective::WorstCase => self.smoothed_worst_case(q, smoothing),
            Objective::Average => self.smoothed_average(q, smoothing),
        }
    }

    /// Smoothed objective together with its analytic gradient in `q`.
    pub fn smoothed_with_gradient(
        &self,
        q: &CachingParameter,
        smoothing: SmoothingConfig,
        objective: Objective,
    ) -> Result<(f64, CachingParameter)> {
        self.check_q(q)?;
        let c = smoothing.c();
        let n_files = self.instance.n_files();
        let n_tiers = self.instance.n_tiers();
        let n_patterns = self.n_patterns();
        let table = self.term_table(q);
        // partial[i][f][p]: derivative of table[f][p] w.r.t. q[active_tiers[i]][f]
        let partial: Vec<Vec<f64>> = self
            .active_tiers
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let kt = self.layout.count(t);
                let mut d = vec![0.0; n_files * n_patterns];
                for f in 0..n_files {
                    let qt = q.get(t, f);
                    for p in 0..n_patterns {
                        let a = self.pattern_counts[i][p];
                        let b = kt - a;
                        let dpoly = poly_derivative(qt, a, b);
                        if dpoly == 0.0 {
                            continue;
                        }
                        let mut v = self.instance.file_size(f) * dpoly;
                        for (i2, &t2) in self.active_tiers.iter().enumerate() {
                            if i2 == i {
                                continue;
                            }
                            let a2 = self.pattern_counts[i2][p];
                            let b2 = self.layout.count(t2) - a2;
                            let q2 = q.get(t2, f);
                            v *= q2.powi(a2 as i32) * (1.0 - q2).powi(b2 as i32);
                        }
                        d[f * n_patterns + p] = v;
                    }
                }
                d
            })
            .collect();

        // Gradient of one class's smoothed inner sum, accumulated into `grad`
        // with the given weight.
        let class_grad = |files: &[usize], weight: f64, grad: &mut [f64]| {
            for g in &self.groups {
                let vals: Vec<f64> = g
                    .members
                    .iter()
                    .map(|&(j, p)| table.get(files[j], p))
                    .collect();
                let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = vals.iter().map(|v| (c * (v - m)).exp()).collect();
                let z: f64 = exps.iter().sum();
                for (&(j, p), e) in g.members.iter().zip(&exps) {
                    let f = files[j];
                    let w = weight * e / z;
                    for (i, &t) in self.active_tiers.iter().enumerate() {
                        grad[t * n_files + f] += w * partial[i][f * n_patterns + p];
                    }
                }
            }
        };

        let mut grad = vec![0.0; n_tiers * n_files];
        let value = match objective {
            Objective::Average => {
                let mut total = 0.0;
                for class in &self.classes {
                    let w = self.class_probability(class);
                    if w == 0.0 {
                        continue;
                    }
                    total += w * self.class_smoothed(&table, &class.files, c);
                    class_grad(&class.files, w, &mut grad);
                }
                total
            }
            Objective::WorstCase => {
                // online softmax over classes, rescaling the running gradient
                let mut running_max = f64::NEG_INFINITY;
                let mut running_sum = 0.0;
                let mut scratch = vec![0.0; n_tiers * n_files];
                for class in &self.classes {
                    let v =
                        c * self.class_smoothed(&table, &class.files, c) + class.multiplicity.ln();
                    let weight = if v > running_max {
                        let scale = (running_max - v).exp();
                        running_sum *= scale;
                        grad.iter_mut().for_each(|g| *g *= scale);
                        running_max = v;
                        1.0
                    } else {
                        (v - running_max).exp()
                    };
                    running_sum += weight;
                    scratch.iter_mut().for_each(|g| *g = 0.0);
                    class_grad(&class.files, 1.0, &mut scratch);
                    grad.iter_mut()
                        .zip(&scratch)
                        .for_each(|(g, s)| *g += weight * s);
                }
                grad.iter_mut().for_each(|g| *g /= running_sum);
                (running_max + running_sum.ln()) / c
            }
        };
        Ok((value, CachingParameter::new(n_tiers, n_files, grad)?))
    }
}

/// `d/dq [q^a (1-q)^b]`.
fn poly_derivative(q: f64, a: usize, b: usize) -> f64 {
    let mut d = 0.0;
    if a > 0 {
        d += a as f64 * q.powi(a as i32 - 1) * (1.0 - q).powi(b as i32);
    }
    if b > 0 {
        d -= b as f64 * q.powi(a as i32) * (1.0 - q).powi(b as i32 - 1);
    }
    d
}

/// `(1/c) ln sum_j exp(c x_j)`, shifted by the max.
fn lse_scaled(xs: impl Iterator<Item = f64> + Clone, c: f64) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = xs.map(|x| (c * (x - m)).exp()).sum();
    m + s.ln() / c
}

/// Streaming `ln sum exp(v_i)`.
#[derive(Debug, Clone, Copy)]
struct OnlineLse {
    max: f64,
    sum: f64,
}

impl Default for OnlineLse {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }
}

impl OnlineLse {
    fn push(&mut self, v: f64) {
        if v > self.max {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.sum += (v - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        self.max + self.sum.ln()
    }
}

/// Subset term `prod_{a in S\{j}} q_{t(a),n_j} prod_{b notin S\{j}} (1-q_{t(b),n_j}) V_{n_j}`.
/// `mask` is the bitmask of `S` over the layout's users.
pub fn subset_term(
    instance: &SystemInstance,
    layout: &TierLayout,
    q: &CachingParameter,
    demand: &DemandVector,
    mask: u64,
    j: usize,
) -> Result<f64> {
    q.check_dims(instance)?;
    if mask >> j & 1 == 0 {
        return Err(Error::InvalidArgument(format!(
            "user {j} is not in the subset"
        )));
    }
    let f = demand.entries()[j];
    let rest = mask & !(1u64 << j);
    let mut v = instance.file_size(f);
    for (u, &t) in layout.user_tiers().iter().enumerate() {
        let qt = q.get(t, f);
        v *= if rest >> u & 1 == 1 { qt } else { 1.0 - qt };
    }
    Ok(v)
}

pub fn worst_case_load(
    instance: &SystemInstance,
    layout: &TierLayout,
    q: &CachingParameter,
) -> Result<f64> {
    LoadEvaluator::new(instance, layout)?.worst_case(q)
}

pub fn average_load(
    instance: &SystemInstance,
    layout: &TierLayout,
    q: &CachingParameter,
) -> Result<f64> {
    LoadEvaluator::new(instance, layout)?.average(q)
}

pub fn smoothed_worst_case(
    instance: &SystemInstance,
    layout: &TierLayout,
    q: &CachingParameter,
    smoothing: SmoothingConfig,
) -> Result<f64> {
    LoadEvaluator::new(instance, layout)?.smoothed_worst_case(q, smoothing)
}

pub fn smoothed_average(
    instance: &SystemInstance,
    layout: &TierLayout,
    q: &CachingParameter,
    smoothing: SmoothingConfig,
) -> Result<f64> {
    LoadEvaluator::new(instance, layout)?.smoothed_average(q, smoothing)
}

pub fn smoothed_gradient(
    instance: &SystemInstance,
    layout: &TierLayout,
    q: &CachingParameter,
    smoothing: SmoothingConfig,
    objective: Objective,
) -> Result<CachingParameter> {
    LoadEvaluator::new(instance, layout)?
        .smoothed_with_gradient(q, smoothing, objective)
        .map(|(_, g)| g)
}

/// `sum_{s=1}^{K} C(K,s) ln s`, the number of log terms one smoothing layer
/// adds across all subsets.
pub fn subset_log_mass(k: usize) -> f64 {
    (1..=k)
        .map(|s| ln_choose(k, s).exp() * (s as f64).ln())
        .sum()
}

pub(crate) fn ln_choose(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
}
