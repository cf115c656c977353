//! Geometric programs in posynomial form and a log-space barrier solver.
//!
//! With `y = ln x` every constraint `p(x) <= 1` becomes `ln p(e^y) <= 0`, a
//! convex log-sum-exp, and the objective `sum c e^{a.y}` is convex as well.
//! Variables may be tagged with a block id; as long as each term and
//! constraint touches at most one block (plus untagged "global" variables)
//! the Newton system is block-arrow shaped and solved through a Schur
//! complement on the globals.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `coef * prod_i x_i^{e_i}` with `coef > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    coef: f64,
    /// Sorted by variable, no zero exponents.
    exps: Vec<(usize, f64)>,
}

impl Monomial {
    pub fn new(coef: f64, exps: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        if !(coef.is_finite() && coef > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "monomial coefficient must be positive and finite, got {coef}"
            )));
        }
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for (v, e) in exps {
            if !e.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "exponent of x{v} is not finite"
                )));
            }
            *merged.entry(v).or_default() += e;
        }
        Ok(Self {
            coef,
            exps: merged.into_iter().filter(|&(_, e)| e != 0.0).collect(),
        })
    }

    pub fn constant(coef: f64) -> Result<Self> {
        Self::new(coef, [])
    }

    pub fn var(v: usize) -> Self {
        Self {
            coef: 1.0,
            exps: vec![(v, 1.0)],
        }
    }

    pub fn coef(&self) -> f64 {
        self.coef
    }

    pub fn exps(&self) -> &[(usize, f64)] {
        &self.exps
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        Monomial::new(
            self.coef * other.coef,
            self.exps.iter().chain(&other.exps).copied(),
        )
        .expect("product of valid monomials")
    }

    pub fn pow(&self, e: f64) -> Monomial {
        Monomial::new(
            self.coef.powf(e),
            self.exps.iter().map(|&(v, a)| (v, a * e)),
        )
        .expect("power of a valid monomial")
    }

    pub fn inv(&self) -> Monomial {
        self.pow(-1.0)
    }

    pub fn scale(&self, c: f64) -> Result<Monomial> {
        Monomial::new(self.coef * c, self.exps.iter().copied())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.exps
            .iter()
            .fold(self.coef, |acc, &(v, e)| acc * x[v].powf(e))
    }

    /// `ln(coef) + a . y`.
    pub fn log_eval(&self, y: &[f64]) -> f64 {
        self.exps
            .iter()
            .fold(self.coef.ln(), |acc, &(v, e)| acc + e * y[v])
    }

    fn max_var(&self) -> Option<usize> {
        self.exps.last().map(|&(v, _)| v)
    }
}

/// Sum of monomials.
#[derive(Debug, Clone, PartialEq)]
pub struct Posynomial {
    terms: Vec<Monomial>,
}

impl Posynomial {
    pub fn new(terms: Vec<Monomial>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidArgument(
                "posynomial needs at least one term".into(),
            ));
        }
        Ok(Self { terms })
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|m| m.eval(x)).sum()
    }

    pub fn mul_monomial(&self, m: &Monomial) -> Posynomial {
        Posynomial {
            terms: self.terms.iter().map(|t| t.mul(m)).collect(),
        }
    }

    pub fn add(&self, other: &Posynomial) -> Posynomial {
        Posynomial {
            terms: self.terms.iter().chain(&other.terms).cloned().collect(),
        }
    }

    fn max_var(&self) -> Option<usize> {
        self.terms.iter().filter_map(Monomial::max_var).max()
    }
}

impl From<Monomial> for Posynomial {
    fn from(m: Monomial) -> Self {
        Self { terms: vec![m] }
    }
}

/// Monomial lower bound of a posynomial, tight at `anchor`: with
/// `w_k = m_k(anchor) / p(anchor)`, `p >= prod_k (m_k / w_k)^{w_k}`.
pub fn condense(p: &Posynomial, anchor: &[f64]) -> Result<Monomial> {
    let vals: Vec<f64> = p.terms.iter().map(|m| m.eval(anchor)).collect();
    let total: f64 = vals.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "cannot condense at a point where the posynomial is {total}"
        )));
    }
    let mut out = Monomial::constant(1.0)?;
    for (m, v) in p.terms.iter().zip(&vals) {
        let w = v / total;
        if w == 0.0 {
            continue;
        }
        out = out.mul(&m.scale(1.0 / w)?.pow(w));
    }
    Ok(out)
}

/// Condensed approximation of `numerator / denominator` at `anchor`; an upper
/// bound of the true ratio, tight at the anchor.
pub fn condense_ratio(
    numerator: &Monomial,
    denominator: &Posynomial,
    anchor: &[f64],
) -> Result<Monomial> {
    Ok(numerator.mul(&condense(denominator, anchor)?.inv()))
}

/// A geometric program: minimize a posynomial subject to `p_i(x) <= 1`.
#[derive(Debug, Clone, Default)]
pub struct GpModel {
    names: Vec<String>,
    blocks: Vec<Option<usize>>,
    objective: Option<Posynomial>,
    constraints: Vec<Posynomial>,
}

impl GpModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable and returns its index. Variables sharing a `block`
    /// id form one diagonal block of the Newton system.
    pub fn add_variable(&mut self, name: impl Into<String>, block: Option<usize>) -> usize {
        self.names.push(name.into());
        self.blocks.push(block);
        self.names.len() - 1
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, v: usize) -> &str {
        &self.names[v]
    }

    fn check_vars(&self, p: &Posynomial) -> Result<()> {
        match p.max_var() {
            Some(v) if v >= self.n_vars() => Err(Error::InvalidArgument(format!(
                "posynomial references x{v} but the model has {} variables",
                self.n_vars()
            ))),
            _ => Ok(()),
        }
    }

    pub fn set_objective(&mut self, p: Posynomial) -> Result<()> {
        self.check_vars(&p)?;
        self.objective = Some(p);
        Ok(())
    }

    /// Adds `p(x) <= 1`.
    pub fn add_constraint(&mut self, p: Posynomial) -> Result<()> {
        self.check_vars(&p)?;
        self.constraints.push(p);
        Ok(())
    }

    pub fn objective(&self) -> Option<&Posynomial> {
        self.objective.as_ref()
    }

    pub fn constraints(&self) -> &[Posynomial] {
        &self.constraints
    }

    pub fn is_feasible(&self, x: &[f64]) -> bool {
        self.constraints.iter().all(|c| c.eval(x) <= 1.0)
    }

    fn fmt_monomial(&self, m: &Monomial, out: &mut String) {
        use fmt::Write;
        let _ = write!(out, "{:e}", m.coef);
        for &(v, e) in &m.exps {
            if e == 1.0 {
                let _ = write!(out, " * {}", self.names[v]);
            } else {
                let _ = write!(out, " * {}^{}", self.names[v], e);
            }
        }
    }

    fn fmt_posynomial(&self, p: &Posynomial, out: &mut String) {
        for (i, m) in p.terms.iter().enumerate() {
            if i > 0 {
                out.push_str("\n    + ");
            }
            self.fmt_monomial(m, out);
        }
    }
}

impl fmt::Display for GpModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        s.push_str("variables:");
        for n in &self.names {
            s.push(' ');
            s.push_str(n);
        }
        s.push_str("\nminimize\n    ");
        match &self.objective {
            Some(p) => self.fmt_posynomial(p, &mut s),
            None => s.push_str("(none)"),
        }
        s.push_str("\nsubject to\n");
        for (i, c) in self.constraints.iter().enumerate() {
            s.push_str(&format!("  [{i}] "));
            self.fmt_posynomial(c, &mut s);
            s.push_str(" <= 1\n");
        }
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpOptions {
    /// Stop once the duality gap bound is below `rel_tol * |objective|` ...
    pub rel_tol: f64,
    /// ... or below this absolute value.
    pub abs_tol: f64,
    /// Barrier parameter growth per outer iteration.
    pub mu: f64,
    /// Cap on Newton steps over the whole solve (phase I included).
    pub max_newton_steps: usize,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-13,
            mu: 20.0,
            max_newton_steps: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Bound on objective minus optimum when the solve stopped.
    pub duality_gap: f64,
    pub newton_steps: usize,
}

/// Solves the model from a positive starting point. Runs a phase-I search
/// first when the start is not strictly feasible.
pub fn solve(model: &GpModel, start: &[f64], opts: &GpOptions) -> Result<GpSolution> {
    let objective = model
        .objective
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("model has no objective".into()))?;
    if start.len() != model.n_vars() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} start values", model.n_vars()),
            got: format!("{}", start.len()),
        });
    }
    if let Some(bad) = start.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "start values must be positive, got {bad}"
        )));
    }
    let mut y: Vec<f64> = start.iter().map(|v| v.ln()).collect();
    let mut steps = 0usize;

    let constraints: Vec<LogPosy> = model.constraints.iter().map(LogPosy::new).collect();
    let max_f = |y: &[f64]| {
        constraints
            .iter()
            .map(|c| c.value(y))
            .fold(f64::NEG_INFINITY, f64::max)
    };

    if !constraints.is_empty() && !(max_f(&y) < 0.0) {
        y = phase_one(model, &y, opts, &mut steps)?;
    }

    let problem = Barrier::new(split_terms(objective), constraints, &model.blocks);
    let gap = problem.minimize(&mut y, opts, &mut steps, None)?;
    let x: Vec<f64> = y.iter().map(|v| v.exp()).collect();
    Ok(GpSolution {
        objective: objective.eval(&x),
        x,
        duality_gap: gap,
        newton_steps: steps,
    })
}

/// Finds a strictly feasible point by minimizing a slack `z` with
/// `p_i(x) / z <= 1`, stopping as soon as the original constraints hold
/// with a margin. The objective is capped far above its starting value so
/// that variables only bounded through the objective cannot drift off.
fn phase_one(model: &GpModel, y0: &[f64], opts: &GpOptions, steps: &mut usize) -> Result<Vec<f64>> {
    const MARGIN: f64 = 1e-4;
    const OBJECTIVE_CAP: f64 = 1e8;
    let n = model.n_vars();
    let z = n;
    let slack = Monomial::var(z).inv();
    let mut aug: Vec<LogPosy> = model
        .constraints
        .iter()
        .map(|c| LogPosy::new(&c.mul_monomial(&slack)))
        .collect();
    if let Some(obj) = &model.objective {
        let x0: Vec<f64> = y0.iter().map(|v| v.exp()).collect();
        let cap = OBJECTIVE_CAP * obj.eval(&x0).max(1.0);
        aug.push(LogPosy::new(
            &obj.mul_monomial(&Monomial::constant(1.0 / cap)?),
        ));
    }
    let original: Vec<LogPosy> = model.constraints.iter().map(LogPosy::new).collect();
    let mut blocks = model.blocks.clone();
    blocks.push(None);

    let start_violation = original
        .iter()
        .map(|c| c.value(y0))
        .fold(f64::NEG_INFINITY, f64::max);
    if !start_violation.is_finite() {
        return Err(Error::InvalidArgument("phase I start is not finite".into()));
    }
    let mut y = y0.to_vec();
    y.push(start_violation + 1.0);

    let problem = Barrier::new(split_terms(&Monomial::var(z).into()), aug, &blocks);
    let done = |y: &[f64]| original.iter().all(|c| c.value(&y[..n]) <= -MARGIN);
    problem.minimize(&mut y, opts, steps, Some(&done))?;
    let worst = original
        .iter()
        .map(|c| c.value(&y[..n]))
        .fold(f64::NEG_INFINITY, f64::max);
    if worst >= 0.0 {
        return Err(Error::Infeasible(format!(
            "no strictly feasible point found (max log-constraint {worst:.3e})"
        )));
    }
    y.truncate(n);
    Ok(y)
}

/// `ln sum_k exp(b_k + a_k . y)` over a sparse support.
#[derive(Debug, Clone)]
struct LogPosy {
    /// Global variable ids touched by the function, sorted.
    support: Vec<usize>,
    /// Per term: `ln coef` and `(local index, exponent)` pairs.
    terms: Vec<(f64, Vec<(usize, f64)>)>,
}

impl LogPosy {
    fn new(p: &Posynomial) -> Self {
        let mut support: Vec<usize> = p
            .terms
            .iter()
            .flat_map(|m| m.exps.iter().map(|&(v, _)| v))
            .collect();
        support.sort_unstable();
        support.dedup();
        let terms = p
            .terms
            .iter()
            .map(|m| {
                (
                    m.coef.ln(),
                    m.exps
                        .iter()
                        .map(|&(v, e)| (support.binary_search(&v).unwrap(), e))
                        .collect(),
                )
            })
            .collect();
        Self { support, terms }
    }

    fn exponents(&self, y: &[f64]) -> Vec<f64> {
        self.terms
            .iter()
            .map(|(b, a)| {
                a.iter()
                    .fold(*b, |acc, &(i, e)| acc + e * y[self.support[i]])
            })
            .collect()
    }

    fn value(&self, y: &[f64]) -> f64 {
        let z = self.exponents(y);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
    }

    /// Value, local gradient and local Hessian of the log-sum-exp.
    fn derivatives(&self, y: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let n = self.support.len();
        let z = self.exponents(y);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n * n];
        for ((_, a), ek) in self.terms.iter().zip(&e) {
            let pk = ek / s;
            for &(i, ei) in a {
                g[i] += pk * ei;
                for &(j, ej) in a {
                    h[i * n + j] += pk * ei * ej;
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                h[i * n + j] -= g[i] * g[j];
            }
        }
        (m + s.ln(), g, h)
    }

    /// Sum of the terms themselves, `sum exp(b + a.y)`, with its local
    /// gradient and Hessian.
    fn exp_sum_derivatives(&self, y: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let n = self.support.len();
        let z = self.exponents(y);
        let mut v = 0.0;
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n * n];
        for ((_, a), zk) in self.terms.iter().zip(&z) {
            let w = zk.exp();
            v += w;
            for &(i, ei) in a {
                g[i] += w * ei;
                for &(j, ej) in a {
                    h[i * n + j] += w * ei * ej;
                }
            }
        }
        (v, g, h)
    }

    fn exp_sum(&self, y: &[f64]) -> f64 {
        self.exponents(y).iter().map(|z| z.exp()).sum()
    }
}

/// One exp-sum function per objective term, so each term can sit in its own block.
fn split_terms(p: &Posynomial) -> Vec<LogPosy> {
    p.terms
        .iter()
        .map(|m| LogPosy::new(&m.clone().into()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Global(usize),
    Block(usize, usize),
}

/// Barrier function `t * f0(y) - sum ln(-f_i(y))` with a block-arrow Newton
/// solver.
struct Barrier {
    objective_terms: Vec<LogPosy>,
    constraints: Vec<LogPosy>,
    slots: Vec<Slot>,
    n_global: usize,
    block_sizes: Vec<usize>,
}

struct Assembled {
    grad: Vec<f64>,
    a: DMatrix<f64>,
    d: Vec<DMatrix<f64>>,
    /// Per block, coupling rows `n_b x n_global`.
    b: Vec<DMatrix<f64>>,
}

impl Barrier {
    fn new(
        objective_terms: Vec<LogPosy>,
        constraints: Vec<LogPosy>,
        blocks: &[Option<usize>],
    ) -> Self {
        let n = blocks.len();
        let mut block_of: Vec<Option<usize>> = blocks.to_vec();

        // Blocks linked through a shared function become globals.
        for f in objective_terms.iter().chain(&constraints) {
            let ids: Vec<usize> = f.support.iter().filter_map(|&v| block_of[v]).collect();
            if ids.windows(2).any(|w| w[0] != w[1]) {
                for slot in block_of.iter_mut() {
                    if slot.is_some_and(|b| ids.contains(&b)) {
                        *slot = None;
                    }
                }
            }
        }

        let mut slots = vec![Slot::Global(0); n];
        let mut n_global = 0;
        let mut block_index: BTreeMap<usize, usize> = BTreeMap::new();
        let mut block_sizes: Vec<usize> = Vec::new();
        for v in 0..n {
            match block_of[v] {
                None => {
                    slots[v] = Slot::Global(n_global);
                    n_global += 1;
                }
                Some(b) => {
                    let next = block_index.len();
                    let idx = *block_index.entry(b).or_insert(next);
                    if idx == block_sizes.len() {
                        block_sizes.push(0);
                    }
                    slots[v] = Slot::Block(idx, block_sizes[idx]);
                    block_sizes[idx] += 1;
                }
            }
        }
        Self {
            objective_terms,
            constraints,
            slots,
            n_global,
            block_sizes,
        }
    }

    fn objective(&self, y: &[f64]) -> f64 {
        self.objective_terms.iter().map(|f| f.exp_sum(y)).sum()
    }

    /// Barrier value, `+inf` outside the strict interior.
    fn value(&self, y: &[f64], t: f64) -> f64 {
        let mut v = t * self.objective(y);
        for c in &self.constraints {
            let f = c.value(y);
            if !(f < 0.0) {
                return f64::INFINITY;
            }
            v -= (-f).ln();
        }
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }

    fn scatter(
        &self,
        out: &mut Assembled,
        support: &[usize],
        g: &[f64],
        h: &[f64],
        scale_g: f64,
        scale_h: f64,
    ) {
        let n = support.len();
        for (i, &vi) in support.iter().enumerate() {
            out.grad[vi] += scale_g * g[i];
            for (j, &vj) in support.iter().enumerate() {
                let val = scale_h * h[i * n + j];
                if val == 0.0 {
                    continue;
                }
                match (self.slots[vi], self.slots[vj]) {
                    (Slot::Global(a), Slot::Global(b)) => out.a[(a, b)] += val,
                    (Slot::Block(bi, a), Slot::Block(bj, b)) => {
                        debug_assert_eq!(bi, bj);
                        out.d[bi][(a, b)] += val;
                    }
                    (Slot::Block(bi, a), Slot::Global(b)) => out.b[bi][(a, b)] += val,
                    (Slot::Global(_), Slot::Block(..)) => {}
                }
            }
        }
    }

    fn assemble(&self, y: &[f64], t: f64) -> Assembled {
        let mut out = Assembled {
            grad: vec![0.0; y.len()],
            a: DMatrix::zeros(self.n_global, self.n_global),
            d: self
                .block_sizes
                .iter()
                .map(|&s| DMatrix::zeros(s, s))
                .collect(),
            b: self
                .block_sizes
                .iter()
                .map(|&s| DMatrix::zeros(s, self.n_global))
                .collect(),
        };
        for f in &self.objective_terms {
            let (_, g, h) = f.exp_sum_derivatives(y);
            self.scatter(&mut out, &f.support, &g, &h, t, t);
        }
        for c in &self.constraints {
            let (f, g, mut h) = c.derivatives(y);
            let n = g.len();
            let inv = 1.0 / (-f);
            // -ln(-f): grad g/(-f), hess g g^T / f^2 + H/(-f)
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] = h[i * n + j] * inv + g[i] * g[j] * inv * inv;
                }
            }
            self.scatter(&mut out, &c.support, &g, &h, inv, 1.0);
        }
        out
    }

    /// Newton direction `-H^{-1} g` via the Schur complement on the globals.
    fn direction(&self, sys: &Assembled) -> Result<Vec<f64>> {
        let n = sys.grad.len();
        let mut g_global = DVector::zeros(self.n_global);
        let mut g_blocks: Vec<DVector<f64>> = self
            .block_sizes
            .iter()
            .map(|&s| DVector::zeros(s))
            .collect();
        for v in 0..n {
            match self.slots[v] {
                Slot::Global(i) => g_global[i] = sys.grad[v],
                Slot::Block(b, i) => g_blocks[b][i] = sys.grad[v],
            }
        }
        let mut schur = sys.a.clone();
        let mut rhs = -g_global;
        let mut dinv_b = Vec::with_capacity(self.block_sizes.len());
        let mut dinv_g = Vec::with_capacity(self.block_sizes.len());
        for (b, d) in sys.d.iter().enumerate() {
            let chol = regularized_cholesky(d)?;
            let xb = chol.solve(&sys.b[b]);
            let xg = chol.solve(&g_blocks[b]);
            schur -= sys.b[b].transpose() * &xb;
            rhs += sys.b[b].transpose() * &xg;
            dinv_b.push(xb);
            dinv_g.push(xg);
        }
        let dg = if self.n_global > 0 {
            let sym = (&schur + schur.transpose()) * 0.5;
            regularized_cholesky(&sym)?.solve(&rhs)
        } else {
            DVector::zeros(0)
        };
        let mut dir = vec![0.0; n];
        let block_dirs: Vec<DVector<f64>> = dinv_b
            .iter()
            .zip(&dinv_g)
            .map(|(xb, xg)| -xg - xb * &dg)
            .collect();
        for v in 0..n {
            dir[v] = match self.slots[v] {
                Slot::Global(i) => dg[i],
                Slot::Block(b, i) => block_dirs[b][i],
            };
        }
        Ok(dir)
    }

    /// Runs the barrier method from a strictly feasible `y`, returning the
    /// final duality gap bound. `early_stop` ends the solve as soon as it
    /// returns true.
    fn minimize(
        &self,
        y: &mut [f64],
        opts: &GpOptions,
        steps: &mut usize,
        early_stop: Option<&dyn Fn(&[f64]) -> bool>,
    ) -> Result<f64> {
        let m = self.constraints.len() as f64;
        if m == 0.0 {
            return Err(Error::InvalidArgument(
                "geometric program needs constraints".into(),
            ));
        }
        let f0 = self.objective(y);
        let mut t = m / f0.abs().max(1e-12);
        loop {
            self.center(y, t, opts, steps, early_stop)?;
            if early_stop.is_some_and(|stop| stop(y)) {
                return Ok(m / t);
            }
            let gap = m / t;
            if gap <= (opts.rel_tol * self.objective(y).abs()).max(opts.abs_tol) {
                return Ok(gap);
            }
            if *steps >= opts.max_newton_steps {
                return Err(Error::SolverFailure(format!(
                    "Newton step limit {} reached with duality gap {gap:.3e}",
                    opts.max_newton_steps
                )));
            }
            t *= opts.mu;
        }
    }

    fn center(
        &self,
        y: &mut [f64],
        t: f64,
        opts: &GpOptions,
        steps: &mut usize,
        early_stop: Option<&dyn Fn(&[f64]) -> bool>,
    ) -> Result<()> {
        const ALPHA: f64 = 0.01;
        const BETA: f64 = 0.5;
        const MAX_STEPS: usize = 200;
        let mut phi = self.value(y, t);
        if !phi.is_finite() {
            return Err(Error::SolverFailure(
                "barrier left the feasible region".into(),
            ));
        }
        let mut trial = y.to_vec();
        for _ in 0..MAX_STEPS {
            if *steps >= opts.max_newton_steps {
                return Ok(());
            }
            let sys = self.assemble(y, t);
            let dir = self.direction(&sys)?;
            let slope: f64 = sys.grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
            if !(slope < 0.0) || -slope / 2.0 <= 1e-10 {
                return Ok(());
            }
            *steps += 1;
            let mut s = 1.0;
            loop {
                for ((tr, yi), di) in trial.iter_mut().zip(y.iter()).zip(&dir) {
                    *tr = yi + s * di;
                }
                let v = self.value(&trial, t);
                if v <= phi + ALPHA * s * slope {
                    // progress below rounding level: as centered as it gets
                    if phi - v <= 1e-14 * phi.abs().max(1.0) {
                        y.copy_from_slice(&trial);
                        return Ok(());
                    }
                    phi = v;
                    break;
                }
                s *= BETA;
                if s < 1e-14 {
                    return Ok(());
                }
            }
            y.copy_from_slice(&trial);
            if early_stop.is_some_and(|stop| stop(y)) {
                return Ok(());
            }
        }
        Ok(())
    }
}

fn regularized_cholesky(m: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let scale = m.diagonal().iter().fold(1e-300f64, |a, d| a.max(d.abs()));
    let mut eps = 1e-14 * scale;
    for _ in 0..12 {
        let mut r = m.clone();
        for i in 0..r.nrows() {
            r[(i, i)] += eps;
        }
        if let Some(c) = r.cholesky() {
            return Ok(c);
        }
        eps *= 100.0;
    }
    Err(Error::SolverFailure(
        "Newton system is not positive definite".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mono(c: f64, e: &[(usize, f64)]) -> Monomial {
        Monomial::new(c, e.iter().copied()).unwrap()
    }

    #[test]
    fn monomial_algebra() {
        let m = mono(2.0, &[(0, 1.0), (1, -2.0), (0, 1.0)]);
        assert_eq!(m.exps(), &[(0, 2.0), (1, -2.0)]);
        assert!((m.eval(&[3.0, 2.0]) - 2.0 * 9.0 / 4.0).abs() < 1e-15);
        let p = m.mul(&m.inv());
        assert!(p.exps().is_empty());
        assert!((p.coef() - 1.0).abs() < 1e-15);
        assert!(Monomial::new(0.0, []).is_err());
        assert!(Monomial::new(-1.0, []).is_err());
        assert!(Posynomial::new(vec![]).is_err());
    }

    #[test]
    fn condensation_is_tight_and_below() {
        // q + x at (0.3, 0.7)
        let p = Posynomial::new(vec![Monomial::var(0), Monomial::var(1)]).unwrap();
        let anchor = [0.3, 0.7];
        let c = condense(&p, &anchor).unwrap();
        assert!((c.eval(&anchor) - 1.0).abs() < 1e-14);
        assert_eq!(c.exps(), &[(0, 0.3), (1, 0.7)]);
        for x in [[0.1, 0.5], [0.9, 0.2], [2.0, 3.0]] {
            assert!(c.eval(&x) <= p.eval(&x) + 1e-15);
        }
        let r = condense_ratio(&Monomial::constant(1.0).unwrap(), &p, &anchor).unwrap();
        assert!((r.eval(&anchor) - 1.0).abs() < 1e-14);
        assert!(r.eval(&[0.2, 0.5]) >= 1.0 / 0.7);
    }

    #[test]
    fn solves_box_product() {
        // min 1/(x y) s.t. x <= 2, y <= 3  -> 1/6
        let mut gp = GpModel::new();
        let x = gp.add_variable("x", None);
        let y = gp.add_variable("y", None);
        gp.set_objective(mono(1.0, &[(x, -1.0), (y, -1.0)]).into())
            .unwrap();
        gp.add_constraint(mono(0.5, &[(x, 1.0)]).into()).unwrap();
        gp.add_constraint(mono(1.0 / 3.0, &[(y, 1.0)]).into())
            .unwrap();
        let sol = solve(&gp, &[1.0, 1.0], &GpOptions::default()).unwrap();
        assert!((sol.objective - 1.0 / 6.0).abs() < 1e-8, "{sol:?}");
    }

    #[test]
    fn phase_one_and_infeasibility() {
        // min x + y s.t. 1/(x y) <= 1, x <= 4 from an infeasible start
        let mut gp = GpModel::new();
        let x = gp.add_variable("x", None);
        let y = gp.add_variable("y", None);
        gp.set_objective(Posynomial::new(vec![Monomial::var(x), Monomial::var(y)]).unwrap())
            .unwrap();
        gp.add_constraint(mono(1.0, &[(x, -1.0), (y, -1.0)]).into())
            .unwrap();
        gp.add_constraint(mono(0.25, &[(x, 1.0)]).into()).unwrap();
        let sol = solve(&gp, &[0.1, 0.1], &GpOptions::default()).unwrap();
        assert!((sol.objective - 2.0).abs() < 1e-7, "{sol:?}");

        let mut bad = GpModel::new();
        let x = bad.add_variable("x", None);
        bad.set_objective(Monomial::var(x).into()).unwrap();
        bad.add_constraint(mono(2.0, &[(x, 1.0)]).into()).unwrap();
        bad.add_constraint(mono(1.0, &[(x, -1.0)]).into()).unwrap();
        assert!(matches!(
            solve(&bad, &[1.0], &GpOptions::default()),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn blocked_and_dense_agree() {
        // min u s.t. (a_k + b_k)/u <= 1, c/a_k + d/b_k <= 1 per block k
        let build = |blocked: bool| {
            let mut gp = GpModel::new();
            let u = gp.add_variable("u", None);
            for k in 0..4 {
                let blk = blocked.then_some(k);
                let a = gp.add_variable(format!("a{k}"), blk);
                let b = gp.add_variable(format!("b{k}"), blk);
                gp.add_constraint(
                    Posynomial::new(vec![
                        mono(1.0, &[(a, 1.0), (u, -1.0)]),
                        mono(1.0, &[(b, 1.0), (u, -1.0)]),
                    ])
                    .unwrap(),
                )
                .unwrap();
                gp.add_constraint(
                    Posynomial::new(vec![
                        mono(1.0 + k as f64, &[(a, -1.0)]),
                        mono(2.0, &[(b, -1.0)]),
                    ])
                    .unwrap(),
                )
                .unwrap();
            }
            gp.set_objective(Monomial::var(u).into()).unwrap();
            gp
        };
        let start = vec![1.0; 9];
        let s1 = solve(&build(true), &start, &GpOptions::default()).unwrap();
        let s2 = solve(&build(false), &start, &GpOptions::default()).unwrap();
        // optimum of a+b with c/a + d/b <= 1 is (sqrt c + sqrt d)^2, worst k = 3
        let expect = (2f64 + 2f64.sqrt()).powi(2);
        assert!((s1.objective - expect).abs() < 1e-7 * expect, "{s1:?}");
        assert!((s2.objective - s1.objective).abs() < 1e-7 * expect);
    }

    #[test]
    fn dump_lists_everything() {
        let mut gp = GpModel::new();
        let x = gp.add_variable("q_0_1", None);
        gp.set_objective(mono(1.0, &[(x, -1.0)]).into()).unwrap();
        gp.add_constraint(mono(0.5, &[(x, 1.0)]).into()).unwrap();
        let s = gp.to_string();
        assert!(s.contains("q_0_1^-1"));
        assert!(s.contains("5e-1 * q_0_1 <= 1"));
        assert!(gp.add_constraint(Monomial::var(3).into()).is_err());
    }
}
