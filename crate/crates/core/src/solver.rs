//! Exact minimisation of `w·x + Σ ψ_v x_v²` over bounded nonnegative
//! integer vectors subject to `A x <= c`.
//!
//! The search is a depth-first branch and bound. Each node tightens the
//! variable box by interval propagation over the rows, and is bounded below
//! by the separable objective minimised over that box and by the LP
//! relaxation over the same box. Once every row has at most one free
//! variable the remaining variables are independent and are set in closed
//! form.
//!
//! Among optimal solutions the lexicographically preferred one is returned,
//! with variables compared in the program's priority order and each variable
//! preferring its smaller value unless marked to prefer the larger. This is
//! done in a second pass that already knows the optimal value.

use std::fmt::{self, Write as _};

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;

const FEAS_TOL: f64 = 1e-9;

/// Nodes a pass may spend on box bounds alone before switching on the LP
/// relaxation.
const QUICK_NODES: u64 = 400;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("program construction: {0}")]
    Construction(String),
    #[error("variable {0} is unbounded: it has no positive coefficient in any bounding row")]
    Unbounded(usize),
    #[error("program text line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// `Σ coeffs · x <= rhs`, stored sparsely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        let coeffs = coeffs.into_iter().filter(|&(_, a)| a != 0.0).collect();
        Constraint { coeffs, rhs }
    }

    pub fn activity(&self, x: &[u64]) -> f64 {
        self.coeffs.iter().map(|&(v, a)| a * x[v] as f64).sum()
    }
}

/// Per-variable upper bounds implied by the rows, by interval propagation
/// from the box `x >= 0`.
///
/// A row whose other coefficients are all nonnegative bounds each of its
/// positive-coefficient variables by `floor(rhs / a)`; rows with negative
/// coefficients contribute once the variables carrying them are bounded.
pub fn derive_bounds(n_vars: usize, constraints: &[Constraint]) -> Result<Vec<u64>, SolverError> {
    derive_bounds_within(n_vars, constraints, &vec![None; n_vars])
}

fn derive_bounds_within(
    n_vars: usize,
    constraints: &[Constraint],
    explicit: &[Option<u64>],
) -> Result<Vec<u64>, SolverError> {
    let mut hi: Vec<Option<f64>> = explicit.iter().map(|u| u.map(|u| u as f64)).collect();
    let max_passes = n_vars + 2;
    for _ in 0..max_passes {
        let mut changed = false;
        for row in constraints {
            // Minimum activity with x >= 0 and the current upper bounds.
            let mut min_act = 0.0;
            let mut unbounded_neg = 0usize;
            for &(v, a) in &row.coeffs {
                if a < 0.0 {
                    match hi[v] {
                        Some(h) => min_act += a * h,
                        None => unbounded_neg += 1,
                    }
                }
            }
            for &(v, a) in &row.coeffs {
                if a <= 0.0 || unbounded_neg > 0 {
                    continue;
                }
                let bound = ((row.rhs - min_act) / a + FEAS_TOL).floor().max(0.0);
                if hi[v].is_none_or(|h| bound < h) {
                    hi[v] = Some(bound);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    hi.into_iter().enumerate().map(|(v, h)| h.map(|h| h as u64).ok_or(SolverError::Unbounded(v))).collect()
}

/// Objective, constraints, bounds and tie-break order of one program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegerProgram {
    weights: Vec<f64>,
    quad: Vec<f64>,
    constraints: Vec<Constraint>,
    upper: Vec<u64>,
    priority: Vec<usize>,
    /// Variables whose larger values win ties between optimal solutions.
    #[serde(default)]
    prefer_high: Vec<bool>,
}

impl IntegerProgram {
    /// Bounds are derived from the constraints.
    pub fn new(weights: Vec<f64>, quad: Vec<f64>, constraints: Vec<Constraint>) -> Result<Self, SolverError> {
        let n = weights.len();
        Self::build(weights, quad, constraints, vec![None; n])
    }

    /// Like [`IntegerProgram::new`] with an explicit box on top of the
    /// derived bounds.
    pub fn with_box(
        weights: Vec<f64>,
        quad: Vec<f64>,
        constraints: Vec<Constraint>,
        upper: Vec<u64>,
    ) -> Result<Self, SolverError> {
        if upper.len() != weights.len() {
            return Err(SolverError::Construction(format!(
                "{} upper bounds for {} variables",
                upper.len(),
                weights.len()
            )));
        }
        Self::build(weights, quad, constraints, upper.into_iter().map(Some).collect())
    }

    fn build(
        weights: Vec<f64>,
        quad: Vec<f64>,
        constraints: Vec<Constraint>,
        explicit: Vec<Option<u64>>,
    ) -> Result<Self, SolverError> {
        let n = weights.len();
        let err = |m: String| Err(SolverError::Construction(m));
        if quad.len() != n {
            return err(format!("{} quadratic coefficients for {n} variables", quad.len()));
        }
        if let Some(v) = weights.iter().position(|w| !w.is_finite()) {
            return err(format!("weight of variable {v} is not finite"));
        }
        if let Some(v) = quad.iter().position(|&p| !(p >= 0.0 && p.is_finite())) {
            return err(format!("quadratic coefficient of variable {v} must be finite and nonnegative"));
        }
        for (i, row) in constraints.iter().enumerate() {
            if let Some(&(v, _)) = row.coeffs.iter().find(|&&(v, a)| v >= n || !a.is_finite()) {
                return err(format!("row {i} has an invalid entry for variable {v}"));
            }
            if !(row.rhs >= -FEAS_TOL) {
                return err(format!("row {i} has rhs {}: x = 0 must be feasible", row.rhs));
            }
        }
        let upper = derive_bounds_within(n, &constraints, &explicit)?;
        Ok(IntegerProgram {
            weights,
            quad,
            constraints,
            upper,
            priority: (0..n).collect(),
            prefer_high: vec![false; n],
        })
    }

    /// Sets the variable order used to break ties between optimal solutions.
    pub fn with_priority(mut self, priority: Vec<usize>) -> Result<Self, SolverError> {
        let mut seen = vec![false; self.n_vars()];
        for &v in &priority {
            if v >= seen.len() || std::mem::replace(&mut seen[v], true) {
                return Err(SolverError::Construction("priority must be a permutation of the variables".into()));
            }
        }
        if priority.len() != self.n_vars() {
            return Err(SolverError::Construction("priority must be a permutation of the variables".into()));
        }
        self.priority = priority;
        Ok(self)
    }

    /// Marks variables whose larger values are preferred among optimal
    /// solutions; all others prefer smaller values.
    pub fn with_prefer_high(mut self, vars: &[usize]) -> Result<Self, SolverError> {
        let mut high = vec![false; self.n_vars()];
        for &v in vars {
            if v >= high.len() {
                return Err(SolverError::Construction(format!("no variable {v}")));
            }
            high[v] = true;
        }
        self.prefer_high = high;
        Ok(self)
    }

    pub fn prefers_high(&self, v: usize) -> bool {
        self.prefer_high.get(v).copied().unwrap_or(false)
    }

    pub fn n_vars(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn quad(&self) -> &[f64] {
        &self.quad
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn upper(&self) -> &[u64] {
        &self.upper
    }

    pub fn priority(&self) -> &[usize] {
        &self.priority
    }

    pub fn objective(&self, x: &[u64]) -> f64 {
        x.iter().enumerate().map(|(v, &xv)| term(self.weights[v], self.quad[v], xv as i64)).sum()
    }

    pub fn is_feasible(&self, x: &[u64]) -> bool {
        x.len() == self.n_vars()
            && x.iter().zip(&self.upper).all(|(x, u)| x <= u)
            && self.constraints.iter().all(|c| c.activity(x) <= c.rhs + FEAS_TOL)
    }

    /// Debug text form with `w`, `psi`, `A`, `c`, `u` and `priority` sections.
    pub fn to_text(&self) -> String {
        let n = self.n_vars();
        let join = |xs: &mut dyn Iterator<Item = String>| xs.collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        writeln!(s, "vars {n}").unwrap();
        writeln!(s, "w\n{}", join(&mut self.weights.iter().map(|w| w.to_string()))).unwrap();
        writeln!(s, "psi\n{}", join(&mut self.quad.iter().map(|p| p.to_string()))).unwrap();
        writeln!(s, "A {}", self.constraints.len()).unwrap();
        for row in &self.constraints {
            let mut dense = vec![0.0; n];
            for &(v, a) in &row.coeffs {
                dense[v] += a;
            }
            writeln!(s, "{}", join(&mut dense.iter().map(|a| a.to_string()))).unwrap();
        }
        writeln!(s, "c\n{}", join(&mut self.constraints.iter().map(|r| r.rhs.to_string()))).unwrap();
        writeln!(s, "u\n{}", join(&mut self.upper.iter().map(|u| u.to_string()))).unwrap();
        writeln!(s, "priority\n{}", join(&mut self.priority.iter().map(|p| p.to_string()))).unwrap();
        let high = (0..n).map(|v| u8::from(self.prefers_high(v)).to_string());
        writeln!(s, "high\n{}", join(&mut high.into_iter())).unwrap();
        s
    }

    pub fn from_text(text: &str) -> Result<Self, SolverError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |expect: &str| -> Result<(usize, Vec<String>), SolverError> {
            let (i, l) = lines.next().ok_or(SolverError::Parse {
                line: 0,
                message: format!("unexpected end of input, expected {expect}"),
            })?;
            Ok((i + 1, l.split_whitespace().map(str::to_owned).collect()))
        };
        fn nums<T: std::str::FromStr>(line: usize, toks: &[String], n: usize) -> Result<Vec<T>, SolverError> {
            if toks.len() != n {
                return Err(SolverError::Parse { line, message: format!("expected {n} values, got {}", toks.len()) });
            }
            toks.iter()
                .map(|t| t.parse().map_err(|_| SolverError::Parse { line, message: format!("bad number `{t}`") }))
                .collect()
        }
        fn header(line: usize, toks: &[String], name: &str, arity: usize) -> Result<(), SolverError> {
            if toks.first().map(String::as_str) != Some(name) || toks.len() != arity {
                return Err(SolverError::Parse { line, message: format!("expected section `{name}`") });
            }
            Ok(())
        }
        let (l, t) = next("vars")?;
        header(l, &t, "vars", 2)?;
        let n: usize = nums(l, &t[1..], 1)?[0];
        let (l, t) = next("w")?;
        header(l, &t, "w", 1)?;
        let (l, t) = next("weights")?;
        let weights = nums(l, &t, n)?;
        let (l, t) = next("psi")?;
        header(l, &t, "psi", 1)?;
        let (l, t) = next("psi values")?;
        let quad = nums(l, &t, n)?;
        let (l, t) = next("A")?;
        header(l, &t, "A", 2)?;
        let rows: usize = nums(l, &t[1..], 1)?[0];
        let mut dense = Vec::with_capacity(rows);
        for _ in 0..rows {
            let (l, t) = next("constraint row")?;
            dense.push(nums::<f64>(l, &t, n)?);
        }
        let (l, t) = next("c")?;
        header(l, &t, "c", 1)?;
        let rhs: Vec<f64> = if rows == 0 {
            Vec::new()
        } else {
            let (l, t) = next("rhs values")?;
            nums(l, &t, rows)?
        };
        let (l, t) = next("u")?;
        header(l, &t, "u", 1)?;
        let (l, t) = next("bounds")?;
        let upper: Vec<u64> = nums(l, &t, n)?;
        let (l, t) = next("priority")?;
        header(l, &t, "priority", 1)?;
        let (l, t) = next("priority values")?;
        let priority: Vec<usize> = nums(l, &t, n)?;
        let mut high = Vec::new();
        if let Ok((l, t)) = next("high") {
            header(l, &t, "high", 1)?;
            let (l, t) = next("high values")?;
            let flags: Vec<u8> = nums(l, &t, n)?;
            high = flags.iter().enumerate().filter(|(_, &f)| f != 0).map(|(v, _)| v).collect();
        }
        let constraints = dense
            .into_iter()
            .zip(rhs)
            .map(|(row, c)| Constraint::new(row.into_iter().enumerate().collect(), c))
            .collect();
        Self::with_box(weights, quad, constraints, upper)?.with_priority(priority)?.with_prefer_high(&high)
    }
}

fn term(w: f64, psi: f64, x: i64) -> f64 {
    let x = x as f64;
    w * x + psi * x * x
}

/// Smallest minimiser of `w x + psi x²` over the integers in `[lo, hi]`.
fn argmin_term(w: f64, psi: f64, lo: i64, hi: i64) -> i64 {
    argmin_term_toward(w, psi, lo, hi, false)
}

/// Minimiser of one separable term on `[lo, hi]`; ties go to the larger
/// value when `high`.
fn argmin_term_toward(w: f64, psi: f64, lo: i64, hi: i64, high: bool) -> i64 {
    if psi > 0.0 {
        let centre = -w / (2.0 * psi);
        let a = (centre.floor() as i64).clamp(lo, hi);
        let b = (centre.ceil() as i64).clamp(lo, hi);
        let (ta, tb) = (term(w, psi, a), term(w, psi, b));
        if tb < ta || (high && tb == ta) {
            b
        } else {
            a
        }
    } else if w < 0.0 || (w == 0.0 && high) {
        hi
    } else {
        lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// Optimality proven.
    Exact,
    /// Node budget ran out; the best solution found is returned.
    SearchExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub values: Vec<u64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub nodes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Solver {
    pub node_budget: u64,
}

impl Default for Solver {
    fn default() -> Self {
        Solver { node_budget: DEFAULT_NODE_BUDGET }
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Exact => "exact",
            SolveStatus::SearchExhausted => "search-exhausted",
        })
    }
}

struct Relaxation {
    bound: f64,
    point: Option<Vec<f64>>,
}

fn integral(point: &[f64]) -> Option<Vec<i64>> {
    point
        .iter()
        .map(|&x| {
            let r = x.round();
            ((x - r).abs() <= 1e-6 && r >= 0.0).then_some(r as i64)
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq)]
enum Pass {
    /// Find and prove the optimal value.
    Value,
    /// Find the first solution, in priority order, reaching `target`.
    Lex { target: f64 },
}

struct Search<'a> {
    p: &'a IntegerProgram,
    /// Rows each variable appears in.
    var_rows: Vec<Vec<usize>>,
    branch_order: Vec<usize>,
    pass: Pass,
    best: Option<(f64, Vec<i64>)>,
    relaxed: bool,
    nodes: u64,
    budget: u64,
    exhausted: bool,
    done: bool,
}

impl<'a> Search<'a> {
    fn new(p: &'a IntegerProgram, pass: Pass, budget: u64, relaxed: bool) -> Self {
        let mut var_rows = vec![Vec::new(); p.n_vars()];
        for (r, row) in p.constraints.iter().enumerate() {
            for &(v, _) in &row.coeffs {
                var_rows[v].push(r);
            }
        }
        let branch_order = match pass {
            Pass::Lex { .. } => p.priority.clone(),
            Pass::Value => {
                // Objective-free variables only matter through the rows; fixing
                // them first lets the rest decouple sooner.
                let (mut free, weighted): (Vec<usize>, Vec<usize>) =
                    (0..p.n_vars()).partition(|&v| p.weights[v] == 0.0 && p.quad[v] == 0.0);
                free.extend(weighted);
                free
            }
        };
        Search { p, var_rows, branch_order, pass, best: None, relaxed, nodes: 0, budget, exhausted: false, done: false }
    }

    fn tol(&self, f: f64) -> f64 {
        1e-9 * f.abs().max(1.0)
    }

    /// Tightens `[lo, hi]` until a fixpoint. Returns false if infeasible.
    fn propagate(&self, lo: &mut [i64], hi: &mut [i64]) -> bool {
        loop {
            let mut changed = false;
            for row in &self.p.constraints {
                let mut min_act = 0.0;
                for &(v, a) in &row.coeffs {
                    min_act += if a > 0.0 { a * lo[v] as f64 } else { a * hi[v] as f64 };
                }
                if min_act > row.rhs + FEAS_TOL {
                    return false;
                }
                for &(v, a) in &row.coeffs {
                    if lo[v] == hi[v] {
                        continue;
                    }
                    let own = if a > 0.0 { a * lo[v] as f64 } else { a * hi[v] as f64 };
                    let residual = row.rhs - (min_act - own);
                    if a > 0.0 {
                        let nh = (residual / a + FEAS_TOL).floor() as i64;
                        if nh < hi[v] {
                            hi[v] = nh;
                            changed = true;
                        }
                    } else {
                        let nl = (residual / a - FEAS_TOL).ceil() as i64;
                        if nl > lo[v] {
                            lo[v] = nl;
                            changed = true;
                        }
                    }
                    if lo[v] > hi[v] {
                        return false;
                    }
                    // Keep min_act consistent with the tightened bound.
                    let new_own = if a > 0.0 { a * lo[v] as f64 } else { a * hi[v] as f64 };
                    min_act += new_own - own;
                }
            }
            if !changed {
                return true;
            }
        }
    }

    fn lower_bound(&self, lo: &[i64], hi: &[i64]) -> f64 {
        (0..self.p.n_vars())
            .map(|v| {
                let x = argmin_term(self.p.weights[v], self.p.quad[v], lo[v], hi[v]);
                term(self.p.weights[v], self.p.quad[v], x)
            })
            .sum()
    }

    /// LP relaxation over the box. Each quadratic term is replaced by its
    /// piecewise-linear interpolation between consecutive integers, which is
    /// exact on integers. Returns the bound and the LP point, or `None` when
    /// the relaxation is infeasible.
    fn relax(&self, lo: &[i64], hi: &[i64]) -> Option<Relaxation> {
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let mut constant = 0.0;
        let mut chords = Vec::new();
        let vars: Vec<_> = (0..self.p.n_vars())
            .map(|v| {
                let (w, psi) = (self.p.weights[v], self.p.quad[v]);
                if psi == 0.0 {
                    lp.add_var(w, (lo[v] as f64, hi[v] as f64))
                } else if lo[v] == hi[v] {
                    constant += term(w, psi, lo[v]);
                    lp.add_var(0.0, (lo[v] as f64, hi[v] as f64))
                } else {
                    chords.push(v);
                    lp.add_var(0.0, (lo[v] as f64, hi[v] as f64))
                }
            })
            .collect();
        for &v in &chords {
            let (w, psi) = (self.p.weights[v], self.p.quad[v]);
            let t = lp.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY));
            for k in lo[v]..hi[v] {
                let k = k as f64;
                // t >= w x + psi ((2k + 1) x - k (k + 1))
                lp.add_constraint(
                    [(t, 1.0), (vars[v], -(w + psi * (2.0 * k + 1.0)))],
                    ComparisonOp::Ge,
                    -psi * k * (k + 1.0),
                );
            }
        }
        for row in &self.p.constraints {
            let expr: Vec<_> = row.coeffs.iter().map(|&(v, a)| (vars[v], a)).collect();
            // Integer rows only reach integer activities.
            let rhs =
                if row.coeffs.iter().all(|&(_, a)| a.fract() == 0.0) { (row.rhs + FEAS_TOL).floor() } else { row.rhs };
            lp.add_constraint(expr, ComparisonOp::Le, rhs);
        }
        let unknown = Relaxation { bound: f64::NEG_INFINITY, point: None };
        match lp.solve() {
            Ok(out) => Some(out.solution().map_or(unknown, |s| Relaxation {
                bound: s.objective() + constant,
                point: Some(vars.iter().map(|&v| s.var_value(v)).collect()),
            })),
            Err(microlp::Error::Infeasible) => None,
            Err(_) => Some(unknown),
        }
    }

    /// Whether some row still has two or more free variables touching `v`.
    fn coupled(&self, v: usize, lo: &[i64], hi: &[i64]) -> bool {
        self.var_rows[v].iter().any(|&r| self.p.constraints[r].coeffs.iter().any(|&(u, _)| u != v && lo[u] < hi[u]))
    }

    fn pick_branch_var(&self, lo: &[i64], hi: &[i64]) -> Option<usize> {
        match self.pass {
            // Strict priority order keeps the DFS visiting leaves in
            // lexicographic order.
            Pass::Lex { .. } => {
                let any_coupled = (0..self.p.n_vars()).any(|v| lo[v] < hi[v] && self.coupled(v, lo, hi));
                if !any_coupled {
                    return None;
                }
                self.branch_order.iter().copied().find(|&v| lo[v] < hi[v])
            }
            Pass::Value => self.branch_order.iter().copied().find(|&v| lo[v] < hi[v] && self.coupled(v, lo, hi)),
        }
    }

    fn complete(&self, lo: &[i64], hi: &[i64]) -> Vec<i64> {
        let lex = matches!(self.pass, Pass::Lex { .. });
        (0..self.p.n_vars())
            .map(|v| argmin_term_toward(self.p.weights[v], self.p.quad[v], lo[v], hi[v], lex && self.p.prefers_high(v)))
            .collect()
    }

    fn offer(&mut self, x: Vec<i64>) {
        let xs: Vec<u64> = x.iter().map(|&v| v as u64).collect();
        if !self.p.is_feasible(&xs) {
            debug_assert!(false, "decoupled completion must be feasible");
            return;
        }
        let f = self.p.objective(&xs);
        match self.pass {
            Pass::Value => {
                if self.best.as_ref().is_none_or(|(b, _)| f < *b - self.tol(*b)) {
                    self.best = Some((f, x));
                }
            }
            Pass::Lex { target } => {
                if f <= target + self.tol(target) {
                    self.best = Some((f, x));
                    self.done = true;
                }
            }
        }
    }

    fn prune(&self, bound: f64) -> bool {
        match self.pass {
            Pass::Value => self.best.as_ref().is_some_and(|(b, _)| bound >= *b - self.tol(*b)),
            Pass::Lex { target } => bound > target + self.tol(target),
        }
    }

    fn dfs(&mut self, mut lo: Vec<i64>, mut hi: Vec<i64>, parent: Option<&Relaxation>) {
        if self.done || self.exhausted {
            return;
        }
        if self.nodes >= self.budget {
            self.exhausted = true;
            return;
        }
        self.nodes += 1;
        if !self.propagate(&mut lo, &mut hi) {
            return;
        }
        if self.prune(self.lower_bound(&lo, &hi)) {
            return;
        }
        let Some(plain) = self.pick_branch_var(&lo, &hi) else {
            let x = self.complete(&lo, &hi);
            self.offer(x);
            return;
        };
        if !self.relaxed {
            for value in self.value_order(plain, lo[plain], hi[plain], None) {
                let mut clo = lo.clone();
                let mut chi = hi.clone();
                clo[plain] = value;
                chi[plain] = value;
                self.dfs(clo, chi, None);
                if self.done || self.exhausted {
                    return;
                }
            }
            return;
        }
        // A parent optimum inside this box is still optimal here.
        let inherited = parent.filter(|r| {
            r.point.as_ref().is_some_and(|x| {
                x.iter().enumerate().all(|(v, &xv)| xv >= lo[v] as f64 - 1e-9 && xv <= hi[v] as f64 + 1e-9)
            })
        });
        let fresh;
        let relaxation = match inherited {
            Some(r) => r,
            None => match self.relax(&lo, &hi) {
                Some(r) => {
                    fresh = r;
                    &fresh
                }
                None => return,
            },
        };
        if self.prune(relaxation.bound) {
            return;
        }
        let point = relaxation.point.clone().unwrap_or_default();
        if self.pass == Pass::Value {
            if let Some(x) = integral(&point) {
                let xs: Vec<u64> = x.iter().map(|&v| v as u64).collect();
                if self.p.is_feasible(&xs) {
                    let f = self.p.objective(&xs);
                    self.offer(x);
                    if f <= relaxation.bound + self.tol(relaxation.bound) {
                        return;
                    }
                }
            }
        }
        let v = self.guided_branch_var(&lo, &hi, &point).expect("a coupled variable remains");
        for value in self.value_order(v, lo[v], hi[v], point.get(v).copied()) {
            let mut clo = lo.clone();
            let mut chi = hi.clone();
            clo[v] = value;
            chi[v] = value;
            self.dfs(clo, chi, Some(relaxation));
            if self.done || self.exhausted {
                return;
            }
        }
    }

    /// In the value pass, the coupled variable farthest from integrality in
    /// the LP point; otherwise the usual branching variable.
    fn guided_branch_var(&self, lo: &[i64], hi: &[i64], point: &[f64]) -> Option<usize> {
        if self.pass != Pass::Value || point.is_empty() {
            return self.pick_branch_var(lo, hi);
        }
        let frac = |v: usize| {
            let x = point[v];
            (x - x.round()).abs()
        };
        let best = self.branch_order.iter().copied().filter(|&v| lo[v] < hi[v] && self.coupled(v, lo, hi)).fold(
            None,
            |acc: Option<usize>, v| match acc {
                Some(b) if frac(b) >= frac(v) => Some(b),
                _ => Some(v),
            },
        );
        best.or_else(|| self.pick_branch_var(lo, hi))
    }

    fn value_order(&self, v: usize, lo: i64, hi: i64, hint: Option<f64>) -> Vec<i64> {
        match self.pass {
            Pass::Lex { .. } if self.p.prefers_high(v) => (lo..=hi).rev().collect(),
            Pass::Lex { .. } => (lo..=hi).collect(),
            Pass::Value => {
                let mut vals: Vec<i64> = (lo..=hi).collect();
                if let Some(x) = hint {
                    vals.sort_by(|&a, &b| (a as f64 - x).abs().total_cmp(&(b as f64 - x).abs()).then(b.cmp(&a)));
                    return vals;
                }
                let (w, psi) = (self.p.weights[v], self.p.quad[v]);
                if w == 0.0 && psi == 0.0 {
                    vals.reverse();
                } else {
                    vals.sort_by(|&a, &b| term(w, psi, a).total_cmp(&term(w, psi, b)).then(a.cmp(&b)));
                }
                vals
            }
        }
    }
}

impl Solver {
    pub fn new(node_budget: u64) -> Self {
        Solver { node_budget }
    }

    pub fn solve(&self, program: &IntegerProgram) -> Solution {
        let n = program.n_vars();
        let lo = vec![0i64; n];
        let hi: Vec<i64> = program.upper.iter().map(|&u| u as i64).collect();

        let search = |pass: Pass| {
            let quick_budget = self.node_budget.min(QUICK_NODES);
            let mut quick = Search::new(program, pass, quick_budget, false);
            if pass == Pass::Value {
                // x = 0 is always feasible and seeds the incumbent.
                quick.best = Some((0.0, vec![0; n]));
            }
            quick.dfs(lo.clone(), hi.clone(), None);
            if !quick.exhausted || self.node_budget <= quick_budget {
                return quick;
            }
            let mut full = Search::new(program, pass, self.node_budget - quick.nodes, true);
            if pass == Pass::Value {
                full.best = quick.best.take();
            }
            full.dfs(lo.clone(), hi.clone(), None);
            full.nodes += quick.nodes;
            full
        };

        let mut value = search(Pass::Value);
        let (best_f, best_x) = value.best.take().expect("incumbent");
        let mut nodes = value.nodes;

        if value.exhausted {
            log::warn!("solver node budget of {} exhausted; returning best solution found", self.node_budget);
            return Solution {
                values: best_x.into_iter().map(|v| v as u64).collect(),
                objective: best_f,
                status: SolveStatus::SearchExhausted,
                nodes,
            };
        }

        let lex = search(Pass::Lex { target: best_f });
        nodes += lex.nodes;
        let (f, x) = match lex.best {
            Some(found) => found,
            None => {
                log::debug!("tie-break pass incomplete after {} nodes", lex.nodes);
                (best_f, best_x)
            }
        };
        Solution { values: x.into_iter().map(|v| v as u64).collect(), objective: f, status: SolveStatus::Exact, nodes }
    }
}
