//! Scheduling policies.
//!
//! The optimisation-based policies all solve the same per-step program:
//!
//! ```text
//! min  w·r + ψ Σ_e c_e²     s.t.  -M̃ r <= E[q - l + a],  -Ñ r <= E[d + b]
//! ```
//!
//! with `w = -E[d + b]` on the consumption block and zero on swaps, where
//! `c_e` is the consumption count of queue `e`. Max-Weight uses `ψ = 0`,
//! the quadratic policies `ψ = 1`. The information level decides how the
//! expectations resolve: exact values (FI), start-of-step snapshot plus
//! averages (PI), or exact values only on the queues incident to the
//! deciding node (LI).

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ScheduleVector, SystemState};
use crate::solver::{Constraint, IntegerProgram, SolveStatus, Solver};
use crate::stochastic::StepRealization;
use crate::topology::{NetworkModel, NodeId, Operation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Greedy,
    MwFi,
    MwPi,
    MwLi,
    QuadFi,
    QuadPi,
    QuadLi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfoLevel {
    Full,
    Partial,
    Local,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::Greedy,
        PolicyKind::MwFi,
        PolicyKind::MwPi,
        PolicyKind::MwLi,
        PolicyKind::QuadFi,
        PolicyKind::QuadPi,
        PolicyKind::QuadLi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Greedy => "greedy",
            PolicyKind::MwFi => "mw_fi",
            PolicyKind::MwPi => "mw_pi",
            PolicyKind::MwLi => "mw_li",
            PolicyKind::QuadFi => "quad_fi",
            PolicyKind::QuadPi => "quad_pi",
            PolicyKind::QuadLi => "quad_li",
        }
    }

    /// `None` for greedy, which does not solve a program.
    pub fn info_level(self) -> Option<InfoLevel> {
        match self {
            PolicyKind::Greedy => None,
            PolicyKind::MwFi | PolicyKind::QuadFi => Some(InfoLevel::Full),
            PolicyKind::MwPi | PolicyKind::QuadPi => Some(InfoLevel::Partial),
            PolicyKind::MwLi | PolicyKind::QuadLi => Some(InfoLevel::Local),
        }
    }

    pub fn is_quadratic(self) -> bool {
        matches!(self, PolicyKind::QuadFi | PolicyKind::QuadPi | PolicyKind::QuadLi)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown policy `{s}`"))
    }
}

/// What a scheduler knows when it decides.
#[derive(Debug, Clone)]
pub enum InfoSet<'a> {
    /// Exact end-of-step values.
    Full { state: &'a SystemState, realization: &'a StepRealization },
    /// Start-of-step snapshot; rates and `η` come from the model.
    Partial { state: &'a SystemState },
    /// Snapshot everywhere plus exact draws on the queues incident to `node`.
    Local { node: NodeId, state: &'a SystemState, exact: Vec<LocalDraw> },
}

/// Exact draws of one queue known to a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalDraw {
    pub queue: usize,
    pub arrivals: u64,
    pub losses: u64,
    pub demands: u64,
}

impl<'a> InfoSet<'a> {
    pub fn local(model: &NetworkModel, node: &NodeId, state: &'a SystemState, realization: &StepRealization) -> Self {
        let exact = model
            .queues()
            .incident(node)
            .into_iter()
            .map(|e| LocalDraw {
                queue: e,
                arrivals: realization.arrivals[e],
                losses: realization.losses[e],
                demands: realization.demands[e],
            })
            .collect();
        InfoSet::Local { node: node.clone(), state, exact }
    }

    pub fn for_level(
        level: InfoLevel,
        model: &NetworkModel,
        node: Option<&NodeId>,
        state: &'a SystemState,
        realization: &'a StepRealization,
    ) -> Self {
        match level {
            InfoLevel::Full => InfoSet::Full { state, realization },
            InfoLevel::Partial => InfoSet::Partial { state },
            InfoLevel::Local => {
                InfoSet::local(model, node.expect("local information needs a node"), state, realization)
            }
        }
    }

    /// Expected available ebits `E[q - l + a]` and pending demand
    /// `E[d + b]` per queue.
    pub fn estimates(&self, model: &NetworkModel) -> (Vec<f64>, Vec<f64>) {
        let partial = |state: &SystemState| -> (Vec<f64>, Vec<f64>) {
            let eta = model.eta();
            let avail = state.q.iter().zip(model.alpha()).map(|(&q, &a)| eta * q as f64 + a).collect();
            let demand = state.d.iter().zip(model.beta()).map(|(&d, &b)| d as f64 + b).collect();
            (avail, demand)
        };
        match self {
            InfoSet::Full { state, realization } => {
                let avail = (0..model.n_queues())
                    .map(|e| (state.q[e] - realization.losses[e] + realization.arrivals[e]) as f64)
                    .collect();
                let demand = (0..model.n_queues()).map(|e| (state.d[e] + realization.demands[e]) as f64).collect();
                (avail, demand)
            }
            InfoSet::Partial { state } => partial(state),
            InfoSet::Local { state, exact, .. } => {
                let (mut avail, mut demand) = partial(state);
                for draw in exact {
                    let e = draw.queue;
                    avail[e] = (state.q[e] - draw.losses + draw.arrivals) as f64;
                    demand[e] = (state.d[e] + draw.demands) as f64;
                }
                (avail, demand)
            }
        }
    }
}

/// Objective weights: zero on swaps, `-E[d_e + b_e]` on consumption of `e`.
pub fn build_weights(model: &NetworkModel, info: &InfoSet) -> Vec<f64> {
    let (_, demand) = info.estimates(model);
    let mut w = vec![0.0; model.n_transitions()];
    w.extend(demand.iter().map(|&x| if x == 0.0 { 0.0 } else { -x }));
    w
}

/// Rows of `[-M̃; -Ñ] r <= [E[q - l + a]; E[d + b]]`, one ebit row per
/// queue, then one demand row per queue, then the [`staged_rows`].
pub fn build_constraints(model: &NetworkModel, info: &InfoSet) -> Vec<Constraint> {
    let (avail, demand) = info.estimates(model);
    let nt = model.n_transitions();
    let mut ebit_rows: Vec<Vec<(usize, f64)>> = (0..model.n_queues()).map(|e| vec![(nt + e, 1.0)]).collect();
    for (t, tr) in model.transitions().iter().enumerate() {
        ebit_rows[tr.parents[0]].push((t, 1.0));
        ebit_rows[tr.parents[1]].push((t, 1.0));
        ebit_rows[tr.child].push((t, -1.0));
    }
    let mut rows: Vec<Constraint> = ebit_rows
        .into_iter()
        .zip(&avail)
        .map(|(mut coeffs, &rhs)| {
            coeffs.sort_by_key(|&(v, _)| v);
            Constraint::new(coeffs, rhs)
        })
        .collect();
    rows.extend(demand.iter().enumerate().map(|(e, &rhs)| Constraint::new(vec![(nt + e, 1.0)], rhs)));
    rows.extend(staged_rows(model, &avail));
    rows
}

/// Extra ebit rows for queues that some operation produces at a rank no
/// lower than one that consumes them. For each consumer rank `k`, units
/// consumed at ranks `<= k` must be covered by the available ebits plus
/// units produced at ranks `< k`. Queues whose producers all precede their
/// consumers get no extra rows, since the plain ebit row already implies
/// these.
pub fn staged_rows(model: &NetworkModel, avail: &[f64]) -> Vec<Constraint> {
    let nt = model.n_transitions();
    let mut uses: Vec<Vec<(u32, usize, f64)>> =
        (0..model.n_queues()).map(|e| vec![(model.rank(Operation::Consume(e)), nt + e, 1.0)]).collect();
    for (t, tr) in model.transitions().iter().enumerate() {
        for &p in &tr.parents {
            uses[p].push((tr.rank, t, 1.0));
        }
        uses[tr.child].push((tr.rank, t, -1.0));
    }
    let mut rows = Vec::new();
    for (e, uses) in uses.iter().enumerate() {
        let ranks = |sign: f64| uses.iter().filter(move |u| u.2 == sign).map(|u| u.0);
        let (Some(last_made), Some(first_used)) = (ranks(-1.0).max(), ranks(1.0).min()) else {
            continue;
        };
        if last_made < first_used {
            continue;
        }
        let mut levels: Vec<u32> = ranks(1.0).collect();
        levels.sort_unstable();
        levels.dedup();
        for k in levels {
            let mut coeffs: Vec<(usize, f64)> = uses
                .iter()
                .filter(|&&(r, _, sign)| if sign > 0.0 { r <= k } else { r < k })
                .map(|&(_, v, sign)| (v, sign))
                .collect();
            coeffs.sort_by_key(|&(v, _)| v);
            rows.push(Constraint::new(coeffs, avail[e]));
        }
    }
    rows
}

/// Per-step program for the given information set.
pub fn build_program(model: &NetworkModel, info: &InfoSet, quadratic: bool) -> IntegerProgram {
    let nt = model.n_transitions();
    let weights = build_weights(model, info);
    let mut quad = vec![0.0; model.n_ops()];
    if quadratic {
        quad[nt..].iter_mut().for_each(|p| *p = 1.0);
    }
    let constraints = build_constraints(model, info);
    // Every column of M̃ sums to -1, so the sum of the ebit rows bounds every
    // variable by the total available ebits.
    let total: f64 = info.estimates(model).0.iter().sum();
    let cap = (total + 1e-9).floor().max(0.0) as u64;
    // Among equally good decisions: serve as much as possible, then use as
    // few swaps as possible, earlier queues and transitions first.
    let priority: Vec<usize> = (nt..model.n_ops()).chain(0..nt).collect();
    let consumption: Vec<usize> = (nt..model.n_ops()).collect();
    IntegerProgram::with_box(weights, quad, constraints, vec![cap; model.n_ops()])
        .and_then(|p| p.with_priority(priority))
        .and_then(|p| p.with_prefer_high(&consumption))
        .expect("policy programs are well formed")
}

/// `U(r) = (d + b)ᵀ Ñ r + rᵀ ÑᵀÑ r` under full information.
pub fn drift_objective(
    model: &NetworkModel,
    state: &SystemState,
    realization: &StepRealization,
    r: &ScheduleVector,
) -> f64 {
    r.consumptions(model)
        .iter()
        .enumerate()
        .map(|(e, &c)| {
            let demand = (state.d[e] + realization.demands[e]) as f64;
            let c = c as f64;
            -demand * c + c * c
        })
        .sum()
}

/// A schedule plus whether any solve hit its node budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub schedule: ScheduleVector,
    pub budget_exhausted: bool,
}

/// Anything that maps the current step to a schedule.
///
/// The engine hands every policy the full realization; each policy is
/// responsible for looking only at what its information level allows.
pub trait SchedulingPolicy: Send + Sync {
    fn decide(
        &self,
        model: &NetworkModel,
        state: &SystemState,
        realization: &StepRealization,
        rng: &mut dyn rand::RngCore,
    ) -> Decision;

    fn name(&self) -> String;
}

/// One of the seven built-in policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuiltinPolicy {
    pub kind: PolicyKind,
    pub solver: Solver,
}

impl BuiltinPolicy {
    pub fn new(kind: PolicyKind, solver: Solver) -> Self {
        BuiltinPolicy { kind, solver }
    }
}

impl SchedulingPolicy for BuiltinPolicy {
    fn decide(
        &self,
        model: &NetworkModel,
        state: &SystemState,
        realization: &StepRealization,
        rng: &mut dyn rand::RngCore,
    ) -> Decision {
        decide(self.kind, model, state, realization, &self.solver, rng)
    }

    fn name(&self) -> String {
        self.kind.to_string()
    }
}

pub fn decide(
    kind: PolicyKind,
    model: &NetworkModel,
    state: &SystemState,
    realization: &StepRealization,
    solver: &Solver,
    rng: &mut dyn rand::RngCore,
) -> Decision {
    let Some(level) = kind.info_level() else {
        return Decision { schedule: greedy_decide(model, state, realization, rng), budget_exhausted: false };
    };
    let quadratic = kind.is_quadratic();
    match level {
        InfoLevel::Full | InfoLevel::Partial => {
            let info = InfoSet::for_level(level, model, None, state, realization);
            let sol = solver.solve(&build_program(model, &info, quadratic));
            Decision {
                schedule: ScheduleVector(sol.values),
                budget_exhausted: sol.status == SolveStatus::SearchExhausted,
            }
        }
        InfoLevel::Local => {
            let mut schedule = ScheduleVector::zeros(model);
            let mut budget_exhausted = false;
            let owners: Vec<&NodeId> = (0..model.n_ops()).map(|col| model.owner(model.operation(col))).collect();
            for node in model.graph().nodes() {
                // Nodes owning only operations pinned at zero have nothing to decide.
                let owned: Vec<usize> = (0..model.n_ops()).filter(|&c| owners[c] == node).collect();
                if owned.is_empty() {
                    continue;
                }
                let info = InfoSet::local(model, node, state, realization);
                let program = build_program(model, &info, quadratic);
                if owned.iter().all(|&c| program.upper()[c] == 0) {
                    continue;
                }
                let sol = solver.solve(&program);
                budget_exhausted |= sol.status == SolveStatus::SearchExhausted;
                for c in owned {
                    schedule.0[c] = sol.values[c];
                }
            }
            Decision { schedule, budget_exhausted }
        }
    }
}

/// Demand-blind greedy swapping with local exact knowledge.
///
/// User-pair queues first serve `min(available, pending)`. Then enabled
/// routed swaps are applied one at a time, each chosen uniformly at random,
/// until none is enabled. Ebits a swap delivers to a user-pair queue with
/// demand still pending are consumed at the end.
pub fn greedy_decide(
    model: &NetworkModel,
    state: &SystemState,
    realization: &StepRealization,
    rng: &mut dyn rand::RngCore,
) -> ScheduleVector {
    let nq = model.n_queues();
    let mut avail: Vec<u64> = (0..nq).map(|e| state.q[e] - realization.losses[e] + realization.arrivals[e]).collect();
    let mut pending: Vec<u64> = (0..nq).map(|e| state.d[e] + realization.demands[e]).collect();
    let mut r = ScheduleVector::zeros(model);
    let user_queues: Vec<usize> = (0..nq).filter(|&e| model.is_user_queue(e)).collect();

    let mut serve = |avail: &mut [u64], r: &mut ScheduleVector| {
        for &e in &user_queues {
            let c = avail[e].min(pending[e]);
            if c > 0 {
                avail[e] -= c;
                pending[e] -= c;
                r.add(model, Operation::Consume(e), c);
            }
        }
    };
    serve(&mut avail, &mut r);
    loop {
        let enabled: Vec<usize> = model
            .transitions()
            .iter()
            .enumerate()
            .filter(|(_, tr)| avail[tr.parents[0]] > 0 && avail[tr.parents[1]] > 0)
            .map(|(t, _)| t)
            .collect();
        let Some(&t) = enabled.choose(&mut RngRef(rng)) else {
            break;
        };
        let tr = &model.transitions()[t];
        avail[tr.parents[0]] -= 1;
        avail[tr.parents[1]] -= 1;
        avail[tr.child] += 1;
        r.add(model, Operation::Swap(t), 1);
    }
    serve(&mut avail, &mut r);
    r
}

/// Adapter so `dyn RngCore` can drive `rand`'s generic helpers.
struct RngRef<'a>(&'a mut dyn rand::RngCore);

impl rand::RngCore for RngRef<'_> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }
}

/// Uniform random draw helper for callers holding a `dyn RngCore`.
pub fn random_index(rng: &mut dyn rand::RngCore, n: usize) -> usize {
    RngRef(rng).random_range(0..n)
}
