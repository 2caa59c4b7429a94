//! One-step evolution of ebit and demand queues.
//!
//! [`evolve_ideal`] is the exact linear update and assumes a feasible
//! schedule. [`execute`] is what the network actually does with an
//! arbitrary schedule: orders are split into unit operations, run rank by
//! rank in a random first-come-first-served order, and any unit whose
//! inputs are missing fails instead of driving a queue negative.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stochastic::StepRealization;
use crate::topology::{NetworkModel, Operation};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DynamicsError {
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    Dimension { what: &'static str, got: usize, expected: usize },
    #[error("schedule drives queue {queue} negative ({value})")]
    Infeasible { queue: String, value: i64 },
    #[error("loss {loss} exceeds backlog {backlog} on queue {queue}")]
    LossExceedsBacklog { queue: String, loss: u64, backlog: u64 },
}

/// Ebit backlog `q` and demand backlog `d` at the start of step `t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemState {
    pub t: u64,
    pub q: Vec<u64>,
    pub d: Vec<u64>,
}

impl SystemState {
    pub fn empty(n_queues: usize) -> Self {
        SystemState { t: 0, q: vec![0; n_queues], d: vec![0; n_queues] }
    }

    pub fn total_demand(&self) -> u64 {
        self.d.iter().sum()
    }

    pub fn total_ebits(&self) -> u64 {
        self.q.iter().sum()
    }
}

/// Swap counts for every transition followed by a consumption count for
/// every queue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScheduleVector(pub Vec<u64>);

impl ScheduleVector {
    pub fn zeros(model: &NetworkModel) -> Self {
        ScheduleVector(vec![0; model.n_ops()])
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn get(&self, model: &NetworkModel, op: Operation) -> u64 {
        self.0[column(model, op)]
    }

    pub fn set(&mut self, model: &NetworkModel, op: Operation, count: u64) {
        let col = column(model, op);
        self.0[col] = count;
    }

    pub fn add(&mut self, model: &NetworkModel, op: Operation, count: u64) {
        let col = column(model, op);
        self.0[col] += count;
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0)
    }

    pub fn consumptions<'a>(&'a self, model: &NetworkModel) -> &'a [u64] {
        &self.0[model.n_transitions()..]
    }
}

fn column(model: &NetworkModel, op: Operation) -> usize {
    match op {
        Operation::Swap(t) => t,
        Operation::Consume(e) => model.n_transitions() + e,
    }
}

/// What the execution engine did with a schedule.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub executed: Vec<u64>,
    pub failed: Vec<u64>,
    /// Demands served this step.
    pub served: u64,
}

impl ExecutionReport {
    pub fn total_failed(&self) -> u64 {
        self.failed.iter().sum()
    }
}

/// One attempted unit operation, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnitEvent {
    pub column: usize,
    pub rank: u32,
    pub executed: bool,
}

fn check_dims(
    model: &NetworkModel,
    state: &SystemState,
    realization: &StepRealization,
    r: &ScheduleVector,
) -> Result<(), DynamicsError> {
    let nq = model.n_queues();
    let checks = [
        ("q", state.q.len(), nq),
        ("d", state.d.len(), nq),
        ("arrivals", realization.arrivals.len(), nq),
        ("losses", realization.losses.len(), nq),
        ("demands", realization.demands.len(), nq),
        ("schedule", r.0.len(), model.n_ops()),
    ];
    for (what, got, expected) in checks {
        if got != expected {
            return Err(DynamicsError::Dimension { what, got, expected });
        }
    }
    Ok(())
}

/// Ebits available to the scheduler: `q - l + a`.
fn available(
    model: &NetworkModel,
    state: &SystemState,
    realization: &StepRealization,
) -> Result<Vec<u64>, DynamicsError> {
    (0..model.n_queues())
        .map(|e| {
            let (q, l) = (state.q[e], realization.losses[e]);
            if l > q {
                return Err(DynamicsError::LossExceedsBacklog {
                    queue: model.queues().pair(e).to_string(),
                    loss: l,
                    backlog: q,
                });
            }
            Ok(q - l + realization.arrivals[e])
        })
        .collect()
}

/// `M̃ r` computed from the transition structure.
fn net_change(model: &NetworkModel, r: &ScheduleVector) -> Vec<i64> {
    let mut delta = vec![0i64; model.n_queues()];
    for (t, tr) in model.transitions().iter().enumerate() {
        let n = r.0[t] as i64;
        delta[tr.parents[0]] -= n;
        delta[tr.parents[1]] -= n;
        delta[tr.child] += n;
    }
    for (e, &c) in r.consumptions(model).iter().enumerate() {
        delta[e] -= c as i64;
    }
    delta
}

/// `q(t+1) = q - l + a + M̃ r` and `d(t+1) = (d + b + Ñ r)^+`.
pub fn evolve_ideal(
    model: &NetworkModel,
    state: &SystemState,
    realization: &StepRealization,
    r: &ScheduleVector,
) -> Result<SystemState, DynamicsError> {
    check_dims(model, state, realization, r)?;
    let avail = available(model, state, realization)?;
    let delta = net_change(model, r);
    let q = avail
        .iter()
        .zip(&delta)
        .enumerate()
        .map(|(e, (&a, &dq))| {
            let v = a as i64 + dq;
            if v < 0 {
                Err(DynamicsError::Infeasible { queue: model.queues().pair(e).to_string(), value: v })
            } else {
                Ok(v as u64)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let d = state
        .d
        .iter()
        .zip(&realization.demands)
        .zip(r.consumptions(model))
        .map(|((&d, &b), &c)| (d + b).saturating_sub(c))
        .collect();
    Ok(SystemState { t: state.t + 1, q, d })
}

/// Whether `r` respects `-M̃ r <= q - l + a` and `-Ñ r <= d + b`.
pub fn feasible(model: &NetworkModel, state: &SystemState, realization: &StepRealization, r: &ScheduleVector) -> bool {
    if check_dims(model, state, realization, r).is_err() {
        return false;
    }
    let Ok(avail) = available(model, state, realization) else {
        return false;
    };
    let ebits_ok = net_change(model, r).iter().zip(&avail).all(|(&dq, &a)| -dq <= a as i64);
    let demand_ok = r.consumptions(model).iter().enumerate().all(|(e, &c)| c <= state.d[e] + realization.demands[e]);
    ebits_ok && demand_ok
}

/// Runs `r` through the rank/timeout engine and returns the next state.
pub fn execute(
    model: &NetworkModel,
    state: &SystemState,
    realization: &StepRealization,
    r: &ScheduleVector,
    rng: &mut impl Rng,
) -> Result<(SystemState, ExecutionReport), DynamicsError> {
    execute_inner(model, state, realization, r, rng, None)
}

/// Like [`execute`], also returning every attempted unit operation.
pub fn execute_traced(
    model: &NetworkModel,
    state: &SystemState,
    realization: &StepRealization,
    r: &ScheduleVector,
    rng: &mut impl Rng,
) -> Result<(SystemState, ExecutionReport, Vec<UnitEvent>), DynamicsError> {
    let mut trace = Vec::new();
    let (s, rep) = execute_inner(model, state, realization, r, rng, Some(&mut trace))?;
    Ok((s, rep, trace))
}

fn execute_inner(
    model: &NetworkModel,
    state: &SystemState,
    realization: &StepRealization,
    r: &ScheduleVector,
    rng: &mut impl Rng,
    mut trace: Option<&mut Vec<UnitEvent>>,
) -> Result<(SystemState, ExecutionReport), DynamicsError> {
    check_dims(model, state, realization, r)?;
    let mut q = available(model, state, realization)?;
    let mut d: Vec<u64> = state.d.iter().zip(&realization.demands).map(|(d, b)| d + b).collect();

    let mut by_rank: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (col, &n) in r.0.iter().enumerate() {
        if n > 0 {
            let units = by_rank.entry(model.rank(model.operation(col))).or_default();
            units.extend(std::iter::repeat_n(col, n as usize));
        }
    }

    let mut report = ExecutionReport { executed: vec![0; model.n_ops()], failed: vec![0; model.n_ops()], served: 0 };
    for (rank, mut units) in by_rank {
        // A uniform permutation is the order induced by i.i.d. timeouts.
        units.shuffle(rng);
        for col in units {
            let ok = match model.operation(col) {
                Operation::Swap(t) => {
                    let tr = &model.transitions()[t];
                    let [p0, p1] = tr.parents;
                    if q[p0] > 0 && q[p1] > 0 {
                        q[p0] -= 1;
                        q[p1] -= 1;
                        q[tr.child] += 1;
                        true
                    } else {
                        false
                    }
                }
                Operation::Consume(e) => {
                    if q[e] > 0 && d[e] > 0 {
                        q[e] -= 1;
                        d[e] -= 1;
                        report.served += 1;
                        true
                    } else {
                        false
                    }
                }
            };
            if ok {
                report.executed[col] += 1;
            } else {
                report.failed[col] += 1;
            }
            if let Some(trace) = trace.as_deref_mut() {
                trace.push(UnitEvent { column: col, rank, executed: ok });
            }
        }
    }
    Ok((SystemState { t: state.t + 1, q, d }, report))
}
