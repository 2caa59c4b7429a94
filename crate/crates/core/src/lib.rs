//! Queue model, scheduling policies and simulation harness for
//! entanglement-swapping networks.

pub mod dynamics;
pub mod harness;
pub mod policies;
pub mod solver;
pub mod stochastic;
pub mod topology;

pub use dynamics::{evolve_ideal, execute, feasible, DynamicsError, ExecutionReport, ScheduleVector, SystemState};
pub use harness::{
    classify_stability, run_simulation, run_step, run_step_with, run_sweep, CellResult, HarnessError, RunResult,
    Scenario, ScriptedPolicy, SimConfig, Stability, StabilityThresholds, StepRecord, SweepConfig,
};
pub use policies::{BuiltinPolicy, Decision, InfoSet, PolicyKind, SchedulingPolicy};
pub use solver::{Constraint, IntegerProgram, Solution, SolveStatus, Solver, SolverError};
pub use stochastic::{memory_efficiency, RateUnit, RngStream, StepRealization};
pub use topology::{NetworkGraph, NetworkModel, NodeId, NodePair, Operation, Route, TopologyError, TopologyKind};
