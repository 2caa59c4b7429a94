//! Seeded random processes: ebit generation, memory loss and demand arrival.
//!
//! Every draw comes from a ChaCha stream keyed by
//! `(master seed, run, step, index, purpose)`, so results do not depend on
//! evaluation order or on how work is spread across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::NetworkModel;

#[derive(Debug, Error, PartialEq)]
pub enum StochasticError {
    #[error("memory lifetime must be positive, got {0}")]
    NonPositiveLifetime(f64),
    #[error("time step must be nonnegative, got {0}")]
    NegativeTimeStep(f64),
}

/// Storage-and-retrieval efficiency of a memory over one step of length
/// `delta_t`, for qubit lifetime `tau`: `exp(-delta_t / tau)`.
pub fn memory_efficiency(delta_t: f64, tau: f64) -> Result<f64, StochasticError> {
    if !(tau > 0.0) {
        return Err(StochasticError::NonPositiveLifetime(tau));
    }
    if !(delta_t >= 0.0) {
        return Err(StochasticError::NegativeTimeStep(delta_t));
    }
    Ok((-delta_t / tau).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    Topology = 1,
    Routing,
    Parasitic,
    Arrival,
    Loss,
    Demand,
    Policy,
    Execution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub run: u64,
    pub step: u64,
    pub index: u64,
    pub purpose: Purpose,
}

impl StreamKey {
    pub fn new(run: u64, step: u64, index: u64, purpose: Purpose) -> Self {
        StreamKey { run, step, index, purpose }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Generator for one `(seed, key)` stream.
pub fn seeded_rng(seed: u64, key: StreamKey) -> ChaCha8Rng {
    let words = [
        splitmix64(seed ^ splitmix64(key.purpose as u64)),
        splitmix64(key.run ^ 0x5851_f42d_4c95_7f2d),
        splitmix64(key.step ^ 0x1405_7b7e_f767_814f),
        splitmix64(key.index ^ 0x2545_f491_4f6c_dd1d),
    ];
    let mut bytes = [0u8; 32];
    for (chunk, w) in bytes.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// Random streams of one simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub run: u64,
}

impl RngStream {
    pub fn new(seed: u64, run: u64) -> Self {
        RngStream { seed, run }
    }

    pub fn rng(&self, step: u64, index: u64, purpose: Purpose) -> ChaCha8Rng {
        seeded_rng(self.seed, StreamKey::new(self.run, step, index, purpose))
    }
}

/// Random draws of one time step, one entry per queue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRealization {
    pub arrivals: Vec<u64>,
    pub losses: Vec<u64>,
    pub demands: Vec<u64>,
}

impl StepRealization {
    pub fn zeros(n_queues: usize) -> Self {
        StepRealization { arrivals: vec![0; n_queues], losses: vec![0; n_queues], demands: vec![0; n_queues] }
    }
}

fn poisson(mean: f64, rng: &mut ChaCha8Rng) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
}

/// Poisson ebit arrivals on physical queues; zero on virtual ones.
pub fn sample_arrivals(model: &NetworkModel, stream: &RngStream, step: u64) -> Vec<u64> {
    (0..model.n_queues())
        .map(|e| {
            if !model.queues().is_physical(e) {
                return 0;
            }
            poisson(model.alpha()[e], &mut stream.rng(step, e as u64, Purpose::Arrival))
        })
        .collect()
}

/// Binomial losses: each of the `backlog[e]` ebits stored at the start of
/// the step is lost with probability `1 - eta`.
pub fn sample_losses(backlog: &[u64], eta: f64, stream: &RngStream, step: u64) -> Vec<u64> {
    let p_loss = (1.0 - eta).clamp(0.0, 1.0);
    backlog
        .iter()
        .enumerate()
        .map(|(e, &q)| {
            if q == 0 || p_loss == 0.0 {
                return 0;
            }
            let dist = Binomial::new(q, p_loss).expect("probability in [0, 1]");
            dist.sample(&mut stream.rng(step, e as u64, Purpose::Loss))
        })
        .collect()
}

/// Poisson demand arrivals on user-pair queues; zero elsewhere.
pub fn sample_demands(model: &NetworkModel, stream: &RngStream, step: u64) -> Vec<u64> {
    model
        .beta()
        .iter()
        .enumerate()
        .map(|(e, &beta)| poisson(beta, &mut stream.rng(step, e as u64, Purpose::Demand)))
        .collect()
}

/// All draws of one step given the backlog at its start.
pub fn sample_step(model: &NetworkModel, backlog: &[u64], stream: &RngStream, step: u64) -> StepRealization {
    StepRealization {
        arrivals: sample_arrivals(model, stream, step),
        losses: sample_losses(backlog, model.eta(), stream, step),
        demands: sample_demands(model, stream, step),
    }
}

/// How configured rates are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateUnit {
    /// Events per time step.
    #[default]
    PerStep,
    /// Events per second, converted with the step length.
    Hz,
}

impl RateUnit {
    pub fn to_per_step(self, rate: f64, delta_t: f64) -> f64 {
        match self {
            RateUnit::PerStep => rate,
            RateUnit::Hz => rate * delta_t,
        }
    }
}
