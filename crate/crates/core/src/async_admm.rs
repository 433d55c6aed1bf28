//! Asynchronous ADMM driven by a discrete-event simulation.
//!
//! The aggregator keeps a global memory of every prosumer's dual vector
//! `z_n`. Whenever any prosumer finishes its local computation it delivers
//! `z_n`; the aggregator stores it, re-solves
//! `min Γ + Σ ⟨z_n, d̂_n⟩ + (γ/2) Σ ‖d̂_n‖²` under the ramp envelope, and sends
//! the fresh `d̂_n` back to that prosumer only. The prosumer then computes
//!
//! ```text
//!   w_g = z_n + γ d̂_n
//!   d_n = argmin_{F_n} −⟨2w_g − z_n, d_n⟩ + (γ/2)‖d_n‖²
//!   w_f = 2w_g − z_n − γ d_n
//!   z_n ← z_n + η (w_f − w_g)
//! ```
//!
//! while other prosumers keep updating the global memory, so the `d̂_n` it
//! works with may be stale by the time it reports.
//!
//! Simulated time is the only clock. Compute durations come from a seeded
//! [`DelayModel`], ties are broken by prosumer index, and every run with the
//! same scenario and seed replays the same event sequence.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{
    net_load, peak_ramp, ramp_vector, HyperParams, Profiles, ProsumerParams, Scenario, Schedule,
    SystemSolution,
};
use crate::sync_admm::{aggregator_direct, prosumer_prox, AggregatorUpdate, ReducedAggregator};
use crate::trace::{AsyncRecord, ConvergenceTrace};

/// Simulated compute durations: lognormal per prosumer, resampled for every
/// computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    /// Median duration of each prosumer's computation, seconds.
    pub medians: Vec<f64>,
    /// Standard deviation of the log-duration.
    pub sigma: f64,
    /// Optional clamp `[min, max]` applied to every sample.
    pub bounds: Option<(f64, f64)>,
    pub seed: u64,
}

impl DelayModel {
    pub fn lognormal(n: usize, median: f64, sigma: f64, seed: u64) -> Self {
        Self {
            medians: vec![median; n],
            sigma,
            bounds: None,
            seed,
        }
    }

    /// Every computation takes exactly `duration`.
    pub fn constant(n: usize, duration: f64) -> Self {
        Self::lognormal(n, duration, 0.0, 0)
    }

    pub fn from_hyper(h: &HyperParams, n: usize) -> Self {
        Self::lognormal(n, h.compute_median, h.compute_sigma, h.seed)
    }

    pub fn with_bounds(mut self, min: f64, max: f64) -> Self {
        self.bounds = Some((min, max));
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.medians.len() != n {
            return Err(Error::InvalidConfig(format!(
                "delay model has {} medians for {n} prosumers",
                self.medians.len()
            )));
        }
        if self.medians.iter().any(|m| !(*m > 0.0 && m.is_finite())) || !(self.sigma >= 0.0) {
            return Err(Error::InvalidConfig(
                "delays must be positive and finite".into(),
            ));
        }
        if let Some((lo, hi)) = self.bounds {
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::InvalidConfig(format!(
                    "bad delay bounds [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, prosumer: usize, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let v = self.medians[prosumer] * (self.sigma * z).exp();
        match self.bounds {
            Some((lo, hi)) => v.clamp(lo, hi),
            None => v,
        }
    }
}

/// Asynchronous aggregator update; same envelope as the synchronous one,
/// reduced around targets `−z_n/γ`.
pub fn aggregator_update_async(
    z: &Profiles,
    gamma: f64,
    prev_net_load: f64,
) -> Result<AggregatorUpdate> {
    let targets = z
        .iter()
        .map(|row| row.iter().map(|v| -v / gamma).collect())
        .collect();
    ReducedAggregator::from_targets(targets, gamma, prev_net_load)?.solve()
}

/// The asynchronous aggregator update without the reduction.
pub fn aggregator_update_async_direct(
    z: &Profiles,
    gamma: f64,
    prev_net_load: f64,
) -> Result<AggregatorUpdate> {
    aggregator_direct(z, gamma, prev_net_load)
}

/// Intermediate and final quantities of one prosumer computation.
#[derive(Debug, Clone, PartialEq)]
pub struct DualStep {
    pub w_g: Vec<f64>,
    pub w_f: Vec<f64>,
    pub z_new: Vec<f64>,
}

/// The three explicit formulas around the prosumer's inner minimization,
/// given its result `d`.
pub fn async_dual_step(z: &[f64], d_hat: &[f64], d: &[f64], gamma: f64, eta: f64) -> DualStep {
    let w_g: Vec<f64> = z.iter().zip(d_hat).map(|(z, dh)| z + gamma * dh).collect();
    let w_f: Vec<f64> = w_g
        .iter()
        .zip(z.iter().zip(d))
        .map(|(wg, (z, d))| 2.0 * wg - z - gamma * d)
        .collect();
    let z_new = z
        .iter()
        .zip(w_f.iter().zip(&w_g))
        .map(|(z, (wf, wg))| z + eta * (wf - wg))
        .collect();
    DualStep { w_g, w_f, z_new }
}

#[derive(Debug, Clone)]
pub struct ProsumerStep {
    pub z_new: Vec<f64>,
    pub schedule: Schedule,
}

/// One prosumer computation, using the (possibly stale) `d_hat_n` it last
/// received and its own current `z_n`.
pub fn prosumer_step_async(
    params: &ProsumerParams,
    d_hat_n: &[f64],
    z_n: &[f64],
    gamma: f64,
    eta: f64,
) -> Result<ProsumerStep> {
    check_len("dual vector", d_hat_n.len(), z_n.len())?;
    // w_g first, then the inner problem with linear term −(2w_g − z)
    let lin: Vec<f64> = z_n
        .iter()
        .zip(d_hat_n)
        .map(|(z, dh)| -(2.0 * (z + gamma * dh) - z))
        .collect();
    let schedule = prosumer_prox(params, gamma, &lin)?;
    let step = async_dual_step(z_n, d_hat_n, &schedule.net_demand, gamma, eta);
    Ok(ProsumerStep {
        z_new: step.z_new,
        schedule,
    })
}

/// Normalized change of one prosumer's dual vector, `‖z_new − z_prev‖/(ηγ)`.
pub fn async_residual(z_prev: &[f64], z_new: &[f64], eta: f64, gamma: f64) -> f64 {
    let sq: f64 = z_prev
        .iter()
        .zip(z_new)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    sq.sqrt() / (eta * gamma)
}

/// Mean of the last `cap` values pushed.
#[derive(Debug, Clone)]
pub struct MovingAverage {
    values: VecDeque<f64>,
    cap: usize,
    sum: f64,
}

impl MovingAverage {
    pub fn new(cap: usize) -> Self {
        Self {
            values: VecDeque::with_capacity(cap),
            cap: cap.max(1),
            sum: 0.0,
        }
    }

    pub fn push(&mut self, v: f64) {
        if self.values.len() == self.cap {
            if let Some(old) = self.values.pop_front() {
                self.sum -= old;
            }
        }
        self.values.push_back(v);
        self.sum += v;
    }

    pub fn is_full(&self) -> bool {
        self.values.len() == self.cap
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return f64::INFINITY;
        }
        // recompute instead of trusting the running sum's drift
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// A prosumer finishing its computation at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub time: f64,
    pub prosumer: usize,
}

impl Eq for Arrival {}

impl Ord for Arrival {
    // reversed so that BinaryHeap pops the earliest time, then lowest index
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.prosumer.cmp(&self.prosumer))
    }
}

impl PartialOrd for Arrival {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub struct AsyncState {
    /// Global memory of dual vectors.
    pub z: Profiles,
    /// Aggregator's latest copies.
    pub d_hat: Profiles,
    /// Copy each prosumer is currently working with.
    pub in_flight: Profiles,
    /// Number of processed arrivals.
    pub k: usize,
    pub queue: BinaryHeap<Arrival>,
}

#[derive(Debug, Clone)]
pub struct AsyncRun {
    pub solution: SystemSolution,
    pub trace: ConvergenceTrace,
    pub state: AsyncState,
    pub converged: bool,
}

/// Asynchronous ADMM under the given delay model, starting from `z = 0`, `d̂ = 0`.
pub fn run_async(sc: &Scenario, delays: &DelayModel) -> Result<AsyncRun> {
    sc.validate()?;
    let n = sc.len();
    delays.validate(n)?;
    let h = &sc.hyper;
    let (gamma, eta) = (h.gamma, h.eta);
    let t_len = sc.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(delays.seed);

    let mut state = AsyncState {
        z: vec![vec![0.0; t_len]; n],
        d_hat: vec![vec![0.0; t_len]; n],
        in_flight: vec![vec![0.0; t_len]; n],
        k: 0,
        queue: BinaryHeap::with_capacity(n),
    };
    for i in 0..n {
        state.queue.push(Arrival {
            time: delays.sample(i, &mut rng),
            prosumer: i,
        });
    }

    // prosumers that have not reported yet count with their idle schedule
    let mut schedules: Vec<Schedule> = sc.prosumers.iter().map(Schedule::idle).collect();
    let mut reported = vec![false; n];
    let mut n_reported = 0;
    let mut residual_avg = MovingAverage::new(n);
    let mut recent_objectives: VecDeque<f64> = VecDeque::with_capacity(n);
    let mut best: Option<(f64, Vec<Schedule>)> = None;
    let mut records = Vec::new();
    let mut converged = false;

    while state.k < h.max_events {
        let Some(Arrival { time, prosumer: i }) = state.queue.pop() else {
            break;
        };
        let step = prosumer_step_async(
            &sc.prosumers[i],
            &state.in_flight[i],
            &state.z[i],
            gamma,
            eta,
        )?;
        residual_avg.push(async_residual(&state.z[i], &step.z_new, eta, gamma));
        state.z[i] = step.z_new;
        schedules[i] = step.schedule;
        if !reported[i] {
            reported[i] = true;
            n_reported += 1;
        }

        let agg = aggregator_update_async(&state.z, gamma, sc.prev_net_load)?;
        state.d_hat = agg.d_hat;
        state.in_flight[i].clone_from(&state.d_hat[i]);
        state.k += 1;
        state.queue.push(Arrival {
            time: time + delays.sample(i, &mut rng),
            prosumer: i,
        });

        let demands: Vec<&[f64]> = schedules.iter().map(|s| s.net_demand.as_slice()).collect();
        let objective = peak_ramp(&ramp_vector(&net_load(&demands)?, sc.prev_net_load));
        let fp_residual = residual_avg.mean();
        records.push(AsyncRecord {
            event: state.k,
            sim_time: time,
            prosumer: i,
            objective,
            fp_residual,
        });
        if n_reported == n && best.as_ref().is_none_or(|(b, _)| objective < *b) {
            best = Some((objective, schedules.clone()));
        }
        if recent_objectives.len() == n {
            recent_objectives.pop_front();
        }
        recent_objectives.push_back(objective);

        if n_reported == n && residual_avg.is_full() && fp_residual < h.async_tol {
            let (lo, hi) = recent_objectives
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            if (hi - lo) / objective.max(1e-9) < 1e-4 {
                converged = true;
                break;
            }
        }
    }

    let chosen = match (converged, best) {
        (false, Some((_, s))) => s,
        _ => schedules,
    };
    Ok(AsyncRun {
        solution: SystemSolution::from_schedules(chosen, sc.prev_net_load)?,
        trace: ConvergenceTrace::Async(records),
        state,
        converged,
    })
}
