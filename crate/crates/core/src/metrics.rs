//! Baseline-versus-optimized comparisons and convergence summaries.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::model::{ProsumerParams, SystemSolution};
use crate::trace::ConvergenceTrace;

/// Relative gap to the centralized optimum that counts as converged.
pub const CONVERGED_REL_GAP: f64 = 0.01;
/// Absolute gap used instead when the optimum is not positive, kWh.
pub const CONVERGED_ABS_GAP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub name: String,
    /// Iterations (sync) or arrivals (async) recorded.
    pub steps: usize,
    pub final_objective: f64,
    pub objective_gap: f64,
    /// First step whose objective is within tolerance of the optimum.
    pub iterations_to_tolerance: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baseline_peak_ramp: f64,
    pub optimized_peak_ramp: f64,
    pub reduction_fraction: f64,
    pub baseline_spread: f64,
    pub optimized_spread: f64,
    pub central_objective: f64,
    /// Gap of the optimized peak ramp to the centralized optimum.
    pub objective_gap: f64,
    pub baseline_net_load: Vec<f64>,
    pub optimized_net_load: Vec<f64>,
    pub algorithms: Vec<AlgorithmSummary>,
}

/// `1 − optimized/baseline`; zero when the baseline has no ramp at all.
pub fn reduction_fraction(baseline_peak: f64, optimized_peak: f64) -> f64 {
    if baseline_peak <= 0.0 {
        0.0
    } else {
        1.0 - optimized_peak / baseline_peak
    }
}

/// Relative gap `(value − optimum)/optimum`, or the absolute gap when the
/// optimum is not positive.
pub fn objective_gap(value: f64, optimum: f64) -> f64 {
    if optimum > 0.0 {
        (value - optimum) / optimum
    } else {
        value - optimum
    }
}

pub fn within_tolerance(value: f64, optimum: f64) -> bool {
    if optimum > 0.0 {
        ((value - optimum) / optimum).abs() < CONVERGED_REL_GAP
    } else {
        (value - optimum).abs() < CONVERGED_ABS_GAP
    }
}

/// First iteration or event at which the trace's objective is within
/// tolerance of `central_obj`.
pub fn iterations_to_tolerance(trace: &ConvergenceTrace, central_obj: f64) -> Option<usize> {
    trace
        .objectives()
        .into_iter()
        .find(|&(_, obj)| within_tolerance(obj, central_obj))
        .map(|(step, _)| step)
}

pub fn spread(series: &[f64]) -> f64 {
    let (lo, hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if series.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

pub fn compare(
    baseline: &SystemSolution,
    optimized: &SystemSolution,
    central_obj: f64,
    traces: &[(&str, &ConvergenceTrace)],
) -> Result<ComparisonReport> {
    check_len(
        "optimized net load",
        baseline.net_load.len(),
        optimized.net_load.len(),
    )?;
    let algorithms = traces
        .iter()
        .map(|(name, trace)| {
            let final_objective = trace.last_objective().unwrap_or(f64::NAN);
            AlgorithmSummary {
                name: name.to_string(),
                steps: trace.len(),
                final_objective,
                objective_gap: objective_gap(final_objective, central_obj),
                iterations_to_tolerance: iterations_to_tolerance(trace, central_obj),
            }
        })
        .collect();
    Ok(ComparisonReport {
        baseline_peak_ramp: baseline.peak_ramp,
        optimized_peak_ramp: optimized.peak_ramp,
        reduction_fraction: reduction_fraction(baseline.peak_ramp, optimized.peak_ramp),
        baseline_spread: spread(&baseline.net_load),
        optimized_spread: spread(&optimized.net_load),
        central_objective: central_obj,
        objective_gap: objective_gap(optimized.peak_ramp, central_obj),
        baseline_net_load: baseline.net_load.clone(),
        optimized_net_load: optimized.net_load.clone(),
        algorithms,
    })
}

/// Per-prosumer energy bookkeeping between two solutions of the same fleet.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyAccount {
    /// Largest difference in consumed energy `Σ(P + e)` across prosumers.
    pub consumption_gap: f64,
    /// `Σ d(optimized) − Σ d(baseline)` over the fleet.
    pub grid_delta: f64,
    /// `Σ x (1 − β_c β_d)`: energy lost to storage round trips.
    pub round_trip_loss: f64,
    /// `β_d (s[T] − s[0])` summed over the fleet: energy parked in storage.
    pub stored_delta: f64,
}

impl EnergyAccount {
    /// Residual of `grid_delta = round_trip_loss + stored_delta − baseline terms`;
    /// zero up to round-off when both solutions satisfy the storage recursion.
    pub fn balance_residual(&self) -> f64 {
        self.grid_delta - self.round_trip_loss - self.stored_delta
    }
}

/// Assumes `baseline` leaves storage idle.
pub fn energy_account(
    prosumers: &[ProsumerParams],
    baseline: &SystemSolution,
    optimized: &SystemSolution,
) -> EnergyAccount {
    let mut account = EnergyAccount {
        consumption_gap: 0.0,
        grid_delta: 0.0,
        round_trip_loss: 0.0,
        stored_delta: 0.0,
    };
    for ((p, b), o) in prosumers
        .iter()
        .zip(&baseline.schedules)
        .zip(&optimized.schedules)
    {
        let consumed = |e: &[f64]| p.inelastic.iter().sum::<f64>() + e.iter().sum::<f64>();
        account.consumption_gap = account
            .consumption_gap
            .max((consumed(&o.elastic) - consumed(&b.elastic)).abs());
        account.grid_delta += o.net_demand.iter().sum::<f64>() - b.net_demand.iter().sum::<f64>();
        account.round_trip_loss +=
            o.charge.iter().sum::<f64>() * (1.0 - p.eff_charge * p.eff_discharge);
        let last = o.storage.len() - 1;
        account.stored_delta += p.eff_discharge * (o.storage[last] - o.storage[0]);
    }
    account
}
