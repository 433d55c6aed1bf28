//! Per-iteration convergence records and their CSV rendering.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncRecord {
    pub iter: usize,
    /// Simulated wall time at the end of the iteration's barrier, seconds.
    pub sim_time: f64,
    /// Peak ramp of the prosumer-side (feasible) net load.
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Γ chosen by the aggregator in this iteration.
    pub aggregator_gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsyncRecord {
    /// Global counter k after this arrival.
    pub event: usize,
    pub sim_time: f64,
    pub prosumer: usize,
    /// Peak ramp of the latest prosumer-side net demands.
    pub objective: f64,
    /// Moving average of the normalized dual change over the last N arrivals.
    pub fp_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConvergenceTrace {
    Sync(Vec<SyncRecord>),
    Async(Vec<AsyncRecord>),
}

pub const SYNC_HEADER: &str = "iter,sim_time,objective,primal_residual,dual_residual";
pub const ASYNC_HEADER: &str = "event,sim_time,prosumer,objective,fp_residual";

fn num(v: f64) -> String {
    format!("{v:.9e}")
}

impl ConvergenceTrace {
    pub fn len(&self) -> usize {
        match self {
            ConvergenceTrace::Sync(r) => r.len(),
            ConvergenceTrace::Async(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(step, objective)` pairs, where a step is an iteration (sync) or a
    /// prosumer arrival (async).
    pub fn objectives(&self) -> Vec<(usize, f64)> {
        match self {
            ConvergenceTrace::Sync(r) => r.iter().map(|x| (x.iter, x.objective)).collect(),
            ConvergenceTrace::Async(r) => r.iter().map(|x| (x.event, x.objective)).collect(),
        }
    }

    pub fn last_objective(&self) -> Option<f64> {
        self.objectives().last().map(|&(_, o)| o)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self {
            ConvergenceTrace::Sync(records) => {
                out.push_str(SYNC_HEADER);
                out.push('\n');
                for r in records {
                    out.push_str(&format!(
                        "{},{},{},{},{}\n",
                        r.iter,
                        num(r.sim_time),
                        num(r.objective),
                        num(r.primal_residual),
                        num(r.dual_residual)
                    ));
                }
            }
            ConvergenceTrace::Async(records) => {
                out.push_str(ASYNC_HEADER);
                out.push('\n');
                for r in records {
                    out.push_str(&format!(
                        "{},{},{},{},{}\n",
                        r.event,
                        num(r.sim_time),
                        r.prosumer,
                        num(r.objective),
                        num(r.fp_residual)
                    ));
                }
            }
        }
        out
    }
}
