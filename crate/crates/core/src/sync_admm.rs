//! Synchronous consensus ADMM.
//!
//! The aggregator owns local copies `d̂_n` of every prosumer's net demand plus
//! `r` and `Γ`; each prosumer owns its schedule and the multipliers `μ_n`
//! pricing the consensus constraint `d̂_n = d_n`. One iteration is
//!
//! 1. aggregator: minimize `Γ + Σ μ·d̂ + ρ/2 Σ‖d̂_n − d_n‖²` under the ramp
//!    envelope;
//! 2. every prosumer (barrier): minimize `−μ_n·d_n + ρ/2‖d̂_n − d_n‖²` over
//!    its feasible set;
//! 3. dual ascent `μ ← μ + ρ(d̂ − d)`.
//!
//! The aggregator QP has `N·T + T + 1` variables but is separable across
//! prosumers once the column sums `L̂[t] = Σ_n d̂_n[t]` are fixed, so it is
//! solved over `(L̂, Γ)` only and expanded back; see [`ReducedAggregator`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::async_admm::DelayModel;
use crate::centralized::{emit_feasible_set, ProsumerColumns, Rows};
use crate::error::{check_len, Result};
use crate::model::{
    peak_ramp, ramp_vector, Profiles, ProsumerParams, Scenario, Schedule, SystemSolution,
};
use crate::qp::{solve_qp, QpProblem, SparseMatrix, DEFAULT_MAX_ITER};
use crate::trace::{ConvergenceTrace, SyncRecord};

/// Subproblems are solved tighter than the outer tolerances so that their
/// error does not limit ADMM accuracy.
pub(crate) const SUBPROBLEM_TOL: f64 = 1e-9;

/// Every this many aggregator calls, debug builds re-solve the unreduced QP
/// and compare.
const AUDIT_EVERY: usize = 100;

/// Aggregator output: the envelope value, ramps, and the local copies.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorUpdate {
    pub gamma_val: f64,
    pub ramps: Vec<f64>,
    pub d_hat: Profiles,
}

/// The aggregator QP `min Γ + Σ_n ⟨lin_n, d̂_n⟩ + (w/2) Σ_n ‖d̂_n‖²` written
/// as a proximal problem around targets `c_n = −lin_n / w` and reduced to the
/// column sums.
///
/// For fixed `L̂[t]` the inner minimizer is
/// `d̂_n[t] = c_n[t] + (L̂[t] − Σ_m c_m[t]) / N`, leaving
/// `Γ + (w / 2N) Σ_t (L̂[t] − Σ_m c_m[t])²` over `T + 1` variables.
#[derive(Debug, Clone)]
pub struct ReducedAggregator {
    pub problem: QpProblem,
    targets: Profiles,
    target_sum: Vec<f64>,
    prev_net_load: f64,
}

impl ReducedAggregator {
    pub fn from_targets(targets: Profiles, weight: f64, prev_net_load: f64) -> Result<Self> {
        let n = targets.len();
        let t_len = targets.first().map_or(0, Vec::len);
        for row in &targets {
            check_len("aggregator target", t_len, row.len())?;
        }
        let target_sum = crate::model::net_load(&targets)?;
        let scale = weight / n as f64;

        let gamma = t_len;
        let mut lin: Vec<f64> = target_sum.iter().map(|c| -scale * c).collect();
        lin.push(1.0);
        let mut quad = SparseMatrix::new(t_len + 1, t_len + 1);
        for t in 0..t_len {
            quad.push(t, t, scale);
        }
        let mut ineq = Rows::new(t_len + 1);
        for t in 0..t_len {
            // ±(L̂[t] − L̂[t−1]) − Γ <= 0, with L̂[−1] = prev_net_load
            for sign in [1.0, -1.0] {
                let mut entries = vec![(t, sign), (gamma, -1.0)];
                let rhs = if t == 0 {
                    sign * prev_net_load
                } else {
                    entries.push((t - 1, -sign));
                    0.0
                };
                ineq.push(entries, rhs);
            }
        }
        let problem = QpProblem::new(
            quad,
            lin,
            SparseMatrix::zeros(0, t_len + 1),
            vec![],
            ineq.mat,
            ineq.rhs,
        )?;
        Ok(Self {
            problem,
            targets,
            target_sum,
            prev_net_load,
        })
    }

    /// Reconstructs every `d̂_n` from the column sums.
    pub fn expand(&self, column_sums: &[f64]) -> Profiles {
        let n = self.targets.len() as f64;
        self.targets
            .iter()
            .map(|c| {
                c.iter()
                    .zip(column_sums.iter().zip(&self.target_sum))
                    .map(|(c, (l, s))| c + (l - s) / n)
                    .collect()
            })
            .collect()
    }

    pub fn solve(&self) -> Result<AggregatorUpdate> {
        let t_len = self.target_sum.len();
        let sol = solve_qp(&self.problem, SUBPROBLEM_TOL, DEFAULT_MAX_ITER)?
            .require_optimal("reduced aggregator update")?;
        let sums = &sol.primal[..t_len];
        Ok(AggregatorUpdate {
            gamma_val: sol.primal[t_len],
            ramps: ramp_vector(sums, self.prev_net_load),
            d_hat: self.expand(sums),
        })
    }
}

/// Unreduced aggregator QP over `(d̂, r, Γ)`; reference for the reduction.
pub fn aggregator_direct(
    lin: &Profiles,
    weight: f64,
    prev_net_load: f64,
) -> Result<AggregatorUpdate> {
    let n = lin.len();
    let t_len = lin.first().map_or(0, Vec::len);
    let n_vars = n * t_len + t_len + 1;
    let ramp = |t: usize| n * t_len + t;
    let gamma = n * t_len + t_len;

    let mut c = vec![0.0; n_vars];
    for (i, row) in lin.iter().enumerate() {
        check_len("aggregator linear term", t_len, row.len())?;
        c[i * t_len..(i + 1) * t_len].copy_from_slice(row);
    }
    c[gamma] = 1.0;
    let mut diag = vec![weight; n * t_len];
    diag.extend(std::iter::repeat_n(0.0, t_len + 1));

    let mut eq = Rows::new(n_vars);
    for t in 0..t_len {
        let mut entries = vec![(ramp(t), 1.0)];
        entries.extend((0..n).map(|i| (i * t_len + t, -1.0)));
        let rhs = if t == 0 {
            -prev_net_load
        } else {
            entries.extend((0..n).map(|i| (i * t_len + t - 1, 1.0)));
            0.0
        };
        eq.push(entries, rhs);
    }
    let mut ineq = Rows::new(n_vars);
    for t in 0..t_len {
        ineq.push([(ramp(t), 1.0), (gamma, -1.0)], 0.0);
        ineq.push([(ramp(t), -1.0), (gamma, -1.0)], 0.0);
    }
    let problem = QpProblem::new(
        SparseMatrix::diagonal(&diag),
        c,
        eq.mat,
        eq.rhs,
        ineq.mat,
        ineq.rhs,
    )?;
    let sol = solve_qp(&problem, SUBPROBLEM_TOL, DEFAULT_MAX_ITER)?
        .require_optimal("direct aggregator update")?;
    Ok(AggregatorUpdate {
        gamma_val: sol.primal[gamma],
        ramps: sol.primal[ramp(0)..ramp(0) + t_len].to_vec(),
        d_hat: (0..n)
            .map(|i| sol.primal[i * t_len..(i + 1) * t_len].to_vec())
            .collect(),
    })
}

/// Linear term `μ − ρ d` of the synchronous aggregator objective.
fn sync_linear_term(d: &Profiles, mu: &Profiles, rho: f64) -> Profiles {
    d.iter()
        .zip(mu)
        .map(|(d, m)| d.iter().zip(m).map(|(d, m)| m - rho * d).collect())
        .collect()
}

/// Reduction of the synchronous aggregator problem: targets `c_n = d_n − μ_n/ρ`.
pub fn reduce_aggregator(
    d: &Profiles,
    mu: &Profiles,
    rho: f64,
    prev_net_load: f64,
) -> Result<ReducedAggregator> {
    check_len("multipliers", d.len(), mu.len())?;
    let targets = d
        .iter()
        .zip(mu)
        .map(|(d, m)| {
            check_len("multipliers", d.len(), m.len())?;
            Ok(d.iter().zip(m).map(|(d, m)| d - m / rho).collect())
        })
        .collect::<Result<Profiles>>()?;
    ReducedAggregator::from_targets(targets, rho, prev_net_load)
}

pub fn aggregator_update(
    d: &Profiles,
    mu: &Profiles,
    rho: f64,
    prev_net_load: f64,
) -> Result<AggregatorUpdate> {
    reduce_aggregator(d, mu, rho, prev_net_load)?.solve()
}

/// The synchronous aggregator update solved without the reduction.
pub fn aggregator_update_direct(
    d: &Profiles,
    mu: &Profiles,
    rho: f64,
    prev_net_load: f64,
) -> Result<AggregatorUpdate> {
    check_len("multipliers", d.len(), mu.len())?;
    aggregator_direct(&sync_linear_term(d, mu, rho), rho, prev_net_load)
}

/// Minimizes `(w/2)‖d‖² + ⟨lin, d⟩` over the prosumer's feasible set.
pub(crate) fn prosumer_prox(params: &ProsumerParams, weight: f64, lin: &[f64]) -> Result<Schedule> {
    let t_len = params.horizon();
    check_len("prosumer linear term", t_len, lin.len())?;
    let cols = ProsumerColumns::contiguous(0, t_len);
    let n_vars = 4 * t_len;
    let mut eq = Rows::new(n_vars);
    let mut ineq = Rows::new(n_vars);
    emit_feasible_set(params, cols, &mut eq, &mut ineq);

    let mut diag = vec![0.0; n_vars];
    let mut c = vec![0.0; n_vars];
    for t in 0..t_len {
        diag[cols.net + t] = weight;
        c[cols.net + t] = lin[t];
    }
    let problem = QpProblem::new(
        SparseMatrix::diagonal(&diag),
        c,
        eq.mat,
        eq.rhs,
        ineq.mat,
        ineq.rhs,
    )?;
    let sol =
        solve_qp(&problem, SUBPROBLEM_TOL, DEFAULT_MAX_ITER)?.require_optimal("prosumer update")?;
    let take = |start: usize| sol.primal[start..start + t_len].to_vec();
    Schedule::polished(
        params,
        take(cols.elastic),
        take(cols.charge),
        take(cols.discharge),
    )
}

/// Prosumer step: minimize `−⟨μ_n, d_n⟩ + ρ/2‖d̂_n − d_n‖²` over its
/// feasible set.
pub fn prosumer_update(
    params: &ProsumerParams,
    d_hat_n: &[f64],
    mu_n: &[f64],
    rho: f64,
) -> Result<Schedule> {
    check_len("multipliers", d_hat_n.len(), mu_n.len())?;
    let lin: Vec<f64> = d_hat_n
        .iter()
        .zip(mu_n)
        .map(|(dh, m)| -m - rho * dh)
        .collect();
    prosumer_prox(params, rho, &lin)
}

/// `μ' = μ + ρ(d̂ − d)`.
pub fn dual_update(mu: &Profiles, d_hat: &Profiles, d: &Profiles, rho: f64) -> Profiles {
    mu.iter()
        .zip(d_hat.iter().zip(d))
        .map(|(m, (dh, d))| {
            m.iter()
                .zip(dh.iter().zip(d))
                .map(|(m, (dh, d))| m + rho * (dh - d))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncState {
    pub d: Profiles,
    pub d_hat: Profiles,
    pub mu: Profiles,
    pub gamma_val: f64,
    pub r: Vec<f64>,
    pub iter: usize,
}

fn frobenius<'a>(rows: impl IntoIterator<Item = &'a Vec<f64>>) -> f64 {
    rows.into_iter()
        .flatten()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

fn frobenius_diff(a: &Profiles, b: &Profiles) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)))
        .sum::<f64>()
        .sqrt()
}

/// `(‖d̂ − d‖₂, ρ‖d̂ − d̂_prev‖₂)` over all entries.
pub fn residuals(state: &SyncState, prev_d_hat: &Profiles, rho: f64) -> (f64, f64) {
    (
        frobenius_diff(&state.d_hat, &state.d),
        rho * frobenius_diff(&state.d_hat, prev_d_hat),
    )
}

#[derive(Debug, Clone)]
pub struct SyncRun {
    pub solution: SystemSolution,
    pub trace: ConvergenceTrace,
    pub state: SyncState,
    /// Whether the stopping rule fired before `max_iter`.
    pub converged: bool,
}

/// Synchronous consensus ADMM starting from the idle schedules (elastic
/// spread evenly, storage unused) and `μ = 0`.
pub fn run_sync(sc: &Scenario) -> Result<SyncRun> {
    run_sync_from(sc, sc.idle_demands())
}

/// Synchronous consensus ADMM from given initial prosumer net demands.
pub fn run_sync_from(sc: &Scenario, initial_d: Profiles) -> Result<SyncRun> {
    sc.validate()?;
    check_len("initial net demands", sc.len(), initial_d.len())?;
    let h = &sc.hyper;
    let rho = h.rho;
    let n = sc.len();
    let t_len = sc.horizon;
    let size = ((n * t_len) as f64).sqrt();

    let delays = DelayModel::from_hyper(h, n);
    let mut rng = ChaCha8Rng::seed_from_u64(delays.seed);

    let mut state = SyncState {
        d_hat: initial_d.clone(),
        d: initial_d,
        mu: vec![vec![0.0; t_len]; n],
        gamma_val: 0.0,
        r: vec![0.0; t_len],
        iter: 0,
    };
    let mut schedules: Vec<Schedule> = Vec::new();
    let mut best: Option<(f64, Vec<Schedule>)> = None;
    let mut records = Vec::new();
    let mut sim_time = 0.0;
    let mut converged = false;

    for k in 1..=h.max_iter {
        let agg = aggregator_update(&state.d, &state.mu, rho, sc.prev_net_load)?;
        if cfg!(debug_assertions) && k % AUDIT_EVERY == 1 {
            audit_reduction(&state, rho, sc.prev_net_load, &agg)?;
        }

        // barrier: every prosumer solves before the iteration completes
        schedules = sc
            .prosumers
            .par_iter()
            .zip(agg.d_hat.par_iter().zip(state.mu.par_iter()))
            .map(|(p, (dh, mu))| prosumer_update(p, dh, mu, rho))
            .collect::<Result<Vec<_>>>()?;
        sim_time += (0..n)
            .map(|i| delays.sample(i, &mut rng))
            .fold(0.0, f64::max);

        let prev_d_hat = std::mem::replace(&mut state.d_hat, agg.d_hat);
        state.d = schedules.iter().map(|s| s.net_demand.clone()).collect();
        state.mu = dual_update(&state.mu, &state.d_hat, &state.d, rho);
        state.gamma_val = agg.gamma_val;
        state.r = agg.ramps;
        state.iter = k;

        let (primal, dual) = residuals(&state, &prev_d_hat, rho);
        let objective = peak_ramp(&ramp_vector(
            &crate::model::net_load(&state.d)?,
            sc.prev_net_load,
        ));
        records.push(SyncRecord {
            iter: k,
            sim_time,
            objective,
            primal_residual: primal,
            dual_residual: dual,
            aggregator_gamma: state.gamma_val,
        });
        if best.as_ref().is_none_or(|(b, _)| objective < *b) {
            best = Some((objective, schedules.clone()));
        }

        let primal_tol =
            h.eps_abs * size + h.eps_rel * frobenius(&state.d_hat).max(frobenius(&state.d));
        let dual_tol = h.eps_abs * size + h.eps_rel * frobenius(&state.mu);
        if primal <= primal_tol && dual <= dual_tol {
            converged = true;
            break;
        }
    }

    let chosen = if converged {
        schedules
    } else {
        best.map(|(_, s)| s).unwrap_or(schedules)
    };
    let solution = if chosen.is_empty() {
        SystemSolution::from_schedules(
            sc.prosumers.iter().map(Schedule::idle).collect(),
            sc.prev_net_load,
        )?
    } else {
        SystemSolution::from_schedules(chosen, sc.prev_net_load)?
    };
    Ok(SyncRun {
        solution,
        trace: ConvergenceTrace::Sync(records),
        state,
        converged,
    })
}

fn audit_reduction(
    state: &SyncState,
    rho: f64,
    prev: f64,
    reduced: &AggregatorUpdate,
) -> Result<()> {
    let direct = aggregator_update_direct(&state.d, &state.mu, rho, prev)?;
    let gap = frobenius_diff(&direct.d_hat, &reduced.d_hat) / (state.d.len() as f64).sqrt();
    debug_assert!(
        gap < 1e-5 && (direct.gamma_val - reduced.gamma_val).abs() < 1e-5,
        "reduced aggregator disagrees with direct solve (gap {gap})"
    );
    Ok(())
}
