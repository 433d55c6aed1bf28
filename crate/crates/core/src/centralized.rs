//! The peak-ramp problem in epigraph form, solved as a single LP.
//!
//! Variables are laid out prosumer by prosumer as `[e | x | y | d]` blocks of
//! length T, followed by the ramp vector `r` and the epigraph variable `Γ`.
//! Storage levels are not variables: the bounds `0 <= s[t+1] <= cap` become
//! cumulative-sum inequalities in `(x, y)`.

use crate::error::{Error, Result};
use crate::model::{ProsumerParams, Scenario, Schedule, SystemSolution};
use crate::qp::{solve_qp, QpProblem, SparseMatrix, DEFAULT_MAX_ITER, DEFAULT_TOL};

/// Accumulates constraint rows and their right-hand sides.
#[derive(Debug, Clone)]
pub(crate) struct Rows {
    pub mat: SparseMatrix,
    pub rhs: Vec<f64>,
}

impl Rows {
    pub fn new(ncols: usize) -> Self {
        Self {
            mat: SparseMatrix::new(0, ncols),
            rhs: Vec::new(),
        }
    }

    pub fn push(&mut self, entries: impl IntoIterator<Item = (usize, f64)>, rhs: f64) {
        let row = self.mat.add_row();
        for (col, val) in entries {
            self.mat.push(row, col, val);
        }
        self.rhs.push(rhs);
    }
}

/// Column offsets of one prosumer's variable blocks.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ProsumerColumns {
    pub elastic: usize,
    pub charge: usize,
    pub discharge: usize,
    pub net: usize,
}

impl ProsumerColumns {
    pub fn contiguous(start: usize, horizon: usize) -> Self {
        Self {
            elastic: start,
            charge: start + horizon,
            discharge: start + 2 * horizon,
            net: start + 3 * horizon,
        }
    }
}

/// Emits the prosumer's feasible set: `T + 1` equality rows (net-demand
/// identity, elastic balance) and `8T` inequality rows (elastic, charge and
/// discharge boxes, cumulative storage bounds).
pub(crate) fn emit_feasible_set(
    p: &ProsumerParams,
    cols: ProsumerColumns,
    eq: &mut Rows,
    ineq: &mut Rows,
) {
    let t_len = p.horizon();
    for t in 0..t_len {
        eq.push(
            [
                (cols.net + t, 1.0),
                (cols.elastic + t, -1.0),
                (cols.charge + t, -1.0),
                (cols.discharge + t, p.eff_discharge),
            ],
            p.inelastic[t] - p.renewable[t],
        );
    }
    eq.push((0..t_len).map(|t| (cols.elastic + t, 1.0)), p.elastic_total);

    for t in 0..t_len {
        ineq.push([(cols.elastic + t, 1.0)], p.elastic_max);
        ineq.push([(cols.elastic + t, -1.0)], -p.elastic_min);
    }
    for t in 0..t_len {
        ineq.push([(cols.charge + t, 1.0)], p.charge_max);
        ineq.push([(cols.charge + t, -1.0)], 0.0);
    }
    for t in 0..t_len {
        ineq.push([(cols.discharge + t, 1.0)], p.discharge_max);
        ineq.push([(cols.discharge + t, -1.0)], 0.0);
    }
    // s[t+1] = s0 + β_c Σ_{τ<=t} x[τ] − Σ_{τ<=t} y[τ]
    for t in 0..t_len {
        let cumulative = |sign: f64| {
            (0..=t).flat_map(move |tau| {
                [
                    (cols.charge + tau, sign * p.eff_charge),
                    (cols.discharge + tau, -sign),
                ]
            })
        };
        ineq.push(cumulative(1.0), p.storage_cap - p.storage_init);
        ineq.push(cumulative(-1.0), p.storage_init);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantity {
    Elastic,
    Charge,
    Discharge,
    NetDemand,
}

/// Name of one LP variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarIndex {
    Prosumer {
        prosumer: usize,
        quantity: Quantity,
        slot: usize,
    },
    Ramp(usize),
    PeakRamp,
}

/// Bijection between [`VarIndex`] and flat column indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableLayout {
    pub n_prosumers: usize,
    pub horizon: usize,
}

impl VariableLayout {
    pub fn num_vars(&self) -> usize {
        self.n_prosumers * 4 * self.horizon + self.horizon + 1
    }

    fn block(quantity: Quantity) -> usize {
        match quantity {
            Quantity::Elastic => 0,
            Quantity::Charge => 1,
            Quantity::Discharge => 2,
            Quantity::NetDemand => 3,
        }
    }

    pub(crate) fn prosumer_columns(&self, n: usize) -> ProsumerColumns {
        ProsumerColumns::contiguous(n * 4 * self.horizon, self.horizon)
    }

    pub fn encode(&self, v: VarIndex) -> usize {
        let t_len = self.horizon;
        match v {
            VarIndex::Prosumer {
                prosumer,
                quantity,
                slot,
            } => {
                debug_assert!(prosumer < self.n_prosumers && slot < t_len);
                prosumer * 4 * t_len + Self::block(quantity) * t_len + slot
            }
            VarIndex::Ramp(slot) => self.n_prosumers * 4 * t_len + slot,
            VarIndex::PeakRamp => self.n_prosumers * 4 * t_len + t_len,
        }
    }

    pub fn decode(&self, i: usize) -> Option<VarIndex> {
        let t_len = self.horizon;
        let prosumer_vars = self.n_prosumers * 4 * t_len;
        if i < prosumer_vars {
            let prosumer = i / (4 * t_len);
            let within = i % (4 * t_len);
            let quantity = match within / t_len {
                0 => Quantity::Elastic,
                1 => Quantity::Charge,
                2 => Quantity::Discharge,
                _ => Quantity::NetDemand,
            };
            Some(VarIndex::Prosumer {
                prosumer,
                quantity,
                slot: within % t_len,
            })
        } else if i < prosumer_vars + t_len {
            Some(VarIndex::Ramp(i - prosumer_vars))
        } else if i == prosumer_vars + t_len {
            Some(VarIndex::PeakRamp)
        } else {
            None
        }
    }
}

/// The epigraph LP together with its variable naming.
#[derive(Debug, Clone)]
pub struct EpigraphProgram {
    pub problem: QpProblem,
    pub layout: VariableLayout,
}

/// Builds `min Γ` over every prosumer's feasible set, with ramp definitions
/// and the envelope `−Γ <= r[t] <= Γ`.
pub fn build_epigraph_program(sc: &Scenario) -> Result<EpigraphProgram> {
    sc.validate()?;
    let layout = VariableLayout {
        n_prosumers: sc.len(),
        horizon: sc.horizon,
    };
    let n_vars = layout.num_vars();
    let t_len = sc.horizon;
    let mut eq = Rows::new(n_vars);
    let mut ineq = Rows::new(n_vars);

    for (n, p) in sc.prosumers.iter().enumerate() {
        emit_feasible_set(p, layout.prosumer_columns(n), &mut eq, &mut ineq);
    }

    let net = |n: usize, t: usize| {
        layout.encode(VarIndex::Prosumer {
            prosumer: n,
            quantity: Quantity::NetDemand,
            slot: t,
        })
    };
    // r[t] − Σ_n d_n[t] + Σ_n d_n[t−1] = 0, with the previous-day load at t = 0
    for t in 0..t_len {
        let mut entries = vec![(layout.encode(VarIndex::Ramp(t)), 1.0)];
        entries.extend((0..sc.len()).map(|n| (net(n, t), -1.0)));
        let rhs = if t == 0 {
            -sc.prev_net_load
        } else {
            entries.extend((0..sc.len()).map(|n| (net(n, t - 1), 1.0)));
            0.0
        };
        eq.push(entries, rhs);
    }

    let gamma = layout.encode(VarIndex::PeakRamp);
    for t in 0..t_len {
        let r = layout.encode(VarIndex::Ramp(t));
        ineq.push([(r, 1.0), (gamma, -1.0)], 0.0);
        ineq.push([(r, -1.0), (gamma, -1.0)], 0.0);
    }

    let mut lin = vec![0.0; n_vars];
    lin[gamma] = 1.0;
    let problem = QpProblem::new(
        SparseMatrix::zeros(n_vars, n_vars),
        lin,
        eq.mat,
        eq.rhs,
        ineq.mat,
        ineq.rhs,
    )?;
    Ok(EpigraphProgram { problem, layout })
}

/// Result of the centralized solve.
#[derive(Debug, Clone)]
pub struct CentralizedSolution {
    pub solution: SystemSolution,
    /// Optimal Γ of the LP.
    pub objective: f64,
}

/// Solves the epigraph LP; the answer is the global optimum that the
/// distributed algorithms are measured against.
pub fn solve_centralized(sc: &Scenario) -> Result<CentralizedSolution> {
    let program = build_epigraph_program(sc)?;
    let sol = solve_qp(&program.problem, DEFAULT_TOL, DEFAULT_MAX_ITER)?
        .require_optimal("centralized epigraph program")?;
    let layout = program.layout;
    let t_len = sc.horizon;

    let schedules = sc
        .prosumers
        .iter()
        .enumerate()
        .map(|(n, p)| {
            let cols = layout.prosumer_columns(n);
            let take = |start: usize| sol.primal[start..start + t_len].to_vec();
            Schedule::polished(
                p,
                take(cols.elastic),
                take(cols.charge),
                take(cols.discharge),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let solution = SystemSolution::from_schedules(schedules, sc.prev_net_load)?;
    let objective = sol.primal[layout.encode(VarIndex::PeakRamp)];
    if !objective.is_finite() {
        return Err(Error::InvalidScenario(
            "centralized objective is not finite".into(),
        ));
    }
    Ok(CentralizedSolution {
        solution,
        objective,
    })
}
