//! Prosumer data, schedules, and the arithmetic that links them to the
//! system net load and its ramps.
//!
//! Slots are 0-based in code. `storage` carries `T + 1` entries: the level at
//! the start of every slot plus the terminal level after the last slot.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Row-per-prosumer matrix of per-slot quantities (N rows of length T).
pub type Profiles = Vec<Vec<f64>>;

/// Default absolute feasibility tolerance, kWh.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Constants describing one prosumer over the scheduling horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsumerParams {
    /// Fixed (inelastic) consumption per slot.
    pub inelastic: Vec<f64>,
    /// Forecast renewable generation per slot.
    pub renewable: Vec<f64>,
    /// Daily elastic energy that must be consumed.
    pub elastic_total: f64,
    pub elastic_min: f64,
    pub elastic_max: f64,
    pub charge_max: f64,
    pub discharge_max: f64,
    pub storage_cap: f64,
    /// Storage level at the start of the first slot.
    pub storage_init: f64,
    pub eff_charge: f64,
    pub eff_discharge: f64,
}

impl ProsumerParams {
    /// A prosumer with the given inelastic load and nothing else: no
    /// renewable, no elastic demand, no storage.
    pub fn inflexible(inelastic: Vec<f64>) -> Self {
        let horizon = inelastic.len();
        Self {
            inelastic,
            renewable: vec![0.0; horizon],
            elastic_total: 0.0,
            elastic_min: 0.0,
            elastic_max: 0.0,
            charge_max: 0.0,
            discharge_max: 0.0,
            storage_cap: 0.0,
            storage_init: 0.0,
            eff_charge: 1.0,
            eff_discharge: 1.0,
        }
    }

    pub fn horizon(&self) -> usize {
        self.inelastic.len()
    }

    /// Checks every data invariant; `index` only labels the error.
    pub fn validate(&self, index: usize, horizon: usize) -> Result<()> {
        let bad = |reason: String| Error::InvalidProsumer {
            prosumer: index,
            reason,
        };
        if self.inelastic.len() != horizon || self.renewable.len() != horizon {
            return Err(bad(format!(
                "profiles must have length {horizon} (inelastic {}, renewable {})",
                self.inelastic.len(),
                self.renewable.len()
            )));
        }
        let scalars = [
            ("elastic_total", self.elastic_total),
            ("elastic_min", self.elastic_min),
            ("elastic_max", self.elastic_max),
            ("charge_max", self.charge_max),
            ("discharge_max", self.discharge_max),
            ("storage_cap", self.storage_cap),
            ("storage_init", self.storage_init),
        ];
        for (name, v) in scalars {
            if !v.is_finite() || v < 0.0 {
                return Err(bad(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        for (name, profile) in [
            ("inelastic", &self.inelastic),
            ("renewable", &self.renewable),
        ] {
            if let Some(v) = profile.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(bad(format!(
                    "{name} entries must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.elastic_min > self.elastic_max {
            return Err(bad(format!(
                "elastic_min {} exceeds elastic_max {}",
                self.elastic_min, self.elastic_max
            )));
        }
        if self.storage_init > self.storage_cap {
            return Err(bad(format!(
                "storage_init {} exceeds storage_cap {}",
                self.storage_init, self.storage_cap
            )));
        }
        for (name, eff) in [
            ("eff_charge", self.eff_charge),
            ("eff_discharge", self.eff_discharge),
        ] {
            if !(eff > 0.0 && eff <= 1.0) {
                return Err(bad(format!("{name} must lie in (0, 1], got {eff}")));
            }
        }
        let lo = horizon as f64 * self.elastic_min;
        let hi = horizon as f64 * self.elastic_max;
        let slack = FEASIBILITY_TOL * (1.0 + self.elastic_total);
        if self.elastic_total < lo - slack || self.elastic_total > hi + slack {
            return Err(Error::InfeasibleElasticBudget {
                prosumer: index,
                total: self.elastic_total,
                min: lo,
                max: hi,
            });
        }
        Ok(())
    }

    /// Multiplies every energy quantity by `c`; efficiencies are unchanged.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            inelastic: self.inelastic.iter().map(|v| v * c).collect(),
            renewable: self.renewable.iter().map(|v| v * c).collect(),
            elastic_total: self.elastic_total * c,
            elastic_min: self.elastic_min * c,
            elastic_max: self.elastic_max * c,
            charge_max: self.charge_max * c,
            discharge_max: self.discharge_max * c,
            storage_cap: self.storage_cap * c,
            storage_init: self.storage_init * c,
            eff_charge: self.eff_charge,
            eff_discharge: self.eff_discharge,
        }
    }
}

/// One prosumer's decisions over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub elastic: Vec<f64>,
    pub charge: Vec<f64>,
    pub discharge: Vec<f64>,
    /// Length T + 1.
    pub storage: Vec<f64>,
    pub net_demand: Vec<f64>,
}

impl Schedule {
    /// Builds the dependent quantities (storage, net demand) from the three
    /// decision vectors.
    pub fn from_decisions(
        params: &ProsumerParams,
        elastic: Vec<f64>,
        charge: Vec<f64>,
        discharge: Vec<f64>,
    ) -> Result<Self> {
        let storage = storage_trajectory(params, &charge, &discharge)?;
        let net_demand = net_demand(params, &elastic, &charge, &discharge)?;
        Ok(Self {
            elastic,
            charge,
            discharge,
            storage,
            net_demand,
        })
    }

    /// Like [`Schedule::from_decisions`], but first removes solver round-off:
    /// decisions are clipped into their boxes and the elastic vector is
    /// corrected so that it sums to the budget.
    pub fn polished(
        params: &ProsumerParams,
        mut elastic: Vec<f64>,
        mut charge: Vec<f64>,
        mut discharge: Vec<f64>,
    ) -> Result<Self> {
        check_len("elastic", params.horizon(), elastic.len())?;
        for e in &mut elastic {
            *e = e.clamp(params.elastic_min, params.elastic_max);
        }
        rebalance(&mut elastic, params);
        for x in &mut charge {
            *x = x.clamp(0.0, params.charge_max);
        }
        for y in &mut discharge {
            *y = y.clamp(0.0, params.discharge_max);
        }
        Self::from_decisions(params, elastic, charge, discharge)
    }

    /// The do-nothing schedule: elastic energy spread evenly, storage idle.
    pub fn idle(params: &ProsumerParams) -> Self {
        let horizon = params.horizon();
        let elastic = vec![params.elastic_total / horizon as f64; horizon];
        Self::from_decisions(params, elastic, vec![0.0; horizon], vec![0.0; horizon])
            .expect("idle schedule has consistent lengths")
    }
}

/// Shifts `elastic` inside its box so that its sum equals the budget.
/// Corrections are spread in proportion to the available headroom.
fn rebalance(elastic: &mut [f64], params: &ProsumerParams) {
    let gap = params.elastic_total - elastic.iter().sum::<f64>();
    if gap == 0.0 {
        return;
    }
    let room: Vec<f64> = elastic
        .iter()
        .map(|&e| {
            if gap > 0.0 {
                params.elastic_max - e
            } else {
                e - params.elastic_min
            }
        })
        .collect();
    let total_room: f64 = room.iter().sum();
    if total_room <= 0.0 {
        return;
    }
    let share = (gap.abs() / total_room).min(1.0);
    for (e, r) in elastic.iter_mut().zip(&room) {
        *e += gap.signum() * share * r;
    }
}

/// Algorithm hyperparameters carried with a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    /// Synchronous ADMM penalty.
    pub rho: f64,
    /// Asynchronous ADMM proximal weight.
    pub gamma: f64,
    /// Asynchronous relaxation step, held constant.
    pub eta: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub max_events: usize,
    /// Threshold on the moving-average fixed-point residual (asynchronous).
    pub async_tol: f64,
    /// Seed for simulated compute times.
    pub seed: u64,
    /// Median simulated prosumer compute time, seconds.
    pub compute_median: f64,
    /// Log-scale spread of simulated compute times.
    pub compute_sigma: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            rho: 0.5,
            gamma: 0.5,
            eta: 0.5,
            eps_abs: 1e-5,
            eps_rel: 1e-5,
            max_iter: 200,
            max_events: 20_000,
            async_tol: 1e-4,
            seed: 0,
            compute_median: 1.0,
            compute_sigma: 0.5,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return fail(format!("rho must be positive, got {}", self.rho));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return fail(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return fail(format!("eta must lie in (0, 1), got {}", self.eta));
        }
        if !(self.eps_abs >= 0.0 && self.eps_rel >= 0.0 && self.async_tol >= 0.0) {
            return fail("tolerances must be non-negative".into());
        }
        if !(self.compute_median > 0.0 && self.compute_sigma >= 0.0) {
            return fail("compute-time median must be positive and sigma non-negative".into());
        }
        Ok(())
    }
}

/// A full problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub horizon: usize,
    /// Net load in the last slot of the previous day.
    pub prev_net_load: f64,
    pub hyper: HyperParams,
    pub prosumers: Vec<ProsumerParams>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.prosumers.is_empty() {
            return Err(Error::InvalidScenario(
                "at least one prosumer is required".into(),
            ));
        }
        if self.horizon < 2 {
            return Err(Error::InvalidScenario(format!(
                "horizon must be at least 2, got {}",
                self.horizon
            )));
        }
        if !self.prev_net_load.is_finite() {
            return Err(Error::InvalidScenario(
                "prev_net_load must be finite".into(),
            ));
        }
        for (i, p) in self.prosumers.iter().enumerate() {
            p.validate(i, self.horizon)?;
        }
        self.hyper.validate()
    }

    pub fn len(&self) -> usize {
        self.prosumers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prosumers.is_empty()
    }

    /// Multiplies every energy quantity (including `prev_net_load`) by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            horizon: self.horizon,
            prev_net_load: self.prev_net_load * c,
            hyper: self.hyper.clone(),
            prosumers: self.prosumers.iter().map(|p| p.scaled(c)).collect(),
        }
    }

    pub fn idle_demands(&self) -> Profiles {
        self.prosumers
            .iter()
            .map(|p| Schedule::idle(p).net_demand)
            .collect()
    }
}

/// Schedules for the whole fleet plus the system-level quantities they imply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSolution {
    pub schedules: Vec<Schedule>,
    pub net_load: Vec<f64>,
    pub ramps: Vec<f64>,
    pub peak_ramp: f64,
}

impl SystemSolution {
    pub fn from_schedules(schedules: Vec<Schedule>, prev_net_load: f64) -> Result<Self> {
        let demands: Vec<&[f64]> = schedules.iter().map(|s| s.net_demand.as_slice()).collect();
        let net_load = net_load(&demands)?;
        let ramps = ramp_vector(&net_load, prev_net_load);
        let peak_ramp = peak_ramp(&ramps);
        Ok(Self {
            schedules,
            net_load,
            ramps,
            peak_ramp,
        })
    }
}

/// Grid-side net demand `P + e + x − β_d·y − W` of one prosumer.
pub fn net_demand(
    params: &ProsumerParams,
    elastic: &[f64],
    charge: &[f64],
    discharge: &[f64],
) -> Result<Vec<f64>> {
    let t = params.horizon();
    check_len("renewable", t, params.renewable.len())?;
    check_len("elastic", t, elastic.len())?;
    check_len("charge", t, charge.len())?;
    check_len("discharge", t, discharge.len())?;
    Ok((0..t)
        .map(|i| {
            params.inelastic[i] + elastic[i] + charge[i]
                - params.eff_discharge * discharge[i]
                - params.renewable[i]
        })
        .collect())
}

/// Storage levels `s[0] = s_init`, `s[t+1] = s[t] + β_c·x[t] − y[t]`.
pub fn storage_trajectory(
    params: &ProsumerParams,
    charge: &[f64],
    discharge: &[f64],
) -> Result<Vec<f64>> {
    check_len("discharge", charge.len(), discharge.len())?;
    let mut levels = Vec::with_capacity(charge.len() + 1);
    let mut s = params.storage_init;
    levels.push(s);
    for (x, y) in charge.iter().zip(discharge) {
        s += params.eff_charge * x - y;
        levels.push(s);
    }
    Ok(levels)
}

/// Element-wise sum of the prosumers' net demands.
pub fn net_load<V: AsRef<[f64]>>(demands: &[V]) -> Result<Vec<f64>> {
    let first = demands
        .first()
        .ok_or_else(|| Error::InvalidScenario("net load of an empty fleet".into()))?;
    let t = first.as_ref().len();
    let mut total = vec![0.0; t];
    for d in demands {
        let d = d.as_ref();
        check_len("net demand", t, d.len())?;
        for (acc, v) in total.iter_mut().zip(d) {
            *acc += v;
        }
    }
    Ok(total)
}

/// Slot-to-slot ramps; the first ramp is taken against `prev_net_load`.
pub fn ramp_vector(net_load: &[f64], prev_net_load: f64) -> Vec<f64> {
    let mut prev = prev_net_load;
    net_load
        .iter()
        .map(|&l| {
            let r = l - prev;
            prev = l;
            r
        })
        .collect()
}

/// Infinity norm of the ramp vector.
pub fn peak_ramp(ramps: &[f64]) -> f64 {
    ramps.iter().fold(0.0, |m, r| m.max(r.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    Shape,
    ElasticLower,
    ElasticUpper,
    ElasticBalance,
    ChargeLower,
    ChargeUpper,
    DischargeLower,
    DischargeUpper,
    StorageLower,
    StorageUpper,
    StorageInit,
    StorageRecursion,
    NetDemandIdentity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ConstraintKind,
    /// Slot (or storage index) where it occurs; `None` for whole-horizon constraints.
    pub slot: Option<usize>,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn worst(&self) -> f64 {
        self.violations.iter().fold(0.0, |m, v| m.max(v.magnitude))
    }

    pub fn of_kind(&self, kind: ConstraintKind) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(move |v| v.kind == kind)
    }
}

/// Lists every constraint of the prosumer's feasible set that `sched`
/// violates by more than `tol`.
pub fn check_feasible(params: &ProsumerParams, sched: &Schedule, tol: f64) -> FeasibilityReport {
    let t = params.horizon();
    let mut out = Vec::new();
    let mut push = |kind, slot, magnitude: f64| {
        if magnitude > tol || magnitude.is_nan() {
            out.push(Violation {
                kind,
                slot,
                magnitude,
            });
        }
    };

    let shapes = [
        sched.elastic.len() == t,
        sched.charge.len() == t,
        sched.discharge.len() == t,
        sched.net_demand.len() == t,
        sched.storage.len() == t + 1,
        params.renewable.len() == t,
    ];
    if shapes.iter().any(|ok| !ok) {
        push(ConstraintKind::Shape, None, f64::INFINITY);
        return FeasibilityReport { violations: out };
    }

    for (i, &e) in sched.elastic.iter().enumerate() {
        push(
            ConstraintKind::ElasticLower,
            Some(i),
            params.elastic_min - e,
        );
        push(
            ConstraintKind::ElasticUpper,
            Some(i),
            e - params.elastic_max,
        );
    }
    let balance = sched.elastic.iter().sum::<f64>() - params.elastic_total;
    push(ConstraintKind::ElasticBalance, None, balance.abs());

    for i in 0..t {
        push(ConstraintKind::ChargeLower, Some(i), -sched.charge[i]);
        push(
            ConstraintKind::ChargeUpper,
            Some(i),
            sched.charge[i] - params.charge_max,
        );
        push(ConstraintKind::DischargeLower, Some(i), -sched.discharge[i]);
        push(
            ConstraintKind::DischargeUpper,
            Some(i),
            sched.discharge[i] - params.discharge_max,
        );
    }

    push(
        ConstraintKind::StorageInit,
        Some(0),
        (sched.storage[0] - params.storage_init).abs(),
    );
    for (i, &s) in sched.storage.iter().enumerate() {
        push(ConstraintKind::StorageLower, Some(i), -s);
        push(
            ConstraintKind::StorageUpper,
            Some(i),
            s - params.storage_cap,
        );
    }
    for i in 0..t {
        let expected = sched.storage[i] + params.eff_charge * sched.charge[i] - sched.discharge[i];
        push(
            ConstraintKind::StorageRecursion,
            Some(i + 1),
            (sched.storage[i + 1] - expected).abs(),
        );
    }

    for i in 0..t {
        let expected = params.inelastic[i] + sched.elastic[i] + sched.charge[i]
            - params.eff_discharge * sched.discharge[i]
            - params.renewable[i];
        push(
            ConstraintKind::NetDemandIdentity,
            Some(i),
            (sched.net_demand[i] - expected).abs(),
        );
    }

    FeasibilityReport { violations: out }
}
