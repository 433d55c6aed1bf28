//! Seeded synthetic fleets and the unoptimized baseline.
//!
//! Slot numbers in [`GenConfig`] are 1-based (slot `t` is the hour ending at
//! `t:00`); the generated vectors are 0-based.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HyperParams, ProsumerParams, Scenario, Schedule, SystemSolution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_prosumers: usize,
    pub horizon: usize,
    /// Mean total daily demand per prosumer, kWh.
    pub daily_demand_mean: f64,
    /// Relative half-width of the uniform demand draw.
    pub spread: f64,
    pub elastic_fraction: f64,
    /// Inclusive slot range with the higher inelastic level.
    pub peak_hours: (usize, usize),
    /// Ratio of the peak-hour inelastic level to the off-peak level.
    pub peak_ratio: f64,
    /// Inclusive slot range supporting the half-sine renewable profile.
    pub renewable_hours: (usize, usize),
    pub renewable_fraction_of_demand: f64,
    pub storage_cap: f64,
    pub storage_init_fraction: f64,
    pub eff: f64,
    pub charge_max: f64,
    pub discharge_max: f64,
    pub rng_seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_prosumers: 100,
            horizon: 24,
            daily_demand_mean: 30.0,
            spread: 0.1,
            elastic_fraction: 0.3,
            peak_hours: (8, 22),
            peak_ratio: 1.5,
            renewable_hours: (10, 20),
            renewable_fraction_of_demand: 0.4,
            storage_cap: 4.0,
            storage_init_fraction: 0.25,
            eff: 0.9,
            charge_max: 1.0,
            discharge_max: 1.0,
            rng_seed: 7,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_prosumers == 0 || self.horizon < 2 {
            return fail("need at least one prosumer and two slots");
        }
        let fractions = [
            self.spread,
            self.elastic_fraction,
            self.renewable_fraction_of_demand,
            self.storage_init_fraction,
        ];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return fail("fractions must lie in [0, 1]");
        }
        if !(self.eff > 0.0 && self.eff <= 1.0) {
            return fail("efficiency must lie in (0, 1]");
        }
        let positive = [
            self.daily_demand_mean,
            self.peak_ratio,
            self.storage_cap,
            self.charge_max,
            self.discharge_max,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return fail("demand, peak ratio, storage and rate limits must be positive");
        }
        for (name, (a, b)) in [
            ("peak_hours", self.peak_hours),
            ("renewable_hours", self.renewable_hours),
        ] {
            if a < 1 || a > b || b > self.horizon {
                return Err(Error::InvalidConfig(format!(
                    "{name} ({a}, {b}) must satisfy 1 <= start <= end <= {}",
                    self.horizon
                )));
            }
        }
        if self.renewable_hours.0 == self.renewable_hours.1
            && self.renewable_fraction_of_demand > 0.0
        {
            return fail("renewable_hours must span at least two slots");
        }
        Ok(())
    }
}

/// Rounds to 9 significant digits so that serialized values are short and
/// round-trip exactly.
fn sig9(v: f64) -> f64 {
    format!("{v:.8e}").parse().expect("formatted float parses")
}

/// Two-level shape: `ratio` inside the inclusive peak range, 1 elsewhere.
fn inelastic_shape(cfg: &GenConfig) -> Vec<f64> {
    let (a, b) = cfg.peak_hours;
    (1..=cfg.horizon)
        .map(|t| {
            if (a..=b).contains(&t) {
                cfg.peak_ratio
            } else {
                1.0
            }
        })
        .collect()
}

/// Half-sine vanishing at both ends of the inclusive range, peak at the
/// middle slot.
fn renewable_shape(cfg: &GenConfig) -> Vec<f64> {
    let (a, b) = cfg.renewable_hours;
    (1..=cfg.horizon)
        .map(|t| {
            if (a..=b).contains(&t) && b > a {
                (PI * (t - a) as f64 / (b - a) as f64).sin().max(0.0)
            } else {
                0.0
            }
        })
        .collect()
}

fn scaled_to(shape: &[f64], total: f64) -> Vec<f64> {
    let sum: f64 = shape.iter().sum();
    if sum <= 0.0 {
        return vec![0.0; shape.len()];
    }
    shape.iter().map(|s| sig9(s * total / sum)).collect()
}

/// Draws a fleet. Identical configs produce identical scenarios.
pub fn generate(cfg: &GenConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let t_len = cfg.horizon;
    let load_shape = inelastic_shape(cfg);
    let sun_shape = renewable_shape(cfg);
    let lo = cfg.daily_demand_mean * (1.0 - cfg.spread);
    let hi = cfg.daily_demand_mean * (1.0 + cfg.spread);

    let prosumers = (0..cfg.n_prosumers)
        .map(|_| {
            let total = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            let elastic_total = sig9(cfg.elastic_fraction * total);
            let storage_cap = sig9(cfg.storage_cap);
            ProsumerParams {
                inelastic: scaled_to(&load_shape, total - elastic_total),
                renewable: scaled_to(&sun_shape, cfg.renewable_fraction_of_demand * total),
                elastic_total,
                elastic_min: 0.0,
                elastic_max: sig9(2.0 * elastic_total / t_len as f64),
                charge_max: sig9(cfg.charge_max),
                discharge_max: sig9(cfg.discharge_max),
                storage_cap,
                storage_init: sig9(cfg.storage_init_fraction * storage_cap),
                eff_charge: cfg.eff,
                eff_discharge: cfg.eff,
            }
        })
        .collect();

    let mut sc = Scenario {
        horizon: t_len,
        prev_net_load: 0.0,
        hyper: HyperParams {
            seed: cfg.rng_seed,
            ..HyperParams::default()
        },
        prosumers,
    };
    let base = baseline_schedule(&sc)?;
    sc.prev_net_load = sig9(base.net_load[t_len - 1]);
    sc.validate()?;
    Ok(sc)
}

/// Elastic energy split in proportion to the inelastic profile, clipped to
/// the per-slot bounds with the excess redistributed.
fn proportional_elastic(p: &ProsumerParams) -> Vec<f64> {
    let t_len = p.horizon();
    let total_weight: f64 = p.inelastic.iter().sum();
    let weights: Vec<f64> = if total_weight > 0.0 {
        p.inelastic.clone()
    } else {
        vec![1.0; t_len]
    };
    let fill = |scale: f64| -> Vec<f64> {
        weights
            .iter()
            .map(|w| (scale * w).clamp(p.elastic_min, p.elastic_max))
            .collect()
    };
    let sum = |v: &[f64]| v.iter().sum::<f64>();
    // Σ clamp(λ·w) is monotone in λ; bisect for the budget
    let mut lo = 0.0;
    let mut hi = 1.0;
    while sum(&fill(hi)) < p.elastic_total && hi < 1e12 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sum(&fill(mid)) < p.elastic_total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    fill(hi)
}

/// The no-optimization counterfactual: storage idle, elastic energy shaped
/// like the inelastic load, renewable consumed as available.
pub fn baseline_schedule(sc: &Scenario) -> Result<SystemSolution> {
    let schedules = sc
        .prosumers
        .iter()
        .map(|p| {
            let t_len = p.horizon();
            Schedule::polished(
                p,
                proportional_elastic(p),
                vec![0.0; t_len],
                vec![0.0; t_len],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    SystemSolution::from_schedules(schedules, sc.prev_net_load)
}
