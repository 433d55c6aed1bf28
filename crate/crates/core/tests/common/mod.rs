//! Independent brute-force oracles and fixtures shared by the integration
//! and acceptance tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use peakramp::model::{HyperParams, ProsumerParams, Scenario};
use peakramp::qp::{QpProblem, SparseMatrix};

/// Box-constrained QP with one equality, kept in dense form for the oracle.
#[derive(Debug, Clone)]
pub struct BoxQp {
    pub q: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub a: Vec<f64>,
    pub b: f64,
}

impl BoxQp {
    /// `Q = MᵀM + 0.1 I`, box `[-1, 1]`-ish, equality through a point inside
    /// the box so the instance is always feasible.
    pub fn random(rng: &mut ChaCha8Rng, n: usize) -> Self {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let q = m.transpose() * &m + DMatrix::identity(n, n) * 0.1;
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let lo: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..-0.1)).collect();
        let hi: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.5)).collect();
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let inside: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| rng.gen_range(*l..*h))
            .collect();
        let b = a.iter().zip(&inside).map(|(a, x)| a * x).sum();
        let q = (0..n)
            .map(|i| (0..n).map(|j| q[(i, j)]).collect())
            .collect();
        Self { q, c, lo, hi, a, b }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let n = self.n();
        let mut v = 0.0;
        for i in 0..n {
            v += self.c[i] * x[i];
            for j in 0..n {
                v += 0.5 * x[i] * self.q[i][j] * x[j];
            }
        }
        v
    }

    pub fn to_problem(&self) -> QpProblem {
        let n = self.n();
        let mut g = Vec::new();
        let mut h = Vec::new();
        for i in 0..n {
            let mut row = vec![0.0; n];
            row[i] = 1.0;
            g.push(row.clone());
            h.push(self.hi[i]);
            row[i] = -1.0;
            g.push(row);
            h.push(-self.lo[i]);
        }
        QpProblem::new(
            SparseMatrix::from_dense(&self.q, n),
            self.c.clone(),
            SparseMatrix::from_dense(std::slice::from_ref(&self.a), n),
            vec![self.b],
            SparseMatrix::from_dense(&g, n),
            h,
        )
        .expect("well-formed instance")
    }

    /// Enumerates every assignment of {free, at lower, at upper} to the
    /// variables, solves the equality-constrained KKT system of the free
    /// block and keeps the best primal-feasible candidate.
    pub fn active_set_oracle(&self) -> Option<f64> {
        let n = self.n();
        let mut best: Option<f64> = None;
        let mut state = vec![0u8; n];
        loop {
            if let Some(x) = self.solve_with_state(&state) {
                let v = self.objective(&x);
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
            // next assignment in base 3
            let mut i = 0;
            while i < n && state[i] == 2 {
                state[i] = 0;
                i += 1;
            }
            if i == n {
                break;
            }
            state[i] += 1;
        }
        best
    }

    fn solve_with_state(&self, state: &[u8]) -> Option<Vec<f64>> {
        let n = self.n();
        let mut x = vec![0.0; n];
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 0).collect();
        for i in 0..n {
            match state[i] {
                1 => x[i] = self.lo[i],
                2 => x[i] = self.hi[i],
                _ => {}
            }
        }
        let fixed_dot: f64 = (0..n)
            .filter(|&i| state[i] != 0)
            .map(|i| self.a[i] * x[i])
            .sum();
        let k = free.len();
        let eq_active = free.iter().any(|&i| self.a[i].abs() > 1e-12);
        if !eq_active && (fixed_dot - self.b).abs() > 1e-9 {
            return None;
        }
        let size = k + usize::from(eq_active);
        if size > 0 {
            let mut m = DMatrix::zeros(size, size);
            let mut rhs = DVector::zeros(size);
            for (r, &i) in free.iter().enumerate() {
                for (s, &j) in free.iter().enumerate() {
                    m[(r, s)] = self.q[i][j];
                }
                let fixed_grad: f64 = (0..n)
                    .filter(|&j| state[j] != 0)
                    .map(|j| self.q[i][j] * x[j])
                    .sum();
                rhs[r] = -self.c[i] - fixed_grad;
                if eq_active {
                    m[(r, k)] = self.a[i];
                    m[(k, r)] = self.a[i];
                }
            }
            if eq_active {
                rhs[k] = self.b - fixed_dot;
            }
            let sol = m.lu().solve(&rhs)?;
            for (r, &i) in free.iter().enumerate() {
                x[i] = sol[r];
            }
        }
        let inside = (0..n).all(|i| x[i] >= self.lo[i] - 1e-9 && x[i] <= self.hi[i] + 1e-9);
        let eq_ok = (self.a.iter().zip(&x).map(|(a, x)| a * x).sum::<f64>() - self.b).abs() < 1e-7;
        (inside && eq_ok).then_some(x)
    }
}

/// `min cᵀx s.t. Gx ≤ h` with a bounded feasible set.
#[derive(Debug, Clone)]
pub struct DenseLp {
    pub c: Vec<f64>,
    pub g: Vec<Vec<f64>>,
    pub h: Vec<f64>,
}

impl DenseLp {
    /// Box `[-1, 1]ⁿ` plus `extra` random cuts that keep the origin feasible.
    pub fn random(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> Self {
        let c = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = Vec::new();
        let mut h = Vec::new();
        for i in 0..n {
            let mut row = vec![0.0; n];
            row[i] = 1.0;
            g.push(row.clone());
            h.push(1.0);
            row[i] = -1.0;
            g.push(row);
            h.push(1.0);
        }
        for _ in 0..extra {
            g.push((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
            h.push(rng.gen_range(0.2..1.0));
        }
        Self { c, g, h }
    }

    pub fn to_problem(&self) -> QpProblem {
        let n = self.c.len();
        QpProblem::new(
            SparseMatrix::zeros(n, n),
            self.c.clone(),
            SparseMatrix::zeros(0, n),
            vec![],
            SparseMatrix::from_dense(&self.g, n),
            self.h.clone(),
        )
        .expect("well-formed LP")
    }

    /// Best objective over all feasible basic solutions.
    pub fn vertex_oracle(&self) -> f64 {
        let n = self.c.len();
        let m = self.g.len();
        let mut best = f64::INFINITY;
        let mut subset: Vec<usize> = (0..n).collect();
        loop {
            let a = DMatrix::from_fn(n, n, |r, s| self.g[subset[r]][s]);
            let rhs = DVector::from_iterator(n, subset.iter().map(|&r| self.h[r]));
            if a.determinant().abs() > 1e-10 {
                if let Some(x) = a.lu().solve(&rhs) {
                    let feasible = self.g.iter().zip(&self.h).all(|(row, h)| {
                        row.iter().zip(x.iter()).map(|(g, x)| g * x).sum::<f64>() <= h + 1e-9
                    });
                    if feasible {
                        best = best.min(self.c.iter().zip(x.iter()).map(|(c, x)| c * x).sum());
                    }
                }
            }
            // next n-combination of 0..m
            let mut i = n;
            while i > 0 && subset[i - 1] == m - n + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            subset[i - 1] += 1;
            for j in i..n {
                subset[j] = subset[j - 1] + 1;
            }
        }
        best
    }
}

/// Two prosumers over three slots: one with elastic demand only, one with
/// elastic demand and a small battery. Sized so that a 0.05 kWh grid over
/// every decision is cheap to enumerate.
pub fn grid_fixture() -> Scenario {
    let a = ProsumerParams {
        inelastic: vec![0.925, 0.8, 1.0],
        renewable: vec![0.0, 0.4, 0.1],
        elastic_total: 0.3,
        elastic_min: 0.0,
        elastic_max: 0.2,
        charge_max: 0.0,
        discharge_max: 0.0,
        storage_cap: 0.0,
        storage_init: 0.0,
        eff_charge: 0.9,
        eff_discharge: 0.9,
    };
    let b = ProsumerParams {
        inelastic: vec![0.7, 0.6, 0.8],
        renewable: vec![0.0, 0.2, 0.1],
        elastic_total: 0.2,
        elastic_min: 0.0,
        elastic_max: 0.15,
        charge_max: 0.1,
        discharge_max: 0.1,
        storage_cap: 0.2,
        storage_init: 0.11,
        eff_charge: 0.9,
        eff_discharge: 0.9,
    };
    Scenario {
        horizon: 3,
        prev_net_load: 1.7,
        hyper: HyperParams::default(),
        prosumers: vec![a, b],
    }
}

/// Grid optimum of [`grid_fixture`], computed once by an independent script.
pub const GRID_FIXTURE_GRID_OPTIMUM: f64 = 0.36;
/// LP optimum of [`grid_fixture`], computed once by an independent LP solver.
pub const GRID_FIXTURE_LP_OPTIMUM: f64 = 0.3475;

fn grid_points(max: f64, step: f64) -> Vec<f64> {
    let k = (max / step).round() as usize;
    (0..=k).map(|i| i as f64 * step).collect()
}

/// Every net-demand vector reachable by one prosumer with all decisions on
/// a `step` grid (the last elastic slot absorbs the budget remainder).
pub fn grid_net_demands(p: &ProsumerParams, step: f64) -> Vec<Vec<f64>> {
    let t = p.horizon();
    let e_grid = grid_points(p.elastic_max, step);
    let x_grid = grid_points(p.charge_max, step);
    let y_grid = grid_points(p.discharge_max, step);
    let mut out = Vec::new();
    let mut e = vec![0.0; t];
    let mut x = vec![0.0; t];
    let mut y = vec![0.0; t];

    fn product(grid: &[f64], len: usize, f: &mut dyn FnMut(&[f64])) {
        let mut idx = vec![0usize; len];
        let mut v = vec![0.0; len];
        loop {
            for (k, &i) in idx.iter().enumerate() {
                v[k] = grid[i];
            }
            f(&v);
            let mut k = 0;
            while k < len && idx[k] + 1 == grid.len() {
                idx[k] = 0;
                k += 1;
            }
            if k == len {
                return;
            }
            idx[k] += 1;
        }
    }

    product(&e_grid, t - 1, &mut |head| {
        let last = p.elastic_total - head.iter().sum::<f64>();
        if last < p.elastic_min - 1e-9 || last > p.elastic_max + 1e-9 {
            return;
        }
        e[..t - 1].copy_from_slice(head);
        e[t - 1] = last;
        product(&x_grid, t, &mut |xs| {
            x.copy_from_slice(xs);
            product(&y_grid, t, &mut |ys| {
                y.copy_from_slice(ys);
                let mut s = p.storage_init;
                for k in 0..t {
                    s += p.eff_charge * x[k] - y[k];
                    if s < -1e-9 || s > p.storage_cap + 1e-9 {
                        return;
                    }
                }
                out.push(
                    (0..t)
                        .map(|k| {
                            p.inelastic[k] + e[k] + x[k] - p.eff_discharge * y[k] - p.renewable[k]
                        })
                        .collect(),
                );
            });
        });
    });
    out
}

/// Brute-force peak ramp over a `step` grid for a two-prosumer scenario.
pub fn grid_peak_ramp(sc: &Scenario, step: f64) -> f64 {
    assert_eq!(sc.len(), 2, "grid oracle enumerates exactly two prosumers");
    let a = grid_net_demands(&sc.prosumers[0], step);
    let b = grid_net_demands(&sc.prosumers[1], step);
    let mut best = f64::INFINITY;
    for da in &a {
        for db in &b {
            let mut prev = sc.prev_net_load;
            let mut peak: f64 = 0.0;
            for t in 0..sc.horizon {
                let l = da[t] + db[t];
                peak = peak.max((l - prev).abs());
                prev = l;
            }
            best = best.min(peak);
        }
    }
    best
}
