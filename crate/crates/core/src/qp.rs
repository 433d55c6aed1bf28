//! Convex quadratic programs in the form
//!
//! ```text
//!   minimize    ½ xᵀQx + qᵀx
//!   subject to  A x  = b
//!               G x <= h
//! ```
//!
//! Every subproblem in the crate (the epigraph LP, the aggregator and
//! prosumer updates) is expressed as a [`QpProblem`]. Solving is delegated to
//! clarabel's interior-point method; the returned multipliers follow the
//! sign convention `Qx + q + Aᵀy + Gᵀλ = 0`, `λ >= 0`.
//!
//! [`kkt_residuals`] checks a solution against the problem data directly and
//! does not trust anything the backend reports.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: u32 = 200;

/// Regularization floor used when testing Q for positive semidefiniteness.
const PSD_FLOOR: f64 = 1e-9;

/// Sparse matrix in triplet form. Repeated entries are summed.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self::new(nrows, ncols)
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::new(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.push(i, i, v);
        }
        m
    }

    pub fn from_dense(rows: &[Vec<f64>], ncols: usize) -> Self {
        let mut m = Self::new(rows.len(), ncols);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), ncols, "ragged dense matrix");
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    m.push(i, j, v);
                }
            }
        }
        m
    }

    /// Appends an entry. Panics when the index is out of range.
    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        assert!(
            row < self.nrows && col < self.ncols,
            "entry ({row}, {col}) outside {}x{}",
            self.nrows,
            self.ncols
        );
        if val != 0.0 {
            self.rows.push(row);
            self.cols.push(col);
            self.vals.push(val);
        }
    }

    /// Appends a new empty row and returns its index.
    pub fn add_row(&mut self) -> usize {
        self.nrows += 1;
        self.nrows - 1
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .zip(&self.cols)
            .zip(&self.vals)
            .map(|((&r, &c), &v)| (r, c, v))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        for (r, c, v) in self.triplets() {
            y[r] += v * x[c];
        }
        y
    }

    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for (r, c, v) in self.triplets() {
            y[c] += v * x[r];
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.triplets() {
            d[r][c] += v;
        }
        d
    }

    fn is_diagonal(&self) -> bool {
        self.triplets().all(|(r, c, _)| r == c)
    }
}

/// A validated convex QP.
#[derive(Debug, Clone)]
pub struct QpProblem {
    quad: SparseMatrix,
    lin: Vec<f64>,
    eq_mat: SparseMatrix,
    eq_rhs: Vec<f64>,
    ineq_mat: SparseMatrix,
    ineq_rhs: Vec<f64>,
}

impl QpProblem {
    /// Checks dimensions, symmetry and positive semidefiniteness of `quad`.
    pub fn new(
        quad: SparseMatrix,
        lin: Vec<f64>,
        eq_mat: SparseMatrix,
        eq_rhs: Vec<f64>,
        ineq_mat: SparseMatrix,
        ineq_rhs: Vec<f64>,
    ) -> Result<Self> {
        let n = lin.len();
        let dims = [
            ("quad rows", quad.nrows(), n),
            ("quad cols", quad.ncols(), n),
            ("eq_mat cols", eq_mat.ncols(), n),
            ("eq_rhs", eq_rhs.len(), eq_mat.nrows()),
            ("ineq_mat cols", ineq_mat.ncols(), n),
            ("ineq_rhs", ineq_rhs.len(), ineq_mat.nrows()),
        ];
        for (what, got, want) in dims {
            if got != want {
                return Err(Error::InvalidQp(format!(
                    "{what}: expected {want}, got {got}"
                )));
            }
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !(finite(&lin) && finite(&eq_rhs) && finite(&ineq_rhs))
            || !quad
                .triplets()
                .chain(eq_mat.triplets())
                .chain(ineq_mat.triplets())
                .all(|(_, _, v)| v.is_finite())
        {
            return Err(Error::InvalidQp("non-finite problem data".into()));
        }
        check_psd(&quad)?;
        Ok(Self {
            quad,
            lin,
            eq_mat,
            eq_rhs,
            ineq_mat,
            ineq_rhs,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.lin.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn quad(&self) -> &SparseMatrix {
        &self.quad
    }

    pub fn lin(&self) -> &[f64] {
        &self.lin
    }

    pub fn eq_mat(&self) -> &SparseMatrix {
        &self.eq_mat
    }

    pub fn eq_rhs(&self) -> &[f64] {
        &self.eq_rhs
    }

    pub fn ineq_mat(&self) -> &SparseMatrix {
        &self.ineq_mat
    }

    pub fn ineq_rhs(&self) -> &[f64] {
        &self.ineq_rhs
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let qx = self.quad.mul_vec(x);
        0.5 * dot(x, &qx) + dot(&self.lin, x)
    }

    /// Lagrangian `f(x) + yᵀ(Ax − b) + λᵀ(Gx − h)`.
    pub fn lagrangian(&self, x: &[f64], eq_duals: &[f64], ineq_duals: &[f64]) -> f64 {
        let ax = self.eq_mat.mul_vec(x);
        let gx = self.ineq_mat.mul_vec(x);
        let eq: f64 = eq_duals
            .iter()
            .zip(ax.iter().zip(&self.eq_rhs))
            .map(|(y, (a, b))| y * (a - b))
            .sum();
        let ineq: f64 = ineq_duals
            .iter()
            .zip(gx.iter().zip(&self.ineq_rhs))
            .map(|(l, (g, h))| l * (g - h))
            .sum();
        self.objective(x) + eq + ineq
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_psd(quad: &SparseMatrix) -> Result<()> {
    if quad.is_diagonal() {
        let mut diag = vec![0.0; quad.nrows()];
        for (r, _, v) in quad.triplets() {
            diag[r] += v;
        }
        return match diag.iter().position(|&v| v < 0.0) {
            Some(i) => Err(Error::InvalidQp(format!(
                "quad has negative diagonal entry at {i}"
            ))),
            None => Ok(()),
        };
    }
    let mut a = quad.to_dense();
    let n = a.len();
    let scale = a.iter().flatten().fold(1.0_f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in 0..i {
            if (a[i][j] - a[j][i]).abs() > 1e-12 * scale {
                return Err(Error::InvalidQp(format!(
                    "quad is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    // Cholesky of Q + floor·I; failure means a direction of negative curvature.
    let floor = PSD_FLOOR * scale;
    for i in 0..n {
        a[i][i] += floor;
    }
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if d <= 0.0 {
            return Err(Error::InvalidQp("quad is not positive semidefinite".into()));
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

impl QpStatus {
    pub fn is_optimal(self) -> bool {
        self == QpStatus::Optimal
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub primal: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub ineq_duals: Vec<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: u32,
}

impl QpSolution {
    /// Returns the solution when optimal, otherwise a [`Error::SolverFailed`]
    /// labelled with `context`.
    pub fn require_optimal(self, context: impl Into<String>) -> Result<Self> {
        if self.status.is_optimal() {
            Ok(self)
        } else {
            Err(Error::SolverFailed {
                context: context.into(),
                status: self.status,
            })
        }
    }
}

/// Solves `p` to tolerance `tol` (gap and feasibility) in at most `max_iter`
/// interior-point iterations. Deterministic for identical input.
pub fn solve_qp(p: &QpProblem, tol: f64, max_iter: u32) -> Result<QpSolution> {
    let n = p.num_vars();
    let me = p.num_eq();
    let mi = p.num_ineq();

    // clarabel reads the upper triangle of P
    let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
    for (r, c, v) in p.quad.triplets() {
        if r <= c {
            pi.push(r);
            pj.push(c);
            pv.push(v);
        }
    }
    let pmat = CscMatrix::new_from_triplets(n, n, pi, pj, pv);

    let mut ai = Vec::with_capacity(p.eq_mat.nnz() + p.ineq_mat.nnz());
    let mut aj = Vec::with_capacity(ai.capacity());
    let mut av = Vec::with_capacity(ai.capacity());
    for (r, c, v) in p.eq_mat.triplets() {
        ai.push(r);
        aj.push(c);
        av.push(v);
    }
    for (r, c, v) in p.ineq_mat.triplets() {
        ai.push(me + r);
        aj.push(c);
        av.push(v);
    }
    let mut b: Vec<f64> = p.eq_rhs.iter().chain(&p.ineq_rhs).copied().collect();
    let mut cones = Vec::new();
    if me > 0 {
        cones.push(SupportedConeT::ZeroConeT(me));
    }
    if mi > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(mi));
    }
    let mut m = me + mi;
    if m == 0 {
        // the backend needs at least one constraint row: 0ᵀx <= 1
        b.push(1.0);
        cones.push(SupportedConeT::NonnegativeConeT(1));
        m = 1;
    }
    let amat = CscMatrix::new_from_triplets(m, n, ai, aj, av);

    let settings = DefaultSettings {
        verbose: false,
        max_iter,
        tol_gap_abs: tol,
        tol_gap_rel: tol,
        tol_feas: tol,
        max_threads: 1,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&pmat, &p.lin, &amat, &b, &cones, settings)
        .map_err(|e| Error::Backend(format!("{e:?}")))?;
    solver.solve();
    let sol = &solver.solution;

    let status = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => QpStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            QpStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => QpStatus::Unbounded,
        _ => QpStatus::IterLimit,
    };
    let primal = sol.x.clone();
    let eq_duals = sol.z[..me].to_vec();
    let ineq_duals = sol.z[me..me + mi].to_vec();
    let objective = p.objective(&primal);
    Ok(QpSolution {
        primal,
        eq_duals,
        ineq_duals,
        objective,
        status,
        iterations: sol.iterations,
    })
}

/// Infinity norms of the four KKT residual blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `‖Qx + q + Aᵀy + Gᵀλ‖∞`
    pub stationarity: f64,
    /// `‖Ax − b‖∞`
    pub primal_eq: f64,
    /// `‖max(Gx − h, 0)‖∞`
    pub primal_ineq: f64,
    /// `max_i |λ_i (h − Gx)_i|`, together with any negative multiplier.
    pub comp_slack: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_eq)
            .max(self.primal_ineq)
            .max(self.comp_slack)
    }
}

pub fn kkt_residuals(p: &QpProblem, s: &QpSolution) -> KktResiduals {
    let x = &s.primal;
    let inf = |v: &mut dyn Iterator<Item = f64>| v.fold(0.0_f64, |m, a| m.max(a.abs()));

    let mut grad = p.quad.mul_vec(x);
    for (g, q) in grad.iter_mut().zip(&p.lin) {
        *g += q;
    }
    for (g, a) in grad.iter_mut().zip(p.eq_mat.tr_mul_vec(&s.eq_duals)) {
        *g += a;
    }
    for (g, a) in grad.iter_mut().zip(p.ineq_mat.tr_mul_vec(&s.ineq_duals)) {
        *g += a;
    }
    let stationarity = inf(&mut grad.into_iter());

    let ax = p.eq_mat.mul_vec(x);
    let primal_eq = inf(&mut ax.iter().zip(&p.eq_rhs).map(|(a, b)| a - b));

    let gx = p.ineq_mat.mul_vec(x);
    let slack: Vec<f64> = p.ineq_rhs.iter().zip(&gx).map(|(h, g)| h - g).collect();
    let primal_ineq = slack.iter().fold(0.0_f64, |m, &s| m.max(-s));
    let comp_slack = s
        .ineq_duals
        .iter()
        .zip(&slack)
        .fold(0.0_f64, |m, (&l, &sl)| m.max((l * sl).abs()).max(-l));

    KktResiduals {
        stationarity,
        primal_eq,
        primal_ineq,
        comp_slack,
    }
}
