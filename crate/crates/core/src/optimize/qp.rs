//! Dense convex quadratic programming by a primal active-set method.
//!
//! Solves
//!
//! ```text
//!     minimize    ½ xᵀHx + fᵀx  (+ ½ρs² + ρs with slack)
//!     subject to  A_ineq x ≤ b_ineq (+ s·1)
//!                 A_eq x = b_eq
//!                 lb ≤ x ≤ ub,  s ≥ 0
//! ```
//!
//! The slack `s` is one scalar shared by every inequality row; equality
//! rows are never relaxed. Subproblems on the working set are solved in a
//! null-space basis with an eigen-decomposition of the reduced Hessian, so
//! positive semidefinite `H` is handled and rays of zero curvature are
//! followed until a constraint blocks them (or reported as unbounded).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::linalg::{dot, norm_inf, Mat};
use crate::{Error, Result};

pub const DEFAULT_SLACK_RHO: f64 = 1e6;

/// Slack above this value marks a solution as relaxed.
pub const RELAXED_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: Mat,
    pub f: Vec<f64>,
    pub a_ineq: Mat,
    pub b_ineq: Vec<f64>,
    pub a_eq: Mat,
    pub b_eq: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    /// penalty weight ρ of the shared slack, when relaxation is on
    pub slack: Option<f64>,
}

impl QpProblem {
    /// Unconstrained problem with infinite bounds.
    pub fn new(h: Mat, f: Vec<f64>) -> Self {
        let n = f.len();
        QpProblem {
            h,
            f,
            a_ineq: Mat::zeros(0, n),
            b_ineq: Vec::new(),
            a_eq: Mat::zeros(0, n),
            b_eq: Vec::new(),
            lb: vec![f64::NEG_INFINITY; n],
            ub: vec![f64::INFINITY; n],
            slack: None,
        }
    }

    pub fn with_ineq(mut self, a: Mat, b: Vec<f64>) -> Self {
        self.a_ineq = a;
        self.b_ineq = b;
        self
    }

    pub fn with_eq(mut self, a: Mat, b: Vec<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_bounds(mut self, lb: Vec<f64>, ub: Vec<f64>) -> Self {
        self.lb = lb;
        self.ub = ub;
        self
    }

    pub fn with_slack(mut self, rho: f64) -> Self {
        self.slack = Some(rho);
        self
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.h.rows != n || self.h.cols != n {
            return Err(Error::dim("qp H", n, self.h.rows));
        }
        if self.a_ineq.cols != n || self.a_ineq.rows != self.b_ineq.len() {
            return Err(Error::dim("qp inequality rows", self.a_ineq.rows, self.b_ineq.len()));
        }
        if self.a_eq.cols != n || self.a_eq.rows != self.b_eq.len() {
            return Err(Error::dim("qp equality rows", self.a_eq.rows, self.b_eq.len()));
        }
        if self.lb.len() != n || self.ub.len() != n {
            return Err(Error::dim("qp bounds", n, self.lb.len()));
        }
        let scale = 1.0 + self.h.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if self.h.max_abs_asymmetry() > 1e-12 * scale {
            return Err(Error::InvalidArgument("qp H must be symmetric".into()));
        }
        if self.lb.iter().zip(&self.ub).any(|(l, u)| l > u) {
            return Err(Error::InvalidArgument("qp bounds with lb > ub".into()));
        }
        if let Some(rho) = self.slack {
            if !(rho > 0.0) {
                return Err(Error::InvalidArgument("slack penalty must be > 0".into()));
            }
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.h.data) || !finite(&self.f) || !finite(&self.a_ineq.data) || !finite(&self.b_ineq)
        {
            return Err(Error::NonFinite("qp data".into()));
        }
        Ok(())
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        0.5 * self.h.quad_form(x) + dot(&self.f, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    /// optimal for the relaxed problem with slack above 1e-6
    Relaxed,
    Unbounded,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    /// magnitude of the most negative inequality multiplier
    pub dual: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.complementarity)
            .max(self.dual)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub slack: f64,
    pub status: QpStatus,
    /// `½xᵀHx + fᵀx`, without the slack penalty
    pub objective: f64,
    pub kkt: KktResidual,
    /// multipliers of the general inequality rows
    pub ineq_multipliers: Vec<f64>,
    pub eq_multipliers: Vec<f64>,
    pub iterations: usize,
}

/// Constraint rows `a·z ≤ b` (or `= b`) over the working variable `z`.
struct Rows {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    is_eq: Vec<bool>,
}

impl Rows {
    fn residual(&self, k: usize, z: &[f64]) -> f64 {
        dot(&self.a[k], z) - self.b[k]
    }
}

struct Core<'a> {
    h: &'a Mat,
    f: &'a [f64],
    rows: &'a Rows,
    max_iter: usize,
}

enum CoreOutcome {
    Done { z: Vec<f64>, lambda: Vec<f64>, iterations: usize },
    Unbounded { z: Vec<f64>, iterations: usize },
    MaxIter { z: Vec<f64>, lambda: Vec<f64>, iterations: usize },
}

pub fn solve_qp(qp: &QpProblem) -> Result<QpSolution> {
    qp.validate()?;
    let n = qp.dim();
    let slack = qp.slack;
    let nz = n + usize::from(slack.is_some());

    let mut h = Mat::zeros(nz, nz);
    for r in 0..n {
        h.row_mut(r)[..n].copy_from_slice(qp.h.row(r));
    }
    let mut f = qp.f.clone();
    if let Some(rho) = slack {
        h.set(n, n, rho);
        f.push(rho);
    }

    let mut rows = Rows {
        a: Vec::new(),
        b: Vec::new(),
        is_eq: Vec::new(),
    };
    let m = qp.a_ineq.rows;
    for j in 0..m {
        let mut a = qp.a_ineq.row(j).to_vec();
        if slack.is_some() {
            a.push(-1.0);
        }
        rows.a.push(a);
        rows.b.push(qp.b_ineq[j]);
        rows.is_eq.push(false);
    }
    let first_bound = rows.a.len();
    for i in 0..n {
        if qp.lb[i].is_finite() {
            let mut a = vec![0.0; nz];
            a[i] = -1.0;
            rows.a.push(a);
            rows.b.push(-qp.lb[i]);
            rows.is_eq.push(false);
        }
        if qp.ub[i].is_finite() {
            let mut a = vec![0.0; nz];
            a[i] = 1.0;
            rows.a.push(a);
            rows.b.push(qp.ub[i]);
            rows.is_eq.push(false);
        }
    }
    if slack.is_some() {
        let mut a = vec![0.0; nz];
        a[n] = -1.0;
        rows.a.push(a);
        rows.b.push(0.0);
        rows.is_eq.push(false);
    }
    let first_eq = rows.a.len();
    for j in 0..qp.a_eq.rows {
        let mut a = qp.a_eq.row(j).to_vec();
        if slack.is_some() {
            a.push(0.0);
        }
        rows.a.push(a);
        rows.b.push(qp.b_eq[j]);
        rows.is_eq.push(true);
    }
    let nrows = rows.a.len();
    let max_iter = 20 * (nz + nrows) + 200;

    // Starting point: bounds-clamped origin, slack covering the worst row.
    let mut z0 = vec![0.0; nz];
    for i in 0..n {
        z0[i] = 0.0f64.clamp(qp.lb[i], qp.ub[i]);
    }
    if slack.is_some() {
        let worst = (0..m)
            .map(|j| dot(qp.a_ineq.row(j), &z0[..n]) - qp.b_ineq[j])
            .fold(0.0, f64::max);
        z0[n] = worst;
    }
    let violation = |z: &[f64]| {
        (0..nrows)
            .map(|k| {
                let r = rows.residual(k, z);
                if rows.is_eq[k] {
                    r.abs()
                } else {
                    r.max(0.0)
                }
            })
            .fold(0.0, f64::max)
    };
    let feas_tol = 1e-9;
    if violation(&z0) > feas_tol {
        match phase_one(&rows, first_bound, first_eq, &z0, max_iter)? {
            Some(z) => z0 = z,
            None => {
                let x = z0[..n].to_vec();
                return Ok(QpSolution {
                    objective: qp.objective(&x),
                    x,
                    slack: 0.0,
                    status: QpStatus::Infeasible,
                    kkt: KktResidual::default(),
                    ineq_multipliers: vec![0.0; m],
                    eq_multipliers: vec![0.0; qp.a_eq.rows],
                    iterations: 0,
                });
            }
        }
    }

    let core = Core {
        h: &h,
        f: &f,
        rows: &rows,
        max_iter,
    };
    let outcome = core.run(z0);
    let (z, lambda, iterations, status) = match outcome {
        CoreOutcome::Done { z, lambda, iterations } => (z, lambda, iterations, QpStatus::Optimal),
        CoreOutcome::MaxIter { z, lambda, iterations } => (z, lambda, iterations, QpStatus::MaxIterations),
        CoreOutcome::Unbounded { z, iterations } => {
            let x = z[..n].to_vec();
            return Ok(QpSolution {
                objective: qp.objective(&x),
                x,
                slack: if slack.is_some() { z[n] } else { 0.0 },
                status: QpStatus::Unbounded,
                kkt: KktResidual::default(),
                ineq_multipliers: vec![0.0; m],
                eq_multipliers: vec![0.0; qp.a_eq.rows],
                iterations,
            });
        }
    };

    // KKT certificate over the full row set.
    let hz = h.mul_vec(&z);
    let mut stat: Vec<f64> = hz.iter().zip(&f).map(|(a, b)| a + b).collect();
    let mut kkt = KktResidual::default();
    for k in 0..nrows {
        let l = lambda[k];
        if l != 0.0 {
            for (s, a) in stat.iter_mut().zip(&rows.a[k]) {
                *s += l * a;
            }
        }
        let r = rows.residual(k, &z);
        if rows.is_eq[k] {
            kkt.primal = kkt.primal.max(r.abs());
        } else {
            kkt.primal = kkt.primal.max(r.max(0.0));
            kkt.complementarity = kkt.complementarity.max((l * r).abs());
            kkt.dual = kkt.dual.max((-l).max(0.0));
        }
    }
    kkt.stationarity = norm_inf(&stat);

    let x = z[..n].to_vec();
    let s = if slack.is_some() { z[n].max(0.0) } else { 0.0 };
    let status = if status == QpStatus::Optimal && s > RELAXED_SLACK {
        QpStatus::Relaxed
    } else {
        status
    };
    Ok(QpSolution {
        objective: qp.objective(&x),
        x,
        slack: s,
        status,
        kkt,
        ineq_multipliers: lambda[..m].to_vec(),
        eq_multipliers: lambda[first_eq..].to_vec(),
        iterations,
    })
}

/// Finds a feasible point by minimizing `t + ½δ‖z - z0‖²` over rows relaxed
/// by `t ≥ 0` (bound rows stay hard; `z0` already satisfies them).
fn phase_one(rows: &Rows, first_bound: usize, first_eq: usize, z0: &[f64], max_iter: usize) -> Result<Option<Vec<f64>>> {
    const DELTA: f64 = 1e-8;
    let nz = z0.len();
    let nt = nz + 1;
    let mut h = Mat::zeros(nt, nt);
    let mut f = vec![0.0; nt];
    for i in 0..nz {
        h.set(i, i, DELTA);
        f[i] = -DELTA * z0[i];
    }
    f[nz] = 1.0;
    let mut aug = Rows {
        a: Vec::new(),
        b: Vec::new(),
        is_eq: Vec::new(),
    };
    let mut t0: f64 = 0.0;
    let push = |a: Vec<f64>, b: f64, relax: bool, aug: &mut Rows| {
        let mut a = a;
        a.push(if relax { -1.0 } else { 0.0 });
        aug.a.push(a);
        aug.b.push(b);
        aug.is_eq.push(false);
    };
    for k in 0..rows.a.len() {
        let r = rows.residual(k, z0);
        if rows.is_eq[k] {
            t0 = t0.max(r.abs());
            push(rows.a[k].clone(), rows.b[k], true, &mut aug);
            push(rows.a[k].iter().map(|v| -v).collect(), -rows.b[k], true, &mut aug);
        } else {
            let relax = k < first_bound || (k >= first_bound && k < first_eq && r > 0.0);
            if relax {
                t0 = t0.max(r);
            }
            push(rows.a[k].clone(), rows.b[k], relax, &mut aug);
        }
    }
    let mut tn = vec![0.0; nt];
    tn[nz] = -1.0;
    push_raw(&mut aug, tn, 0.0);
    let mut start = z0.to_vec();
    start.push(t0);
    let core = Core {
        h: &h,
        f: &f,
        rows: &aug,
        max_iter,
    };
    let z = match core.run(start) {
        CoreOutcome::Done { z, .. } | CoreOutcome::MaxIter { z, .. } => z,
        CoreOutcome::Unbounded { .. } => {
            return Err(Error::Unbounded("qp phase one".into()));
        }
    };
    let scale = 1.0 + rows.b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if z[nz] > 1e-9 * scale {
        return Ok(None);
    }
    Ok(Some(z[..nz].to_vec()))
}

fn push_raw(rows: &mut Rows, a: Vec<f64>, b: f64) {
    rows.a.push(a);
    rows.b.push(b);
    rows.is_eq.push(false);
}

impl Core<'_> {
    fn run(&self, mut z: Vec<f64>) -> CoreOutcome {
        let rows = self.rows;
        let nz = z.len();
        let nrows = rows.a.len();
        // Initial working set: equalities, then active inequalities that add rank.
        let mut work: Vec<usize> = Vec::new();
        for k in (0..nrows).filter(|&k| rows.is_eq[k]) {
            if increases_rank(rows, &work, k) {
                work.push(k);
            }
        }
        for k in 0..nrows {
            if !rows.is_eq[k] && rows.residual(k, &z).abs() <= 1e-12 * (1.0 + rows.b[k].abs()) && increases_rank(rows, &work, k)
            {
                work.push(k);
            }
        }
        let hscale = 1.0 + self.h.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut iterations = 0;
        while iterations < self.max_iter {
            iterations += 1;
            let mut g = self.h.mul_vec(&z);
            for (gi, fi) in g.iter_mut().zip(self.f) {
                *gi += fi;
            }
            let gscale = 1.0 + norm_inf(&g);
            let basis = null_space(rows, &work, nz);
            let mut ray = false;
            let d: Vec<f64> = if basis.ncols() == 0 {
                vec![0.0; nz]
            } else {
                let hm = self.h.to_nalgebra();
                let hr = basis.transpose() * &hm * &basis;
                let gr = basis.transpose() * DVector::from_column_slice(&g);
                let eig = SymmetricEigen::new(hr);
                let tol = 1e-12 * hscale;
                let mut y = DVector::zeros(basis.ncols());
                let mut zero_curv = None;
                for i in 0..eig.eigenvalues.len() {
                    let v = eig.eigenvectors.column(i);
                    let c = v.dot(&gr);
                    if eig.eigenvalues[i] <= tol {
                        if c.abs() > 1e-12 * gscale && zero_curv.is_none() {
                            zero_curv = Some(-c.signum() * v.into_owned());
                        }
                    } else {
                        y -= (c / eig.eigenvalues[i]) * v;
                    }
                }
                if let Some(v) = zero_curv {
                    ray = true;
                    (&basis * v).iter().cloned().collect()
                } else {
                    (&basis * y).iter().cloned().collect()
                }
            };
            let zscale = 1.0 + norm_inf(&z);
            if !ray && norm_inf(&d) <= 1e-13 * zscale {
                let lambda_w = multipliers(rows, &work, &g);
                let lscale = 1.0 + lambda_w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let mut drop: Option<(usize, f64)> = None;
                for (pos, &k) in work.iter().enumerate() {
                    if rows.is_eq[k] {
                        continue;
                    }
                    let l = lambda_w[pos];
                    if l < -1e-10 * lscale && drop.is_none_or(|(_, best)| l < best) {
                        drop = Some((pos, l));
                    }
                }
                match drop {
                    None => {
                        let mut lambda = vec![0.0; nrows];
                        for (pos, &k) in work.iter().enumerate() {
                            lambda[k] = lambda_w[pos];
                        }
                        return CoreOutcome::Done { z, lambda, iterations };
                    }
                    Some((pos, _)) => {
                        work.remove(pos);
                        continue;
                    }
                }
            }
            let dnorm = norm_inf(&d);
            let mut alpha = if ray { f64::INFINITY } else { 1.0 };
            let mut blocking = None;
            for k in 0..nrows {
                if rows.is_eq[k] || work.contains(&k) {
                    continue;
                }
                let ad = dot(&rows.a[k], &d);
                if ad > 1e-14 * dnorm * (1.0 + norm_inf(&rows.a[k])) {
                    let step = (-rows.residual(k, &z) / ad).max(0.0);
                    if step < alpha {
                        alpha = step;
                        blocking = Some(k);
                    }
                }
            }
            if !alpha.is_finite() {
                return CoreOutcome::Unbounded { z, iterations };
            }
            for (zi, di) in z.iter_mut().zip(&d) {
                *zi += alpha * di;
            }
            if let Some(k) = blocking {
                work.push(k);
            }
        }
        let mut g = self.h.mul_vec(&z);
        for (gi, fi) in g.iter_mut().zip(self.f) {
            *gi += fi;
        }
        let lambda_w = multipliers(rows, &work, &g);
        let mut lambda = vec![0.0; nrows];
        for (pos, &k) in work.iter().enumerate() {
            lambda[k] = lambda_w[pos];
        }
        CoreOutcome::MaxIter { z, lambda, iterations }
    }
}

fn working_matrix(rows: &Rows, work: &[usize], nz: usize) -> DMatrix<f64> {
    DMatrix::from_fn(work.len(), nz, |r, c| rows.a[work[r]][c])
}

fn increases_rank(rows: &Rows, work: &[usize], k: usize) -> bool {
    let nz = rows.a[k].len();
    if work.len() >= nz {
        return false;
    }
    let mut with: Vec<usize> = work.to_vec();
    with.push(k);
    let a = working_matrix(rows, &with, nz);
    let sv = a.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    smin > 1e-10 * smax.max(1e-300)
}

/// Orthonormal basis of `{d : A_W d = 0}` as columns.
fn null_space(rows: &Rows, work: &[usize], nz: usize) -> DMatrix<f64> {
    if work.is_empty() {
        return DMatrix::identity(nz, nz);
    }
    let a = working_matrix(rows, work, nz);
    let ata = a.transpose() * &a;
    let eig = SymmetricEigen::new(ata);
    let emax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let cols: Vec<usize> = (0..nz)
        .filter(|&i| eig.eigenvalues[i] <= 1e-12 * emax)
        .collect();
    DMatrix::from_fn(nz, cols.len(), |r, c| eig.eigenvectors[(r, cols[c])])
}

/// Least-squares solution of `A_Wᵀ λ = -g`.
fn multipliers(rows: &Rows, work: &[usize], g: &[f64]) -> Vec<f64> {
    if work.is_empty() {
        return Vec::new();
    }
    let nz = g.len();
    let a = working_matrix(rows, work, nz);
    let gv = DVector::from_column_slice(g);
    let aat = &a * a.transpose();
    let rhs = -(&a * gv);
    match aat.clone().cholesky() {
        Some(ch) => ch.solve(&rhs).iter().cloned().collect(),
        None => {
            let svd = aat.svd(true, true);
            svd.solve(&rhs, 1e-14)
                .map(|v| v.iter().cloned().collect())
                .unwrap_or_else(|_| vec![0.0; work.len()])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_qp(h: f64, f: f64, lb: f64, ub: f64) -> QpProblem {
        QpProblem::new(Mat::scalar(h), vec![f]).with_bounds(vec![lb], vec![ub])
    }

    #[test]
    fn active_lower_bound() {
        let s = solve_qp(&scalar_qp(1.0, 1.0, 0.0, 1.0)).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!(s.x[0].abs() < 1e-15);
    }

    #[test]
    fn interior_stationary_point() {
        let s = solve_qp(&scalar_qp(1.0, -0.5, -1.0, 1.0)).unwrap();
        assert!((s.x[0] - 0.5).abs() < 1e-15);
        assert!(s.kkt.max() <= 1e-12);
    }

    #[test]
    fn linear_objective_without_bounds_is_unbounded() {
        let qp = QpProblem::new(Mat::zeros(1, 1), vec![1.0]);
        assert_eq!(solve_qp(&qp).unwrap().status, QpStatus::Unbounded);
    }

    #[test]
    fn linear_objective_with_bounds_hits_the_bound() {
        let qp = QpProblem::new(Mat::zeros(2, 2), vec![1.0, -1.0]).with_bounds(vec![-1.0; 2], vec![2.0; 2]);
        let s = solve_qp(&qp).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_eq!(s.x, vec![-1.0, 2.0]);
    }

    #[test]
    fn infeasible_without_slack_and_relaxed_with_slack() {
        // x ≤ -2 and box [-1, 1]
        let base = QpProblem::new(Mat::scalar(1.0), vec![0.0])
            .with_ineq(Mat::scalar(1.0), vec![-2.0])
            .with_bounds(vec![-1.0], vec![1.0]);
        assert_eq!(solve_qp(&base).unwrap().status, QpStatus::Infeasible);
        let s = solve_qp(&base.with_slack(DEFAULT_SLACK_RHO)).unwrap();
        assert_eq!(s.status, QpStatus::Relaxed);
        assert!((s.x[0] + 1.0).abs() < 1e-9);
        assert!((s.slack - 1.0).abs() < 1e-6);
    }

    #[test]
    fn phase_one_finds_a_start_for_equalities() {
        // min ½|x|² s.t. x0 + x1 = 2, x0 - x1 ≤ 0 -> (1, 1)
        let qp = QpProblem::new(Mat::identity(2), vec![0.0, 0.0])
            .with_eq(Mat::from_rows(&[vec![1.0, 1.0]]), vec![2.0])
            .with_ineq(Mat::from_rows(&[vec![1.0, -1.0]]), vec![0.0]);
        let s = solve_qp(&qp).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12, "{s:?}");
        assert!(s.kkt.max() < 1e-10);
    }

    #[test]
    fn fixed_variable_bounds() {
        let s = solve_qp(&scalar_qp(1.0, 5.0, 0.3, 0.3)).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_eq!(s.x, vec![0.3]);
    }

    #[test]
    fn rejects_asymmetric_hessian() {
        let qp = QpProblem::new(Mat::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]), vec![0.0, 0.0]);
        assert!(solve_qp(&qp).is_err());
    }
}
