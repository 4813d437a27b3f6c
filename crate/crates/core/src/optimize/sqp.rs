//! Sequential quadratic programming for small smooth problems
//!
//! ```text
//!     minimize f(x)  s.t.  g(x) ≤ 0 (+ s·1),  h(x) = 0,  lb ≤ x ≤ ub
//! ```
//!
//! Every iteration linearizes the constraints and solves a dense QP with
//! [`solve_qp`]. The quadratic model uses the exact Lagrangian Hessian when
//! the problem supplies one and a damped BFGS estimate otherwise. Steps are
//! globalized by backtracking on an exact penalty merit function.

use super::qp::{solve_qp, QpProblem, QpStatus};
use crate::linalg::{dot, norm_inf, Mat};
use crate::Result;

/// Smooth constrained problem as seen by [`sqp`].
pub trait SmoothProblem {
    fn dim(&self) -> usize;
    fn lower(&self) -> Vec<f64>;
    fn upper(&self) -> Vec<f64>;
    /// `f(x)` and `∇f(x)`.
    fn objective(&self, x: &[f64]) -> (f64, Vec<f64>);
    /// `g(x)` and its Jacobian (`n_g x dim`).
    fn inequalities(&self, x: &[f64]) -> (Vec<f64>, Mat);
    /// `h(x)` and its Jacobian (`n_h x dim`).
    fn equalities(&self, _x: &[f64]) -> (Vec<f64>, Mat) {
        (Vec::new(), Mat::zeros(0, self.dim()))
    }
    /// `∇²f + Σ λ_j ∇²g_j + Σ μ_t ∇²h_t`, when available in closed form.
    fn lagrangian_hessian(&self, _x: &[f64], _lambda: &[f64], _mu: &[f64]) -> Option<Mat> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqpConfig {
    pub max_iters: usize,
    pub violation_tolerance: f64,
    pub step_tolerance: f64,
    /// slack penalty ρ; `None` keeps the inequalities hard
    pub slack: Option<f64>,
}

impl Default for SqpConfig {
    fn default() -> Self {
        SqpConfig {
            max_iters: 50,
            violation_tolerance: 1e-9,
            step_tolerance: 1e-10,
            slack: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqpStatus {
    Converged,
    MaxIterations,
    /// the merit function could not be decreased along the QP step
    Stalled,
    /// a linearized subproblem had no feasible point
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct SqpOutcome {
    pub x: Vec<f64>,
    pub slack: f64,
    pub value: f64,
    /// `max(max_j g_j, max_t |h_t|, 0)` at `x`
    pub violation: f64,
    pub iterations: usize,
    pub status: SqpStatus,
}

fn violation(g: &[f64], h: &[f64]) -> (f64, f64) {
    let vg = g.iter().fold(0.0f64, |m, v| m.max(*v));
    let vh = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (vg, vh)
}

fn slack_cost(rho: f64, s: f64) -> f64 {
    0.5 * rho * s * s + rho * s
}

pub fn sqp<P: SmoothProblem + ?Sized>(problem: &P, x0: &[f64], cfg: &SqpConfig) -> Result<SqpOutcome> {
    let n = problem.dim();
    let (lb, ub) = (problem.lower(), problem.upper());
    let mut x: Vec<f64> = x0.iter().zip(lb.iter().zip(&ub)).map(|(v, (l, u))| v.clamp(*l, *u)).collect();
    let mut mu_pen: f64 = 1.0;
    let mut bfgs = Mat::identity(n);
    let mut lambda = Vec::new();
    let mut mu_eq = Vec::new();
    let mut status = SqpStatus::MaxIterations;
    let mut iterations = 0;

    let merit = |x: &[f64], mu_pen: f64| -> f64 {
        let (f, _) = problem.objective(x);
        let (g, _) = problem.inequalities(x);
        let (h, _) = problem.equalities(x);
        let (vg, _) = violation(&g, &h);
        let hsum: f64 = h.iter().map(|v| v.abs()).sum();
        match cfg.slack {
            Some(rho) => f + slack_cost(rho, vg) + mu_pen * hsum,
            None => f + mu_pen * (vg + hsum),
        }
    };

    while iterations < cfg.max_iters {
        let (f, gf) = problem.objective(&x);
        let (g, jg) = problem.inequalities(&x);
        let (h, jh) = problem.equalities(&x);
        let b = problem
            .lagrangian_hessian(&x, &lambda, &mu_eq)
            .unwrap_or_else(|| bfgs.clone());
        let mut qp = QpProblem::new(b.clone(), gf.clone())
            .with_ineq(jg.clone(), g.iter().map(|v| -v).collect())
            .with_eq(jh.clone(), h.iter().map(|v| -v).collect())
            .with_bounds(
                lb.iter().zip(&x).map(|(l, xi)| l - xi).collect(),
                ub.iter().zip(&x).map(|(u, xi)| u - xi).collect(),
            );
        if let Some(rho) = cfg.slack {
            qp = qp.with_slack(rho);
        }
        let sol = solve_qp(&qp)?;
        match sol.status {
            QpStatus::Infeasible => {
                status = SqpStatus::Infeasible;
                break;
            }
            QpStatus::Unbounded => {
                status = SqpStatus::Stalled;
                break;
            }
            _ => {}
        }
        let d = sol.x;
        let new_lambda = sol.ineq_multipliers;
        let new_mu = sol.eq_multipliers;
        let lsum: f64 = new_lambda.iter().chain(&new_mu).map(|v| v.abs()).sum();
        mu_pen = mu_pen.max(2.0 * lsum + 1e-3);

        let (vg, vh) = violation(&g, &h);
        let xscale = 1.0 + norm_inf(&x);
        let feasible = match cfg.slack {
            Some(_) => vh <= cfg.violation_tolerance,
            None => vg.max(vh) <= cfg.violation_tolerance,
        };
        if norm_inf(&d) <= cfg.step_tolerance * xscale && feasible {
            status = SqpStatus::Converged;
            break;
        }

        // Predicted reduction of the merit function under the QP model.
        let hsum: f64 = h.iter().map(|v| v.abs()).sum();
        let phi0 = match cfg.slack {
            Some(rho) => f + slack_cost(rho, vg) + mu_pen * hsum,
            None => f + mu_pen * (vg + hsum),
        };
        let model = dot(&gf, &d)
            + 0.5 * b.quad_form(&d)
            + match cfg.slack {
                Some(rho) => slack_cost(rho, sol.slack),
                None => 0.0,
            };
        let pred = (phi0 - f - model).max(0.0);

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let xn: Vec<f64> = x
                .iter()
                .zip(&d)
                .zip(lb.iter().zip(&ub))
                .map(|((xi, di), (l, u))| (xi + alpha * di).clamp(*l, *u))
                .collect();
            let phi = merit(&xn, mu_pen);
            if phi.is_finite() && phi <= phi0 - 1e-4 * alpha * pred + 1e-15 * phi0.abs().max(1.0) {
                accepted = Some(xn);
                break;
            }
            alpha *= 0.5;
        }
        iterations += 1;
        let Some(xn) = accepted else {
            status = SqpStatus::Stalled;
            break;
        };

        // Damped BFGS on the Lagrangian gradient.
        let grad_l = |x: &[f64]| -> Vec<f64> {
            let (_, gf) = problem.objective(x);
            let (_, jg) = problem.inequalities(x);
            let (_, jh) = problem.equalities(x);
            let mut out = gf;
            for (v, a) in out.iter_mut().zip(jg.tmul_vec(&new_lambda)) {
                *v += a;
            }
            for (v, a) in out.iter_mut().zip(jh.tmul_vec(&new_mu)) {
                *v += a;
            }
            out
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad_l(&xn).iter().zip(grad_l(&x)).map(|(a, b)| a - b).collect();
        damped_bfgs_update(&mut bfgs, &s, &y);

        x = xn;
        lambda = new_lambda;
        mu_eq = new_mu;
    }

    let (value, _) = problem.objective(&x);
    let (g, _) = problem.inequalities(&x);
    let (h, _) = problem.equalities(&x);
    let (vg, vh) = violation(&g, &h);
    let slack = if cfg.slack.is_some() { vg } else { 0.0 };
    Ok(SqpOutcome {
        x,
        slack,
        value,
        violation: vg.max(vh),
        iterations,
        status,
    })
}

/// Powell-damped BFGS update, which keeps `b` positive definite.
fn damped_bfgs_update(b: &mut Mat, s: &[f64], y: &[f64]) {
    let n = s.len();
    let bs = b.mul_vec(s);
    let sbs = dot(s, &bs);
    if sbs <= 1e-300 {
        return;
    }
    let sy = dot(s, y);
    let theta = if sy >= 0.2 * sbs { 1.0 } else { 0.8 * sbs / (sbs - sy) };
    let r: Vec<f64> = y.iter().zip(&bs).map(|(yi, bi)| theta * yi + (1.0 - theta) * bi).collect();
    let sr = dot(s, &r);
    if sr <= 1e-300 {
        return;
    }
    for i in 0..n {
        for j in 0..n {
            let v = b.get(i, j) - bs[i] * bs[j] / sbs + r[i] * r[j] / sr;
            b.set(i, j, v);
        }
    }
}
