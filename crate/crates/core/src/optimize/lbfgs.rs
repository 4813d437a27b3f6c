use std::collections::VecDeque;

use super::Objective;
use crate::linalg::{axpy, dot, norm2};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    pub memory: usize,
    pub gradient_tolerance: f64,
    /// sufficient-decrease constant
    pub c1: f64,
    /// curvature constant
    pub c2: f64,
    /// trial steps per line search
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            max_iters: 2000,
            memory: 10,
            gradient_tolerance: 1e-8,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(Error::InvalidArgument("lbfgs memory must be >= 1".into()));
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::InvalidArgument(
                "lbfgs Wolfe constants must satisfy 0 < c1 < c2 < 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsStatus {
    Converged,
    MaxIterations,
    /// no step satisfying the Wolfe conditions was found; best iterate returned
    LineSearchFailed,
    /// objective stopped decreasing at machine precision
    Stalled,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub theta: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub status: LbfgsStatus,
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

/// Minimizes a smooth objective from `theta0`.
///
/// Every accepted step satisfies the sufficient-decrease condition, so the
/// returned value never exceeds the initial one. Errors only if the
/// objective is non-finite at `theta0`.
pub fn lbfgs<O: Objective>(objective: &mut O, theta0: &[f64], cfg: &LbfgsConfig) -> Result<LbfgsOutcome> {
    cfg.validate()?;
    let (f0, g0) = objective.eval(theta0)?;
    if !f0.is_finite() || g0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("lbfgs initial objective {f0}")));
    }
    let mut cur = Point {
        x: theta0.to_vec(),
        f: f0,
        g: g0,
    };
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut status = LbfgsStatus::MaxIterations;
    let mut iterations = 0;
    let mut stalls = 0;
    while iterations < cfg.max_iters {
        if norm2(&cur.g) <= cfg.gradient_tolerance {
            status = LbfgsStatus::Converged;
            break;
        }
        let mut d = two_loop(&mem, &cur.g);
        if dot(&d, &cur.g) >= 0.0 {
            mem.clear();
            d = cur.g.iter().map(|v| -v).collect();
        }
        let alpha0 = if mem.is_empty() {
            (1.0 / norm2(&cur.g)).min(1.0)
        } else {
            1.0
        };
        let mut next = line_search(objective, &cur, &d, alpha0, cfg);
        if next.is_none() && !mem.is_empty() {
            mem.clear();
            d = cur.g.iter().map(|v| -v).collect();
            next = line_search(objective, &cur, &d, (1.0 / norm2(&cur.g)).min(1.0), cfg);
        }
        let Some(next) = next else {
            status = LbfgsStatus::LineSearchFailed;
            break;
        };
        iterations += 1;
        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm2(&s) * norm2(&y) && sy > 0.0 {
            if mem.len() == cfg.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        let decrease = cur.f - next.f;
        cur = next;
        if decrease <= f64::EPSILON * cur.f.abs().max(1.0) {
            stalls += 1;
            if stalls >= 3 {
                status = LbfgsStatus::Stalled;
                break;
            }
        } else {
            stalls = 0;
        }
    }
    if status == LbfgsStatus::MaxIterations && norm2(&cur.g) <= cfg.gradient_tolerance {
        status = LbfgsStatus::Converged;
    }
    Ok(LbfgsOutcome {
        grad_norm: norm2(&cur.g),
        theta: cur.x,
        value: cur.f,
        iterations,
        status,
    })
}

/// `-H g` from the stored curvature pairs.
fn two_loop(mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, g: &[f64]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = vec![0.0; mem.len()];
    for (k, (s, y, rho)) in mem.iter().enumerate().rev() {
        let a = rho * dot(s, &q);
        alphas[k] = a;
        axpy(-a, y, &mut q);
    }
    if let Some((s, y, _)) = mem.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (k, (s, y, rho)) in mem.iter().enumerate() {
        let b = rho * dot(y, &q);
        axpy(alphas[k] - b, s, &mut q);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

struct Trial {
    a: f64,
    f: f64,
    dphi: f64,
    p: Option<Point>,
}

/// Strong-Wolfe bracketing and zoom with safeguarded cubic interpolation.
///
/// Returns `None` when no trial point decreases the objective. If the trial
/// budget runs out, the best sufficient-decrease point seen is returned.
fn line_search<O: Objective>(
    objective: &mut O,
    cur: &Point,
    d: &[f64],
    alpha0: f64,
    cfg: &LbfgsConfig,
) -> Option<Point> {
    let dphi0 = dot(&cur.g, d);
    if !(dphi0 < 0.0) {
        return None;
    }
    let mut trials = 0usize;
    let mut best: Option<Point> = None;
    let mut eval = |a: f64, trials: &mut usize, best: &mut Option<Point>| -> Trial {
        *trials += 1;
        let x: Vec<f64> = cur.x.iter().zip(d).map(|(xi, di)| xi + a * di).collect();
        match objective.eval(&x) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => {
                let dphi = dot(&g, d);
                let p = Point { x, f, g };
                if f <= cur.f + cfg.c1 * a * dphi0 && best.as_ref().is_none_or(|b| f < b.f) {
                    *best = Some(Point {
                        x: p.x.clone(),
                        f: p.f,
                        g: p.g.clone(),
                    });
                }
                Trial { a, f, dphi, p: Some(p) }
            }
            _ => Trial {
                a,
                f: f64::INFINITY,
                dphi: f64::NAN,
                p: None,
            },
        }
    };
    let armijo = |t: &Trial| t.f <= cur.f + cfg.c1 * t.a * dphi0;
    let curvature = |t: &Trial| t.dphi.abs() <= -cfg.c2 * dphi0;

    let mut prev = Trial {
        a: 0.0,
        f: cur.f,
        dphi: dphi0,
        p: None,
    };
    let mut a = alpha0;
    let mut first = true;
    let (mut lo, mut hi);
    loop {
        if trials >= cfg.max_line_search {
            return best;
        }
        let t = eval(a, &mut trials, &mut best);
        if t.p.is_none() {
            // overshoot into a non-finite region: shrink toward the last good step
            a = 0.5 * (prev.a + a);
            continue;
        }
        if !armijo(&t) || (!first && t.f >= prev.f) {
            lo = prev;
            hi = t;
            break;
        }
        if curvature(&t) {
            return t.p;
        }
        if t.dphi >= 0.0 {
            lo = t;
            hi = prev;
            break;
        }
        first = false;
        a *= 2.0;
        prev = t;
    }
    loop {
        if trials >= cfg.max_line_search {
            return best;
        }
        let a = interpolate(&lo, &hi);
        let t = eval(a, &mut trials, &mut best);
        if t.p.is_none() || !armijo(&t) || t.f >= lo.f {
            hi = t;
        } else {
            if curvature(&t) {
                return t.p;
            }
            if t.dphi * (hi.a - lo.a) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
        if (hi.a - lo.a).abs() <= 1e-16 * lo.a.abs().max(1e-300) {
            return best;
        }
    }
}

fn interpolate(lo: &Trial, hi: &Trial) -> f64 {
    let (a0, a1) = (lo.a, hi.a);
    let width = a1 - a0;
    let (left, right) = if width > 0.0 {
        (a0 + 0.1 * width, a1 - 0.1 * width)
    } else {
        (a1 - 0.1 * width, a0 + 0.1 * width)
    };
    let mid = 0.5 * (a0 + a1);
    if !hi.f.is_finite() || !hi.dphi.is_finite() {
        return mid;
    }
    let d1 = lo.dphi + hi.dphi - 3.0 * (lo.f - hi.f) / (a0 - a1);
    let disc = d1 * d1 - lo.dphi * hi.dphi;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (a1 - a0).signum() * disc.sqrt();
    let a = a1 - (a1 - a0) * (hi.dphi + d2 - d1) / (hi.dphi - lo.dphi + 2.0 * d2);
    if a.is_finite() {
        a.clamp(left.min(right), left.max(right))
    } else {
        mid
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        Ok((f, g))
    }

    #[test]
    fn rosenbrock_reaches_the_analytic_minimizer() {
        let cfg = LbfgsConfig {
            gradient_tolerance: 1e-12,
            ..LbfgsConfig::default()
        };
        let out = lbfgs(&mut rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
        assert!((out.theta[0] - 1.0).abs() <= 1e-6 && (out.theta[1] - 1.0).abs() <= 1e-6, "{out:?}");
    }

    #[test]
    fn strictly_convex_quadratic_converges_fast() {
        // H = B Bᵀ + I with a fixed B; minimizer of ½xᵀHx - cᵀx.
        let b = Mat::from_rows(&[
            vec![1.0, 0.2, -0.3, 0.0, 0.5],
            vec![0.0, 2.0, 0.1, -0.4, 0.0],
            vec![0.3, 0.0, 1.5, 0.2, -0.1],
            vec![-0.2, 0.4, 0.0, 0.8, 0.3],
            vec![0.1, -0.1, 0.2, 0.0, 1.2],
        ]);
        let mut h = Mat::identity(5);
        for i in 0..5 {
            for j in 0..5 {
                let s: f64 = (0..5).map(|k| b.get(i, k) * b.get(j, k)).sum();
                h.set(i, j, h.get(i, j) + s);
            }
        }
        let c = [1.0, -2.0, 0.5, 3.0, -1.0];
        let mut obj = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let hx = h.mul_vec(x);
            let f = 0.5 * dot(x, &hx) - dot(&c, x);
            Ok((f, hx.iter().zip(&c).map(|(a, b)| a - b).collect()))
        };
        let out = lbfgs(&mut obj, &[0.0; 5], &LbfgsConfig::default()).unwrap();
        assert_eq!(out.status, LbfgsStatus::Converged);
        assert!(out.grad_norm <= 1e-8);
        assert!(out.iterations <= 50, "took {}", out.iterations);
    }

    #[test]
    fn optimal_start_returns_immediately() {
        let out = lbfgs(&mut rosenbrock, &[1.0, 1.0], &LbfgsConfig::default()).unwrap();
        assert!(out.iterations <= 1);
        assert_eq!(out.theta, vec![1.0, 1.0]);
    }

    #[test]
    fn never_increases_objective_on_nonsmooth_problem() {
        let mut abs = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            Ok((x.iter().map(|v| v.abs()).sum(), x.iter().map(|v| v.signum()).collect()))
        };
        let out = lbfgs(&mut abs, &[0.3, -0.7], &LbfgsConfig::default()).unwrap();
        assert!(out.value <= 1.0);
    }

    #[test]
    fn rejects_bad_wolfe_constants() {
        let cfg = LbfgsConfig {
            c1: 0.9,
            c2: 0.1,
            ..LbfgsConfig::default()
        };
        assert!(lbfgs(&mut rosenbrock, &[0.0, 0.0], &cfg).is_err());
    }
}
