use std::collections::VecDeque;

use super::Objective;
use crate::linalg::{dot, norm_inf};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BoxQnConfig {
    pub max_iters: usize,
    pub memory: usize,
    /// tolerance on `‖x - P(x - ∇f)‖∞`
    pub pg_tolerance: f64,
    pub max_backtracks: usize,
}

impl Default for BoxQnConfig {
    fn default() -> Self {
        BoxQnConfig {
            max_iters: 500,
            memory: 10,
            pg_tolerance: 1e-12,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxQnStatus {
    Converged,
    MaxIterations,
    Stalled,
}

#[derive(Debug, Clone)]
pub struct BoxQnOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub projected_gradient: f64,
    pub iterations: usize,
    pub status: BoxQnStatus,
}

fn project(x: &mut [f64], lb: &[f64], ub: &[f64]) {
    for ((v, l), u) in x.iter_mut().zip(lb).zip(ub) {
        *v = v.clamp(*l, *u);
    }
}

fn projected_gradient(x: &[f64], g: &[f64], lb: &[f64], ub: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lb.iter().zip(ub))
        .map(|((xi, gi), (l, u))| ((xi - gi).clamp(*l, *u) - xi).abs())
        .fold(0.0, f64::max)
}

/// Projected limited-memory quasi-Newton method for `min f(x)` on `lb ≤ x ≤ ub`.
///
/// The search direction is the two-loop L-BFGS direction restricted to the
/// variables that are not held at a bound by the gradient; steps are
/// projected onto the box and accepted by an Armijo test along the
/// projection arc.
pub fn minimize_box<O: Objective>(
    objective: &mut O,
    x0: &[f64],
    lb: &[f64],
    ub: &[f64],
    cfg: &BoxQnConfig,
) -> Result<BoxQnOutcome> {
    let n = x0.len();
    if lb.len() != n || ub.len() != n {
        return Err(Error::dim("minimize_box bounds", n, lb.len().min(ub.len())));
    }
    if lb.iter().zip(ub).any(|(l, u)| l > u) {
        return Err(Error::InvalidArgument("box with lb > ub".into()));
    }
    let mut x = x0.to_vec();
    project(&mut x, lb, ub);
    let (mut f, mut g) = objective.eval(&x)?;
    if !f.is_finite() {
        return Err(Error::NonFinite(format!("box objective at start: {f}")));
    }
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
    let mut status = BoxQnStatus::MaxIterations;
    let mut it = 0;
    while it < cfg.max_iters {
        let pg = projected_gradient(&x, &g, lb, ub);
        if pg <= cfg.pg_tolerance {
            status = BoxQnStatus::Converged;
            break;
        }
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lb[i] && g[i] > 0.0) || (x[i] >= ub[i] && g[i] < 0.0)))
            .collect();
        let mut accepted = None;
        for attempt in 0..2 {
            let d = if attempt == 0 && !mem.is_empty() {
                restricted_direction(&mem, &g, &free)
            } else {
                let scale = 1.0 / norm_inf(&g).max(1.0);
                (0..n).map(|i| if free[i] { -g[i] * scale } else { 0.0 }).collect()
            };
            if dot(&d, &g) >= 0.0 {
                continue;
            }
            let mut alpha = 1.0;
            for _ in 0..cfg.max_backtracks {
                let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
                project(&mut xn, lb, ub);
                let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
                if norm_inf(&step) == 0.0 {
                    break;
                }
                if let Ok((fn_, gn)) = objective.eval(&xn) {
                    // near the optimum f stops resolving decrease; then a
                    // clear drop in the projected gradient is enough
                    let armijo = fn_ <= f + 1e-4 * dot(&g, &step);
                    let flat = fn_ <= f + 4.0 * f64::EPSILON * f.abs().max(1.0)
                        && projected_gradient(&xn, &gn, lb, ub) < 0.5 * pg;
                    if fn_.is_finite() && (armijo || flat) {
                        accepted = Some((xn, fn_, gn, step));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
            mem.clear();
        }
        let Some((xn, fn_, gn, s)) = accepted else {
            status = BoxQnStatus::Stalled;
            break;
        };
        it += 1;
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-14 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if mem.len() == cfg.memory {
                mem.pop_front();
            }
            mem.push_back((s, y));
        }
        x = xn;
        f = fn_;
        g = gn;
    }
    Ok(BoxQnOutcome {
        projected_gradient: projected_gradient(&x, &g, lb, ub),
        x,
        value: f,
        iterations: it,
        status,
    })
}

fn restricted_direction(mem: &VecDeque<(Vec<f64>, Vec<f64>)>, g: &[f64], free: &[bool]) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .zip(free)
            .map(|(x, f)| if *f { *x } else { 0.0 })
            .collect()
    };
    let pairs: Vec<(Vec<f64>, Vec<f64>, f64)> = mem
        .iter()
        .filter_map(|(s, y)| {
            let (s, y) = (mask(s), mask(y));
            let sy = dot(&s, &y);
            (sy > 1e-300).then(|| (s, y, 1.0 / sy))
        })
        .collect();
    let mut q = mask(g);
    let mut alphas = vec![0.0; pairs.len()];
    for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
        alphas[k] = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= alphas[k] * yi;
        }
    }
    if let Some((s, y, _)) = pairs.last() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (k, (s, y, rho)) in pairs.iter().enumerate() {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (alphas[k] - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipped_quadratic() {
        // min ½(x-2)² + ½(y+3)² on [-1,1]²  ->  (1, -1)
        let mut f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            Ok((
                0.5 * (x[0] - 2.0).powi(2) + 0.5 * (x[1] + 3.0).powi(2),
                vec![x[0] - 2.0, x[1] + 3.0],
            ))
        };
        let out = minimize_box(&mut f, &[0.0, 0.0], &[-1.0; 2], &[1.0; 2], &BoxQnConfig::default()).unwrap();
        assert_eq!(out.status, BoxQnStatus::Converged);
        assert_eq!(out.x, vec![1.0, -1.0]);
    }

    #[test]
    fn interior_minimizer_of_coupled_quadratic() {
        // min x² + xy + y² - x on a loose box -> (2/3, -1/3)
        let mut f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            Ok((
                x[0] * x[0] + x[0] * x[1] + x[1] * x[1] - x[0],
                vec![2.0 * x[0] + x[1] - 1.0, x[0] + 2.0 * x[1]],
            ))
        };
        let out = minimize_box(&mut f, &[0.9, 0.9], &[-5.0; 2], &[5.0; 2], &BoxQnConfig::default()).unwrap();
        assert!((out.x[0] - 2.0 / 3.0).abs() < 1e-11 && (out.x[1] + 1.0 / 3.0).abs() < 1e-11, "{out:?}");
    }
}
