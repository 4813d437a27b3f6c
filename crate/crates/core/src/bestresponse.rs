//! Agent best responses `x̄_i(x_{-i}, p)` and value functions `J̄_i(x_{-i}, p)`.
//!
//! Shared inequality rows are relaxed by one scalar slack penalized as
//! `½ρs² + ρs` (ρ = 1e6 by default), so a best response exists even when the
//! other agents' decisions leave agent `i` no feasible point.

use crate::games::{GameKind, ParametricGame};
use crate::linalg::Mat;
use crate::optimize::sqp::{sqp, SmoothProblem, SqpConfig, SqpStatus};
use crate::optimize::{minimize_box, solve_qp, BoxQnConfig, QpProblem, QpStatus, DEFAULT_SLACK_RHO};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrStatus {
    /// optimal, slack at most 1e-6
    Exact,
    /// optimal for the relaxed problem with slack above 1e-6
    Relaxed,
    /// best of several local searches (nonconvex costs or constraints)
    Local,
    /// the agent's problem has no lower bound
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponseResult {
    pub x_i: Vec<f64>,
    /// `J_i(x̄_i, x_{-i}, p)`, without the slack penalty
    pub value: f64,
    pub slack_used: f64,
    pub status: BrStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrConfig {
    /// slack penalty; `None` keeps shared rows hard
    pub slack_rho: Option<f64>,
    pub multistarts: usize,
}

impl Default for BrConfig {
    fn default() -> Self {
        BrConfig {
            slack_rho: Some(DEFAULT_SLACK_RHO),
            multistarts: 5,
        }
    }
}

const RELAXED_SLACK: f64 = 1e-6;

/// Best response of agent `i` to `x_minus_i` (the other agents' decisions
/// in increasing index order).
pub fn best_response(game: &ParametricGame, i: usize, x_minus_i: &[f64], p: &[f64]) -> Result<BestResponseResult> {
    if i >= game.n_agents() {
        return Err(Error::InvalidArgument(format!("agent {i} out of range")));
    }
    let n = game.n_x();
    let ni = game.agent_dims[i];
    if x_minus_i.len() != n - ni {
        return Err(Error::dim("x_minus_i", n - ni, x_minus_i.len()));
    }
    let mut x = vec![0.0; n];
    for (k, &j) in game.others(i).iter().enumerate() {
        x[j] = x_minus_i[k];
    }
    best_response_at(game, i, &x, p, &BrConfig::default())
}

/// Best response of agent `i` with the other agents read from the full
/// vector `x` (its own block is ignored).
pub fn best_response_at(game: &ParametricGame, i: usize, x: &[f64], p: &[f64], cfg: &BrConfig) -> Result<BestResponseResult> {
    if x.len() != game.n_x() {
        return Err(Error::dim("decision vector", game.n_x(), x.len()));
    }
    if p.len() != game.n_p {
        return Err(Error::dim("parameter vector", game.n_p, p.len()));
    }
    match &game.kind {
        GameKind::Quadratic(d) if d.quad.is_empty() => quadratic_br(game, i, x, p, cfg),
        GameKind::Quadratic(_) => smooth_br(game, i, x, p, cfg, true),
        GameKind::Switching { ell } => switching_br(game, i, x, p, *ell),
        GameKind::NonconvexTanh => box_br(game, i, x, p, cfg),
        GameKind::Custom(c) if c.ineq.is_empty() && c.eq.is_empty() => box_br(game, i, x, p, cfg),
        GameKind::Custom(_) => smooth_br(game, i, x, p, cfg, false),
    }
}

fn with_block(x: &[f64], range: std::ops::Range<usize>, xi: &[f64]) -> Vec<f64> {
    let mut full = x.to_vec();
    full[range].copy_from_slice(xi);
    full
}

fn slack_status(slack: f64) -> BrStatus {
    if slack > RELAXED_SLACK {
        BrStatus::Relaxed
    } else {
        BrStatus::Exact
    }
}

fn quadratic_br(game: &ParametricGame, i: usize, x: &[f64], p: &[f64], cfg: &BrConfig) -> Result<BestResponseResult> {
    let GameKind::Quadratic(d) = &game.kind else {
        unreachable!()
    };
    let r = game.agent_range(i);
    let own: Vec<usize> = r.clone().collect();
    let others = game.others(i);
    let x_others: Vec<f64> = others.iter().map(|&j| x[j]).collect();
    let h = d.q[i].submatrix(&own, &own);
    let lin = d.linear_term(i, p);
    let cross = d.q[i].submatrix(&own, &others).mul_vec(&x_others);
    let f: Vec<f64> = own.iter().zip(cross).map(|(&k, c)| lin[k] + c).collect();

    let sp = d.s.mul_vec(p);
    let a_rest = d.a.submatrix(&(0..d.a.rows).collect::<Vec<_>>(), &others).mul_vec(&x_others);
    let b: Vec<f64> = (0..d.a.rows).map(|j| d.b[j] + sp[j] - a_rest[j]).collect();
    let a_own = d.a.submatrix(&(0..d.a.rows).collect::<Vec<_>>(), &own);
    let tp = d.t.mul_vec(p);
    let e_rest = d.e.submatrix(&(0..d.e.rows).collect::<Vec<_>>(), &others).mul_vec(&x_others);
    let e_rhs: Vec<f64> = (0..d.e.rows).map(|j| d.e_rhs[j] + tp[j] - e_rest[j]).collect();
    let e_own = d.e.submatrix(&(0..d.e.rows).collect::<Vec<_>>(), &own);

    let mut qp = QpProblem::new(h, f)
        .with_ineq(a_own, b)
        .with_eq(e_own, e_rhs)
        .with_bounds(game.x_lb[r.clone()].to_vec(), game.x_ub[r.clone()].to_vec());
    if let Some(rho) = cfg.slack_rho {
        qp = qp.with_slack(rho);
    }
    let sol = solve_qp(&qp)?;
    let status = match sol.status {
        QpStatus::Optimal | QpStatus::Relaxed | QpStatus::MaxIterations => slack_status(sol.slack),
        QpStatus::Unbounded => BrStatus::Unbounded,
        QpStatus::Infeasible => {
            return Err(Error::Infeasible(format!("{}: agent {i} has no feasible response", game.name)));
        }
    };
    let full = with_block(x, r, &sol.x);
    Ok(BestResponseResult {
        value: game.cost(i, &full, p),
        x_i: sol.x,
        slack_used: sol.slack,
        status,
    })
}

/// Agent `i`'s problem with the others fixed, for SQP.
struct AgentProblem<'a> {
    game: &'a ParametricGame,
    i: usize,
    x: &'a [f64],
    p: &'a [f64],
    exact_hessian: bool,
}

impl AgentProblem<'_> {
    fn full(&self, xi: &[f64]) -> Vec<f64> {
        with_block(self.x, self.game.agent_range(self.i), xi)
    }

    fn columns(&self, m: &Mat) -> Mat {
        let own: Vec<usize> = self.game.agent_range(self.i).collect();
        m.submatrix(&(0..m.rows).collect::<Vec<_>>(), &own)
    }
}

impl SmoothProblem for AgentProblem<'_> {
    fn dim(&self) -> usize {
        self.game.agent_dims[self.i]
    }

    fn lower(&self) -> Vec<f64> {
        self.game.x_lb[self.game.agent_range(self.i)].to_vec()
    }

    fn upper(&self) -> Vec<f64> {
        self.game.x_ub[self.game.agent_range(self.i)].to_vec()
    }

    fn objective(&self, xi: &[f64]) -> (f64, Vec<f64>) {
        let full = self.full(xi);
        let g = self.game.cost_grad(self.i, &full, self.p);
        (self.game.cost(self.i, &full, self.p), g[self.game.agent_range(self.i)].to_vec())
    }

    fn inequalities(&self, xi: &[f64]) -> (Vec<f64>, Mat) {
        let full = self.full(xi);
        let (g, _) = self.game.constraints(&full, self.p);
        let (jg, _) = self.game.constraint_jacobians(&full, self.p);
        (g, self.columns(&jg))
    }

    fn equalities(&self, xi: &[f64]) -> (Vec<f64>, Mat) {
        let full = self.full(xi);
        let (_, h) = self.game.constraints(&full, self.p);
        let (_, jh) = self.game.constraint_jacobians(&full, self.p);
        (h, self.columns(&jh))
    }

    fn lagrangian_hessian(&self, _x: &[f64], lambda: &[f64], _mu: &[f64]) -> Option<Mat> {
        if !self.exact_hessian {
            return None;
        }
        let GameKind::Quadratic(d) = &self.game.kind else {
            return None;
        };
        let own: Vec<usize> = self.game.agent_range(self.i).collect();
        let mut h = d.q[self.i].submatrix(&own, &own);
        for (j, qc) in d.quad.iter().enumerate() {
            let l = lambda.get(d.a.rows + j).copied().unwrap_or(0.0);
            if l != 0.0 {
                let block = qc.q.submatrix(&own, &own);
                for (hv, qv) in h.data.iter_mut().zip(&block.data) {
                    *hv += l * qv;
                }
            }
        }
        Some(h)
    }
}

/// Deterministic starting points: a rank-1 lattice of `count` points in the
/// agent's box (unbounded sides are replaced by ±1).
fn lattice_starts(lb: &[f64], ub: &[f64], count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|s| {
            lb.iter()
                .zip(ub)
                .enumerate()
                .map(|(d, (l, u))| {
                    let lo = if l.is_finite() { *l } else { u.min(0.0) - 1.0 };
                    let hi = if u.is_finite() { *u } else { l.max(0.0) + 1.0 };
                    let t = ((s * (1 + 2 * d)) % count) as f64 / count as f64 + 0.5 / count as f64;
                    lo + (hi - lo) * t
                })
                .collect()
        })
        .collect()
}

fn smooth_br(game: &ParametricGame, i: usize, x: &[f64], p: &[f64], cfg: &BrConfig, convex: bool) -> Result<BestResponseResult> {
    let problem = AgentProblem {
        game,
        i,
        x,
        p,
        exact_hessian: convex,
    };
    let sqp_cfg = SqpConfig {
        slack: cfg.slack_rho,
        ..SqpConfig::default()
    };
    let starts = if convex {
        let (lb, ub) = (problem.lower(), problem.upper());
        vec![lb.iter().zip(&ub).map(|(l, u)| 0.0f64.clamp(*l, *u)).collect::<Vec<_>>()]
    } else {
        lattice_starts(&problem.lower(), &problem.upper(), cfg.multistarts.max(1))
    };
    let rho = cfg.slack_rho.unwrap_or(0.0);
    let mut best: Option<(f64, crate::optimize::sqp::SqpOutcome)> = None;
    for x0 in starts {
        let out = sqp(&problem, &x0, &sqp_cfg)?;
        if out.status == SqpStatus::Infeasible {
            continue;
        }
        let merit = out.value + 0.5 * rho * out.slack * out.slack + rho * out.slack;
        if best.as_ref().is_none_or(|(m, _)| merit < *m) {
            best = Some((merit, out));
        }
    }
    let (_, out) = best.ok_or_else(|| Error::Infeasible(format!("{}: agent {i} has no feasible response", game.name)))?;
    let status = if !convex || out.status != SqpStatus::Converged {
        BrStatus::Local
    } else {
        slack_status(out.slack)
    };
    Ok(BestResponseResult {
        value: out.value,
        slack_used: out.slack,
        x_i: out.x,
        status,
    })
}

fn box_br(game: &ParametricGame, i: usize, x: &[f64], p: &[f64], cfg: &BrConfig) -> Result<BestResponseResult> {
    let r = game.agent_range(i);
    let (lb, ub) = (game.x_lb[r.clone()].to_vec(), game.x_ub[r.clone()].to_vec());
    let qn = BoxQnConfig::default();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for x0 in lattice_starts(&lb, &ub, cfg.multistarts.max(1)) {
        let mut obj = |xi: &[f64]| -> Result<(f64, Vec<f64>)> {
            let full = with_block(x, r.clone(), xi);
            let g = game.cost_grad(i, &full, p);
            Ok((game.cost(i, &full, p), g[r.clone()].to_vec()))
        };
        let out = minimize_box(&mut obj, &x0, &lb, &ub, &qn)?;
        if best.as_ref().is_none_or(|(v, _)| out.value < *v) {
            best = Some((out.value, out.x));
        }
    }
    let (value, x_i) = best.expect("at least one start");
    Ok(BestResponseResult {
        x_i,
        value,
        slack_used: 0.0,
        status: BrStatus::Local,
    })
}

/// Closed-form best response of the switching game, `max(ℓ, √(p·a) - a)`.
pub fn switching_best_response(p: f64, a_i: f64, ell: f64) -> Result<f64> {
    if !(a_i > 0.0) {
        return Err(Error::InvalidArgument(format!("switching best response needs a_i > 0, got {a_i}")));
    }
    if !(ell > 0.0) || !(p > 0.0) {
        return Err(Error::InvalidArgument("switching best response needs p > 0 and ell > 0".into()));
    }
    Ok(ell.max((p * a_i).sqrt() - a_i))
}

/// The same best response computed numerically by projected quasi-Newton
/// on `[ℓ, max(ℓ, p - a)]`.
pub fn switching_best_response_numeric(p: f64, a_i: f64, ell: f64) -> Result<f64> {
    if !(a_i > 0.0) {
        return Err(Error::InvalidArgument(format!("switching best response needs a_i > 0, got {a_i}")));
    }
    let hi = (p - a_i).max(ell);
    let mut obj = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let s = x[0] + a_i;
        Ok((-x[0] / s + x[0] / p, vec![-a_i / (s * s) + 1.0 / p]))
    };
    let x0 = [0.5 * (ell + hi)];
    let out = minimize_box(&mut obj, &x0, &[ell], &[hi], &BoxQnConfig::default())?;
    Ok(out.x[0])
}

fn switching_br(game: &ParametricGame, i: usize, x: &[f64], p: &[f64], ell: f64) -> Result<BestResponseResult> {
    let a: f64 = x.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).sum();
    let xi = switching_best_response(p[0], a, ell)?;
    // Only reachable when the others already use up p: the relaxed optimum
    // sits at the lower bound.
    let xi = if xi + a > p[0] { ell } else { xi };
    let slack = (xi + a - p[0]).max(0.0);
    let full = with_block(x, i..i + 1, &[xi]);
    Ok(BestResponseResult {
        x_i: vec![xi],
        value: game.cost(i, &full, p),
        slack_used: slack,
        status: slack_status(slack),
    })
}

/// `Σ_i J_i(x) - J̄_i(x_{-i})` with best responses from [`best_response_at`].
pub fn ni_gap(game: &ParametricGame, x: &[f64], p: &[f64]) -> Result<f64> {
    let mut gap = 0.0;
    for i in 0..game.n_agents() {
        let br = best_response_at(game, i, x, p, &BrConfig::default())?;
        gap += game.cost(i, x, p) - br.value;
    }
    Ok(gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{lq17, nonconvex21, nonmono18, nonmono18_exact, qcqp19, switching20};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nonmono18_agent_one_at_lower_bound() {
        let br = best_response(&nonmono18(), 0, &[0.0], &[1.0]).unwrap();
        assert_eq!(br.x_i, vec![-1.0]);
        assert!((br.value + 14.5).abs() < 1e-12);
        assert_eq!(br.status, BrStatus::Exact);
    }

    #[test]
    fn switching_formula_examples() {
        assert!((switching_best_response(1.0, 0.25, 0.01).unwrap() - 0.25).abs() < 1e-15);
        let v = switching_best_response(1.0, 0.9, 0.01).unwrap();
        assert!((v - (0.9f64.sqrt() - 0.9)).abs() < 1e-15 && (v - 0.048683).abs() < 1e-6);
        assert_eq!(switching_best_response(1.0, 0.99, 0.01).unwrap(), 0.01);
        let p: f64 = 1.6;
        assert!((switching_best_response(p, p / 4.0, 0.01).unwrap() - p / 4.0).abs() < 1e-15);
        assert!(switching_best_response(1.0, 0.0, 0.01).is_err());
    }

    #[test]
    fn switching_numeric_route_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let p = rng.random_range(0.02..2.0);
            let a = rng.random_range(0.01..p);
            let exact = switching_best_response(p, a, 0.01).unwrap();
            let numeric = switching_best_response_numeric(p, a, 0.01).unwrap();
            assert!((exact - numeric).abs() <= 1e-10, "p={p} a={a}: {exact} vs {numeric}");
        }
        let g = switching20(2);
        let br = best_response(&g, 1, &[0.25], &[1.0]).unwrap();
        assert!((br.x_i[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn lq17_matches_grid_search() {
        let g = lq17();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let other = rng.random_range(-1.0..1.0);
            for i in 0..2 {
                let br = best_response(&g, i, &[other], &p).unwrap();
                // brute force over the relaxed objective on a 1e-4 grid
                let mut best = (f64::INFINITY, 0.0);
                for k in 0..=20000 {
                    let xi = -1.0 + 1e-4 * k as f64;
                    let mut x = [other, other];
                    x[i] = xi;
                    let s = g.shared_violation(&x, &p);
                    let v = g.cost(i, &x, &p) + 0.5e6 * s * s + 1e6 * s;
                    if v < best.0 {
                        best = (v, xi);
                    }
                }
                assert!((br.x_i[0] - best.1).abs() <= 2e-4, "agent {i}: {} vs {}", br.x_i[0], best.1);
            }
        }
    }

    #[test]
    fn convex_best_responses_beat_random_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for g in [lq17(), qcqp19()] {
            for _ in 0..5 {
                let p: Vec<f64> = (0..g.n_p).map(|_| rng.random_range(-1.0..1.0)).collect();
                let x0: Vec<f64> = (0..g.n_x()).map(|_| rng.random_range(-0.3..0.3)).collect();
                let x = crate::optimize::project_onto_feasible(&g, &p, &x0).unwrap().x;
                for i in 0..g.n_agents() {
                    let br = best_response_at(&g, i, &x, &p, &BrConfig::default()).unwrap();
                    assert_eq!(br.status, BrStatus::Exact, "{}", g.name);
                    for _ in 0..1000 {
                        let mut probe = x.clone();
                        for k in g.agent_range(i) {
                            probe[k] = rng.random_range(-1.0..1.0);
                        }
                        if g.shared_violation(&probe, &p) > 0.0 {
                            continue;
                        }
                        assert!(br.value <= g.cost(i, &probe, &p) + 1e-7);
                    }
                }
                assert!(ni_gap(&g, &x, &p).unwrap() >= -1e-9);
            }
        }
    }

    #[test]
    fn nonmono18_exact_map_has_zero_gap() {
        let g = nonmono18();
        for k in 0..=100 {
            let p = -1.0 + 0.02 * k as f64;
            let x = nonmono18_exact(p);
            assert!(ni_gap(&g, &x, &[p]).unwrap().abs() <= 1e-8, "p = {p}");
        }
    }

    #[test]
    fn nonconvex_responses_are_local_and_no_worse_than_samples() {
        let g = nonconvex21(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            for i in 0..2 {
                let br = best_response_at(&g, i, &x, &p, &BrConfig::default()).unwrap();
                assert_eq!(br.status, BrStatus::Local);
                assert!(br.value <= g.cost(i, &x, &p) + 1e-9);
            }
        }
    }

    #[test]
    fn wrong_dimensions_are_rejected() {
        assert!(best_response(&lq17(), 0, &[0.0, 0.0], &[0.0, 0.0]).is_err());
        assert!(best_response(&lq17(), 2, &[0.0], &[0.0, 0.0]).is_err());
    }
}
