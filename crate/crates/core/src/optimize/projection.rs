use super::qp::{solve_qp, QpProblem, QpStatus};
use super::sqp::{sqp, SmoothProblem, SqpConfig, SqpStatus};
use crate::games::{GameKind, ParametricGame};
use crate::linalg::Mat;
use crate::{Error, Result};

/// Points within this distance of the feasible set are returned unchanged.
const FEASIBLE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionStatus {
    /// `x_ref` was already feasible
    Unchanged,
    /// global least-distance point (convex constraints)
    Exact,
    /// stationary point of a problem with nonconvex constraints
    Local,
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub x: Vec<f64>,
    pub status: ProjectionStatus,
}

struct LeastDistance<'a> {
    game: &'a ParametricGame,
    p: &'a [f64],
    x_ref: &'a [f64],
}

impl SmoothProblem for LeastDistance<'_> {
    fn dim(&self) -> usize {
        self.x_ref.len()
    }

    fn lower(&self) -> Vec<f64> {
        self.game.x_lb.clone()
    }

    fn upper(&self) -> Vec<f64> {
        self.game.x_ub.clone()
    }

    fn objective(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let d: Vec<f64> = x.iter().zip(self.x_ref).map(|(a, b)| a - b).collect();
        (0.5 * d.iter().map(|v| v * v).sum::<f64>(), d)
    }

    fn inequalities(&self, x: &[f64]) -> (Vec<f64>, Mat) {
        let (g, _) = self.game.constraints(x, self.p);
        let (jg, _) = self.game.constraint_jacobians(x, self.p);
        (g, jg)
    }

    fn equalities(&self, x: &[f64]) -> (Vec<f64>, Mat) {
        let (_, h) = self.game.constraints(x, self.p);
        let (_, jh) = self.game.constraint_jacobians(x, self.p);
        (h, jh)
    }

    fn lagrangian_hessian(&self, _x: &[f64], lambda: &[f64], _mu: &[f64]) -> Option<Mat> {
        let GameKind::Quadratic(d) = &self.game.kind else {
            return None;
        };
        let n = self.dim();
        let mut h = Mat::identity(n);
        for (j, qc) in d.quad.iter().enumerate() {
            let l = lambda.get(d.a.rows + j).copied().unwrap_or(0.0);
            if l != 0.0 {
                for (hv, qv) in h.data.iter_mut().zip(&qc.q.data) {
                    *hv += l * qv;
                }
            }
        }
        Some(h)
    }
}

/// Least-distance projection of `x_ref` onto `{g(x,p) ≤ 0, h(x,p) = 0, lb ≤ x ≤ ub}`.
///
/// Affine constraint sets are handled by one QP; quadratic rows by SQP with
/// the exact Hessian; general expressions by SQP with BFGS, in which case the
/// result is only a local projection.
pub fn project_onto_feasible(game: &ParametricGame, p: &[f64], x_ref: &[f64]) -> Result<Projection> {
    let n = game.n_x();
    if x_ref.len() != n {
        return Err(Error::dim("projection point", n, x_ref.len()));
    }
    if p.len() != game.n_p {
        return Err(Error::dim("projection parameter", game.n_p, p.len()));
    }
    if game.shared_violation(x_ref, p) <= FEASIBLE_TOL && game.box_violation(x_ref) <= FEASIBLE_TOL {
        return Ok(Projection {
            x: x_ref.to_vec(),
            status: ProjectionStatus::Unchanged,
        });
    }
    if let Some(set) = game.linear_constraints(p) {
        let qp = QpProblem::new(Mat::identity(n), x_ref.iter().map(|v| -v).collect())
            .with_ineq(set.a, set.b)
            .with_eq(set.e, set.e_rhs)
            .with_bounds(game.x_lb.clone(), game.x_ub.clone());
        let sol = solve_qp(&qp)?;
        return match sol.status {
            QpStatus::Optimal | QpStatus::Relaxed => Ok(Projection {
                x: sol.x,
                status: ProjectionStatus::Exact,
            }),
            QpStatus::Infeasible => Err(Error::Infeasible(format!("{}: empty feasible set at p = {p:?}", game.name))),
            other => Err(Error::Infeasible(format!("{}: projection QP ended with {other:?}", game.name))),
        };
    }
    let problem = LeastDistance { game, p, x_ref };
    let mut x0 = x_ref.to_vec();
    game.clip(&mut x0);
    let out = sqp(&problem, &x0, &SqpConfig::default())?;
    if out.status == SqpStatus::Infeasible || out.violation > 1e-8 {
        return Err(Error::Infeasible(format!(
            "{}: no feasible point found at p = {p:?} (violation {:.3e})",
            game.name, out.violation
        )));
    }
    let status = match game.kind {
        GameKind::Quadratic(_) => ProjectionStatus::Exact,
        _ => ProjectionStatus::Local,
    };
    Ok(Projection { x: out.x, status })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{lq17, qcqp19, ParametricGame};
    use crate::linalg::dist2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn halfplane_game() -> ParametricGame {
        ParametricGame::from_text(
            "MPFIT-GAME v1\nname halfplane\ntag custom\nkind custom\nagent_dims 1 1\nn_p 1\n\
             p_lb 1x1 0\np_ub 1x1 1\nx_lb 1x2 -1 -1\nx_ub 1x2 1 1\n\
             cost 0 (sq x0)\ncost 1 (sq x1)\n",
        )
        .unwrap()
    }

    #[test]
    fn symmetric_halfspace_projection() {
        // x1 + x2 ≤ 1 on [-1,1]² through an lq-shaped game
        let mut g = lq17();
        if let GameKind::Quadratic(d) = &mut g.kind {
            d.a = Mat::from_rows(&[vec![1.0, 1.0]]);
            d.b = vec![1.0];
            d.s = Mat::zeros(1, 2);
        }
        let out = project_onto_feasible(&g, &[0.0, 0.0], &[2.0, 2.0]).unwrap();
        assert!((out.x[0] - 0.5).abs() < 1e-12 && (out.x[1] - 0.5).abs() < 1e-12, "{out:?}");
        let again = project_onto_feasible(&g, &[0.0, 0.0], &out.x).unwrap();
        assert_eq!(again.status, ProjectionStatus::Unchanged);
        assert_eq!(again.x, out.x);
    }

    #[test]
    fn halfline_projection() {
        let g = ParametricGame::from_text(
            "MPFIT-GAME v1\nname halfline\ntag lq\nkind quadratic\nagent_dims 1\nn_p 1\n\
             p_lb 1x1 -1\np_ub 1x1 1\nx_lb 1x1 -inf\nx_ub 1x1 inf\n\
             Q0 1x1 1\nc0 1x1 0\nF0 1x1 0\nA 1x1 1\nb 1x1 0\nS 1x1 1\nE 0x1\ne 1x0\nT 0x1\n",
        )
        .unwrap();
        let out = project_onto_feasible(&g, &[0.0], &[1.0]).unwrap();
        assert_eq!(out.x, vec![0.0]);
    }

    #[test]
    fn box_only_game_clips() {
        let g = halfplane_game();
        let out = project_onto_feasible(&g, &[0.5], &[3.0, -0.2]).unwrap();
        assert_eq!(out.x, vec![1.0, -0.2]);
    }

    #[test]
    fn nonexpansive_on_lq_sets() {
        let g = lq17();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let a = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let b = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let pa = project_onto_feasible(&g, &p, &a).unwrap().x;
            let pb = project_onto_feasible(&g, &p, &b).unwrap().x;
            assert!(dist2(&pa, &pb).sqrt() <= dist2(&a, &b).sqrt() + 1e-12);
            assert!(g.shared_violation(&pa, &p) <= 1e-10);
        }
    }

    #[test]
    fn quadratic_rows_are_satisfied() {
        let g = qcqp19();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = project_onto_feasible(&g, &p, &x).unwrap();
            assert!(g.shared_violation(&out.x, &p) <= 1e-8);
            assert!(g.box_violation(&out.x) == 0.0);
        }
    }
}
