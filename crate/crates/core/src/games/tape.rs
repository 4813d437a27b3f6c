//! Batch evaluation of costs and constraints on an autodiff tape.
//!
//! Decisions are `K x n_x` and parameters `K x n_p` nodes, one sample per row.

use super::{GameKind, ParametricGame};
use crate::autodiff::{Tape, Unary, Var};
use crate::linalg::Mat;

/// Row-wise `½ xᵀQx` for symmetric `q`.
fn half_quad(tape: &mut Tape, x: Var, q: &Mat) -> Var {
    let qc = tape.constant(q.clone());
    let xq = tape.matmul_nt(x, qc);
    let prod = tape.mul(xq, x);
    let s = tape.sum_rows(prod);
    tape.scale(s, 0.5)
}

impl ParametricGame {
    /// Per-agent costs as `K x 1` nodes.
    pub fn tape_costs(&self, tape: &mut Tape, x: Var, p: Var) -> Vec<Var> {
        let na = self.n_agents();
        match &self.kind {
            GameKind::Quadratic(d) => (0..na)
                .map(|i| {
                    let quad = half_quad(tape, x, &d.q[i]);
                    let c = tape.constant(Mat::row_vector(&d.c[i]));
                    let lin = tape.matmul_nt(x, c);
                    let f = tape.constant(d.f[i].clone());
                    let fp = tape.matmul_nt(p, f);
                    let fpx = tape.mul(fp, x);
                    let par = tape.sum_rows(fpx);
                    let s = tape.add(quad, lin);
                    tape.add(s, par)
                })
                .collect(),
            GameKind::Switching { .. } => {
                let s = tape.sum_rows(x);
                let pc = tape.col(p, 0);
                (0..na)
                    .map(|i| {
                        let xi = tape.col(x, i);
                        let a = tape.div(xi, s);
                        let b = tape.div(xi, pc);
                        tape.sub(b, a)
                    })
                    .collect()
            }
            GameKind::NonconvexTanh => {
                let m = self.agent_dims[0];
                let n = self.n_x();
                let mut summer = Mat::zeros(m, n);
                for k in 0..n {
                    summer.set(k % m, k, 1.0);
                }
                let sm = tape.constant(summer);
                let s = tape.matmul_nt(x, sm);
                let ss = tape.mul(s, s);
                let s2 = tape.sum_rows(ss);
                let xx = tape.mul(x, x);
                let sq = tape.sum_rows(xx);
                let p0 = tape.col(p, 0);
                let p1 = tape.col(p, 1);
                (0..na)
                    .map(|i| {
                        let ii = (i + 1) as f64;
                        let idx: Vec<usize> = self.agent_range(i).collect();
                        let xi = tape.cols(x, &idx);
                        let rest = tape.sub(s, xi);
                        let cr = tape.mul(rest, s);
                        let cross = tape.sum_rows(cr);
                        let wc = tape.mul(cross, p0);
                        let wc = tape.scale(wc, na as f64 - ii);
                        let a = tape.scale(s2, ii + 1.0);
                        let isq = tape.scale(sq, ii);
                        let t = tape.unary(isq, Unary::Tanh);
                        let pt = tape.mul(t, p1);
                        let ab = tape.add(a, wc);
                        tape.add(ab, pt)
                    })
                    .collect()
            }
            GameKind::Custom(c) => c.costs.iter().map(|e| e.tape(tape, x, p)).collect(),
        }
    }

    /// `(g, h)` as `K x n_g` and `K x n_h` nodes; `None` when there are no rows.
    pub fn tape_constraints(&self, tape: &mut Tape, x: Var, p: Var) -> (Option<Var>, Option<Var>) {
        match &self.kind {
            GameKind::Quadratic(d) => {
                let mut parts = Vec::new();
                if d.a.rows > 0 {
                    parts.push(affine_rows(tape, x, p, &d.a, &d.b, &d.s));
                }
                for qc in &d.quad {
                    let neg_c: Vec<f64> = qc.center.iter().map(|v| -v).collect();
                    let nc = tape.constant(Mat::row_vector(&neg_c));
                    let dx = tape.add_row(x, nc);
                    let quad = half_quad(tape, dx, &qc.q);
                    let sc = tape.constant(Mat::row_vector(&qc.s));
                    let sp = tape.matmul_nt(p, sc);
                    let v = tape.sub(quad, sp);
                    parts.push(tape.add_scalar(v, -qc.b));
                }
                let g = (!parts.is_empty()).then(|| if parts.len() == 1 { parts[0] } else { tape.hcat(&parts) });
                let h = (d.e.rows > 0).then(|| affine_rows(tape, x, p, &d.e, &d.e_rhs, &d.t));
                (g, h)
            }
            GameKind::Switching { .. } => {
                let s = tape.sum_rows(x);
                let pc = tape.col(p, 0);
                (Some(tape.sub(s, pc)), None)
            }
            GameKind::NonconvexTanh => (None, None),
            GameKind::Custom(c) => {
                let rows = |tape: &mut Tape, es: &[super::Expr]| -> Option<Var> {
                    if es.is_empty() {
                        return None;
                    }
                    let cols: Vec<Var> = es.iter().map(|e| e.tape(tape, x, p)).collect();
                    Some(tape.hcat(&cols))
                };
                let g = rows(tape, &c.ineq);
                let h = rows(tape, &c.eq);
                (g, h)
            }
        }
    }

    /// Box rows `lb - x ≤ 0` and `x - ub ≤ 0` for every finite bound, as a
    /// `K x r` node.
    pub fn tape_box_rows(&self, tape: &mut Tape, x: Var) -> Option<Var> {
        let n = self.n_x();
        let lower: Vec<usize> = (0..n).filter(|&j| self.x_lb[j].is_finite()).collect();
        let upper: Vec<usize> = (0..n).filter(|&j| self.x_ub[j].is_finite()).collect();
        let mut parts = Vec::new();
        if !lower.is_empty() {
            let xl = tape.cols(x, &lower);
            let neg = tape.scale(xl, -1.0);
            let lb: Vec<f64> = lower.iter().map(|&j| self.x_lb[j]).collect();
            let lbv = tape.constant(Mat::row_vector(&lb));
            parts.push(tape.add_row(neg, lbv));
        }
        if !upper.is_empty() {
            let xu = tape.cols(x, &upper);
            let ub: Vec<f64> = upper.iter().map(|&j| -self.x_ub[j]).collect();
            let ubv = tape.constant(Mat::row_vector(&ub));
            parts.push(tape.add_row(xu, ubv));
        }
        match parts.len() {
            0 => None,
            1 => Some(parts[0]),
            _ => Some(tape.hcat(&parts)),
        }
    }
}

/// `x Aᵀ - b - p Sᵀ`
fn affine_rows(tape: &mut Tape, x: Var, p: Var, a: &Mat, b: &[f64], s: &Mat) -> Var {
    let am = tape.constant(a.clone());
    let ax = tape.matmul_nt(x, am);
    let nb: Vec<f64> = b.iter().map(|v| -v).collect();
    let nbv = tape.constant(Mat::row_vector(&nb));
    let axb = tape.add_row(ax, nbv);
    if s.cols == 0 {
        return axb;
    }
    let sm = tape.constant(s.clone());
    let sp = tape.matmul_nt(p, sm);
    tape.sub(axb, sp)
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use crate::autodiff::Tape;
    use crate::linalg::Mat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tape_matches_plain_evaluators() {
        let custom = ParametricGame::from_text(
            "MPFIT-GAME v1\nname toy\ntag custom\nkind custom\nagent_dims 1 1\nn_p 1\n\
             p_lb 1x1 0\np_ub 1x1 1\nx_lb 1x2 -1 -1\nx_ub 1x2 1 1\n\
             cost 0 (+ (sq x0) (* x0 x1))\ncost 1 (+ (sq x1) (* p0 x1))\nineq (- (+ x0 x1) p0)\neq (- x0 x1)\n",
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for game in [lq17(), nonmono18(), qcqp19(), switching20(3), nonconvex21(3), custom] {
            let k = 7;
            let n = game.n_x();
            let xs = Mat::from_vec(k, n, (0..k * n).map(|_| rng.random_range(0.05..0.9)).collect());
            let ps = Mat::from_vec(
                k,
                game.n_p,
                (0..k * game.n_p)
                    .map(|j| {
                        let d = j % game.n_p;
                        rng.random_range(game.p_lb[d]..game.p_ub[d])
                    })
                    .collect(),
            );
            let mut tape = Tape::new();
            let (xv, pv) = (tape.constant(xs.clone()), tape.constant(ps.clone()));
            let costs = game.tape_costs(&mut tape, xv, pv);
            let (g, h) = game.tape_constraints(&mut tape, xv, pv);
            for r in 0..k {
                let (x, p) = (xs.row(r), ps.row(r));
                for (i, c) in costs.iter().enumerate() {
                    let want = game.cost(i, x, p);
                    assert!((tape.value(*c).data[r] - want).abs() <= 1e-13 * want.abs().max(1.0), "{}", game.name);
                }
                let (gw, hw) = game.constraints(x, p);
                if let Some(g) = g {
                    for j in 0..gw.len() {
                        assert!((tape.value(g).get(r, j) - gw[j]).abs() <= 1e-13);
                    }
                } else {
                    assert!(gw.is_empty());
                }
                if let Some(h) = h {
                    for j in 0..hw.len() {
                        assert!((tape.value(h).get(r, j) - hw[j]).abs() <= 1e-13);
                    }
                } else {
                    assert!(hw.is_empty());
                }
            }
        }
    }

    #[test]
    fn box_rows() {
        let g = switching20(2);
        let mut tape = Tape::new();
        let x = tape.constant(Mat::from_rows(&[vec![0.0, 3.0]]));
        let rows = g.tape_box_rows(&mut tape, x).unwrap();
        assert_eq!(tape.value(rows).data, vec![0.01, -2.99, -2.0, 1.0]);
    }
}
