//! NI losses and the smooth-max constraint penalty, as plain functions and
//! as tape builders.

use crate::autodiff::{log_sum_exp, Tape, Unary, Var};
use crate::linalg::Mat;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiLoss {
    /// `Σ ν̂_i`
    Sum,
    /// `Σ max(ν̂_i, 0)`
    PosPart,
    /// `½ Σ (ν̂_i + √(ν̂_i² + ε))`
    SmoothPos,
}

impl NiLoss {
    pub fn name(self) -> &'static str {
        match self {
            NiLoss::Sum => "sum",
            NiLoss::PosPart => "pos_part",
            NiLoss::SmoothPos => "smooth_pos",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sum" | "11a" => Ok(NiLoss::Sum),
            "pos_part" | "11b" => Ok(NiLoss::PosPart),
            "smooth_pos" | "11c" => Ok(NiLoss::SmoothPos),
            _ => Err(Error::parse("loss variant", format!("unknown loss {s:?}"))),
        }
    }
}

pub fn ni_loss(nu: &[f64], variant: NiLoss, eps: f64) -> f64 {
    match variant {
        NiLoss::Sum => nu.iter().sum(),
        NiLoss::PosPart => nu.iter().map(|v| v.max(0.0)).sum(),
        NiLoss::SmoothPos => 0.5 * nu.iter().map(|v| v + (v * v + eps).sqrt()).sum::<f64>(),
    }
}

/// Elementwise loss of a `K x N` node, summed over agents: `K x 1`.
pub(crate) fn tape_ni_loss(tape: &mut Tape, nu: Var, variant: NiLoss, eps: f64) -> Var {
    let per = match variant {
        NiLoss::Sum => nu,
        NiLoss::PosPart => tape.unary(nu, Unary::PosPart),
        NiLoss::SmoothPos => {
            let sq = tape.unary(nu, Unary::Square);
            let sq = tape.add_scalar(sq, eps);
            let r = tape.unary(sq, Unary::Sqrt);
            let s = tape.add(nu, r);
            tape.scale(s, 0.5)
        }
    };
    tape.sum_rows(per)
}

/// `(β/γ) log Σ_k (Σ_j e^{γ max(g_kj,0)} + Σ_t e^{γ |h_kt|})` for `K x n_g`
/// and `K x n_h` row blocks.
pub fn smooth_max_penalty(g: &Mat, h: &Mat, beta: f64, gamma: f64) -> f64 {
    let mut z: Vec<f64> = g.data.iter().map(|v| gamma * v.max(0.0)).collect();
    z.extend(h.data.iter().map(|v| gamma * v.abs()));
    if z.is_empty() {
        return 0.0;
    }
    beta / gamma * log_sum_exp(&z)
}

/// Per-sample variant: `(β/γ) (1/K) Σ_k log(Σ_j e^{γ max(g_kj,0)} + Σ_t e^{γ |h_kt|})`.
pub fn smooth_max_penalty_per_sample(g: &Mat, h: &Mat, beta: f64, gamma: f64) -> f64 {
    let k = g.rows.max(h.rows);
    if k == 0 || g.cols + h.cols == 0 {
        return 0.0;
    }
    let total: f64 = (0..k)
        .map(|r| {
            let mut z: Vec<f64> = if g.cols > 0 { g.row(r).iter().map(|v| gamma * v.max(0.0)).collect() } else { Vec::new() };
            if h.cols > 0 {
                z.extend(h.row(r).iter().map(|v| gamma * v.abs()));
            }
            log_sum_exp(&z)
        })
        .sum();
    beta / gamma * total / k as f64
}

/// Tape version of the penalty. `ineq` holds rows penalized through their
/// positive part, `eq` rows through their absolute value.
pub(crate) fn tape_penalty(tape: &mut Tape, ineq: &[Var], eq: &[Var], beta: f64, gamma: f64, per_sample: bool) -> Option<Var> {
    let mut parts = Vec::new();
    for &g in ineq {
        parts.push(tape.unary(g, Unary::PosPart));
    }
    for &h in eq {
        parts.push(tape.unary(h, Unary::Abs));
    }
    if parts.is_empty() {
        return None;
    }
    let v = if parts.len() == 1 { parts[0] } else { tape.hcat(&parts) };
    let z = tape.scale(v, gamma);
    let lse = if per_sample {
        // row-wise log-sum-exp, shifted by each row's maximum
        let zm = tape.value(z);
        let (k, c) = (zm.rows, zm.cols);
        let mut shift = Mat::zeros(k, c);
        let mut shift_col = Mat::zeros(k, 1);
        for r in 0..k {
            let m = zm.row(r).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            shift_col.data[r] = m;
            shift.row_mut(r).fill(m);
        }
        let sc = tape.constant(shift);
        let zs = tape.sub(z, sc);
        let e = tape.unary(zs, Unary::Exp);
        let s = tape.sum_rows(e);
        let l = tape.unary(s, Unary::Log);
        let scc = tape.constant(shift_col);
        let l = tape.add(l, scc);
        tape.mean_all(l)
    } else {
        tape.log_sum_exp(z)
    };
    Some(tape.scale(lse, beta / gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn loss_examples() {
        assert_eq!(ni_loss(&[1.0, -2.0], NiLoss::Sum, 1e-4), -1.0);
        assert_eq!(ni_loss(&[1.0, -2.0], NiLoss::PosPart, 1e-4), 1.0);
        assert!((ni_loss(&[0.0, 0.0], NiLoss::SmoothPos, 1e-4) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn penalty_floor_and_single_violation() {
        let g = Mat::from_vec(3, 2, vec![-1.0, -0.5, 0.0, -2.0, -0.1, -0.3]);
        let h = Mat::zeros(3, 0);
        let v = smooth_max_penalty(&g, &h, 100.0, 10.0);
        assert!((v - 10.0 * (6.0f64).ln()).abs() <= 1e-12);
        let one = Mat::from_vec(1, 1, vec![0.37]);
        assert!((smooth_max_penalty(&one, &h, 100.0, 10.0) - 37.0).abs() <= 1e-12);
    }

    #[test]
    fn tape_penalty_matches_plain() {
        let g = Mat::from_vec(2, 2, vec![0.3, -1.0, 2.0, 0.1]);
        let h = Mat::from_vec(2, 1, vec![-0.2, 0.05]);
        for per_sample in [false, true] {
            let mut tape = Tape::new();
            let (gv, hv) = (tape.constant(g.clone()), tape.constant(h.clone()));
            let out = tape_penalty(&mut tape, &[gv], &[hv], 5.0, 10.0, per_sample).unwrap();
            let want = if per_sample {
                smooth_max_penalty_per_sample(&g, &h, 5.0, 10.0)
            } else {
                smooth_max_penalty(&g, &h, 5.0, 10.0)
            };
            assert!((tape.scalar(out) - want).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn nonnegative_losses(nu in prop::collection::vec(-5.0f64..5.0, 1..6)) {
            prop_assert!(ni_loss(&nu, NiLoss::PosPart, 1e-4) >= 0.0);
            prop_assert!(ni_loss(&nu, NiLoss::SmoothPos, 1e-4) > 0.0);
        }

        #[test]
        fn smooth_pos_approaches_pos_part(nu in prop::collection::vec(-5.0f64..5.0, 1..6), e in 1e-10f64..1.0) {
            let d = (ni_loss(&nu, NiLoss::SmoothPos, e) - ni_loss(&nu, NiLoss::PosPart, e)).abs();
            prop_assert!(d <= nu.len() as f64 * e.sqrt() / 2.0 + 1e-12);
        }

        #[test]
        fn penalty_sandwich(vals in prop::collection::vec(-1.0f64..1.0, 1..24), beta in 0.1f64..100.0, gamma in 0.5f64..20.0) {
            let k = vals.len();
            let g = Mat::from_vec(k, 1, vals.clone());
            let h = Mat::zeros(k, 0);
            let pen = smooth_max_penalty(&g, &h, beta, gamma);
            let vmax = vals.iter().fold(0.0f64, |a, v| a.max(v.max(0.0)));
            prop_assert!(pen >= beta * vmax - 1e-9);
            prop_assert!(pen <= beta * vmax + beta / gamma * (k as f64).ln() + 1e-9);
        }
    }
}
