//! Benchmark game families and seeded random generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{GameKind, ParametricGame, QuadConstraint, QuadraticData, StructureTag};
use crate::linalg::{min_sym_eigenvalue, Mat};
use crate::{Error, Result};

/// Seed of the fixed quadratically constrained instance.
pub const QCQP19_SEED: u64 = 19;

const SWITCHING_ELL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinId {
    Lq17,
    Nonmono18,
    Qcqp19,
    Switching20,
    Nonconvex21,
}

impl BuiltinId {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "lq17" => BuiltinId::Lq17,
            "nonmono18" => BuiltinId::Nonmono18,
            "qcqp19" => BuiltinId::Qcqp19,
            "switching20" => BuiltinId::Switching20,
            "nonconvex21" => BuiltinId::Nonconvex21,
            other => return Err(Error::InvalidArgument(format!("unknown builtin game {other:?}"))),
        })
    }
}

/// Builds a benchmark game. `n_agents` is used by the switching and
/// nonconvex families and must be `None` (or 2 or 3 matching the fixed
/// size) for the others.
pub fn build_builtin(id: BuiltinId, n_agents: Option<usize>) -> Result<ParametricGame> {
    let fixed = |n: usize, g: ParametricGame| -> Result<ParametricGame> {
        match n_agents {
            Some(k) if k != n => Err(Error::InvalidArgument(format!("this game has exactly {n} agents"))),
            _ => Ok(g),
        }
    };
    match id {
        BuiltinId::Lq17 => fixed(2, lq17()),
        BuiltinId::Nonmono18 => fixed(2, nonmono18()),
        BuiltinId::Qcqp19 => fixed(3, qcqp19()),
        BuiltinId::Switching20 => {
            let n = n_agents.unwrap_or(2);
            if !(2..=100).contains(&n) {
                return Err(Error::InvalidArgument("switching game needs 2 ≤ N ≤ 100".into()));
            }
            Ok(switching20(n))
        }
        BuiltinId::Nonconvex21 => {
            let n = n_agents.unwrap_or(2);
            if !(1..=100).contains(&n) {
                return Err(Error::InvalidArgument("nonconvex game needs 1 ≤ N ≤ 100".into()));
            }
            Ok(nonconvex21(n))
        }
    }
}

fn sym2(a: f64, b: f64, c: f64) -> Mat {
    Mat::from_rows(&[vec![a, b], vec![b, c]])
}

/// Two-agent strongly monotone LQ game with five shared rows.
pub fn lq17() -> ParametricGame {
    let data = QuadraticData {
        // J1 = 0.995 x1² - 0.67 x2 x1 + (-0.84 - 1.3 p1 + 1.2 p2) x1
        // J2 = 0.56 x2² + 0.09 x1 x2 + (0.7 + 1.45 p1 + 0.09 p2) x2
        q: vec![sym2(1.99, -0.67, 0.0), sym2(0.0, 0.09, 1.12)],
        c: vec![vec![-0.84, 0.0], vec![0.0, 0.7]],
        f: vec![
            Mat::from_rows(&[vec![-1.3, 1.2], vec![0.0, 0.0]]),
            Mat::from_rows(&[vec![0.0, 0.0], vec![1.45, 0.09]]),
        ],
        a: Mat::from_rows(&[
            vec![-0.98, 0.05],
            vec![0.16, -1.21],
            vec![2.22, 0.39],
            vec![1.69, -1.11],
            vec![1.64, -1.36],
        ]),
        b: vec![1.27, 0.68, 0.88, 1.0, 1.19],
        s: Mat::from_rows(&[
            vec![0.13, 0.16],
            vec![0.16, 0.19],
            vec![0.14, 0.16],
            vec![0.12, 0.15],
            vec![0.12, 0.19],
        ]),
        e: Mat::zeros(0, 2),
        e_rhs: Vec::new(),
        t: Mat::zeros(0, 2),
        quad: Vec::new(),
    };
    ParametricGame {
        name: "lq17".into(),
        tag: StructureTag::Lq,
        agent_dims: vec![1, 1],
        n_p: 2,
        p_lb: vec![-1.0; 2],
        p_ub: vec![1.0; 2],
        x_lb: vec![-1.0; 2],
        x_ub: vec![1.0; 2],
        kind: GameKind::Quadratic(data),
    }
}

/// Two-agent LQ game whose pseudo-gradient is not monotone.
pub fn nonmono18() -> ParametricGame {
    let data = QuadraticData {
        // J1 = ½x1² + 2 x2 x1 + 15 x1,  J2 = ½x2² + 3 x1 x2 + (3 + 0.4p) x2
        q: vec![sym2(1.0, 2.0, 0.0), sym2(0.0, 3.0, 1.0)],
        c: vec![vec![15.0, 0.0], vec![0.0, 3.0]],
        f: vec![Mat::zeros(2, 1), Mat::from_rows(&[vec![0.0], vec![0.4]])],
        a: Mat::from_rows(&[vec![1.0, 1.0]]),
        b: vec![-0.3],
        s: Mat::from_rows(&[vec![1.0]]),
        e: Mat::zeros(0, 2),
        e_rhs: Vec::new(),
        t: Mat::zeros(0, 1),
        quad: Vec::new(),
    };
    ParametricGame {
        name: "nonmono18".into(),
        tag: StructureTag::Lq,
        agent_dims: vec![1, 1],
        n_p: 1,
        p_lb: vec![-1.0],
        p_ub: vec![1.0],
        x_lb: vec![-1.0; 2],
        x_ub: vec![1.0; 2],
        kind: GameKind::Quadratic(data),
    }
}

/// Continuous equilibrium map of [`nonmono18`].
pub fn nonmono18_exact(p: f64) -> [f64; 2] {
    if p <= -0.5 {
        [-1.0, 0.7 + p]
    } else {
        [-1.0, -0.4 * p]
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn normal_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| scale * normal(rng)).collect())
}

/// `B Bᵀ / n + shift·I`, symmetric positive definite.
fn random_spd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Mat {
    let b = normal_mat(rng, n, n, 1.0);
    let mut m = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v: f64 = (0..n).map(|k| b.get(i, k) * b.get(j, k)).sum::<f64>() / n as f64;
            m.set(i, j, v + if i == j { shift } else { 0.0 });
        }
    }
    m
}

/// Per-agent cost matrices whose stacked pseudo-gradient Jacobian
/// `G = R + μI` has a symmetric part with smallest eigenvalue at least 0.1.
fn monotone_costs(rng: &mut ChaCha8Rng, dims: &[usize]) -> Vec<Mat> {
    let n: usize = dims.iter().sum();
    let mut g = normal_mat(rng, n, n, 1.0);
    let mut start = 0;
    // diagonal blocks must be symmetric to come from a cost
    for &d in dims {
        for r in start..start + d {
            for c in r + 1..start + d {
                let v = 0.5 * (g.get(r, c) + g.get(c, r));
                g.set(r, c, v);
                g.set(c, r, v);
            }
        }
        start += d;
    }
    let mu = (0.1 - min_sym_eigenvalue(&g)).max(0.0) + 1e-9;
    for k in 0..n {
        g.set(k, k, g.get(k, k) + mu);
    }
    let mut qs = Vec::with_capacity(dims.len());
    let mut start = 0;
    for &d in dims {
        let mut q = Mat::zeros(n, n);
        for r in start..start + d {
            for c in 0..n {
                let v = g.get(r, c);
                if (start..start + d).contains(&c) {
                    q.set(r, c, v);
                } else {
                    q.set(r, c, v);
                    q.set(c, r, v);
                }
            }
        }
        qs.push(q);
        start += d;
    }
    qs
}

/// Random strongly monotone LQ game with `m` shared rows; `x = 0` is
/// strictly feasible at `p = 0`.
pub fn random_lq_gnep(seed: u64, n_agents: usize, n_i: usize, n_p: usize, m: usize) -> ParametricGame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = vec![n_i; n_agents];
    let n = n_agents * n_i;
    let q = monotone_costs(&mut rng, &dims);
    let c = (0..n_agents).map(|_| (0..n).map(|_| normal(&mut rng)).collect()).collect();
    let f = (0..n_agents).map(|_| normal_mat(&mut rng, n, n_p, 1.0)).collect();
    let a = normal_mat(&mut rng, m, n, 1.0);
    let b = (0..m).map(|_| rng.random_range(0.5..1.5)).collect();
    let s = normal_mat(&mut rng, m, n_p, 0.1);
    ParametricGame {
        name: format!("random_lq_s{seed}_N{n_agents}_n{n_i}_p{n_p}_m{m}"),
        tag: StructureTag::Lq,
        agent_dims: dims,
        n_p,
        p_lb: vec![-1.0; n_p],
        p_ub: vec![1.0; n_p],
        x_lb: vec![-1.0; n],
        x_ub: vec![1.0; n],
        kind: GameKind::Quadratic(QuadraticData {
            e: Mat::zeros(0, n),
            e_rhs: Vec::new(),
            t: Mat::zeros(0, n_p),
            quad: Vec::new(),
            q,
            c,
            f,
            a,
            b,
            s,
        }),
    }
}

/// Convex quadratic rows that `x = 0` satisfies strictly for every `p` in
/// `[p_lo, p_hi]`.
fn random_quad_rows(rng: &mut ChaCha8Rng, count: usize, n: usize, n_p: usize, p_lo: f64, p_hi: f64) -> Vec<QuadConstraint> {
    (0..count)
        .map(|_| {
            let q = random_spd(rng, n, 0.1);
            let center: Vec<f64> = (0..n).map(|_| 0.5 * normal(rng)).collect();
            let s: Vec<f64> = (0..n_p).map(|_| 0.1 * normal(rng)).collect();
            let at_origin = 0.5 * q.quad_form(&center);
            let worst: f64 = s.iter().map(|v| (v * p_lo).min(v * p_hi)).sum();
            let b = at_origin - worst + rng.random_range(0.2..1.0);
            QuadConstraint { q, center, b, s }
        })
        .collect()
}

/// Linear rows `Ax ≤ b + Sp` with `x = 0` strictly feasible over the box.
fn random_linear_rows(rng: &mut ChaCha8Rng, m: usize, n: usize, n_p: usize, p_lo: f64, p_hi: f64, s_scale: f64) -> (Mat, Vec<f64>, Mat) {
    let a = normal_mat(rng, m, n, 1.0);
    let s = normal_mat(rng, m, n_p, s_scale);
    let b = (0..m)
        .map(|j| {
            let worst: f64 = s.row(j).iter().map(|v| (v * p_lo).min(v * p_hi)).sum();
            rng.random_range(0.5..1.5) - worst
        })
        .collect();
    (a, b, s)
}

/// Random quadratically constrained game: monotone quadratic costs, `m`
/// linear rows and `m_quad` convex quadratic rows.
pub fn random_qcqp_gnep(seed: u64, n_agents: usize, n_i: usize, n_p: usize, m: usize, m_quad: usize) -> ParametricGame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = vec![n_i; n_agents];
    let n = n_agents * n_i;
    let q = monotone_costs(&mut rng, &dims);
    let c = (0..n_agents).map(|_| (0..n).map(|_| normal(&mut rng)).collect()).collect();
    let f = (0..n_agents).map(|_| normal_mat(&mut rng, n, n_p, 1.0)).collect();
    let (a, b, s) = random_linear_rows(&mut rng, m, n, n_p, -1.0, 1.0, 0.2);
    let quad = random_quad_rows(&mut rng, m_quad, n, n_p, -1.0, 1.0);
    ParametricGame {
        name: format!("random_qcqp_s{seed}_N{n_agents}_n{n_i}_p{n_p}_m{m}_q{m_quad}"),
        tag: StructureTag::Qcqp,
        agent_dims: dims,
        n_p,
        p_lb: vec![-1.0; n_p],
        p_ub: vec![1.0; n_p],
        x_lb: vec![-1.0; n],
        x_ub: vec![1.0; n],
        kind: GameKind::Quadratic(QuadraticData {
            e: Mat::zeros(0, n),
            e_rhs: Vec::new(),
            t: Mat::zeros(0, n_p),
            q,
            c,
            f,
            a,
            b,
            s,
            quad,
        }),
    }
}

/// Three scalar agents, two parameters, 8 linear and 4 quadratic shared rows.
pub fn qcqp19() -> ParametricGame {
    let mut g = random_qcqp_gnep(QCQP19_SEED, 3, 1, 2, 8, 4);
    g.name = "qcqp19".into();
    g
}

/// Internet switching model with `n_agents` scalar agents, `ℓ = 0.01`,
/// `p ∈ [Nℓ, 2]`. The decision box is `[ℓ, 2]`; the upper bound is implied
/// by `Σx ≤ p ≤ 2`.
pub fn switching20(n_agents: usize) -> ParametricGame {
    let ell = SWITCHING_ELL;
    ParametricGame {
        name: format!("switching20_N{n_agents}"),
        tag: StructureTag::Switching,
        agent_dims: vec![1; n_agents],
        n_p: 1,
        p_lb: vec![n_agents as f64 * ell],
        p_ub: vec![2.0],
        x_lb: vec![ell; n_agents],
        x_ub: vec![2.0; n_agents],
        kind: GameKind::Switching { ell },
    }
}

/// Nonconvex game with `n_agents` two-dimensional agents on `[-1,1]`.
pub fn nonconvex21(n_agents: usize) -> ParametricGame {
    let n = 2 * n_agents;
    ParametricGame {
        name: format!("nonconvex21_N{n_agents}"),
        tag: StructureTag::NonconvexTanh,
        agent_dims: vec![2; n_agents],
        n_p: 2,
        p_lb: vec![-1.0; 2],
        p_ub: vec![1.0; 2],
        x_lb: vec![-1.0; n],
        x_ub: vec![1.0; n],
        kind: GameKind::NonconvexTanh,
    }
}

/// Half-width of the decision box of the random multiparametric programs.
const MP_BOX: f64 = 10.0;

/// Random strictly convex mpQP `min ½xᵀHx + (c + Fp)ᵀx` s.t. `Ax ≤ b + Sp`,
/// `p ∈ [0,1]^{n_p}`, with `x = 0` strictly feasible for every `p`.
pub fn random_mpqp(seed: u64, n_x: usize, n_p: usize, m: usize) -> ParametricGame {
    random_mpqcqp(seed, n_x, n_p, m, 0)
}

/// [`random_mpqp`] plus `m_quad` convex quadratic rows.
pub fn random_mpqcqp(seed: u64, n_x: usize, n_p: usize, m: usize, m_quad: usize) -> ParametricGame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = random_spd(&mut rng, n_x, 0.1);
    let c: Vec<f64> = (0..n_x).map(|_| normal(&mut rng)).collect();
    let f = normal_mat(&mut rng, n_x, n_p, 1.0);
    let (a, b, s) = random_linear_rows(&mut rng, m, n_x, n_p, 0.0, 1.0, 1.0);
    let quad = random_quad_rows(&mut rng, m_quad, n_x, n_p, 0.0, 1.0);
    ParametricGame {
        name: if m_quad == 0 {
            format!("mpqp_s{seed}_n{n_x}_p{n_p}_m{m}")
        } else {
            format!("mpqcqp_s{seed}_n{n_x}_p{n_p}_m{m}_q{m_quad}")
        },
        tag: StructureTag::SingleAgent,
        agent_dims: vec![n_x],
        n_p,
        p_lb: vec![0.0; n_p],
        p_ub: vec![1.0; n_p],
        x_lb: vec![-MP_BOX; n_x],
        x_ub: vec![MP_BOX; n_x],
        kind: GameKind::Quadratic(QuadraticData {
            q: vec![h],
            c: vec![c],
            f: vec![f],
            a,
            b,
            s,
            e: Mat::zeros(0, n_x),
            e_rhs: Vec::new(),
            t: Mat::zeros(0, n_p),
            quad,
        }),
    }
}
