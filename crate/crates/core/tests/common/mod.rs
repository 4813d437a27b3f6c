//! Independent oracles shared by the integration and acceptance tests.

#![allow(dead_code)]

use mpgne::dataset::latin_hypercube;
use mpgne::games::{build_builtin, random_mpqp, BuiltinId, ParametricGame};
use mpgne::learn::{gne_objective, single_agent_objective, NiLoss, NiTrainConfig, OutputMap, ValueModelSet, ValueRegularization};
use mpgne::linalg::Mat;
use mpgne::nn::{Activation, MlpArchitecture, MlpParams};
use mpgne::optimize::{solve_qp, QpProblem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct RandomQp {
    pub h: Mat,
    pub f: Vec<f64>,
    pub a: Mat,
    pub b: Vec<f64>,
}

/// Strictly convex QP with a strictly feasible point, `n <= 3`, `m <= 5`.
pub fn random_qp(rng: &mut ChaCha8Rng) -> RandomQp {
    let n = rng.random_range(1..=3);
    let m = rng.random_range(0..=5);
    let mut g = |s: f64| rng.random_range(-s..s);
    let b0: Vec<f64> = (0..n * n).map(|_| g(1.0)).collect();
    let mut h = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v: f64 = (0..n).map(|k| b0[i * n + k] * b0[j * n + k]).sum();
            h.set(i, j, v + if i == j { 0.2 } else { 0.0 });
        }
    }
    let f = (0..n).map(|_| g(3.0)).collect();
    let x0: Vec<f64> = (0..n).map(|_| g(1.0)).collect();
    let a = Mat::from_vec(m, n, (0..m * n).map(|_| g(1.0)).collect());
    let b = (0..m)
        .map(|j| {
            let ax: f64 = a.row(j).iter().zip(&x0).map(|(u, v)| u * v).sum();
            ax + 0.05 + g(1.0).abs()
        })
        .collect();
    RandomQp { h, f, a, b }
}

/// Minimizer by enumerating every active set and keeping KKT points.
pub fn brute_force_qp(q: &RandomQp) -> Vec<f64> {
    let n = q.f.len();
    let m = q.b.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let act: Vec<usize> = (0..m).filter(|j| mask & (1 << j) != 0).collect();
        let k = act.len();
        if k > n {
            continue;
        }
        let mut kkt = DMatrix::<f64>::zeros(n + k, n + k);
        let mut rhs = DVector::<f64>::zeros(n + k);
        for i in 0..n {
            for j in 0..n {
                kkt[(i, j)] = q.h.get(i, j);
            }
            rhs[i] = -q.f[i];
        }
        for (r, &j) in act.iter().enumerate() {
            for i in 0..n {
                kkt[(n + r, i)] = q.a.get(j, i);
                kkt[(i, n + r)] = q.a.get(j, i);
            }
            rhs[n + r] = q.b[j];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x: Vec<f64> = (0..n).map(|i| sol[i]).collect();
        if (0..k).any(|r| sol[n + r] < -1e-10) {
            continue;
        }
        let feasible = (0..m).all(|j| q.a.row(j).iter().zip(&x).map(|(u, v)| u * v).sum::<f64>() <= q.b[j] + 1e-10);
        if !feasible {
            continue;
        }
        let obj = 0.5 * (0..n).map(|i| (0..n).map(|j| x[i] * q.h.get(i, j) * x[j]).sum::<f64>()).sum::<f64>()
            + q.f.iter().zip(&x).map(|(u, v)| u * v).sum::<f64>();
        if best.as_ref().is_none_or(|(o, _)| obj < *o) {
            best = Some((obj, x));
        }
    }
    best.expect("a strictly feasible strictly convex QP has a KKT point").1
}

/// Largest deviation between the solver and the enumeration oracle.
pub fn qp_oracle_worst(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let q = random_qp(&mut rng);
        let want = brute_force_qp(&q);
        let prob = QpProblem::new(q.h.clone(), q.f.clone()).with_ineq(q.a.clone(), q.b.clone());
        let got = solve_qp(&prob).expect("solver runs").x;
        for (u, v) in got.iter().zip(&want) {
            worst = worst.max((u - v).abs());
        }
    }
    worst
}

/// Number of random `(M, dim)` pairs whose samples miss the one-per-stratum property.
pub fn lhs_failures(pairs: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for t in 0..pairs {
        let m = rng.random_range(1..=200);
        let dim = rng.random_range(1..=8);
        let lb: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..0.0)).collect();
        let ub: Vec<f64> = lb.iter().map(|l| l + rng.random_range(0.1..4.0)).collect();
        let pts = latin_hypercube(m, &lb, &ub, seed + t as u64).expect("valid box");
        let ok = pts.len() == m
            && (0..dim).all(|d| {
                let mut hit = vec![0usize; m];
                for x in &pts {
                    let s = ((x[d] - lb[d]) / (ub[d] - lb[d]) * m as f64).floor() as usize;
                    hit[s.min(m - 1)] += 1;
                }
                hit.iter().all(|&c| c == 1)
            });
        if !ok {
            bad += 1;
        }
    }
    bad
}

fn random_p(game: &ParametricGame, k: usize, rng: &mut ChaCha8Rng) -> Mat {
    let mut p = Mat::zeros(k, game.n_p);
    for r in 0..k {
        for (j, v) in p.row_mut(r).iter_mut().enumerate() {
            *v = rng.random_range(game.p_lb[j]..game.p_ub[j]);
        }
    }
    p
}

fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, theta: &[f64]) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let h = 1e-6 * theta[i].abs().max(1.0);
            t[i] = theta[i] + h;
            let up = f(&t);
            t[i] = theta[i] - h;
            let dn = f(&t);
            t[i] = theta[i];
            (up - dn) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
    let s: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    d / s.max(1e-8)
}

/// Worst normwise relative error between tape gradients and central
/// differences over random games, models, losses and penalty settings.
pub fn autodiff_fd_worst(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let acts = [Activation::Tanh, Activation::Swish];
    let losses = [NiLoss::Sum, NiLoss::PosPart, NiLoss::SmoothPos];
    let mut worst: f64 = 0.0;
    for t in 0..instances {
        let act = acts[t % 2];
        let cfg = NiTrainConfig {
            loss: losses[t % 3],
            beta: rng.random_range(1.0..200.0),
            gamma: rng.random_range(1.0..20.0),
            l2: 1e-3,
            l1: 0.0,
            per_sample_penalty: t % 4 == 1,
            normalize_input: t % 5 == 2,
            ..NiTrainConfig::default()
        };
        let kind = t % 5;
        let (value, grad) = if kind == 4 {
            let game = random_mpqp(t as u64, 3, 2, 5);
            let arch = MlpArchitecture::new(game.n_p, &[4, 3], game.n_x(), act, t % 2 == 0).unwrap();
            let theta = MlpParams::init(&arch, t as u64).flatten();
            let p = random_p(&game, 6, &mut rng);
            let f = |th: &[f64]| single_agent_objective(&game, &arch, &OutputMap::Identity, th, &p, &cfg).unwrap().0;
            (central_difference(f, &theta), single_agent_objective(&game, &arch, &OutputMap::Identity, &theta, &p, &cfg).unwrap().1)
        } else {
            let id = [BuiltinId::Lq17, BuiltinId::Nonmono18, BuiltinId::Qcqp19, BuiltinId::Switching20][kind];
            let game = build_builtin(id, None).unwrap();
            let output = if id == BuiltinId::Switching20 && t % 2 == 1 { OutputMap::tanh_box(&game).unwrap() } else { OutputMap::Identity };
            let arch = MlpArchitecture::new(game.n_p, &[5, 3], game.n_x(), act, t % 3 == 0).unwrap();
            let values = ValueModelSet {
                models: (0..game.n_agents())
                    .map(|i| {
                        let va = MlpArchitecture::new(game.n_x() - game.agent_range(i).len() + game.n_p, &[4], 1, Activation::Swish, true).unwrap();
                        MlpParams::init(&va, 100 + t as u64 + i as u64)
                    })
                    .collect(),
                reg: vec![ValueRegularization::default(); game.n_agents()],
            };
            let theta = MlpParams::init(&arch, t as u64).flatten();
            let p = random_p(&game, 6, &mut rng);
            let f = |th: &[f64]| gne_objective(&game, &values, &arch, &output, th, &p, &cfg).unwrap().0;
            (central_difference(f, &theta), gne_objective(&game, &values, &arch, &output, &theta, &p, &cfg).unwrap().1)
        };
        worst = worst.max(rel_err(&grad, &value));
    }
    worst
}
