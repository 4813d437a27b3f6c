//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs the desk-scale benchmarks, so expect several minutes on one core.

mod common;

use std::path::Path;
use std::time::Instant;

use mpgne::bestresponse::{ni_gap, switching_best_response, switching_best_response_numeric};
use mpgne::evaluate::bench::{generate_datasets, retrain_gne, run_with_data, Experiment};
use mpgne::games::{nonmono18, nonmono18_exact};
use mpgne::learn::{ni_loss, smooth_max_penalty, NiLoss};
use mpgne::linalg::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that cannot be met here; see the notes shipped with the repo.
/// They still print FAIL with the measured numbers.
const KNOWN_UNATTAINED: &[u32] = &[5];

struct Outcome {
    id: u32,
    pass: bool,
}

fn report(out: &mut Vec<Outcome>, id: u32, name: &str, pass: bool, detail: String, start: Instant) {
    println!("{} criterion {id} {name}: {detail} [{:.1}s]", if pass { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
    out.push(Outcome { id, pass });
}

fn exact_map(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let game = nonmono18();
    let (mut gap, mut viol): (f64, f64) = (0.0, 0.0);
    for k in 0..=200 {
        let p = -1.0 + 2.0 * k as f64 / 200.0;
        let x = nonmono18_exact(p);
        gap = gap.max(ni_gap(&game, &x, &[p]).expect("best responses"));
        viol = viol.max(game.shared_violation(&x, &[p])).max(game.box_violation(&x));
    }
    report(out, 1, "nonmono18 exact map", gap <= 1e-8 && viol <= 1e-10, format!("max NI {gap:.2e} (<= 1e-8), max violation {viol:.2e} (<= 1e-10)"), t);
}

fn nonmono_training(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let exp = Experiment::named("nonmono18", None).unwrap();
    let r = run_with_data(&exp, &generate_datasets(&exp).unwrap()).unwrap();
    let e = &r.reports[0];
    let pass = e.mse_br <= 1e-2 && e.max_violation <= 1e-3;
    report(out, 2, "nonmono18 training", pass, format!("MSE_BR {:.3e} (<= 1e-2), v_max {:.3e} (<= 1e-3)", e.mse_br, e.max_violation), t);
}

fn lq_training(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let exp = Experiment::named("lq17", None).unwrap();
    let data = generate_datasets(&exp).unwrap();
    let r = run_with_data(&exp, &data).unwrap();
    let e = &r.reports[0];
    let base = e.mse_br <= 5e-2 && e.max_violation <= 5e-2;
    let values = r.values.as_ref().expect("game run has value models");
    let sums: Vec<f64> = [1.0, 10.0]
        .iter()
        .map(|&b| retrain_gne(&exp, &data, values, NiLoss::Sum, b).unwrap().mse_br)
        .collect();
    let ordering = sums.iter().all(|m| *m > 0.3);
    report(
        out,
        3,
        "lq17 training",
        base && ordering,
        format!(
            "smooth_pos MSE_BR {:.3e} (<= 5e-2), v_max {:.3e} (<= 5e-2); sum loss MSE_BR beta=1 {:.6e}, beta=10 {:.6e} (> 0.3)",
            e.mse_br, e.max_violation, sums[0], sums[1]
        ),
        t,
    );
}

fn switching(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let exp = Experiment::named("switching", Some(2)).unwrap();
    let r = run_with_data(&exp, &generate_datasets(&exp).unwrap()).unwrap();
    let e = &r.reports[0];
    let ell = 0.01;
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let p = rng.random_range(2.0 * ell..2.0);
        let a = rng.random_range(ell..2.0);
        let exact = switching_best_response(p, a, ell).unwrap();
        let numeric = switching_best_response_numeric(p, a, ell).unwrap();
        worst = worst.max((exact - numeric).abs());
    }
    let pass = e.mse_br <= 1e-3 && e.max_violation <= 1e-3 && worst <= 1e-10;
    report(
        out,
        4,
        "switching N=2",
        pass,
        format!(
            "{} MSE_BR {:.3e} (<= 1e-3), v_max {:.3e} (<= 1e-3); analytic vs numeric {worst:.2e} (<= 1e-10) on 1e4 states",
            e.mode.name(),
            e.mse_br,
            e.max_violation
        ),
        t,
    );
}

fn mpqp(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let exp = Experiment::named("mpqp", None).unwrap();
    let r = run_with_data(&exp, &generate_datasets(&exp).unwrap()).unwrap();
    let e = &r.reports[0];
    let rel = e.rel_error.expect("single-agent report has a relative error");
    let speedup = r.solver_time.expect("solver timed") / e.predict_time;
    let pass = rel <= 1e-2 && e.mean_violation <= 1e-2 && speedup >= 100.0;
    report(
        out,
        5,
        "mpQP single agent",
        pass,
        format!("e_rel {rel:.3e} (<= 1e-2), v_mean {:.3e} (<= 1e-2), speedup {speedup:.0}x (>= 100)", e.mean_violation),
        t,
    );
}

fn loss_identities(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for _ in 0..200 {
        let beta = rng.random_range(0.5..200.0);
        let gamma = rng.random_range(0.5..20.0);
        let k = rng.random_range(1..20);
        let ng = rng.random_range(1..6);
        let nh = rng.random_range(0..3);

        let feas = Mat::from_vec(k, ng, (0..k * ng).map(|_| -rng.random_range(0.0..3.0)).collect());
        let floor = beta / gamma * ((k * ng) as f64).ln();
        let got = smooth_max_penalty(&feas, &Mat::zeros(k, 0), beta, gamma);
        worst = worst.max((got - floor).abs() / floor.max(1.0));

        let v = rng.random_range(0.0..2.0);
        let single = smooth_max_penalty(&Mat::from_vec(1, 1, vec![v]), &Mat::zeros(1, 0), beta, gamma);
        worst = worst.max((single - beta * v).abs() / (beta * v).max(1.0));

        let g = Mat::from_vec(k, ng, (0..k * ng).map(|_| rng.random_range(-1.0..1.0)).collect());
        let h = Mat::from_vec(k, nh, (0..k * nh).map(|_| rng.random_range(-0.5..0.5)).collect());
        let vmax = g.data.iter().map(|x| x.max(0.0)).chain(h.data.iter().map(|x| x.abs())).fold(0.0, f64::max);
        let pen = smooth_max_penalty(&g, &h, beta, gamma);
        let upper = beta * vmax + beta / gamma * ((k * (ng + nh)) as f64).ln();
        ok &= pen >= beta * vmax - 1e-12 * pen.abs().max(1.0) && pen <= upper + 1e-12 * upper.abs().max(1.0);

        let n = rng.random_range(1..6);
        let eps = 10f64.powf(rng.random_range(-8.0..0.0));
        let nu: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d = ni_loss(&nu, NiLoss::SmoothPos, eps) - ni_loss(&nu, NiLoss::PosPart, eps);
        ok &= d >= -1e-12 && d <= n as f64 * eps.sqrt() / 2.0 + 1e-12;
    }
    let pass = ok && worst <= 1e-12;
    report(out, 6, "loss identities", pass, format!("floor/single worst rel {worst:.2e} (<= 1e-12), sandwich and smoothing bounds {}", if ok { "hold" } else { "violated" }), t);
}

fn numerics(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let fd = common::autodiff_fd_worst(100, 3);
    let qp = common::qp_oracle_worst(200, 7);
    let lhs = common::lhs_failures(100, 11);
    let pass = fd <= 1e-5 && qp <= 1e-7 && lhs == 0;
    report(
        out,
        7,
        "numerics",
        pass,
        format!("autodiff vs FD {fd:.2e} (<= 1e-5) on 100 instances, QP vs enumeration {qp:.2e} (<= 1e-7) on 200, LHS failures {lhs}/100"),
        t,
    );
}

fn cli(args: &[&str]) -> Result<(), String> {
    let argv: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    mpgne_cli::run(&argv).map_err(|e| format!("{args:?}: {e}"))
}

fn manifests(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut found = Vec::new();
    for sub in ["game", "data", "models", "reports"] {
        if let Ok(rd) = std::fs::read_dir(dir.join(sub)) {
            found.extend(rd.map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|x| x == "manifest")));
        }
    }
    found.sort();
    found
}

fn determinism(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("out");
    let root_s = root.to_str().unwrap().to_string();
    let pfile = tmp.path().join("p.csv");
    std::fs::write(&pfile, "0.1\n-0.4\n0.8\n").unwrap();
    let fast = ["--restarts", "2", "--adam_epochs", "40", "--lbfgs_iters", "40", "--m_train", "150", "--m_val", "80", "--m_test", "80", "--out_dir", &root_s];
    let run = |cmd: &str, extra: &[&str]| {
        let mut a = vec![cmd];
        a.extend_from_slice(&fast);
        a.extend_from_slice(extra);
        cli(&a)
    };
    let mut steps = vec![];
    for cmd in ["gen-game", "gen-data", "train-value", "train-gne", "eval"] {
        steps.push(run(cmd, &[]));
    }
    steps.push(run("predict", &["--input", pfile.to_str().unwrap()]));
    let mp = ["--game", "mpqp", "--gne_hidden", "8", "--gne_activation", "relu", "--gne_bypass", "true"];
    for cmd in ["gen-data", "train-mp", "eval"] {
        steps.push(run(cmd, &mp));
    }
    let mut errors: Vec<String> = steps.into_iter().filter_map(Result::err).collect();
    let found = manifests(&root);
    for m in &found {
        if let Err(e) = cli(&["rerun", m.to_str().unwrap()]) {
            errors.push(e);
        }
    }
    let pass = errors.is_empty() && found.len() >= 9;
    report(out, 8, "determinism", pass, format!("{} manifests re-run, {} mismatches or errors {:?}", found.len(), errors.len(), errors), t);
}

fn main() {
    let mut out = Vec::new();
    exact_map(&mut out);
    loss_identities(&mut out);
    numerics(&mut out);
    determinism(&mut out);
    nonmono_training(&mut out);
    switching(&mut out);
    lq_training(&mut out);
    mpqp(&mut out);
    let failed: Vec<u32> = out.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    let unexpected: Vec<u32> = failed.iter().copied().filter(|id| !KNOWN_UNATTAINED.contains(id)).collect();
    println!("{} of {} criteria passed; failed: {failed:?}; of those recorded as unattained: {:?}", out.len() - failed.len(), out.len(), failed.iter().filter(|id| KNOWN_UNATTAINED.contains(id)).collect::<Vec<_>>());
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
