//! Restarted Adam → L-BFGS training with validation selection.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::optimize::{adam, lbfgs, OptimizerConfig};
use crate::textfmt::fmt_f64;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RestartLog {
    pub restart: usize,
    pub seed: u64,
    /// NaN when the restart was aborted
    pub train_obj: f64,
    pub val_obj: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub theta: Vec<f64>,
    pub selected: usize,
    /// training objective of the selected restart at its initialization
    pub initial_objective: f64,
    pub final_objective: f64,
    pub logs: Vec<RestartLog>,
}

/// CSV `restart,train_obj,val_obj,wall_seconds`.
pub fn logs_to_csv(logs: &[RestartLog]) -> String {
    let mut s = String::from("restart,train_obj,val_obj,wall_seconds\n");
    for l in logs {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            l.restart,
            fmt_f64(l.train_obj),
            fmt_f64(l.val_obj),
            fmt_f64(l.wall_seconds)
        );
    }
    s
}

struct RestartResult {
    theta: Vec<f64>,
    init: f64,
    train: f64,
    val: f64,
}

fn one_restart<I, T, V>(opt: &OptimizerConfig, seed: u64, init: &I, train: &T, val: &V) -> Result<RestartResult>
where
    I: Fn(u64) -> Result<Vec<f64>>,
    T: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
    V: Fn(&[f64]) -> Result<f64>,
{
    let theta0 = init(seed)?;
    let mut obj = |t: &[f64]| train(t);
    let (f0, _) = obj(&theta0)?;
    if !f0.is_finite() {
        return Err(Error::NonFinite(format!("initial objective {f0}")));
    }
    let mut theta = if opt.adam.epochs > 0 { adam(&mut obj, &theta0, &opt.adam)? } else { theta0.clone() };
    // Adam carries no descent guarantee; fall back to the start if it got worse
    if opt.adam.epochs > 0 && obj(&theta).map(|(f, _)| !(f <= f0)).unwrap_or(true) {
        theta = theta0;
    }
    let (theta, train_obj) = if opt.lbfgs.max_iters > 0 {
        let out = lbfgs(&mut obj, &theta, &opt.lbfgs)?;
        (out.theta, out.value)
    } else {
        let f = obj(&theta)?.0;
        (theta, f)
    };
    let val_obj = val(&theta)?;
    if !train_obj.is_finite() || !val_obj.is_finite() {
        return Err(Error::NonFinite(format!("restart objective {train_obj} / {val_obj}")));
    }
    Ok(RestartResult {
        theta,
        init: f0,
        train: train_obj,
        val: val_obj,
    })
}

/// Runs `opt.restarts` independent restarts seeded `base_seed + r` and keeps
/// the one with the lowest validation objective (ties: lowest index).
///
/// A failing restart is logged with NaN objectives and skipped; the call
/// fails only when every restart fails.
pub fn train_with_restarts<I, T, V>(opt: &OptimizerConfig, init: I, train: T, val: V) -> Result<TrainOutcome>
where
    I: Fn(u64) -> Result<Vec<f64>> + Sync,
    T: Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync,
    V: Fn(&[f64]) -> Result<f64> + Sync,
{
    opt.validate()?;
    let results: Vec<(RestartLog, Result<RestartResult>)> = (0..opt.restarts)
        .into_par_iter()
        .map(|r| {
            let seed = opt.base_seed.wrapping_add(r as u64);
            let start = Instant::now();
            let res = one_restart(opt, seed, &init, &train, &val);
            let (train_obj, val_obj) = match &res {
                Ok(rr) => (rr.train, rr.val),
                Err(_) => (f64::NAN, f64::NAN),
            };
            let log = RestartLog {
                restart: r,
                seed,
                train_obj,
                val_obj,
                wall_seconds: start.elapsed().as_secs_f64(),
            };
            (log, res)
        })
        .collect();
    let mut best: Option<(usize, RestartResult)> = None;
    let mut logs = Vec::with_capacity(results.len());
    let mut last_err = None;
    for (r, (log, res)) in results.into_iter().enumerate() {
        logs.push(log);
        match res {
            Ok(rr) => {
                if best.as_ref().is_none_or(|(_, b)| rr.val < b.val) {
                    best = Some((r, rr));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some((selected, rr)) = best else {
        let why = last_err.map(|e| e.to_string()).unwrap_or_default();
        return Err(Error::NonFinite(format!("every restart failed; last error: {why}")));
    };
    Ok(TrainOutcome {
        theta: rr.theta,
        selected,
        initial_objective: rr.init,
        final_objective: rr.train,
        logs,
    })
}
