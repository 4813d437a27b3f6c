//! Test-set metrics: best-response error, constraint violation, relative
//! suboptimality and prediction timing.

pub mod bench;

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::bestresponse::{best_response_at, BrConfig, BrStatus};
use crate::dataset::Dataset;
use crate::games::ParametricGame;
use crate::learn::{GneModel, PredictMode};
use crate::linalg::Mat;
use crate::nn::ForwardScratch;
use crate::textfmt::fmt_f64;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseBr {
    pub value: f64,
    /// best responses that used slack
    pub relaxed: usize,
    /// best responses from local search
    pub local: usize,
    /// samples skipped because a best response failed
    pub failed: usize,
}

/// `(1/K) Σ_k Σ_i ‖x̂_i - x̄_i(x̂_{-i}, p_k)‖²` at the given decisions.
pub fn mse_br_at(game: &ParametricGame, xhat: &Mat, p: &Mat) -> Result<MseBr> {
    if xhat.rows != p.rows {
        return Err(Error::dim("mse_br samples", p.rows, xhat.rows));
    }
    if p.rows == 0 {
        return Err(Error::EmptyDataset("mse_br test set".into()));
    }
    let per: Vec<(Option<f64>, usize, usize)> = (0..p.rows)
        .into_par_iter()
        .map(|k| {
            let (x, pk) = (xhat.row(k), p.row(k));
            let (mut err, mut relaxed, mut local) = (0.0, 0, 0);
            for i in 0..game.n_agents() {
                let Ok(br) = best_response_at(game, i, x, pk, &BrConfig::default()) else {
                    return (None, relaxed, local);
                };
                match br.status {
                    BrStatus::Relaxed => relaxed += 1,
                    BrStatus::Local => local += 1,
                    _ => {}
                }
                err += game.agent_range(i).zip(&br.x_i).map(|(j, b)| (x[j] - b).powi(2)).sum::<f64>();
            }
            (Some(err), relaxed, local)
        })
        .collect();
    let mut out = MseBr {
        value: 0.0,
        relaxed: 0,
        local: 0,
        failed: 0,
    };
    let mut used = 0usize;
    for (e, r, l) in per {
        out.relaxed += r;
        out.local += l;
        match e {
            Some(e) => {
                out.value += e;
                used += 1;
            }
            None => out.failed += 1,
        }
    }
    if used == 0 {
        return Err(Error::Infeasible("no best response could be computed on the test set".into()));
    }
    out.value /= used as f64;
    Ok(out)
}

pub fn mse_br(game: &ParametricGame, model: &GneModel, test: &Dataset) -> Result<MseBr> {
    mse_br_mode(game, model, test, PredictMode::Clip)
}

pub fn mse_br_mode(game: &ParametricGame, model: &GneModel, test: &Dataset, mode: PredictMode) -> Result<MseBr> {
    let xhat = model.predict_batch(game, &test.p, mode)?;
    mse_br_at(game, &xhat, &test.p)
}

/// Largest shared-row violation at one sample.
pub fn sample_violation(game: &ParametricGame, x: &[f64], p: &[f64]) -> f64 {
    game.shared_violation(x, p)
}

/// `(v̄, v_max)` over the rows of `xhat`.
pub fn violation_stats_at(game: &ParametricGame, xhat: &Mat, p: &Mat) -> Result<(f64, f64)> {
    if xhat.rows != p.rows {
        return Err(Error::dim("violation samples", p.rows, xhat.rows));
    }
    if p.rows == 0 {
        return Err(Error::EmptyDataset("violation test set".into()));
    }
    let v: Vec<f64> = (0..p.rows).map(|k| sample_violation(game, xhat.row(k), p.row(k))).collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let max = v.iter().cloned().fold(0.0, f64::max);
    Ok((mean, max))
}

pub fn violation_stats(game: &ParametricGame, model: &GneModel, test: &Dataset) -> Result<(f64, f64)> {
    let xhat = model.predict_batch(game, &test.p, PredictMode::Clip)?;
    violation_stats_at(game, &xhat, &test.p)
}

/// `(1/K) Σ (J(x̂) - J*) / (1e-10 + |J*|)`, plus the same with `|J(x̂) - J*|`.
pub fn rel_error_at(values: &[f64], optimal: &[f64]) -> Result<(f64, f64)> {
    if values.len() != optimal.len() {
        return Err(Error::dim("relative error samples", optimal.len(), values.len()));
    }
    if values.is_empty() {
        return Err(Error::EmptyDataset("relative error test set".into()));
    }
    let k = values.len() as f64;
    let (mut signed, mut abs) = (0.0, 0.0);
    for (v, o) in values.iter().zip(optimal) {
        let d = (v - o) / (1e-10 + o.abs());
        signed += d;
        abs += d.abs();
    }
    Ok((signed / k, abs / k))
}

/// Relative suboptimality of clipped predictions against the optimal values
/// stored in the test set's first value column.
pub fn rel_error_single_agent(game: &ParametricGame, model: &GneModel, test: &Dataset) -> Result<(f64, f64)> {
    let Some(jstar) = &test.jbar else {
        return Err(Error::EmptyDataset("relative error needs optimal values in the test set".into()));
    };
    let xhat = model.predict_batch(game, &test.p, PredictMode::Clip)?;
    let values: Vec<f64> = (0..test.len())
        .map(|k| (0..game.n_agents()).map(|i| game.cost(i, xhat.row(k), test.p.row(k))).sum())
        .collect();
    let optimal: Vec<f64> = (0..test.len()).map(|k| jstar.row(k).iter().sum()).collect();
    rel_error_at(&values, &optimal)
}

/// Mean wall-clock seconds per clipped prediction over `repeats` passes.
pub fn time_predictions(game: &ParametricGame, model: &GneModel, p: &Mat, repeats: usize) -> f64 {
    let mut scratch = ForwardScratch::new(&model.params.arch);
    let mut out = vec![0.0; game.n_x()];
    let mut sink = 0.0;
    let start = Instant::now();
    for _ in 0..repeats.max(1) {
        for k in 0..p.rows {
            model.predict_clip_into(game, p.row(k), &mut scratch, &mut out);
            sink += out[0];
        }
    }
    let t = start.elapsed().as_secs_f64();
    std::hint::black_box(sink);
    t / (repeats.max(1) * p.rows.max(1)) as f64
}

/// Mean wall-clock seconds per best-response solve of agent 0.
pub fn time_solver(game: &ParametricGame, x: &Mat, p: &Mat) -> Result<f64> {
    let start = Instant::now();
    for k in 0..p.rows {
        std::hint::black_box(best_response_at(game, 0, x.row(k), p.row(k), &BrConfig::default())?);
    }
    Ok(start.elapsed().as_secs_f64() / p.rows.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub experiment: String,
    pub config: String,
    pub mode: PredictMode,
    pub n_test: usize,
    pub mse_br: f64,
    pub mean_violation: f64,
    pub max_violation: f64,
    /// single-agent runs only
    pub rel_error: Option<f64>,
    pub rel_error_abs: Option<f64>,
    /// seconds per sample
    pub predict_time: f64,
    /// seconds
    pub train_time: f64,
    pub relaxed_br: usize,
    pub local_br: usize,
    pub failed_br: usize,
}

pub const REPORT_HEADER: &str = "experiment,config,mode,n_test,mse_br,mean_violation,max_violation,rel_error,rel_error_abs,predict_time,train_time,relaxed_br,local_br,failed_br";

/// Evaluates predictions in `mode` (clip or project).
pub fn evaluate(game: &ParametricGame, model: &GneModel, test: &Dataset, mode: PredictMode, experiment: &str, config: &str) -> Result<EvalReport> {
    test.check_game(game)?;
    model.check_game(game)?;
    let xhat = model.predict_batch(game, &test.p, mode)?;
    let br = mse_br_at(game, &xhat, &test.p)?;
    let (mean_v, max_v) = violation_stats_at(game, &xhat, &test.p)?;
    let (rel, rel_abs) = if game.n_agents() == 1 || crate::games::StructureTag::SingleAgent == game.tag {
        match &test.jbar {
            Some(j) => {
                let values: Vec<f64> = (0..test.len())
                    .map(|k| (0..game.n_agents()).map(|i| game.cost(i, xhat.row(k), test.p.row(k))).sum())
                    .collect();
                let optimal: Vec<f64> = (0..test.len()).map(|k| j.row(k).iter().sum()).collect();
                let (a, b) = rel_error_at(&values, &optimal)?;
                (Some(a), Some(b))
            }
            None => (None, None),
        }
    } else {
        (None, None)
    };
    Ok(EvalReport {
        experiment: experiment.to_string(),
        config: config.to_string(),
        mode,
        n_test: test.len(),
        mse_br: br.value,
        mean_violation: mean_v,
        max_violation: max_v,
        rel_error: rel,
        rel_error_abs: rel_abs,
        predict_time: time_predictions(game, model, &test.p, 3),
        train_time: 0.0,
        relaxed_br: br.relaxed,
        local_br: br.local,
        failed_br: br.failed,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

impl EvalReport {
    pub fn csv_row(&self) -> String {
        self.csv_row_with(true)
    }

    /// Row with the wall-clock columns left empty when `timing` is false.
    pub fn csv_row_with(&self, timing: bool) -> String {
        let t = |v: f64| if timing { fmt_f64(v) } else { String::new() };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.experiment,
            self.config,
            self.mode.name(),
            self.n_test,
            fmt_f64(self.mse_br),
            fmt_f64(self.mean_violation),
            fmt_f64(self.max_violation),
            opt(self.rel_error),
            opt(self.rel_error_abs),
            t(self.predict_time),
            t(self.train_time),
            self.relaxed_br,
            self.local_br,
            self.failed_br
        )
    }
}

pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    reports_to_csv_with(reports, true)
}

pub fn reports_to_csv_with(reports: &[EvalReport], timing: bool) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for r in reports {
        s.push_str(&r.csv_row_with(timing));
        s.push('\n');
    }
    s
}

/// Fixed-width table, one row per report.
pub fn reports_to_table(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:<24} {:<8} {:>11} {:>11} {:>11} {:>11} {:>12}",
        "experiment", "config", "mode", "v_mean", "v_max", "MSE_BR", "e_rel", "predict[us]"
    );
    for r in reports {
        let rel = r.rel_error.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:<16} {:<24} {:<8} {:>11.3e} {:>11.3e} {:>11.3e} {:>11} {:>12.3}",
            r.experiment,
            r.config,
            r.mode.name(),
            r.mean_violation,
            r.max_violation,
            r.mse_br,
            rel,
            r.predict_time * 1e6
        );
    }
    s
}
