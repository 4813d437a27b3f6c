//! Named end-to-end experiments: data generation, value models, GNE
//! training and evaluation with the settings of each benchmark.

use std::time::Instant;

use crate::bestresponse::{best_response_at, BrConfig};
use crate::dataset::{build_dataset, parameter_dataset, Dataset, Split};
use crate::games::{build_builtin, random_lq_gnep, random_mpqcqp, random_mpqp, BuiltinId, ParametricGame};
use crate::learn::{train_gne, train_single_agent, train_value_models, GneModel, NiLoss, NiTrainConfig, PredictMode, RestartLog, ValueModelSet, ValueRegularization};
use crate::linalg::Mat;
use crate::nn::{Activation, MlpArchitecture};
use crate::optimize::OptimizerConfig;
use crate::{Error, Result};

use super::{evaluate, time_solver, EvalReport};

/// Seed of the random single-agent instances.
pub const MPQP_SEED: u64 = 5;

#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: String,
    pub game: ParametricGame,
    pub m_train: usize,
    pub m_val: usize,
    pub m_test: usize,
    /// empty for single-agent runs
    pub value_archs: Vec<MlpArchitecture>,
    pub value_reg: ValueRegularization,
    pub value_opt: OptimizerConfig,
    pub gne_arch: MlpArchitecture,
    pub cfg: NiTrainConfig,
    pub single_agent: bool,
    pub warm_start: bool,
    pub eval_modes: Vec<PredictMode>,
    pub data_seed: u64,
}

fn mlp(input: usize, hidden: &[usize], output: usize, act: Activation, bypass: bool) -> MlpArchitecture {
    MlpArchitecture::new(input, hidden, output, act, bypass).expect("benchmark architectures are valid")
}

fn value_archs(game: &ParametricGame, hidden: &[usize], act: Activation) -> Vec<MlpArchitecture> {
    (0..game.n_agents())
        .map(|i| mlp(game.n_x() - game.agent_dims[i] + game.n_p, hidden, 1, act, false))
        .collect()
}

pub const EXPERIMENTS: &[&str] = &["lq17", "nonmono18", "qcqp19", "switching", "nonconvex21", "random_lq", "mpqp", "mpqcqp"];

impl Experiment {
    /// Desk-scale settings of a named benchmark. `n_agents` applies to
    /// `switching`, `nonconvex21` and `random_lq`.
    pub fn named(name: &str, n_agents: Option<usize>) -> Result<Self> {
        let opt = OptimizerConfig::desk_scale();
        let base = NiTrainConfig::default();
        let builtin = |id: BuiltinId| build_builtin(id, n_agents);
        let exp = match name {
            "lq17" | "qcqp19" => {
                let game = builtin(if name == "lq17" { BuiltinId::Lq17 } else { BuiltinId::Qcqp19 })?;
                Experiment {
                    name: name.into(),
                    value_archs: value_archs(&game, &[30, 20], Activation::Swish),
                    gne_arch: mlp(game.n_p, &[10, 5], game.n_x(), Activation::Relu, true),
                    m_train: 1000,
                    m_val: 1000,
                    m_test: 1000,
                    game,
                    value_reg: ValueRegularization::default(),
                    value_opt: opt.clone(),
                    cfg: base,
                    single_agent: false,
                    warm_start: false,
                    eval_modes: vec![PredictMode::Clip],
                    data_seed: 0,
                }
            }
            "nonmono18" => {
                let game = builtin(BuiltinId::Nonmono18)?;
                Experiment {
                    name: name.into(),
                    value_archs: value_archs(&game, &[10, 5], Activation::Tanh),
                    gne_arch: mlp(game.n_p, &[5, 3], game.n_x(), Activation::LeakyRelu, false),
                    m_train: 1000,
                    m_val: 1000,
                    m_test: 1000,
                    game,
                    value_reg: ValueRegularization::default(),
                    value_opt: opt.clone(),
                    cfg: base,
                    single_agent: false,
                    warm_start: false,
                    eval_modes: vec![PredictMode::Clip],
                    data_seed: 0,
                }
            }
            "switching" | "switching20" => {
                let game = builtin(BuiltinId::Switching20)?;
                let n = game.n_agents();
                Experiment {
                    name: format!("switching_N{n}"),
                    value_archs: value_archs(&game, &[10, 5], Activation::Swish),
                    gne_arch: mlp(game.n_p, &[2 * n, 2 * n], n, Activation::Relu, false),
                    m_train: 1000 * (n - 1),
                    m_val: 1000 * (n - 1),
                    m_test: 1000,
                    game,
                    value_reg: ValueRegularization::default(),
                    value_opt: opt.clone(),
                    cfg: NiTrainConfig { saturate: true, ..base },
                    single_agent: false,
                    warm_start: false,
                    eval_modes: vec![PredictMode::Clip, PredictMode::Project],
                    data_seed: 0,
                }
            }
            "nonconvex21" => {
                let game = builtin(BuiltinId::Nonconvex21)?;
                Experiment {
                    name: format!("nonconvex21_N{}", game.n_agents()),
                    value_archs: value_archs(&game, &[10, 5], Activation::Swish),
                    gne_arch: mlp(game.n_p, &[10, 5], game.n_x(), Activation::Relu, false),
                    m_train: 5000,
                    m_val: 1000,
                    m_test: 1000,
                    game,
                    value_reg: ValueRegularization::default(),
                    value_opt: opt.clone(),
                    cfg: base,
                    single_agent: false,
                    warm_start: false,
                    eval_modes: vec![PredictMode::Clip],
                    data_seed: 0,
                }
            }
            "random_lq" => {
                let n = n_agents.unwrap_or(2);
                if !(2..=4).contains(&n) {
                    return Err(Error::InvalidArgument("random_lq uses 2 to 4 agents".into()));
                }
                let n_p = 2;
                let game = random_lq_gnep(100 + n as u64, n, 2, n_p, 20 * n);
                let w = n + n_p;
                Experiment {
                    name: format!("random_lq_N{n}"),
                    value_archs: value_archs(&game, &[15 * w, 10 * w], Activation::Swish),
                    gne_arch: mlp(n_p, &[5 * w, 3 * w], game.n_x(), Activation::Relu, true),
                    m_train: 1000 * n_p,
                    m_val: 1000 * n_p,
                    m_test: 1000 * n_p,
                    game,
                    value_reg: ValueRegularization { l2: 1e-4, l1: 0.0 },
                    value_opt: opt.clone(),
                    cfg: NiTrainConfig { l2: 1e-4, ..base },
                    single_agent: false,
                    warm_start: false,
                    eval_modes: vec![PredictMode::Clip],
                    data_seed: 0,
                }
            }
            "mpqp" | "mpqcqp" => {
                let game = if name == "mpqp" { random_mpqp(MPQP_SEED, 10, 6, 50) } else { random_mpqcqp(MPQP_SEED, 10, 6, 50, 20) };
                Experiment {
                    name: name.into(),
                    value_archs: Vec::new(),
                    gne_arch: mlp(game.n_p, &[30, 20], game.n_x(), Activation::Relu, true),
                    m_train: 5000,
                    m_val: 5000,
                    m_test: 5000,
                    game,
                    value_reg: ValueRegularization::default(),
                    value_opt: opt,
                    cfg: NiTrainConfig { normalize_input: true, ..base },
                    single_agent: true,
                    warm_start: true,
                    eval_modes: vec![PredictMode::Clip],
                    data_seed: 0,
                }
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown experiment {other:?}; expected one of {}",
                    EXPERIMENTS.join(", ")
                )))
            }
        };
        Ok(exp)
    }

    /// Shorthand for a config label in reports.
    pub fn label(&self) -> String {
        format!("loss={} beta={}", self.cfg.loss.name(), self.cfg.beta)
    }
}

#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn generate_datasets(exp: &Experiment) -> Result<Datasets> {
    let g = &exp.game;
    if exp.single_agent {
        Ok(Datasets {
            train: parameter_dataset(g, exp.m_train, Split::Train, exp.data_seed)?,
            val: parameter_dataset(g, exp.m_val, Split::Val, exp.data_seed)?,
            test: build_dataset(g, exp.m_test, Split::Test, exp.data_seed)?,
        })
    } else {
        Ok(Datasets {
            train: build_dataset(g, exp.m_train, Split::Train, exp.data_seed)?,
            val: build_dataset(g, exp.m_val, Split::Val, exp.data_seed)?,
            test: build_dataset(g, exp.m_test, Split::Test, exp.data_seed)?,
        })
    }
}

/// Optimal decisions of a single-agent problem at every row of `p`.
pub fn solve_optima(game: &ParametricGame, p: &Mat) -> Result<Mat> {
    let mut out = Mat::zeros(p.rows, game.n_x());
    let x0 = vec![0.0; game.n_x()];
    for k in 0..p.rows {
        let mut x = x0.clone();
        for i in 0..game.n_agents() {
            let br = best_response_at(game, i, &x0, p.row(k), &BrConfig::default())?;
            x[game.agent_range(i)].copy_from_slice(&br.x_i);
        }
        out.row_mut(k).copy_from_slice(&x);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub reports: Vec<EvalReport>,
    pub model: GneModel,
    pub values: Option<ValueModelSet>,
    pub value_logs: Vec<Vec<RestartLog>>,
    pub gne_logs: Vec<RestartLog>,
    pub value_seconds: f64,
    pub train_seconds: f64,
    /// seconds per best-response solve on the test set (single-agent runs)
    pub solver_time: Option<f64>,
}

/// Trains value models (if needed) and the solution model on given data.
pub fn train_on(exp: &Experiment, data: &Datasets) -> Result<(GneModel, Option<ValueModelSet>, Vec<Vec<RestartLog>>, Vec<RestartLog>, f64)> {
    let g = &exp.game;
    if exp.single_agent {
        let optima = if exp.warm_start { Some(solve_optima(g, &data.train.p)?) } else { None };
        let t = train_single_agent(g, &data.train, &data.val, optima.as_ref(), &exp.gne_arch, &exp.cfg)?;
        return Ok((t.model, None, Vec::new(), t.outcome.logs, 0.0));
    }
    let start = Instant::now();
    let regs = vec![exp.value_reg; g.n_agents()];
    let vt = train_value_models(g, &data.train, Some(&data.val), &exp.value_archs, &regs, &exp.value_opt)?;
    let value_seconds = start.elapsed().as_secs_f64();
    let t = train_gne(g, &data.train, &data.val, &vt.set, &exp.gne_arch, &exp.cfg)?;
    Ok((t.model, Some(vt.set), vt.logs, t.outcome.logs, value_seconds))
}

pub fn run_experiment(exp: &Experiment) -> Result<BenchResult> {
    let data = generate_datasets(exp)?;
    run_with_data(exp, &data)
}

pub fn run_with_data(exp: &Experiment, data: &Datasets) -> Result<BenchResult> {
    let start = Instant::now();
    let (model, values, value_logs, gne_logs, value_seconds) = train_on(exp, data)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let mut reports = Vec::new();
    for &mode in &exp.eval_modes {
        let mut r = evaluate(&exp.game, &model, &data.test, mode, &exp.name, &exp.label())?;
        r.train_time = train_seconds;
        reports.push(r);
    }
    let solver_time = if exp.single_agent {
        let x0 = Mat::zeros(data.test.len(), exp.game.n_x());
        Some(time_solver(&exp.game, &x0, &data.test.p)?)
    } else {
        None
    };
    Ok(BenchResult {
        reports,
        model,
        values,
        value_logs,
        gne_logs,
        value_seconds,
        train_seconds,
        solver_time,
    })
}

/// Re-trains only the solution model with another loss and weight, reusing
/// value models.
pub fn retrain_gne(exp: &Experiment, data: &Datasets, values: &ValueModelSet, loss: NiLoss, beta: f64) -> Result<EvalReport> {
    let cfg = NiTrainConfig { loss, beta, ..exp.cfg.clone() };
    let t = train_gne(&exp.game, &data.train, &data.val, values, &exp.gne_arch, &cfg)?;
    evaluate(&exp.game, &t.model, &data.test, PredictMode::Clip, &exp.name, &format!("loss={} beta={beta}", loss.name()))
}
