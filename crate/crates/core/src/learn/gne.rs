//! GNE solution models `x̂(p, θ₂)`: training objective, training drivers and
//! prediction.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::{grad, Tape, Unary, Var};
use crate::dataset::Dataset;
use crate::games::{GameKind, ParametricGame};
use crate::linalg::Mat;
use crate::nn::{forward_tape, parse_array_line, ForwardScratch, MlpArchitecture, MlpParams};
use crate::optimize::{adam, lbfgs, project_onto_feasible, OptimizerConfig};
use crate::textfmt::{fmt_f64, read_to_string, write_atomic};
use crate::{Error, Result};

use super::loss::{smooth_max_penalty, smooth_max_penalty_per_sample, tape_ni_loss, tape_penalty, NiLoss};
use super::schedule::{train_with_restarts, TrainOutcome};
use super::value::ValueModelSet;

pub const GNE_MAGIC: &str = "MPFIT-GNE v1";

/// Map from network output to decisions.
#[derive(Debug, Clone, PartialEq)]
pub enum OutputMap {
    Identity,
    /// `mid + half ⊙ tanh(z)`: smooth saturation into a finite box
    TanhBox { mid: Vec<f64>, half: Vec<f64> },
}

impl OutputMap {
    pub fn tanh_box(game: &ParametricGame) -> Result<Self> {
        if game.x_lb.iter().chain(&game.x_ub).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{}: tanh saturation needs a finite decision box", game.name)));
        }
        Ok(OutputMap::TanhBox {
            mid: game.x_lb.iter().zip(&game.x_ub).map(|(l, u)| 0.5 * (l + u)).collect(),
            half: game.x_lb.iter().zip(&game.x_ub).map(|(l, u)| 0.5 * (u - l)).collect(),
        })
    }

    fn apply(&self, z: &mut [f64]) {
        if let OutputMap::TanhBox { mid, half } = self {
            for ((v, m), h) in z.iter_mut().zip(mid).zip(half) {
                *v = m + h * v.tanh();
            }
        }
    }

    fn tape(&self, tape: &mut Tape, z: Var) -> Var {
        match self {
            OutputMap::Identity => z,
            OutputMap::TanhBox { mid, half } => {
                let t = tape.unary(z, Unary::Tanh);
                let mut d = Mat::zeros(half.len(), half.len());
                for (k, h) in half.iter().enumerate() {
                    d.set(k, k, *h);
                }
                let dc = tape.constant(d);
                let s = tape.matmul_nt(t, dc);
                let m = tape.constant(Mat::row_vector(mid));
                tape.add_row(s, m)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    Raw,
    Clip,
    Project,
}

impl PredictMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(PredictMode::Raw),
            "clip" => Ok(PredictMode::Clip),
            "project" => Ok(PredictMode::Project),
            _ => Err(Error::parse("predict mode", format!("unknown mode {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PredictMode::Raw => "raw",
            PredictMode::Clip => "clip",
            PredictMode::Project => "project",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GneModel {
    pub params: MlpParams,
    pub output: OutputMap,
    /// saturate to the decision box in [`PredictMode::Clip`]
    pub clip: bool,
}

impl GneModel {
    pub fn new(params: MlpParams, output: OutputMap) -> Self {
        GneModel {
            params,
            output,
            clip: true,
        }
    }

    pub fn check_game(&self, game: &ParametricGame) -> Result<()> {
        if self.params.arch.input_dim != game.n_p {
            return Err(Error::dim("GNE model input", game.n_p, self.params.arch.input_dim));
        }
        if self.params.arch.output_dim != game.n_x() {
            return Err(Error::dim("GNE model output", game.n_x(), self.params.arch.output_dim));
        }
        Ok(())
    }

    /// Network output after the output map, before clipping.
    pub fn raw(&self, p: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.params.forward(p)?;
        self.output.apply(&mut z);
        Ok(z)
    }

    /// Allocation-free clipped prediction for timing loops.
    pub fn predict_clip_into(&self, game: &ParametricGame, p: &[f64], scratch: &mut ForwardScratch, out: &mut [f64]) {
        self.params.forward_into(p, scratch, out);
        self.output.apply(out);
        if self.clip {
            for ((v, l), u) in out.iter_mut().zip(&game.x_lb).zip(&game.x_ub) {
                *v = v.clamp(*l, *u);
            }
        }
    }

    pub fn predict(&self, game: &ParametricGame, p: &[f64], mode: PredictMode) -> Result<Vec<f64>> {
        let mut x = self.raw(p)?;
        match mode {
            PredictMode::Raw => Ok(x),
            PredictMode::Clip => {
                if self.clip {
                    game.clip(&mut x);
                }
                Ok(x)
            }
            PredictMode::Project => Ok(project_onto_feasible(game, p, &x)?.x),
        }
    }

    pub fn predict_batch(&self, game: &ParametricGame, p: &Mat, mode: PredictMode) -> Result<Mat> {
        let mut out = Mat::zeros(p.rows, game.n_x());
        for k in 0..p.rows {
            let x = self.predict(game, p.row(k), mode)?;
            out.row_mut(k).copy_from_slice(&x);
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{GNE_MAGIC}\nclip {}\n", u8::from(self.clip));
        match &self.output {
            OutputMap::Identity => s.push_str("saturation none\n"),
            OutputMap::TanhBox { mid, half } => {
                s.push_str("saturation tanh\n");
                for (name, v) in [("mid", mid), ("half", half)] {
                    let _ = write!(s, "{name} 1x{}", v.len());
                    for x in v {
                        let _ = write!(s, " {}", fmt_f64(*x));
                    }
                    s.push('\n');
                }
            }
        }
        s.push_str(&self.params.to_text());
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.first().map(|l| l.trim_end()) != Some(GNE_MAGIC) {
            return Err(Error::parse("GNE model", format!("first line must be {GNE_MAGIC:?}")));
        }
        let clip = match lines.get(1).map(|l| l.trim()) {
            Some("clip 1") => true,
            Some("clip 0") => false,
            other => return Err(Error::parse("GNE model", format!("bad clip line {other:?}"))),
        };
        let (output, rest) = match lines.get(2).map(|l| l.trim()) {
            Some("saturation none") => (OutputMap::Identity, 3),
            Some("saturation tanh") => {
                let (mn, mid) = parse_array_line(lines.get(3).copied().unwrap_or(""))?;
                let (hn, half) = parse_array_line(lines.get(4).copied().unwrap_or(""))?;
                if mn != "mid" || hn != "half" || mid.len() != half.len() {
                    return Err(Error::parse("GNE model", "tanh saturation needs mid and half rows"));
                }
                (
                    OutputMap::TanhBox {
                        mid: mid.data,
                        half: half.data,
                    },
                    5,
                )
            }
            other => return Err(Error::parse("GNE model", format!("bad saturation line {other:?}"))),
        };
        let params = MlpParams::from_text(&lines[rest..].join("\n"))?;
        if let OutputMap::TanhBox { mid, .. } = &output {
            if mid.len() != params.arch.output_dim {
                return Err(Error::dim("GNE saturation", params.arch.output_dim, mid.len()));
            }
        }
        Ok(GneModel { params, output, clip })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NiTrainConfig {
    pub loss: NiLoss,
    pub epsilon: f64,
    pub beta: f64,
    pub gamma: f64,
    /// `r2 = l2 ‖θ₂‖² + l1 ‖θ₂‖₁`
    pub l2: f64,
    pub l1: f64,
    pub optimizer: OptimizerConfig,
    /// add the finite decision-box rows to the penalty
    pub penalize_box: bool,
    /// one log-sum-exp per sample instead of one over the whole batch
    pub per_sample_penalty: bool,
    /// train through the smooth tanh saturation into the decision box
    pub saturate: bool,
    /// train on parameters rescaled from the parameter box to [-1, 1];
    /// the scaling is folded into the first layer afterwards
    pub normalize_input: bool,
}

impl Default for NiTrainConfig {
    fn default() -> Self {
        NiTrainConfig {
            loss: NiLoss::SmoothPos,
            epsilon: 1e-4,
            beta: 100.0,
            gamma: 10.0,
            l2: 1e-8,
            l1: 0.0,
            optimizer: OptimizerConfig::desk_scale(),
            penalize_box: true,
            per_sample_penalty: false,
            saturate: false,
            normalize_input: false,
        }
    }
}

impl NiTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("epsilon must be > 0".into()));
        }
        if !(self.beta > 0.0) || !(self.gamma > 0.0) {
            return Err(Error::InvalidArgument("beta and gamma must be > 0".into()));
        }
        if self.l2 < 0.0 || self.l1 < 0.0 {
            return Err(Error::InvalidArgument("regularization weights must be >= 0".into()));
        }
        self.optimizer.validate()
    }

    /// `(shift, scale)` with `u = scale ⊙ (p - shift)`, identity on unbounded
    /// or degenerate parameter dimensions.
    fn input_scaling(&self, game: &ParametricGame) -> Option<(Vec<f64>, Vec<f64>)> {
        if !self.normalize_input {
            return None;
        }
        let (shift, scale) = game
            .p_lb
            .iter()
            .zip(&game.p_ub)
            .map(|(l, u)| if l.is_finite() && u.is_finite() && u > l { (0.5 * (l + u), 2.0 / (u - l)) } else { (0.0, 1.0) })
            .unzip();
        Some((shift, scale))
    }

    /// Network input used during training for parameter rows `p`.
    fn network_input(&self, game: &ParametricGame, p: &Mat) -> Mat {
        let mut u = p.clone();
        if let Some((shift, scale)) = self.input_scaling(game) {
            for k in 0..u.rows {
                for ((v, m), s) in u.row_mut(k).iter_mut().zip(&shift).zip(&scale) {
                    *v = s * (*v - m);
                }
            }
        }
        u
    }

    /// Model with training-coordinate parameters `theta`.
    fn finish_model(&self, game: &ParametricGame, arch: &MlpArchitecture, theta: &[f64], output: OutputMap) -> Result<GneModel> {
        let mut params = MlpParams::from_flat(arch, theta)?;
        if let Some((shift, scale)) = self.input_scaling(game) {
            params.fold_input_scaling(&shift, &scale)?;
        }
        Ok(GneModel::new(params, output))
    }

    fn output_map(&self, game: &ParametricGame) -> Result<OutputMap> {
        if self.saturate {
            OutputMap::tanh_box(game)
        } else {
            Ok(OutputMap::Identity)
        }
    }
}

/// Frozen value networks ready to be placed on a tape.
struct FrozenValues<'a> {
    set: &'a ValueModelSet,
    theta: Vec<Mat>,
}

impl<'a> FrozenValues<'a> {
    fn new(set: &'a ValueModelSet) -> Self {
        FrozenValues {
            set,
            theta: set.models.iter().map(|m| Mat::row_vector(&m.flatten())).collect(),
        }
    }
}

/// Penalty and regularization shared by both training problems.
fn penalty_and_reg(tape: &mut Tape, game: &ParametricGame, th: Var, x: Var, p: Var, cfg: &NiTrainConfig, output: &OutputMap) -> Option<Var> {
    let (g, h) = game.tape_constraints(tape, x, p);
    let mut ineq: Vec<Var> = g.into_iter().collect();
    if cfg.penalize_box && *output == OutputMap::Identity {
        if let Some(b) = game.tape_box_rows(tape, x) {
            ineq.push(b);
        }
    }
    let eq: Vec<Var> = h.into_iter().collect();
    let mut terms: Vec<Var> = tape_penalty(tape, &ineq, &eq, cfg.beta, cfg.gamma, cfg.per_sample_penalty).into_iter().collect();
    if cfg.l2 > 0.0 {
        let s = tape.sum_squares(th);
        terms.push(tape.scale(s, cfg.l2));
    }
    if cfg.l1 > 0.0 {
        let a = tape.unary(th, Unary::Abs);
        let s = tape.sum_all(a);
        terms.push(tape.scale(s, cfg.l1));
    }
    terms.into_iter().reduce(|a, b| tape.add(a, b))
}

fn ni_objective_tape(tape: &mut Tape, th: Var, game: &ParametricGame, values: &FrozenValues, arch: &MlpArchitecture, output: &OutputMap, p: &Mat, cfg: &NiTrainConfig) -> Var {
    let pv = tape.constant(p.clone());
    let uv = tape.constant(cfg.network_input(game, p));
    let z = forward_tape(arch, tape, th, uv);
    let x = output.tape(tape, z);
    let costs = game.tape_costs(tape, x, pv);
    let mut nus = Vec::with_capacity(costs.len());
    for (i, c) in costs.into_iter().enumerate() {
        let others = game.others(i);
        let xo = tape.cols(x, &others);
        let inp = tape.hcat(&[xo, pv]);
        let vt = tape.constant(values.theta[i].clone());
        let jhat = forward_tape(&values.set.models[i].arch, tape, vt, inp);
        nus.push(tape.sub(c, jhat));
    }
    let nu = tape.hcat(&nus);
    let per = tape_ni_loss(tape, nu, cfg.loss, cfg.epsilon);
    let ni = tape.mean_all(per);
    match penalty_and_reg(tape, game, th, x, pv, cfg, output) {
        Some(r) => tape.add(ni, r),
        None => ni,
    }
}

fn single_agent_objective_tape(tape: &mut Tape, th: Var, game: &ParametricGame, arch: &MlpArchitecture, output: &OutputMap, p: &Mat, cfg: &NiTrainConfig) -> Var {
    let pv = tape.constant(p.clone());
    let uv = tape.constant(cfg.network_input(game, p));
    let z = forward_tape(arch, tape, th, uv);
    let x = output.tape(tape, z);
    let costs = game.tape_costs(tape, x, pv);
    let total = costs.into_iter().reduce(|a, b| tape.add(a, b)).expect("at least one agent");
    let mean = tape.mean_all(total);
    match penalty_and_reg(tape, game, th, x, pv, cfg, output) {
        Some(r) => tape.add(mean, r),
        None => mean,
    }
}

/// Full NI-based training objective and its gradient at `theta`, given in
/// training coordinates (see [`NiTrainConfig::normalize_input`]).
pub fn gne_objective(
    game: &ParametricGame,
    values: &ValueModelSet,
    arch: &MlpArchitecture,
    output: &OutputMap,
    theta: &[f64],
    p: &Mat,
    cfg: &NiTrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let frozen = FrozenValues::new(values);
    grad(|tape, th| ni_objective_tape(tape, th, game, &frozen, arch, output, p, cfg), theta)
}

/// Single-agent objective `ℓ^c + r2 + mean J(x̂(p_k), p_k)` and its gradient.
pub fn single_agent_objective(
    game: &ParametricGame,
    arch: &MlpArchitecture,
    output: &OutputMap,
    theta: &[f64],
    p: &Mat,
    cfg: &NiTrainConfig,
) -> Result<(f64, Vec<f64>)> {
    grad(|tape, th| single_agent_objective_tape(tape, th, game, arch, output, p, cfg), theta)
}

/// `ν̂_i = J_i(x̂(p), p) - Ĵ_i(x̂_{-i}(p), p)` with the model's unclipped output.
pub fn ni_terms(game: &ParametricGame, values: &ValueModelSet, model: &GneModel, p: &[f64]) -> Result<Vec<f64>> {
    let x = model.raw(p)?;
    ni_terms_with(game, &x, p, |i, x, p| values.predict(game, i, x, p))
}

/// NI terms at `x` for an arbitrary value function `value(i, x, p)`.
pub fn ni_terms_with<F>(game: &ParametricGame, x: &[f64], p: &[f64], mut value: F) -> Result<Vec<f64>>
where
    F: FnMut(usize, &[f64], &[f64]) -> Result<f64>,
{
    (0..game.n_agents()).map(|i| Ok(game.eval_cost(i, x, p)? - value(i, x, p)?)).collect()
}

/// Eq.-(9) penalty at the model's unclipped outputs, shared rows only.
pub fn constraint_penalty(game: &ParametricGame, model: &GneModel, p: &Mat, beta: f64, gamma: f64) -> Result<f64> {
    constraint_penalty_with(game, model, p, beta, gamma, false, false)
}

pub fn constraint_penalty_with(game: &ParametricGame, model: &GneModel, p: &Mat, beta: f64, gamma: f64, include_box: bool, per_sample: bool) -> Result<f64> {
    if p.rows == 0 {
        return Err(Error::EmptyDataset("penalty batch".into()));
    }
    let mut g_rows = Vec::new();
    let mut h_rows = Vec::new();
    let mut width_g = 0;
    for k in 0..p.rows {
        let x = model.raw(p.row(k))?;
        let (mut g, h) = game.eval_constraints(&x, p.row(k))?;
        if include_box {
            g.extend(game.x_lb.iter().zip(&x).filter(|(l, _)| l.is_finite()).map(|(l, v)| l - v));
            g.extend(x.iter().zip(&game.x_ub).filter(|(_, u)| u.is_finite()).map(|(v, u)| v - u));
        }
        width_g = g.len();
        g_rows.extend(g);
        h_rows.extend(h);
    }
    let g = Mat::from_vec(p.rows, width_g, g_rows);
    let h = Mat::from_vec(p.rows, game.n_h(), h_rows);
    Ok(if per_sample {
        smooth_max_penalty_per_sample(&g, &h, beta, gamma)
    } else {
        smooth_max_penalty(&g, &h, beta, gamma)
    })
}

#[derive(Debug, Clone)]
pub struct GneTraining {
    pub model: GneModel,
    pub outcome: TrainOutcome,
}

/// Trains the GNE model on the NI-based objective with Adam → L-BFGS
/// restarts, selecting by the same objective on the validation parameters.
pub fn train_gne(
    game: &ParametricGame,
    train: &Dataset,
    val: &Dataset,
    values: &ValueModelSet,
    arch: &MlpArchitecture,
    cfg: &NiTrainConfig,
) -> Result<GneTraining> {
    cfg.validate()?;
    values.check_game(game)?;
    train.check_game(game)?;
    val.check_game(game)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset("GNE training needs nonempty train and validation sets".into()));
    }
    if arch.input_dim != game.n_p || arch.output_dim != game.n_x() {
        return Err(Error::dim("GNE model architecture", game.n_x(), arch.output_dim));
    }
    let output = cfg.output_map(game)?;
    let frozen = FrozenValues::new(values);
    let outcome = train_with_restarts(
        &cfg.optimizer,
        |seed| Ok(MlpParams::init(arch, seed).flatten()),
        |th: &[f64]| grad(|tape, t| ni_objective_tape(tape, t, game, &frozen, arch, &output, &train.p, cfg), th),
        |th: &[f64]| {
            let mut tape = Tape::new();
            let t = tape.constant(Mat::row_vector(th));
            let out = ni_objective_tape(&mut tape, t, game, &frozen, arch, &output, &val.p, cfg);
            Ok(tape.scalar(out))
        },
    )?;
    Ok(GneTraining {
        model: cfg.finish_model(game, arch, &outcome.theta, output)?,
        outcome,
    })
}

fn is_decoupled(game: &ParametricGame) -> bool {
    if game.n_agents() == 1 {
        return true;
    }
    let GameKind::Quadratic(d) = &game.kind else {
        return false;
    };
    if game.n_g() > 0 || game.n_h() > 0 {
        return false;
    }
    (0..game.n_agents()).all(|i| {
        let own: Vec<usize> = game.agent_range(i).collect();
        let others = game.others(i);
        d.q[i].submatrix(&own, &others).data.iter().all(|v| *v == 0.0)
    })
}

/// Single-agent training on parameters only. `optima`, when given, holds
/// optimal decisions row-aligned with `train.p` and every restart is first
/// warm-started by regression onto them.
pub fn train_single_agent(
    game: &ParametricGame,
    train: &Dataset,
    val: &Dataset,
    optima: Option<&Mat>,
    arch: &MlpArchitecture,
    cfg: &NiTrainConfig,
) -> Result<GneTraining> {
    cfg.validate()?;
    if !is_decoupled(game) {
        return Err(Error::InvalidArgument(format!("{}: single-agent training needs an uncoupled problem", game.name)));
    }
    if train.p.cols != game.n_p || val.p.cols != game.n_p {
        return Err(Error::dim("single-agent parameters", game.n_p, train.p.cols));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset("single-agent training needs nonempty train and validation sets".into()));
    }
    if arch.input_dim != game.n_p || arch.output_dim != game.n_x() {
        return Err(Error::dim("solution model architecture", game.n_x(), arch.output_dim));
    }
    if let Some(o) = optima {
        if o.rows != train.len() || o.cols != game.n_x() {
            return Err(Error::dim("warm-start optima", train.len(), o.rows));
        }
    }
    let output = cfg.output_map(game)?;
    let train_u = cfg.network_input(game, &train.p);
    let warm = |seed: u64| -> Result<Vec<f64>> {
        let theta0 = MlpParams::init(arch, seed).flatten();
        let Some(target) = optima else {
            return Ok(theta0);
        };
        let mut obj = |th: &[f64]| {
            grad(
                |tape, t| {
                    let pv = tape.constant(train_u.clone());
                    let z = forward_tape(arch, tape, t, pv);
                    let x = output.tape(tape, z);
                    let y = tape.constant(target.clone());
                    let e = tape.sub(x, y);
                    let sq = tape.unary(e, Unary::Square);
                    let s = tape.sum_rows(sq);
                    let mse = tape.mean_all(s);
                    if cfg.l2 > 0.0 {
                        let r = tape.sum_squares(t);
                        let r = tape.scale(r, cfg.l2);
                        tape.add(mse, r)
                    } else {
                        mse
                    }
                },
                th,
            )
        };
        let mut theta = if cfg.optimizer.adam.epochs > 0 { adam(&mut obj, &theta0, &cfg.optimizer.adam)? } else { theta0 };
        if cfg.optimizer.lbfgs.max_iters > 0 {
            theta = lbfgs(&mut obj, &theta, &cfg.optimizer.lbfgs)?.theta;
        }
        Ok(theta)
    };
    let outcome = train_with_restarts(
        &cfg.optimizer,
        warm,
        |th: &[f64]| single_agent_objective(game, arch, &output, th, &train.p, cfg),
        |th: &[f64]| {
            let mut tape = Tape::new();
            let t = tape.constant(Mat::row_vector(th));
            let out = single_agent_objective_tape(&mut tape, t, game, arch, &output, &val.p, cfg);
            Ok(tape.scalar(out))
        },
    )?;
    Ok(GneTraining {
        model: cfg.finish_model(game, arch, &outcome.theta, output)?,
        outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bestresponse::{best_response_at, BrConfig};
    use crate::dataset::{build_dataset, parameter_dataset, Provenance, Split};
    use crate::games::{lq17, nonmono18, nonmono18_exact, switching20};
    use crate::learn::value::ValueRegularization;
    use crate::nn::Activation;
    use crate::optimize::{AdamConfig, LbfgsConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_values(game: &ParametricGame, seed: u64) -> ValueModelSet {
        ValueModelSet {
            models: (0..game.n_agents())
                .map(|i| {
                    let arch = MlpArchitecture::new(game.n_x() - game.agent_dims[i] + game.n_p, &[4], 1, Activation::Swish, false).unwrap();
                    MlpParams::init(&arch, seed + i as u64)
                })
                .collect(),
            reg: vec![ValueRegularization::default(); game.n_agents()],
        }
    }

    fn param_rows(game: &ParametricGame, k: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_vec(
            k,
            game.n_p,
            (0..k * game.n_p).map(|j| rng.random_range(game.p_lb[j % game.n_p]..game.p_ub[j % game.n_p])).collect(),
        )
    }

    fn fd_check(f: impl Fn(&[f64]) -> (f64, Vec<f64>), theta: &[f64]) {
        let (_, g) = f(theta);
        for j in 0..theta.len() {
            let h = 1e-6 * theta[j].abs().max(1.0);
            let mut tp = theta.to_vec();
            tp[j] += h;
            let mut tm = theta.to_vec();
            tm[j] -= h;
            let fd = (f(&tp).0 - f(&tm).0) / (2.0 * h);
            let denom = g[j].abs().max(fd.abs()).max(1e-3);
            assert!((g[j] - fd).abs() / denom <= 1e-5, "entry {j}: {} vs {fd}", g[j]);
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        for (game, act) in [(lq17(), Activation::Tanh), (switching20(2), Activation::Swish)] {
            let values = toy_values(&game, 3);
            let arch = MlpArchitecture::new(game.n_p, &[3], game.n_x(), act, true).unwrap();
            let p = param_rows(&game, 6, 1);
            for loss in [NiLoss::Sum, NiLoss::SmoothPos] {
                for saturate in [false, true] {
                    let cfg = NiTrainConfig {
                        loss,
                        beta: 1.0,
                        gamma: 2.0,
                        l2: 1e-3,
                        saturate,
                        ..NiTrainConfig::default()
                    };
                    let output = cfg.output_map(&game).unwrap();
                    let mut theta = MlpParams::init(&arch, 4).flatten();
                    // keep switching decisions away from zero
                    if !saturate && game.name.starts_with("switching") {
                        let nd = theta.len();
                        theta[nd - 2..].copy_from_slice(&[0.5, 0.5]);
                    }
                    fd_check(|t| gne_objective(&game, &values, &arch, &output, t, &p, &cfg).unwrap(), &theta);
                }
            }
        }
    }

    #[test]
    fn exact_values_give_zero_ni_terms_at_the_equilibrium() {
        let g = nonmono18();
        for k in 0..=20 {
            let p = [-1.0 + 0.1 * k as f64];
            let x = nonmono18_exact(p[0]);
            let nu = ni_terms_with(&g, &x, &p, |i, x, p| Ok(best_response_at(&g, i, x, p, &BrConfig::default())?.value)).unwrap();
            assert!(nu.iter().all(|v| v.abs() <= 1e-7), "{nu:?}");
            let shifted = ni_terms_with(&g, &x, &p, |i, x, p| Ok(best_response_at(&g, i, x, p, &BrConfig::default())?.value - 1.0)).unwrap();
            for (a, b) in shifted.iter().zip(&nu) {
                assert!((a - b - 1.0).abs() <= 1e-12);
            }
            let degenerate = ni_terms_with(&g, &x, &p, |i, x, p| g.eval_cost(i, x, p)).unwrap();
            assert_eq!(degenerate, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn penalty_examples() {
        let g = lq17();
        let arch = MlpArchitecture::new(2, &[], 2, Activation::Relu, false).unwrap();
        let model = GneModel::new(MlpParams::zeros(&arch), OutputMap::Identity);
        // x = 0 satisfies every lq17 row strictly inside the parameter box
        let p = param_rows(&g, 5, 2);
        let (gv, _) = g.constraints(&[0.0, 0.0], p.row(0));
        assert!(gv.iter().all(|v| *v <= 0.0));
        let pen = constraint_penalty(&g, &model, &p, 100.0, 10.0).unwrap();
        assert!((pen - 10.0 * ((5 * g.n_g()) as f64).ln()).abs() <= 1e-12);
        assert!(constraint_penalty(&g, &model, &Mat::zeros(0, 2), 1.0, 1.0).is_err());
    }

    fn short_opt(restarts: usize, epochs: usize, iters: usize) -> OptimizerConfig {
        OptimizerConfig {
            adam: AdamConfig {
                epochs,
                learning_rate: 0.01,
                ..AdamConfig::default()
            },
            lbfgs: LbfgsConfig {
                max_iters: iters,
                ..LbfgsConfig::default()
            },
            restarts,
            base_seed: 5,
        }
    }

    #[test]
    fn degenerate_schedule_returns_the_initialization() {
        let g = lq17();
        let train = build_dataset(&g, 20, Split::Train, 0).unwrap();
        let val = build_dataset(&g, 20, Split::Val, 0).unwrap();
        let arch = MlpArchitecture::new(2, &[3], 2, Activation::Relu, true).unwrap();
        let cfg = NiTrainConfig {
            optimizer: short_opt(1, 0, 0),
            ..NiTrainConfig::default()
        };
        let t = train_gne(&g, &train, &val, &toy_values(&g, 0), &arch, &cfg).unwrap();
        assert_eq!(t.model.params, MlpParams::init(&arch, 5));
        let cfg = NiTrainConfig {
            optimizer: short_opt(2, 20, 30),
            ..NiTrainConfig::default()
        };
        let a = train_gne(&g, &train, &val, &toy_values(&g, 0), &arch, &cfg).unwrap();
        let b = train_gne(&g, &train, &val, &toy_values(&g, 0), &arch, &cfg).unwrap();
        assert_eq!(a.model.to_text(), b.model.to_text());
        assert!(a.outcome.final_objective <= a.outcome.initial_objective);
    }

    fn scalar_problem(with_cap: bool) -> ParametricGame {
        let cap = if with_cap { "A 1x1 1\nb 1x1 0\nS 1x1 0\n" } else { "A 0x1\nb 1x0\nS 0x1\n" };
        ParametricGame::from_text(&format!(
            "MPFIT-GAME v1\nname scalar\ntag single_agent\nkind quadratic\nagent_dims 1\nn_p 1\n\
             p_lb 1x1 -1\np_ub 1x1 1\nx_lb 1x1 -1\nx_ub 1x1 1\n\
             Q0 1x1 2\nc0 1x1 0\nF0 1x1 -2\n{cap}E 0x1\ne 1x0\nT 0x1\n"
        ))
        .unwrap()
    }

    #[test]
    fn single_agent_learns_identity_and_clipped_maps() {
        for with_cap in [false, true] {
            let g = scalar_problem(with_cap);
            let train = parameter_dataset(&g, 200, Split::Train, 0).unwrap();
            let val = parameter_dataset(&g, 100, Split::Val, 0).unwrap();
            assert!(train.jbar.is_none());
            let (arch, cfg) = if with_cap {
                (
                    MlpArchitecture::new(1, &[8], 1, Activation::Relu, true).unwrap(),
                    NiTrainConfig {
                        optimizer: short_opt(2, 300, 1000),
                        ..NiTrainConfig::default()
                    },
                )
            } else {
                (
                    MlpArchitecture::new(1, &[2], 1, Activation::Relu, true).unwrap(),
                    NiTrainConfig {
                        optimizer: short_opt(2, 100, 1000),
                        ..NiTrainConfig::default()
                    },
                )
            };
            let t = train_single_agent(&g, &train, &val, None, &arch, &cfg).unwrap();
            let tol = if with_cap { 5e-3 } else { 1e-3 };
            for k in 0..=100 {
                let p = -1.0 + 0.02 * k as f64;
                let x = t.model.predict(&g, &[p], PredictMode::Raw).unwrap()[0];
                let want = if with_cap { p.min(0.0) } else { p };
                assert!((x - want).abs() <= tol, "cap={with_cap} p={p}: {x}");
            }
        }
        assert!(train_single_agent(&lq17(), &build_dataset(&lq17(), 5, Split::Train, 0).unwrap(), &build_dataset(&lq17(), 5, Split::Val, 0).unwrap(), None, &MlpArchitecture::new(2, &[2], 2, Activation::Relu, false).unwrap(), &NiTrainConfig::default()).is_err());
    }

    #[test]
    fn prediction_modes() {
        let g = lq17();
        let arch = MlpArchitecture::new(2, &[4], 2, Activation::Relu, true).unwrap();
        let mut params = MlpParams::init(&arch, 9);
        if let Some((c, _)) = params.bypass.as_mut() {
            c.data.iter_mut().for_each(|v| *v *= 4.0);
        }
        let model = GneModel::new(params, OutputMap::Identity);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..2000 {
            let p = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
            let x = model.predict(&g, &p, PredictMode::Clip).unwrap();
            assert!(g.box_violation(&x) == 0.0);
        }
        for _ in 0..100 {
            let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let x = model.predict(&g, &p, PredictMode::Project).unwrap();
            assert!(g.shared_violation(&x, &p) <= 1e-8);
            let again = project_onto_feasible(&g, &p, &x).unwrap().x;
            assert!(crate::linalg::dist2(&again, &x).sqrt() <= 1e-10);
        }
        let sat = GneModel::new(MlpParams::init(&arch, 1), OutputMap::tanh_box(&g).unwrap());
        let back = GneModel::from_text(&sat.to_text()).unwrap();
        assert_eq!(back, sat);
        assert_eq!(GneModel::from_text(&model.to_text()).unwrap(), model);
    }

    #[test]
    fn empty_validation_is_rejected() {
        let g = lq17();
        let train = build_dataset(&g, 5, Split::Train, 0).unwrap();
        let mut val = train.clone();
        val.p = Mat::zeros(0, 2);
        val.x = Mat::zeros(0, 2);
        val.jbar = Some(Mat::zeros(0, 2));
        val.provenance = Provenance { kept: 0, ..val.provenance };
        let arch = MlpArchitecture::new(2, &[2], 2, Activation::Relu, false).unwrap();
        assert!(train_gne(&g, &train, &val, &toy_values(&g, 0), &arch, &NiTrainConfig::default()).is_err());
    }
}
