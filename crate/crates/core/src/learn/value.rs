//! Value-function surrogates `Ĵ_i(x_{-i}, p)` fitted to best-response values.

use std::path::Path;

use crate::autodiff::{grad, Tape, Unary};
use crate::dataset::Dataset;
use crate::games::ParametricGame;
use crate::linalg::Mat;
use crate::nn::{forward_tape, MlpArchitecture, MlpParams};
use crate::optimize::OptimizerConfig;
use crate::textfmt::{fmt_f64, parse_f64, read_to_string, write_atomic};
use crate::{Error, Result};

use super::schedule::{train_with_restarts, RestartLog};

pub const VALUES_MAGIC: &str = "MPFIT-VALUES v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueRegularization {
    /// `ρ1 ‖θ‖₂²`
    pub l2: f64,
    /// `τ1 ‖θ‖₁`
    pub l1: f64,
}

impl Default for ValueRegularization {
    fn default() -> Self {
        ValueRegularization { l2: 1e-8, l1: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueModelSet {
    pub models: Vec<MlpParams>,
    pub reg: Vec<ValueRegularization>,
}

/// `[x_{-i}, p]` rows for agent `i`.
pub fn value_inputs(game: &ParametricGame, i: usize, x: &Mat, p: &Mat) -> Mat {
    let others = game.others(i);
    let mut out = Mat::zeros(x.rows, others.len() + p.cols);
    for k in 0..x.rows {
        let row = out.row_mut(k);
        for (c, &j) in others.iter().enumerate() {
            row[c] = x.get(k, j);
        }
        row[others.len()..].copy_from_slice(p.row(k));
    }
    out
}

fn regularized(tape: &mut Tape, th: crate::autodiff::Var, reg: &ValueRegularization) -> Option<crate::autodiff::Var> {
    let mut terms = Vec::new();
    if reg.l2 > 0.0 {
        let s = tape.sum_squares(th);
        terms.push(tape.scale(s, reg.l2));
    }
    if reg.l1 > 0.0 {
        let a = tape.unary(th, Unary::Abs);
        let s = tape.sum_all(a);
        terms.push(tape.scale(s, reg.l1));
    }
    terms.into_iter().reduce(|a, b| tape.add(a, b))
}

/// Mean squared error of `arch` with parameters `theta` plus the penalty.
pub fn value_objective(arch: &MlpArchitecture, theta: &[f64], inputs: &Mat, targets: &Mat, reg: &ValueRegularization) -> Result<(f64, Vec<f64>)> {
    grad(
        |tape, th| {
            let inp = tape.constant(inputs.clone());
            let y = tape.constant(targets.clone());
            let out = forward_tape(arch, tape, th, inp);
            let e = tape.sub(out, y);
            let sq = tape.unary(e, Unary::Square);
            let mse = tape.mean_all(sq);
            match regularized(tape, th, reg) {
                Some(r) => tape.add(mse, r),
                None => mse,
            }
        },
        theta,
    )
}

fn mse(params: &MlpParams, inputs: &Mat, targets: &Mat) -> Result<f64> {
    let mut s = 0.0;
    for k in 0..inputs.rows {
        let y = params.forward(inputs.row(k))?[0];
        s += (y - targets.data[k]).powi(2);
    }
    Ok(s / inputs.rows as f64)
}

#[derive(Debug, Clone)]
pub struct ValueTraining {
    pub set: ValueModelSet,
    /// per agent
    pub logs: Vec<Vec<RestartLog>>,
    pub val_mse: Vec<f64>,
}

/// Fits one value model per agent; `archs[i]` must map
/// `n_x - n_i + n_p` inputs to one output.
pub fn train_value_models(
    game: &ParametricGame,
    train: &Dataset,
    val: Option<&Dataset>,
    archs: &[MlpArchitecture],
    reg: &[ValueRegularization],
    opt: &OptimizerConfig,
) -> Result<ValueTraining> {
    let n = game.n_agents();
    if archs.len() != n || reg.len() != n {
        return Err(Error::dim("value model architectures", n, archs.len().min(reg.len())));
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset("value-model training set".into()));
    }
    train.check_game(game)?;
    let val = val.unwrap_or(train);
    val.check_game(game)?;
    let (Some(jt), Some(jv)) = (&train.jbar, &val.jbar) else {
        return Err(Error::EmptyDataset("value-model training needs Jbar columns".into()));
    };
    if val.is_empty() {
        return Err(Error::EmptyDataset("value-model validation set".into()));
    }
    let mut models = Vec::with_capacity(n);
    let mut logs = Vec::with_capacity(n);
    let mut val_mse = Vec::with_capacity(n);
    for i in 0..n {
        let arch = &archs[i];
        let want_in = game.n_x() - game.agent_dims[i] + game.n_p;
        if arch.input_dim != want_in || arch.output_dim != 1 {
            return Err(Error::dim("value model input", want_in, arch.input_dim));
        }
        let xin = value_inputs(game, i, &train.x, &train.p);
        let yt = Mat::from_vec(train.len(), 1, (0..train.len()).map(|k| jt.get(k, i)).collect());
        let vin = value_inputs(game, i, &val.x, &val.p);
        let yv = Mat::from_vec(val.len(), 1, (0..val.len()).map(|k| jv.get(k, i)).collect());
        let r = reg[i];
        let out = train_with_restarts(
            opt,
            |seed| Ok(MlpParams::init(arch, seed).flatten()),
            |th: &[f64]| value_objective(arch, th, &xin, &yt, &r),
            |th: &[f64]| mse(&MlpParams::from_flat(arch, th)?, &vin, &yv),
        )?;
        val_mse.push(out.logs[out.selected].val_obj);
        models.push(MlpParams::from_flat(arch, &out.theta)?);
        logs.push(out.logs);
    }
    Ok(ValueTraining {
        set: ValueModelSet {
            models,
            reg: reg.to_vec(),
        },
        logs,
        val_mse,
    })
}

impl ValueModelSet {
    /// `Ĵ_i` at the full decision vector `x` (agent `i`'s block is ignored).
    pub fn predict(&self, game: &ParametricGame, i: usize, x: &[f64], p: &[f64]) -> Result<f64> {
        let mut input: Vec<f64> = game.others(i).iter().map(|&j| x[j]).collect();
        input.extend_from_slice(p);
        Ok(self.models[i].forward(&input)?[0])
    }

    pub fn check_game(&self, game: &ParametricGame) -> Result<()> {
        if self.models.len() != game.n_agents() {
            return Err(Error::dim("value model count", game.n_agents(), self.models.len()));
        }
        for (i, m) in self.models.iter().enumerate() {
            let want = game.n_x() - game.agent_dims[i] + game.n_p;
            if m.arch.input_dim != want || m.arch.output_dim != 1 {
                return Err(Error::dim("value model input", want, m.arch.input_dim));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{VALUES_MAGIC}\nagents {}\n", self.models.len());
        for (i, (m, r)) in self.models.iter().zip(&self.reg).enumerate() {
            s.push_str(&format!("agent {i} l2 {} l1 {}\n", fmt_f64(r.l2), fmt_f64(r.l1)));
            s.push_str(&m.to_text());
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim_end) != Some(VALUES_MAGIC) {
            return Err(Error::parse("value models", format!("first line must be {VALUES_MAGIC:?}")));
        }
        let count: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("agents "))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::parse("value models", "missing agent count"))?;
        let rest: Vec<&str> = lines.collect();
        let mut heads: Vec<usize> = rest.iter().enumerate().filter(|(_, l)| l.starts_with("agent ")).map(|(k, _)| k).collect();
        if heads.len() != count {
            return Err(Error::parse("value models", format!("expected {count} models, found {}", heads.len())));
        }
        heads.push(rest.len());
        let mut models = Vec::with_capacity(count);
        let mut reg = Vec::with_capacity(count);
        for w in heads.windows(2) {
            let head: Vec<&str> = rest[w[0]].split_whitespace().collect();
            if head.len() != 6 || head[2] != "l2" || head[4] != "l1" {
                return Err(Error::parse("value models", format!("bad header {:?}", rest[w[0]])));
            }
            reg.push(ValueRegularization {
                l2: parse_f64(head[3], "value model l2")?,
                l1: parse_f64(head[5], "value model l1")?,
            });
            models.push(MlpParams::from_text(&rest[w[0] + 1..w[1]].join("\n"))?);
        }
        Ok(ValueModelSet { models, reg })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_dataset, Provenance, Split};
    use crate::games::lq17;
    use crate::nn::Activation;
    use crate::optimize::{AdamConfig, LbfgsConfig};

    fn quick(restarts: usize) -> OptimizerConfig {
        OptimizerConfig {
            adam: AdamConfig {
                epochs: 100,
                learning_rate: 0.01,
                ..AdamConfig::default()
            },
            lbfgs: LbfgsConfig {
                max_iters: 300,
                ..LbfgsConfig::default()
            },
            restarts,
            base_seed: 0,
        }
    }

    fn synthetic(game: &ParametricGame, f: impl Fn(&[f64], &[f64], usize) -> f64) -> Dataset {
        let mut d = build_dataset(game, 80, Split::Train, 1).unwrap();
        let n = game.n_agents();
        let mut j = Mat::zeros(d.len(), n);
        for k in 0..d.len() {
            for i in 0..n {
                j.set(k, i, f(d.x.row(k), d.p.row(k), i));
            }
        }
        d.jbar = Some(j);
        d
    }

    #[test]
    fn fits_constant_and_affine_targets() {
        let g = lq17();
        let constant = synthetic(&g, |_, _, _| 0.7);
        let arch = MlpArchitecture::new(3, &[4], 1, Activation::Tanh, false).unwrap();
        let t = train_value_models(&g, &constant, None, &[arch.clone(), arch], &[ValueRegularization { l2: 1e-10, l1: 0.0 }; 2], &quick(1)).unwrap();
        for k in 0..constant.len() {
            for i in 0..2 {
                let v = t.set.predict(&g, i, constant.x.row(k), constant.p.row(k)).unwrap();
                assert!((v - 0.7).abs() < 1e-3);
            }
        }
        let affine = synthetic(&g, |x, p, i| 0.3 * x[1 - i] - 1.2 * p[0] + 0.5 * p[1] + i as f64);
        let arch = MlpArchitecture::new(3, &[3], 1, Activation::Swish, true).unwrap();
        let t = train_value_models(&g, &affine, None, &[arch.clone(), arch], &[ValueRegularization { l2: 0.0, l1: 0.0 }; 2], &quick(2)).unwrap();
        assert!(t.val_mse.iter().all(|m| *m <= 1e-6), "{:?}", t.val_mse);
    }

    #[test]
    fn heavy_regularization_shrinks_weights() {
        let g = lq17();
        let d = synthetic(&g, |x, _, _| x[0]);
        let arch = MlpArchitecture::new(3, &[4], 1, Activation::Tanh, true).unwrap();
        let t = train_value_models(&g, &d, None, &[arch.clone(), arch], &[ValueRegularization { l2: 1e6, l1: 0.0 }; 2], &quick(1)).unwrap();
        for m in &t.set.models {
            let norm = m.flatten().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= 1e-2, "{norm}");
        }
    }

    #[test]
    fn text_round_trip_and_errors() {
        let g = lq17();
        let arch = MlpArchitecture::new(3, &[2], 1, Activation::Swish, false).unwrap();
        let set = ValueModelSet {
            models: vec![MlpParams::init(&arch, 1), MlpParams::init(&arch, 2)],
            reg: vec![ValueRegularization::default(); 2],
        };
        set.check_game(&g).unwrap();
        assert_eq!(ValueModelSet::from_text(&set.to_text()).unwrap(), set);
        let empty = Dataset {
            p: Mat::zeros(0, 2),
            x: Mat::zeros(0, 2),
            jbar: Some(Mat::zeros(0, 2)),
            provenance: Provenance {
                game: "lq17".into(),
                split: Split::Train,
                seed: 0,
                requested: 0,
                kept: 0,
                relaxed: 0,
                local: 0,
            },
        };
        assert!(train_value_models(&g, &empty, None, &[arch.clone(), arch], &[ValueRegularization::default(); 2], &quick(1)).is_err());
    }
}
