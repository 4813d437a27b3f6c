//! Numerical optimizers used for training and for best responses.
//!
//! - [`adam()`]: full-batch Adam.
//! - [`lbfgs()`]: limited-memory BFGS with a strong-Wolfe line search.
//! - [`minimize_box`]: projected quasi-Newton for bound-constrained problems.
//! - [`solve_qp`]: dense primal active-set QP with optional scalar slack.
//! - [`sqp`]: sequential linearization for smooth constrained problems.
//! - [`project_onto_feasible`]: least-distance projection onto a game's feasible set.

mod adam;
mod boxqn;
mod lbfgs;
mod projection;
pub mod qp;
pub mod sqp;

pub use adam::{adam, AdamConfig};
pub use boxqn::{minimize_box, BoxQnConfig, BoxQnOutcome, BoxQnStatus};
pub use lbfgs::{lbfgs, LbfgsConfig, LbfgsOutcome, LbfgsStatus};
pub use projection::{project_onto_feasible, Projection, ProjectionStatus};
pub use qp::{solve_qp, KktResidual, QpProblem, QpSolution, QpStatus, DEFAULT_SLACK_RHO};

use crate::Result;

/// Combined training schedule: Adam epochs followed by L-BFGS iterations,
/// repeated from several seeded initializations.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub adam: AdamConfig,
    pub lbfgs: LbfgsConfig,
    pub restarts: usize,
    pub base_seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            adam: AdamConfig::default(),
            lbfgs: LbfgsConfig::default(),
            restarts: 32,
            base_seed: 0,
        }
    }
}

impl OptimizerConfig {
    /// Reduced schedule used for desk-scale runs: 8 restarts, 500 Adam
    /// epochs and 500 L-BFGS iterations.
    pub fn desk_scale() -> Self {
        OptimizerConfig {
            adam: AdamConfig {
                epochs: 500,
                ..AdamConfig::default()
            },
            lbfgs: LbfgsConfig {
                max_iters: 500,
                ..LbfgsConfig::default()
            },
            restarts: 8,
            base_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.lbfgs.validate()?;
        if self.restarts == 0 {
            return Err(crate::Error::InvalidArgument("restarts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Value and gradient of a smooth objective.
pub trait Objective {
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self(x)
    }
}
