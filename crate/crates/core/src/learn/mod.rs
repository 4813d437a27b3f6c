//! Two-stage learning: value-function surrogates, then a GNE solution model
//! trained on approximate Nikaido-Isoda terms plus a smooth-max constraint
//! penalty. Single-agent problems skip the value models and minimize the
//! cost directly.

mod gne;
mod loss;
mod schedule;
mod value;

pub use gne::{
    constraint_penalty, constraint_penalty_with, gne_objective, ni_terms, ni_terms_with, single_agent_objective, train_gne,
    train_single_agent, GneModel, GneTraining, NiTrainConfig, OutputMap, PredictMode, GNE_MAGIC,
};
pub use loss::{ni_loss, smooth_max_penalty, smooth_max_penalty_per_sample, NiLoss};
pub use schedule::{logs_to_csv, train_with_restarts, RestartLog, TrainOutcome};
pub use value::{train_value_models, value_inputs, value_objective, ValueModelSet, ValueRegularization, ValueTraining, VALUES_MAGIC};
