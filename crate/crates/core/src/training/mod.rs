//! Training loop for every method, the grad-step baseline, and fold-level
//! evaluation.

mod config;
mod evaluate;
mod gradstep;
mod optim;
mod trainer;

pub use config::{AdamConfig, Method, TrainConfig, WeightSource};
pub use evaluate::{evaluate, holdout_metrics, pooled_cdf, run_experiment, Experiment, RunOptions};
pub use gradstep::{gradstep, gradstep_update, GradstepStep, TaskGrad};
pub use optim::{sgd_step, Adam};
pub use trainer::{
    batch_objective, derive_seed, train_fold, train_member, EpochLog, EpochRecord, FoldRun,
    MemberJob, Progress,
};
