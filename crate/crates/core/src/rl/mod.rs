//! Ensemble soft Q-learning with pluggable target rules and spectral or Gini
//! regularization, over discrete action spaces.

mod checkpoint;
mod config;
mod ensemble;
mod train;
mod update;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Manifest, MANIFEST_FILE};
pub use config::{beta_schedule, BetaSchedule, EvalRule, Regularizer, TargetRule, TrainConfig, TrainMode};
pub use ensemble::{
    bellman_target, ens_eval, ens_tar, gini_regularizer, net_input, polyak_blend, polyak_update, QEnsemble, SoftPolicy,
};
pub use train::{evaluate, metrics_to_csv, train, AbortRecord, RunMetrics, TrainOutput, METRICS_HEADER};
pub use update::{actor_loss_and_grad, actor_update, critic_update, eval_q, CriticStats};
