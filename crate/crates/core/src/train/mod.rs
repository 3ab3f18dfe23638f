//! Dual-loss training, evaluation metrics and the variant ablation.

mod ablation;
mod metrics;
mod trainer;

pub use ablation::{
    ablation_config, match_pointwise_flops, mean_flops, run_ablation, AblationRow, AblationTable, MatchedPointwise,
    FLOPS_MATCH_TOLERANCE, MAX_EXTRA_BLOCKS,
};
pub use metrics::{auc, clk_loss, imp_loss, logloss, total_loss, EvalReport, LOGLOSS_CLAMP};
pub use trainer::{
    evaluate, predict_all, split_holdout, step_log_csv, train_one_epoch, StepLog, TrainConfig, TrainOutcome,
};
