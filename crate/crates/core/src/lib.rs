//! Episodic fine-tuning with validation-weighted task-vector merging for
//! category discovery under domain shift, on a synthetic benchmark.

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod losses;
pub mod merging;
pub mod numeric;
pub mod orchestrator;
pub mod report;
pub mod synth;

pub use config::{Ablations, EvalConfig, ModelConfig, TargetK, TrainingConfig};
pub use encoder::{read_checkpoint, write_checkpoint, Architecture, ClassifierParams, EncoderParams, EpisodeModel};
pub use error::{Error, Result};
pub use eval::{estimate_k, hungarian_accuracy, kmeans, ClusteringResult, GcdMetrics, KEstimate};
pub use losses::{LossConfig, LossTerms};
pub use merging::{MergeConfig, MergeStrategy, MergeWeights, ScoreScale, TaskVector};
pub use numeric::{LayoutId, ParamVector, SeededRng};
pub use orchestrator::{
    compare_merges, evaluate_on_target, run_episode, run_global_update, sweep_episodes, train, train_and_evaluate,
    EpisodeOutcome, EpisodeResult, GlobalModelState, HistoryRow, RunSummary, TargetEvaluation, UpdateReport,
};
pub use synth::{DomainRole, DomainSpec, EpisodeData, ProblemConfig, SyntheticProblem, ValidationSet};
