//! Dataset loading, end-to-end runs and EX / R-VES scoring.

mod dataset;
mod eval;
mod pipeline;
mod report;

pub use dataset::{load_dataset, load_training_pairs, parse_dataset, DatasetError, Difficulty, Task};
pub use eval::{eval_ex, eval_rves, gold_is_ordered, rves_score, score_task, GoldFailure, TaskScore};
pub use pipeline::{
    index_file, run_pipeline, ArtifactError, CandidateSummary, DbArtifacts, PipelineDeps, PipelineRun, Workspace,
};
pub use report::{
    run_bench, Aggregate, BenchDeps, EvalReport, TaskReport, REPORT_FORMAT, REPORT_VERSION, UNLABELED,
};
