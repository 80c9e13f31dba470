//! Multi-agent text-to-SQL pipeline.
//!
//! Preprocessing builds a [`schema::SchemaCatalog`], a [`index::ValueIndex`]
//! and a [`fewshot::FewShotLibrary`] per database. Each question then runs
//! extraction, structured generation, rule-based alignment, and refinement
//! (execution-guided correction plus self-consistency voting). Every model
//! call goes through [`llm::LlmGateway`], so the whole pipeline runs offline
//! against a scripted transcript.

pub mod align;
pub mod config;
pub mod cot;
pub mod db;
pub mod embed;
pub mod extraction;
pub mod fewshot;
pub mod generation;
pub mod harness;
pub mod index;
pub mod llm;
pub mod refine;
pub mod schema;
pub mod trace;

pub use align::{align_all, AlignFlag, Aligned, AlignmentContext, Rewrite, StyleProfile};
pub use config::{Ablation, PipelineConfig, CANDIDATE_SWEEP, FEWSHOT_SWEEP};
pub use cot::{parse_cot, CoTOutput};
pub use db::Database;
pub use embed::{Embedder, TrigramEmbedder, UnitVector};
pub use extraction::{run_extraction, Entity, ExtractionResult, SelectPair};
pub use fewshot::{mask_question, select_fewshots, FewShot, FewShotLibrary, TrainingPair};
pub use generation::{build_generation_prompt, generate_candidates, GenerationInput};
pub use harness::{
    eval_ex, eval_rves, load_dataset, run_bench, run_pipeline, DbArtifacts, EvalReport, PipelineRun, Task, Workspace,
};
pub use index::{build_index, RetrievalConfig, ValueHit, ValueIndex};
pub use llm::{LlmConfig, LlmError, LlmGateway, OpenAiGateway, ScriptedGateway, Stage};
pub use refine::{classify_error, correct, execute_sql, vote, Candidate, ErrorType, ExecOptions, ExecutionOutcome};
pub use schema::{expand_selection, ingest_schema, render_schema, ColumnSelection, SchemaCatalog};
