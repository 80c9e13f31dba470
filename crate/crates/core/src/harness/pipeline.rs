use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::align::{align_all, assist_flagged, AlignmentContext};
use crate::config::PipelineConfig;
use crate::db::Database;
use crate::embed::Embedder;
use crate::extraction::{run_extraction, ExtractionResult};
use crate::fewshot::{join_question, select_fewshots, FewShot, FewShotLibrary, LiteralMasker};
use crate::generation::{build_generation_prompt, generate_candidates, GenerationInput};
use crate::index::{build_index, IndexError, ValueIndex};
use crate::llm::LlmGateway;
use crate::refine::{correct, vote, Candidate, CorrectionContext, ExecResult, Executor};
use crate::schema::{ingest_schema, render_schema, RenderOptions, SchemaCatalog, SchemaError};
use crate::trace::{self, TraceEvent};

use super::dataset::Task;

/// Preprocessed state of one database.
pub struct DbArtifacts {
    pub database: Database,
    pub catalog: SchemaCatalog,
    pub index: ValueIndex,
}

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

pub fn index_file(dir: &Path, db_id: &str) -> PathBuf {
    dir.join(format!("{db_id}.index.jsonl"))
}

impl DbArtifacts {
    /// Ingest the schema (with BIRD descriptions when present) and reuse the
    /// saved index from `index_dir` when it matches the embedder, building
    /// and saving it otherwise.
    pub fn prepare(database: Database, index_dir: Option<&Path>, embedder: &dyn Embedder) -> Result<Self, ArtifactError> {
        let mut catalog = ingest_schema(&database)?;
        if let Some(dir) = database.path().parent().map(|p| p.join("database_description")) {
            catalog = catalog.with_descriptions(&dir)?;
        }
        let saved = index_dir.map(|d| index_file(d, database.db_id()));
        let index = match saved.as_deref().filter(|p| p.exists()) {
            Some(p) => match ValueIndex::load(p, Some(&embedder.id())) {
                Ok(i) => i,
                Err(e) => {
                    tracing::warn!(error = %e, "rebuilding value index");
                    build_index(&catalog, &database, embedder)?
                }
            },
            None => build_index(&catalog, &database, embedder)?,
        };
        if let Some(p) = saved.filter(|p| !p.exists()) {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir).map_err(IndexError::from)?;
            }
            index.save(&p)?;
        }
        Ok(Self {
            database,
            catalog,
            index,
        })
    }
}

/// Databases under a BIRD/Spider style root, prepared on first use.
pub struct Workspace {
    root: PathBuf,
    index_dir: Option<PathBuf>,
    cache: Mutex<HashMap<String, Arc<DbArtifacts>>>,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>, index_dir: Option<PathBuf>) -> Self {
        Self {
            root: root.into(),
            index_dir,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn get(&self, db_id: &str, embedder: &dyn Embedder) -> Result<Arc<DbArtifacts>, ArtifactError> {
        if let Some(a) = self.cache.lock().expect("cache lock").get(db_id) {
            return Ok(a.clone());
        }
        let a = Arc::new(DbArtifacts::prepare(
            Database::in_root(&self.root, db_id),
            self.index_dir.as_deref(),
            embedder,
        )?);
        Ok(self
            .cache
            .lock()
            .expect("cache lock")
            .entry(db_id.to_string())
            .or_insert(a)
            .clone())
    }
}

pub struct PipelineDeps<'a> {
    pub artifacts: &'a DbArtifacts,
    pub library: &'a FewShotLibrary,
    pub embedder: &'a dyn Embedder,
    pub llm: &'a dyn LlmGateway,
}

/// Final state of one candidate, for the trace and the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub sql: String,
    pub status: String,
    pub correction_attempts: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl From<&Candidate> for CandidateSummary {
    fn from(c: &Candidate) -> Self {
        let status = match c.outcome.as_ref().map(|o| &o.result) {
            None => "not_run".to_string(),
            Some(ExecResult::Rows { rows }) if rows.is_empty() => "empty".into(),
            Some(ExecResult::Rows { rows }) => format!("rows:{}", rows.len()),
            Some(ExecResult::Error { .. }) => "error".into(),
            Some(ExecResult::Timeout) => "timeout".into(),
        };
        Self {
            sql: c.sql.clone(),
            status,
            correction_attempts: c.correction_attempts,
            flags: c.flags.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub question_id: String,
    pub final_sql: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    pub trace: Vec<TraceEvent>,
}

impl PipelineRun {
    pub fn stages(&self) -> Vec<&str> {
        self.trace.iter().map(|e| e.stage.as_str()).collect()
    }
}

struct Failed(String);

/// Answer one task end to end. Stage failures yield a run without a final
/// SQL; they never panic or abort a batch.
pub fn run_pipeline(task: &Task, cfg: &PipelineConfig, deps: &PipelineDeps<'_>) -> PipelineRun {
    let mut trace = Vec::new();
    let mut flags = Vec::new();
    let result = run_stages(task, cfg, deps, &mut trace, &mut flags);
    let (final_sql, error) = match result {
        Ok(sql) => (Some(sql), None),
        Err(Failed(e)) => {
            tracing::warn!(question = %task.question_id, error = %e, "task failed");
            (None, Some(e))
        }
    };
    PipelineRun {
        question_id: task.question_id.clone(),
        final_sql,
        error,
        flags,
        trace,
    }
}

fn run_stages(
    task: &Task,
    cfg: &PipelineConfig,
    deps: &PipelineDeps<'_>,
    trace: &mut Vec<TraceEvent>,
    flags: &mut Vec<String>,
) -> Result<String, Failed> {
    let a = deps.artifacts;
    let ab = &cfg.ablation;

    let extraction = if ab.no_extraction {
        ExtractionResult {
            entities: vec![],
            value_hits: vec![],
            selection: a.catalog.full_selection(),
            select_alignment: vec![],
            reason: String::new(),
            trace: vec![],
        }
    } else {
        run_extraction(
            &task.question,
            &task.evidence,
            &a.catalog,
            &a.index,
            deps.embedder,
            deps.llm,
            cfg,
        )
        .map_err(|e| Failed(format!("extraction: {e}")))?
    };
    trace.extend(extraction.trace.iter().cloned());
    let schema_text = render_schema(
        &a.catalog,
        Some(&extraction.selection),
        RenderOptions {
            descriptions: cfg.descriptions_in_generation,
        },
    )
    .map_err(|e| Failed(format!("schema: {e}")))?;

    let shots: Vec<&FewShot> = if ab.no_fewshot {
        Vec::new()
    } else {
        let same_db = cfg.fewshot_same_db.then_some(task.db_id.as_str());
        let question = join_question(&task.question, &task.evidence);
        let shots = select_fewshots(deps.library, &question, cfg.fewshots, deps.embedder, &LiteralMasker, same_db)
            .map_err(|e| Failed(format!("few-shot selection: {e}")))?;
        trace.push(TraceEvent::new(
            trace::FEWSHOT,
            shots.iter().map(|s| s.question.as_str()).collect::<Vec<_>>(),
        ));
        shots
    };

    let prompt = build_generation_prompt(&GenerationInput {
        fewshots: &shots,
        schema_text: &schema_text,
        value_hits: &extraction.value_hits,
        rules: &cfg.rules,
        question: &task.question,
        evidence: &task.evidence,
        select_alignment: &extraction.select_alignment,
        cot: !ab.no_cot,
    });
    let cots = generate_candidates(&prompt, deps.llm, &cfg.generation_llm())
        .map_err(|e| Failed(format!("generation: {e}")))?;
    trace.push(TraceEvent::new(
        trace::GENERATION,
        serde_json::json!({ "requested": cfg.n_candidates, "parsed": cots.len() }),
    ));
    if !ab.no_cot {
        trace.push(TraceEvent::new(
            trace::COT,
            cots.iter()
                .map(|c| serde_json::json!({ "select": c.select_clause, "sql_like": c.sql_like }))
                .collect::<Vec<_>>(),
        ));
    }

    let mut pool: Vec<Candidate> = cots.into_iter().map(Candidate::new).collect();
    for c in &mut pool {
        if c.cot.sql_like_has_join() {
            c.flags.push("sql_like_has_join".into());
        }
    }
    let align_ctx = (!ab.no_alignments).then(|| {
        AlignmentContext::new(&a.catalog)
            .with_hits(&extraction.value_hits)
            .with_index(&a.index, deps.embedder)
            .with_threshold(cfg.values.threshold)
            .with_style(cfg.style)
    });
    if let Some(ctx) = &align_ctx {
        let mut applied = Vec::new();
        for c in &mut pool {
            let out = align_all(&c.sql, ctx);
            let mut sql = out.sql;
            if cfg.align_assist && !out.flags.is_empty() {
                if let Some(fixed) = assist_flagged(&sql, &out.flags, &schema_text, deps.llm, &cfg.refinement_llm()) {
                    sql = align_all(&fixed, ctx).sql;
                }
            }
            c.flags.extend(out.flags.iter().map(|f| f.to_string()));
            c.sql = sql.clone();
            c.cot.sql = sql;
            applied.push(out.applied);
        }
        trace.push(TraceEvent::new(trace::ALIGNMENT, applied));
    }

    let exec = Executor::open(&a.database, cfg.exec);
    for c in &mut pool {
        c.outcome = Some(exec.run(&c.sql));
    }
    trace.push(TraceEvent::new(
        trace::EXECUTION,
        pool.iter().map(|c| CandidateSummary::from(c).status).collect::<Vec<_>>(),
    ));

    if !ab.no_correction {
        let question = join_question(&task.question, &task.evidence);
        let ctx = CorrectionContext {
            question: &question,
            schema_text: &schema_text,
            value_hits: &extraction.value_hits,
            library: deps.library,
            llm: deps.llm,
            llm_config: cfg.refinement_llm(),
            align: align_ctx,
            max_rounds: cfg.correction_rounds,
        };
        pool = pool.into_iter().map(|c| correct(c, &exec, &ctx)).collect();
        trace.push(TraceEvent::new(
            trace::CORRECTION,
            pool.iter().map(CandidateSummary::from).collect::<Vec<_>>(),
        ));
    }

    let chosen = if ab.no_vote {
        0
    } else {
        let v = vote(&pool).map_err(|e| Failed(format!("vote: {e}")))?;
        trace.push(TraceEvent::new(
            trace::VOTE,
            serde_json::json!({
                "index": v.index,
                "group_size": v.group_size,
                "survivors": v.survivors,
                "fallback": v.fallback,
            }),
        ));
        if v.fallback {
            flags.push("vote_fallback".into());
        }
        v.index
    };
    let winner = &pool[chosen];
    flags.extend(winner.flags.iter().cloned());
    Ok(winner.sql.clone())
}
