mod common;

use t2s_core::harness::{index_file, run_bench, run_pipeline, BenchDeps, Difficulty, PipelineDeps, UNLABELED};
use t2s_core::llm::{Completion, LlmRequest, RecordingGateway};
use t2s_core::*;

const IGA_SQL: &str = "SELECT COUNT(DISTINCT T1.ID) FROM Patient AS T1 INNER JOIN Laboratory AS T2 ON T1.ID = T2.ID WHERE T2.IGA > 80 AND T2.IGA < 500 AND strftime('%Y', T1.`First Date`) >= '1990'";

#[test]
fn iga_question_ends_at_the_listing_sql() {
    let root = common::Root::new();
    let llm = common::gateway();
    let library = common::library(root.path(), &llm);
    let ws = Workspace::new(root.path(), None);
    let artifacts = ws.get(common::DB_ID, &TrigramEmbedder).unwrap();
    let task = common::tasks().into_iter().find(|t| t.question_id == "h01").unwrap();
    let run = run_pipeline(
        &task,
        &PipelineConfig::default(),
        &PipelineDeps {
            artifacts: &artifacts,
            library: &library,
            embedder: &TrigramEmbedder,
            llm: &llm,
        },
    );
    assert_eq!(run.final_sql.as_deref(), Some(IGA_SQL));
    assert!(run.error.is_none());
    let info = run.trace.iter().find(|e| e.stage == "info_alignment").unwrap();
    assert_eq!(info.detail[0]["phrase"], "How many patients");
    let vote = run.trace.iter().find(|e| e.stage == "vote").unwrap();
    // 21 samples cycle through two copies of the listing SQL and one variant.
    assert_eq!(vote.detail["survivors"], 21);
    assert_eq!(vote.detail["group_size"], 14);
}

#[test]
fn report_groups_by_difficulty_and_keeps_order() {
    let root = common::Root::new();
    let llm = common::gateway();
    let library = common::library(root.path(), &llm);
    let ws = Workspace::new(root.path(), Some(root.path().join("indexes")));
    let mut tasks = common::tasks();
    tasks[0].difficulty = None;
    tasks.push(Task {
        question_id: "missing".into(),
        db_id: "no_such_db".into(),
        question: "Anything?".into(),
        evidence: String::new(),
        gold_sql: "SELECT 1".into(),
        difficulty: None,
    });
    let deps = BenchDeps {
        workspace: &ws,
        library: &library,
        embedder: &TrigramEmbedder,
        llm: &llm,
    };
    let (report, runs) = run_bench(&tasks, &PipelineConfig::default(), &deps, 3);
    let ids: Vec<&str> = report.tasks.iter().map(|t| t.question_id.as_str()).collect();
    let want: Vec<&str> = tasks.iter().map(|t| t.question_id.as_str()).collect();
    assert_eq!(ids, want);
    assert_eq!(runs.len(), 10);
    assert_eq!(report.skipped, 1);
    assert_eq!(report.overall.count, 10);
    assert_eq!(report.overall.ex, 1.0);
    assert!(report.overall.rves > 0.0);
    assert_eq!(report.by_difficulty[UNLABELED].count, 1);
    assert_eq!(report.by_difficulty[Difficulty::Easy.as_str()].count, 6);
    assert!(index_file(&root.path().join("indexes"), common::DB_ID).exists());
    let json = serde_json::to_value(&report).unwrap();
    assert_eq!(json["format"], "t2s-eval-report");
}

#[test]
fn saved_index_is_reused() {
    let root = common::Root::new();
    let dir = root.path().join("indexes");
    let first = Workspace::new(root.path(), Some(dir.clone()))
        .get(common::DB_ID, &TrigramEmbedder)
        .unwrap();
    let path = index_file(&dir, common::DB_ID);
    let stamp = std::fs::metadata(&path).unwrap().modified().unwrap();
    let second = Workspace::new(root.path(), Some(dir))
        .get(common::DB_ID, &TrigramEmbedder)
        .unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().modified().unwrap(), stamp);
    assert_eq!(first.index.len(), second.index.len());
    assert!(second.index.entries().iter().any(|e| e.text == "thrombocytepenia"));
}

#[test]
fn recorded_run_replays_exactly() {
    let root = common::Root::new();
    let llm = common::gateway();
    let library = common::library(root.path(), &llm);
    let ws = Workspace::new(root.path(), None);
    let cfg = PipelineConfig {
        n_candidates: 3,
        ..PipelineConfig::default()
    };
    let tasks = common::tasks();
    let path = root.path().join("recorded.jsonl");
    let recorder = RecordingGateway::new(llm, &path).unwrap();
    let deps = |g: &dyn LlmGateway| {
        let deps = BenchDeps {
            workspace: &ws,
            library: &library,
            embedder: &TrigramEmbedder,
            llm: g,
        };
        run_bench(&tasks, &cfg, &deps, 1).0.without_timing()
    };
    let recorded = deps(&recorder);
    let replay = ScriptedGateway::from_file(&path, true).unwrap();
    assert!(replay.records().iter().all(|r| !r.key.starts_with(llm::CONTAINS_PREFIX)));
    assert_eq!(deps(&replay), recorded);
}

struct Unavailable;

impl LlmGateway for Unavailable {
    fn complete(&self, _: &LlmRequest<'_>) -> Result<Completion, LlmError> {
        Err(LlmError::Exhausted {
            attempts: 3,
            diagnostics: "HTTP 503".into(),
        })
    }
}

#[test]
fn exhausted_gateway_fails_tasks_without_aborting() {
    let root = common::Root::new();
    let ws = Workspace::new(root.path(), None);
    let library = FewShotLibrary::default();
    let deps = BenchDeps {
        workspace: &ws,
        library: &library,
        embedder: &TrigramEmbedder,
        llm: &Unavailable,
    };
    let tasks = common::tasks();
    let (report, runs) = run_bench(&tasks[..3], &PipelineConfig::default(), &deps, 2);
    assert_eq!(report.tasks.len(), 3);
    assert!(report.tasks.iter().all(|t| !t.ex && t.predicted_sql.is_none() && t.error.is_some()));
    assert!(runs.iter().all(|r| r.final_sql.is_none()));
    assert_eq!(report.overall.ex, 0.0);
}

#[test]
fn library_build_resumes() {
    let root = common::Root::new();
    let llm = common::gateway();
    let first = common::library(root.path(), &llm);
    let again = common::library(root.path(), &llm);
    assert_eq!(first.len(), 4);
    assert_eq!(again.len(), 4);
    assert!(again.shots.iter().all(|s| s.cot.is_some()));
    let reloaded = FewShotLibrary::load(&root.path().join("fewshot.jsonl")).unwrap();
    assert_eq!(reloaded.shots, first.shots);
}

/// Distinct SQL variants scripted for one question must disagree, or the
/// vote would fall back to timing and the scripted run would not be
/// deterministic.
#[test]
fn scripted_variants_have_distinct_answers() {
    let root = common::Root::new();
    let exec = refine::Executor::open(&root.database(), ExecOptions::default().single_timing());
    let gateway = common::gateway();
    let mut by_key: std::collections::BTreeMap<&str, Vec<String>> = Default::default();
    for r in gateway.records().iter().filter(|r| r.stage == Some(Stage::Generation)) {
        let sql = parse_cot(&r.reply).unwrap().sql;
        let v = by_key.entry(r.key.as_str()).or_default();
        if !v.contains(&sql) {
            v.push(sql);
        }
    }
    assert_eq!(by_key.len(), 10);
    for (key, sqls) in by_key {
        let answers: Vec<_> = sqls.iter().map(|s| exec.run(s).answer()).collect();
        for i in 0..answers.len() {
            for j in i + 1..answers.len() {
                assert_ne!(answers[i], answers[j], "{key}: {} and {} agree", sqls[i], sqls[j]);
            }
        }
    }
}
