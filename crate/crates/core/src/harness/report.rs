use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, RvesTier};
use crate::embed::Embedder;
use crate::fewshot::FewShotLibrary;
use crate::llm::LlmGateway;

use super::dataset::{Difficulty, Task};
use super::eval::{rves_score, score_task};
use super::pipeline::{run_pipeline, PipelineDeps, PipelineRun, Workspace};

pub const REPORT_FORMAT: &str = "t2s-eval-report";
pub const REPORT_VERSION: u32 = 1;
pub const UNLABELED: &str = "unlabeled";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub question_id: String,
    pub db_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
    pub predicted_sql: Option<String>,
    pub ex: bool,
    pub rves: f64,
    pub elapsed_secs: f64,
    /// The gold SQL could not be executed; the task is left out of the aggregates.
    pub skipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    /// Fraction of tasks with matching results.
    pub ex: f64,
    /// 100 times the mean square root of the rewards.
    pub rves: f64,
}

impl Aggregate {
    fn of<'a>(tasks: impl Iterator<Item = &'a TaskReport>) -> Self {
        let scored: Vec<&TaskReport> = tasks.filter(|t| !t.skipped).collect();
        let count = scored.len();
        let ex = if count == 0 {
            0.0
        } else {
            scored.iter().filter(|t| t.ex).count() as f64 / count as f64
        };
        let rewards: Vec<f64> = scored.iter().map(|t| t.rves).collect();
        Self {
            count,
            ex,
            rves: rves_score(&rewards),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub version: u32,
    pub ablation: Vec<String>,
    pub rves_tiers: Vec<RvesTier>,
    pub overall: Aggregate,
    pub by_difficulty: BTreeMap<String, Aggregate>,
    pub skipped: usize,
    pub tasks: Vec<TaskReport>,
}

impl EvalReport {
    pub fn new(tasks: Vec<TaskReport>, cfg: &PipelineConfig) -> Self {
        let mut groups: BTreeMap<String, Vec<&TaskReport>> = BTreeMap::new();
        for t in tasks.iter().filter(|t| !t.skipped) {
            let key = t.difficulty.map_or(UNLABELED, Difficulty::as_str);
            groups.entry(key.to_string()).or_default().push(t);
        }
        let by_difficulty = groups
            .into_iter()
            .map(|(k, v)| (k, Aggregate::of(v.into_iter())))
            .collect();
        Self {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            ablation: cfg.ablation.enabled().into_iter().map(String::from).collect(),
            rves_tiers: cfg.rves_tiers.clone(),
            overall: Aggregate::of(tasks.iter()),
            by_difficulty,
            skipped: tasks.iter().filter(|t| t.skipped).count(),
            tasks,
        }
    }

    /// The report with every timing-derived field zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        for t in &mut r.tasks {
            t.elapsed_secs = 0.0;
            t.rves = 0.0;
        }
        r.overall.rves = 0.0;
        for a in r.by_difficulty.values_mut() {
            a.rves = 0.0;
        }
        r
    }
}

pub struct BenchDeps<'a> {
    pub workspace: &'a Workspace,
    pub library: &'a FewShotLibrary,
    pub embedder: &'a dyn Embedder,
    pub llm: &'a dyn LlmGateway,
}

fn evaluate(task: &Task, cfg: &PipelineConfig, deps: &BenchDeps<'_>) -> (TaskReport, Option<PipelineRun>) {
    let mut report = TaskReport {
        question_id: task.question_id.clone(),
        db_id: task.db_id.clone(),
        difficulty: task.difficulty,
        predicted_sql: None,
        ex: false,
        rves: 0.0,
        elapsed_secs: 0.0,
        skipped: false,
        error: None,
        flags: vec![],
    };
    let artifacts = match deps.workspace.get(&task.db_id, deps.embedder) {
        Ok(a) => a,
        Err(e) => {
            report.skipped = true;
            report.error = Some(format!("database {}: {e}", task.db_id));
            return (report, None);
        }
    };
    let started = Instant::now();
    let run = run_pipeline(
        task,
        cfg,
        &PipelineDeps {
            artifacts: &artifacts,
            library: deps.library,
            embedder: deps.embedder,
            llm: deps.llm,
        },
    );
    report.elapsed_secs = started.elapsed().as_secs_f64();
    report.predicted_sql = run.final_sql.clone();
    report.error = run.error.clone();
    report.flags = run.flags.clone();
    match score_task(run.final_sql.as_deref(), &task.gold_sql, &artifacts.database, cfg.rves_repeats, cfg) {
        Ok(s) => {
            report.ex = s.ex;
            report.rves = s.rves;
        }
        Err(e) => {
            report.skipped = true;
            report.error = Some(e.to_string());
        }
    }
    (report, Some(run))
}

/// Run and score every task with up to `parallelism` tasks in flight. The
/// report keeps dataset order.
pub fn run_bench(
    tasks: &[Task],
    cfg: &PipelineConfig,
    deps: &BenchDeps<'_>,
    parallelism: usize,
) -> (EvalReport, Vec<PipelineRun>) {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<(TaskReport, Option<PipelineRun>)> =
        pool.install(|| tasks.par_iter().map(|t| evaluate(t, cfg, deps)).collect());
    let (reports, runs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    (EvalReport::new(reports, cfg), runs.into_iter().flatten().collect())
}
