use serde::{Deserialize, Serialize};
use sqlparser::ast::Statement;

use crate::align::parse_sql;
use crate::config::PipelineConfig;
use crate::db::Database;
use crate::refine::{same_answer, ExecOptions, ExecResult, Executor};

/// The gold statement did not produce rows, so the task cannot be scored.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("gold SQL failed: {0}")]
pub struct GoldFailure(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub ex: bool,
    /// Reward tier for a correct prediction, 0 otherwise.
    pub rves: f64,
    /// Gold time over predicted time, when both ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

/// Whether the gold statement orders its top-level result.
pub fn gold_is_ordered(gold: &str) -> bool {
    match parse_sql(gold) {
        Ok(ast) => matches!(ast.statement(), Statement::Query(q) if q.order_by.is_some()),
        Err(_) => false,
    }
}

/// Execution accuracy: equal result multisets, or equal sequences when the
/// gold statement has a top-level ORDER BY. A failing prediction scores false.
pub fn eval_ex(pred: &str, gold: &str, db: &Database, opts: ExecOptions) -> Result<bool, GoldFailure> {
    let exec = Executor::open(db, opts.single_timing());
    let gold_rows = match exec.run(gold).result {
        ExecResult::Rows { rows } => rows,
        ExecResult::Error { message } => return Err(GoldFailure(message)),
        ExecResult::Timeout => return Err(GoldFailure("timed out".into())),
    };
    Ok(match exec.run(pred).result {
        ExecResult::Rows { rows } => same_answer(&rows, &gold_rows, gold_is_ordered(gold)),
        _ => false,
    })
}

/// Reward-based valid efficiency of one prediction: the tier of
/// gold time / predicted time (medians over `repeats` runs), 0 when wrong.
pub fn eval_rves(
    pred: &str,
    gold: &str,
    db: &Database,
    repeats: usize,
    cfg: &PipelineConfig,
) -> Result<f64, GoldFailure> {
    Ok(score_task(Some(pred), gold, db, repeats, cfg)?.rves)
}

pub fn score_task(
    pred: Option<&str>,
    gold: &str,
    db: &Database,
    repeats: usize,
    cfg: &PipelineConfig,
) -> Result<TaskScore, GoldFailure> {
    let wrong = TaskScore {
        ex: false,
        rves: 0.0,
        tau: None,
    };
    let Some(pred) = pred else {
        // Still surface a broken gold statement.
        eval_ex(gold, gold, db, cfg.exec)?;
        return Ok(wrong);
    };
    if !eval_ex(pred, gold, db, cfg.exec)? {
        return Ok(wrong);
    }
    let tau = if pred.trim() == gold.trim() {
        1.0
    } else {
        let exec = Executor::open(
            db,
            ExecOptions {
                timing_runs: repeats.max(1),
                ..cfg.exec
            },
        );
        let g = exec.run(gold).elapsed.as_secs_f64();
        let p = exec.run(pred).elapsed.as_secs_f64();
        g.max(1e-9) / p.max(1e-9)
    };
    Ok(TaskScore {
        ex: true,
        rves: cfg.rves_reward(tau),
        tau: Some(tau),
    })
}

/// BIRD's aggregate: 100 times the mean square root of the per-task rewards.
pub fn rves_score(rewards: &[f64]) -> f64 {
    if rewards.is_empty() {
        return 0.0;
    }
    100.0 * rewards.iter().map(|r| r.sqrt()).sum::<f64>() / rewards.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db() -> (tempfile::TempDir, Database) {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("e.sqlite");
        let c = rusqlite::Connection::open(&p).unwrap();
        c.execute_batch(
            "CREATE TABLE t(id INTEGER PRIMARY KEY, name TEXT, score REAL);
             WITH RECURSIVE n(i) AS (SELECT 1 UNION ALL SELECT i+1 FROM n WHERE i < 120)
             INSERT INTO t SELECT i, 'n' || i, i * 0.5 FROM n;",
        )
        .unwrap();
        drop(c);
        (d, Database::new(p))
    }

    #[test]
    fn ex_semantics() {
        let (_d, db) = db();
        let o = ExecOptions::default();
        let g = "SELECT id, name FROM t WHERE id < 4";
        assert!(eval_ex(g, g, &db, o).unwrap());
        assert!(eval_ex("SELECT t.id, t.name FROM t WHERE t.id <= 3 ORDER BY name DESC", g, &db, o).unwrap());
        assert!(!eval_ex("SELECT id, name FROM t WHERE id < 5", g, &db, o).unwrap());
        assert!(!eval_ex("SELEC 1", g, &db, o).unwrap());
        let ordered = "SELECT id FROM t WHERE id < 4 ORDER BY id";
        assert!(gold_is_ordered(ordered));
        assert!(!gold_is_ordered("SELECT id FROM (SELECT id FROM t ORDER BY id)"));
        assert!(!eval_ex("SELECT id FROM t WHERE id < 4 ORDER BY id DESC", ordered, &db, o).unwrap());
        assert!(eval_ex("SELECT id FROM t WHERE id < 4 ORDER BY -id DESC", ordered, &db, o).unwrap());
        assert!(eval_ex("SELECT 1", "SELEC 1", &db, o).is_err());
    }

    #[test]
    fn rves_tiers() {
        let (_d, db) = db();
        let cfg = PipelineConfig::default();
        let g = "SELECT COUNT(*) FROM t";
        assert_eq!(eval_rves("SELECT COUNT(*) FROM t WHERE id < 0", g, &db, 3, &cfg).unwrap(), 0.0);
        assert_eq!(eval_rves(g, g, &db, 3, &cfg).unwrap(), 1.0);
        let slow = "SELECT (SELECT COUNT(*) FROM t a, t b, t c WHERE a.id + b.id + c.id > 0) * 0 + 120";
        let fast = "SELECT 120";
        let s = score_task(Some(fast), slow, &db, 3, &cfg).unwrap();
        assert!(s.tau.unwrap() > 3.0, "{s:?}");
        assert_eq!(s.rves, 1.25);
        assert_eq!(rves_score(&[1.0, 0.0, 1.25, 0.25]), 100.0 * (1.0 + 0.0 + 1.25f64.sqrt() + 0.5) / 4.0);
    }
}
