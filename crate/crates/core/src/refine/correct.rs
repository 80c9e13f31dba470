use crate::align::{align_all, AlignmentContext};
use crate::cot::strip_fences;
use crate::fewshot::FewShotLibrary;
use crate::index::{EntryKind, ValueHit};
use crate::llm::{LlmConfig, LlmGateway, LlmRequest, Stage};
use crate::schema::ColumnRef;

use super::{Candidate, ErrorType, ExecResult, ExecutionOutcome, Executor};

pub const FLAG_UNFIXABLE: &str = "unfixable";
pub const FLAG_CORRECTION_UNAVAILABLE: &str = "correction_unavailable";

/// What the correction agent may consult for one question.
pub struct CorrectionContext<'a> {
    /// Question with evidence appended.
    pub question: &'a str,
    pub schema_text: &'a str,
    pub value_hits: &'a [ValueHit],
    pub library: &'a FewShotLibrary,
    pub llm: &'a dyn LlmGateway,
    pub llm_config: LlmConfig,
    /// Re-align corrected SQL; `None` when alignment is switched off.
    pub align: Option<AlignmentContext<'a>>,
    pub max_rounds: u32,
}

fn error_line(outcome: &ExecutionOutcome) -> String {
    match &outcome.result {
        ExecResult::Rows { .. } => "Result: None".into(),
        ExecResult::Error { message } => message.clone(),
        ExecResult::Timeout => "execution timed out".into(),
    }
}

/// Stored values relevant to the question, one `table.column = 'text'` per hit.
pub fn render_values(hits: &[ValueHit]) -> String {
    hits.iter()
        .filter(|h| h.kind == EntryKind::CellValue)
        .map(|h| format!("{} = '{}'", ColumnRef::new(&h.table, &h.column), h.text.replace('\'', "''")))
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn correction_prompt(ctx: &CorrectionContext<'_>, sql: &str, outcome: &ExecutionOutcome, error: ErrorType) -> String {
    let mut p = ctx.library.correction_fewshot(error);
    p.push_str("\n\n");
    if !ctx.schema_text.is_empty() {
        p.push_str(ctx.schema_text.trim_end());
        p.push('\n');
    }
    p.push_str(&format!(
        "/* Fix the SQL and answer the question */\n#question: {}\n#Error SQL: {}\nError: {}\n#values: {}\n#Change Ambiguity:",
        ctx.question,
        sql,
        error_line(outcome),
        render_values(ctx.value_hits)
    ));
    p
}

/// SQL after the last `#SQL:` marker of a correction reply.
pub fn corrected_sql(reply: &str) -> Option<String> {
    let at = reply.rfind("#SQL:")?;
    let sql = strip_fences(&reply[at + "#SQL:".len()..]);
    (!sql.is_empty()).then_some(sql)
}

/// Repair a failed or empty candidate through the correction agent.
///
/// Each round prompts with the error-typed examples, re-aligns the reply and
/// executes it. A round that makes the outcome worse is discarded, so the
/// result is never more severe than the input. Healthy candidates pass
/// through untouched.
pub fn correct(candidate: Candidate, exec: &Executor, ctx: &CorrectionContext<'_>) -> Candidate {
    let mut best = candidate;
    if best.outcome.is_none() {
        best.outcome = Some(exec.run(&best.sql));
    }
    if best.error_type().is_none() {
        return best;
    }
    let mut attempts = best.correction_attempts;
    let mut flags = best.flags.clone();
    let cfg = ctx.llm_config.with_samples(1);
    for _ in 0..ctx.max_rounds {
        let (Some(error), Some(outcome)) = (best.error_type(), best.outcome.as_ref()) else {
            break;
        };
        let prompt = correction_prompt(ctx, &best.sql, outcome, error);
        let reply = match ctx.llm.complete(&LlmRequest::new(Stage::Correction, &prompt, &cfg)) {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(error = %e, "correction call failed; keeping candidate");
                flags.push(format!("{FLAG_CORRECTION_UNAVAILABLE}: {e}"));
                break;
            }
        };
        attempts += 1;
        let Some(sql) = reply.texts.first().and_then(|t| corrected_sql(t)) else {
            continue;
        };
        let sql = match &ctx.align {
            Some(a) => align_all(&sql, a).sql,
            None => sql,
        };
        let outcome = exec.run(&sql);
        let mut cot = best.cot.clone();
        cot.sql = sql.clone();
        let next = Candidate {
            sql,
            cot,
            outcome: Some(outcome),
            correction_attempts: attempts,
            flags: Vec::new(),
        };
        if next.severity() <= best.severity() {
            best = next;
        }
    }
    if best.error_type().is_some() {
        flags.push(FLAG_UNFIXABLE.into());
    }
    best.correction_attempts = attempts;
    best.flags = flags;
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::db::Database;
    use crate::llm::{LlmError, ScriptedGateway, TranscriptRecord};
    use crate::refine::ExecOptions;
    use crate::CoTOutput;

    fn db() -> (tempfile::TempDir, Database) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.sqlite");
        let c = rusqlite::Connection::open(&path).unwrap();
        c.execute_batch(
            "CREATE TABLE Patient(ID INTEGER PRIMARY KEY, City TEXT);
             INSERT INTO Patient VALUES (1,'Tokyo'),(2,'Osaka');",
        )
        .unwrap();
        drop(c);
        (dir, Database::new(path))
    }

    fn ctx<'a>(llm: &'a dyn LlmGateway, lib: &'a FewShotLibrary, rounds: u32) -> CorrectionContext<'a> {
        CorrectionContext {
            question: "Which patients live in tokyo?",
            schema_text: "",
            value_hits: &[],
            library: lib,
            llm,
            llm_config: LlmConfig::default(),
            align: None,
            max_rounds: rounds,
        }
    }

    fn executed(exec: &Executor, sql: &str) -> Candidate {
        let mut c = Candidate::new(CoTOutput::sql_only(sql));
        c.outcome = Some(exec.run(sql));
        c
    }

    #[test]
    fn empty_result_fixed_in_one_round() {
        let (_d, db) = db();
        let exec = Executor::open(&db, ExecOptions::default().single_timing());
        let g = ScriptedGateway::new(
            vec![TranscriptRecord::contains(
                Stage::Correction,
                "#Error SQL: SELECT ID FROM Patient WHERE City = 'tokyo'",
                "#Change Ambiguity: stored as 'Tokyo'\n#SQL: SELECT ID FROM Patient WHERE City = 'Tokyo'",
            )],
            true,
        );
        let lib = FewShotLibrary::default();
        let c = ctx(&g, &lib, 2);
        let before = executed(&exec, "SELECT ID FROM Patient WHERE City = 'tokyo'");
        let prompt = correction_prompt(&c, &before.sql, before.outcome.as_ref().unwrap(), ErrorType::EmptyResult);
        assert!(prompt.contains("Error: Result: None\n#values: \n#Change Ambiguity:"));
        let fixed = correct(before, &exec, &c);
        assert_eq!(fixed.sql, "SELECT ID FROM Patient WHERE City = 'Tokyo'");
        assert_eq!(fixed.cot.sql, fixed.sql);
        assert_eq!(fixed.correction_attempts, 1);
        assert!(fixed.outcome.unwrap().is_healthy());
        assert!(fixed.flags.is_empty());
    }

    #[test]
    fn healthy_candidate_untouched() {
        let (_d, db) = db();
        let exec = Executor::open(&db, ExecOptions::default().single_timing());
        let g = ScriptedGateway::new(vec![], true);
        let lib = FewShotLibrary::default();
        let c = executed(&exec, "SELECT ID FROM Patient");
        let out = correct(c.clone(), &exec, &ctx(&g, &lib, 2));
        assert_eq!(out, c);
    }

    #[test]
    fn persistent_syntax_error_is_bounded_and_flagged() {
        let (_d, db) = db();
        let exec = Executor::open(&db, ExecOptions::default().single_timing());
        let g = ScriptedGateway::new(
            vec![TranscriptRecord::contains(Stage::Correction, "#Error SQL:", "#SQL: SELEC ID FROM Patient")],
            true,
        );
        let lib = FewShotLibrary::default();
        let out = correct(executed(&exec, "SELEC ID FROM Patient"), &exec, &ctx(&g, &lib, 2));
        assert_eq!(out.correction_attempts, 2);
        assert_eq!(out.error_type(), Some(ErrorType::Syntax));
        assert_eq!(out.flags, vec![FLAG_UNFIXABLE.to_string()]);
    }

    #[test]
    fn regression_keeps_previous_candidate() {
        let (_d, db) = db();
        let exec = Executor::open(&db, ExecOptions::default().single_timing());
        let g = ScriptedGateway::new(
            vec![TranscriptRecord::contains(Stage::Correction, "#Error SQL:", "#SQL: SELECT nope FROM Patient")],
            true,
        );
        let lib = FewShotLibrary::default();
        let before = executed(&exec, "SELECT ID FROM Patient WHERE City = 'x'");
        let out = correct(before.clone(), &exec, &ctx(&g, &lib, 1));
        assert_eq!(out.sql, before.sql);
        assert_eq!(out.error_type(), Some(ErrorType::EmptyResult));
        assert_eq!(out.correction_attempts, 1);
    }

    struct Down;
    impl LlmGateway for Down {
        fn complete(&self, _: &LlmRequest<'_>) -> Result<crate::llm::Completion, LlmError> {
            Err(LlmError::Exhausted {
                attempts: 3,
                diagnostics: "503".into(),
            })
        }
    }

    #[test]
    fn gateway_failure_keeps_candidate() {
        let (_d, db) = db();
        let exec = Executor::open(&db, ExecOptions::default().single_timing());
        let lib = FewShotLibrary::default();
        let before = executed(&exec, "SELEC 1");
        let out = correct(before.clone(), &exec, &ctx(&Down, &lib, 2));
        assert_eq!(out.sql, before.sql);
        assert_eq!(out.outcome, before.outcome);
        assert_eq!(out.correction_attempts, 0);
        assert!(out.flags[0].starts_with(FLAG_CORRECTION_UNAVAILABLE));
    }

    #[test]
    fn last_sql_marker_wins() {
        assert_eq!(
            corrected_sql("#SQL: SELECT 1\n#Change Ambiguity: no\n#SQL: ```sql\nSELECT 2\n```").as_deref(),
            Some("SELECT 2")
        );
        assert_eq!(corrected_sql("nothing"), None);
    }
}
