//! Execution, error-typed correction and self-consistency voting.

mod correct;
mod exec;
mod vote;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cot::CoTOutput;

pub use exec::{
    execute_sql, median, same_answer, AnswerKey, Cell, CellKey, ExecOptions, ExecResult,
    ExecutionOutcome, Executor, Row,
};
pub use correct::{
    correct, correction_prompt, corrected_sql, render_values, CorrectionContext, FLAG_CORRECTION_UNAVAILABLE,
    FLAG_UNFIXABLE,
};
pub use vote::{vote, EmptyPool, VoteResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    Syntax,
    EmptyResult,
    Timeout,
    SchemaMismatch,
    Other,
}

impl ErrorType {
    pub const ALL: [ErrorType; 5] = [
        ErrorType::Syntax,
        ErrorType::EmptyResult,
        ErrorType::Timeout,
        ErrorType::SchemaMismatch,
        ErrorType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorType::Syntax => "syntax",
            ErrorType::EmptyResult => "empty_result",
            ErrorType::Timeout => "timeout",
            ErrorType::SchemaMismatch => "schema_mismatch",
            ErrorType::Other => "other",
        }
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

const SYNTAX_MARKERS: [&str; 4] = [
    "syntax error",
    "incomplete input",
    "unrecognized token",
    "multiple statements",
];
const SCHEMA_MARKERS: [&str; 3] = ["no such table", "no such column", "ambiguous column name"];

/// Error class of an outcome, `None` when it returned rows.
pub fn classify_error(outcome: &ExecutionOutcome) -> Option<ErrorType> {
    match &outcome.result {
        ExecResult::Rows { rows } if rows.is_empty() => Some(ErrorType::EmptyResult),
        ExecResult::Rows { .. } => None,
        ExecResult::Timeout => Some(ErrorType::Timeout),
        ExecResult::Error { message } => {
            let m = message.to_ascii_lowercase();
            if SYNTAX_MARKERS.iter().any(|k| m.contains(k)) {
                Some(ErrorType::Syntax)
            } else if SCHEMA_MARKERS.iter().any(|k| m.contains(k)) {
                Some(ErrorType::SchemaMismatch)
            } else {
                Some(ErrorType::Other)
            }
        }
    }
}

/// One generated SQL with its reasoning and latest execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub sql: String,
    pub cot: CoTOutput,
    pub outcome: Option<ExecutionOutcome>,
    pub correction_attempts: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl Candidate {
    pub fn new(cot: CoTOutput) -> Self {
        Self {
            sql: cot.sql.clone(),
            cot,
            outcome: None,
            correction_attempts: 0,
            flags: Vec::new(),
        }
    }

    pub fn executed(sql: impl Into<String>, outcome: ExecutionOutcome) -> Self {
        let sql = sql.into();
        Self {
            cot: CoTOutput::sql_only(sql.clone()),
            sql,
            outcome: Some(outcome),
            correction_attempts: 0,
            flags: Vec::new(),
        }
    }

    pub fn error_type(&self) -> Option<ErrorType> {
        self.outcome.as_ref().and_then(classify_error)
    }

    pub fn severity(&self) -> u8 {
        self.outcome.as_ref().map_or(2, ExecutionOutcome::severity)
    }
}
