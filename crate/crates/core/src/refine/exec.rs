use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, ErrorCode};
use serde::{Deserialize, Serialize};

use crate::db::Database;
use crate::llm::duration_secs;

/// One result cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

/// Comparison form of a cell. Numbers of either storage class are snapped to
/// a 1e-6 grid so `1` and `1.0000000001` compare equal; text is exact and
/// NULL is distinct from the empty string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CellKey {
    Null,
    Num(i128),
    Text(String),
    Blob(Vec<u8>),
}

impl Cell {
    pub fn key(&self) -> CellKey {
        match self {
            Cell::Null => CellKey::Null,
            Cell::Int(i) => CellKey::Num(*i as i128 * 1_000_000),
            Cell::Real(f) if f.is_nan() => CellKey::Null,
            Cell::Real(f) => CellKey::Num((f * 1e6).round() as i128),
            Cell::Text(s) => CellKey::Text(s.clone()),
            Cell::Blob(b) => CellKey::Blob(b.clone()),
        }
    }
}

pub type Row = Vec<Cell>;

/// Order-insensitive answer: the sorted multiset of row keys.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AnswerKey(Vec<Vec<CellKey>>);

impl AnswerKey {
    pub fn of(rows: &[Row]) -> Self {
        let mut keys: Vec<Vec<CellKey>> = rows
            .iter()
            .map(|r| r.iter().map(Cell::key).collect())
            .collect();
        keys.sort();
        AnswerKey(keys)
    }

    /// Row keys in their original order, for order-sensitive comparison.
    pub fn ordered(rows: &[Row]) -> Vec<Vec<CellKey>> {
        rows.iter()
            .map(|r| r.iter().map(Cell::key).collect())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ExecResult {
    Rows { rows: Vec<Row> },
    Error { message: String },
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    #[serde(flatten)]
    pub result: ExecResult,
    #[serde(with = "duration_secs")]
    pub elapsed: Duration,
}

impl ExecutionOutcome {
    pub fn rows(&self) -> Option<&[Row]> {
        match &self.result {
            ExecResult::Rows { rows } => Some(rows),
            _ => None,
        }
    }

    /// Executed and returned at least one row.
    pub fn is_healthy(&self) -> bool {
        self.rows().is_some_and(|r| !r.is_empty())
    }

    pub fn answer(&self) -> Option<AnswerKey> {
        self.rows().map(AnswerKey::of)
    }

    /// 0 for non-empty rows, 1 for an empty result, 2 for any failure.
    pub fn severity(&self) -> u8 {
        match &self.result {
            ExecResult::Rows { rows } if !rows.is_empty() => 0,
            ExecResult::Rows { .. } => 1,
            _ => 2,
        }
    }

    pub fn error_text(&self) -> Option<&str> {
        match &self.result {
            ExecResult::Error { message } => Some(message),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecOptions {
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    /// Executions timed per statement; the median is reported.
    pub timing_runs: usize,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
            timing_runs: 3,
        }
    }
}

impl ExecOptions {
    pub fn single_timing(self) -> Self {
        Self {
            timing_runs: 1,
            ..self
        }
    }
}

/// A read-only connection that runs candidate statements one at a time.
pub struct Executor {
    conn: Option<Connection>,
    open_error: Option<String>,
    opts: ExecOptions,
}

enum RunError {
    Timeout,
    Failed(String),
}

impl Executor {
    pub fn open(db: &Database, opts: ExecOptions) -> Self {
        match db.connect() {
            Ok(conn) => Self {
                conn: Some(conn),
                open_error: None,
                opts,
            },
            Err(e) => Self {
                conn: None,
                open_error: Some(e.to_string()),
                opts,
            },
        }
    }

    pub fn options(&self) -> ExecOptions {
        self.opts
    }

    pub fn run(&self, sql: &str) -> ExecutionOutcome {
        let Some(conn) = &self.conn else {
            return ExecutionOutcome {
                result: ExecResult::Error {
                    message: self.open_error.clone().unwrap_or_default(),
                },
                elapsed: Duration::ZERO,
            };
        };
        let sql = strip_terminator(sql);
        let first = run_once(conn, sql, self.opts.timeout, true);
        let (rows, first_time) = match first {
            Ok(v) => v,
            Err((RunError::Timeout, _)) => {
                return ExecutionOutcome {
                    result: ExecResult::Timeout,
                    elapsed: self.opts.timeout,
                }
            }
            Err((RunError::Failed(message), t)) => {
                return ExecutionOutcome {
                    result: ExecResult::Error { message },
                    elapsed: t,
                }
            }
        };
        let mut times = vec![first_time];
        for _ in 1..self.opts.timing_runs.max(1) {
            match run_once(conn, sql, self.opts.timeout, false) {
                Ok((_, t)) => times.push(t),
                Err(_) => break,
            }
        }
        ExecutionOutcome {
            result: ExecResult::Rows { rows },
            elapsed: median(&mut times).min(self.opts.timeout),
        }
    }
}

/// Open `db` read-only and run `sql` once under `opts`.
pub fn execute_sql(db: &Database, sql: &str, opts: ExecOptions) -> ExecutionOutcome {
    Executor::open(db, opts).run(sql)
}

pub fn median(times: &mut [Duration]) -> Duration {
    if times.is_empty() {
        return Duration::ZERO;
    }
    times.sort();
    let n = times.len();
    if n % 2 == 1 {
        times[n / 2]
    } else {
        (times[n / 2 - 1] + times[n / 2]) / 2
    }
}

fn strip_terminator(sql: &str) -> &str {
    sql.trim().trim_end_matches(|c: char| c == ';' || c.is_whitespace())
}

fn run_once(
    conn: &Connection,
    sql: &str,
    timeout: Duration,
    collect: bool,
) -> Result<(Vec<Row>, Duration), (RunError, Duration)> {
    let start = Instant::now();
    let deadline = start + timeout;
    conn.progress_handler(1000, Some(move || Instant::now() >= deadline));
    let out = collect_rows(conn, sql, collect);
    conn.progress_handler(0, None::<fn() -> bool>);
    let elapsed = start.elapsed();
    match out {
        Ok(rows) => Ok((rows, elapsed)),
        Err(e) if is_interrupt(&e) => Err((RunError::Timeout, elapsed)),
        Err(e) => Err((RunError::Failed(describe(&e)), elapsed)),
    }
}

fn collect_rows(conn: &Connection, sql: &str, collect: bool) -> rusqlite::Result<Vec<Row>> {
    let mut stmt = conn.prepare(sql)?;
    if !stmt.readonly() {
        return Err(rusqlite::Error::SqliteFailure(
            rusqlite::ffi::Error::new(rusqlite::ffi::SQLITE_READONLY),
            Some("only read-only statements may be executed".into()),
        ));
    }
    let width = stmt.column_count();
    let mut rows = stmt.query([])?;
    let mut out = Vec::new();
    while let Some(row) = rows.next()? {
        if !collect {
            continue;
        }
        let mut cells = Vec::with_capacity(width);
        for i in 0..width {
            cells.push(match row.get_ref(i)? {
                ValueRef::Null => Cell::Null,
                ValueRef::Integer(v) => Cell::Int(v),
                ValueRef::Real(v) => Cell::Real(v),
                ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
                ValueRef::Blob(b) => Cell::Blob(b.to_vec()),
            });
        }
        out.push(cells);
    }
    Ok(out)
}

fn is_interrupt(e: &rusqlite::Error) -> bool {
    matches!(e, rusqlite::Error::SqliteFailure(f, _) if f.code == ErrorCode::OperationInterrupted)
}

fn describe(e: &rusqlite::Error) -> String {
    match e {
        rusqlite::Error::SqliteFailure(_, Some(msg)) => msg.clone(),
        rusqlite::Error::SqlInputError { msg, offset, .. } => format!("{msg} (at offset {offset})"),
        other => other.to_string(),
    }
}

/// Compare two result lists. When `ordered` is set rows must also appear in
/// the same sequence.
pub fn same_answer(a: &[Row], b: &[Row], ordered: bool) -> bool {
    if ordered {
        AnswerKey::ordered(a) == AnswerKey::ordered(b)
    } else {
        AnswerKey::of(a) == AnswerKey::of(b)
    }
}
