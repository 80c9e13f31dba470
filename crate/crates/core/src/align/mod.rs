//! Rule-based SQL alignment: stored values, aggregate usage, dataset style.

mod agent;
mod function;
mod scope;
mod sql;
mod style;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::embed::Embedder;
use crate::index::{ValueHit, ValueIndex};
use crate::llm::{LlmConfig, LlmGateway, LlmRequest, Stage};
use crate::schema::SchemaCatalog;

pub use agent::{agent_align, sqlite_like};
pub use function::function_align;
pub use sql::{emit_sql, normalize_sql_whitespace, parse_sql, SqlAst, SqlSyntaxError};
pub use style::{style_align, StyleProfile};

/// Rounds of the full rule set before giving up on reaching a fixed point.
const MAX_ROUNDS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rewrite {
    ValueLiteral { column: String, from: String, to: String },
    ColumnRemap { from: String, to: String },
    AggregateOrderBy,
    NestedAggregate { function: String },
    RedundantJoin { table: String },
    LimitOverExtremum { column: String },
    NullGuard { column: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "flag", rename_all = "snake_case")]
pub enum AlignFlag {
    Unparseable { message: String },
    UnresolvedValue { column: String, literal: String },
    UnknownColumn { name: String },
}

impl fmt::Display for AlignFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlignFlag::Unparseable { message } => write!(f, "unparseable: {message}"),
            AlignFlag::UnresolvedValue { column, literal } => {
                write!(f, "no stored value of {column} matches '{literal}'")
            }
            AlignFlag::UnknownColumn { name } => write!(f, "unknown column {name}"),
        }
    }
}

/// What one rule pass changed or could not fix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Pass {
    pub rewrites: Vec<Rewrite>,
    pub flags: Vec<AlignFlag>,
}

impl Pass {
    fn absorb(&mut self, other: Pass) {
        self.rewrites.extend(other.rewrites);
        self.flags.extend(other.flags);
    }
}

/// Everything the rules may consult about the question's database.
#[derive(Clone, Copy)]
pub struct AlignmentContext<'a> {
    pub catalog: &'a SchemaCatalog,
    pub value_hits: &'a [ValueHit],
    pub index: Option<&'a ValueIndex>,
    pub embedder: Option<&'a dyn Embedder>,
    pub threshold: f64,
    pub style: StyleProfile,
}

impl<'a> AlignmentContext<'a> {
    pub fn new(catalog: &'a SchemaCatalog) -> Self {
        Self {
            catalog,
            value_hits: &[],
            index: None,
            embedder: None,
            threshold: 0.65,
            style: StyleProfile::default(),
        }
    }

    pub fn with_hits(self, value_hits: &'a [ValueHit]) -> Self {
        Self { value_hits, ..self }
    }

    pub fn with_index(self, index: &'a ValueIndex, embedder: &'a dyn Embedder) -> Self {
        Self {
            index: Some(index),
            embedder: Some(embedder),
            ..self
        }
    }

    pub fn with_style(self, style: StyleProfile) -> Self {
        Self { style, ..self }
    }

    pub fn with_threshold(self, threshold: f64) -> Self {
        Self { threshold, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aligned {
    pub sql: String,
    pub applied: Vec<Rewrite>,
    pub flags: Vec<AlignFlag>,
}

fn run_rules(ast: &mut SqlAst, ctx: &AlignmentContext<'_>) -> Pass {
    let mut pass = agent_align(ast, ctx);
    pass.absorb(function_align(ast, ctx.catalog));
    pass.absorb(style_align(ast, ctx.catalog, &ctx.style));
    pass
}

/// Parse, apply agent, function and style alignment until nothing changes,
/// and emit. Input that no rule touches comes back byte-identical, and
/// unparseable input is returned unchanged with a flag.
pub fn align_all(sql: &str, ctx: &AlignmentContext<'_>) -> Aligned {
    let mut ast = match parse_sql(sql) {
        Ok(a) => a,
        Err(e) => {
            return Aligned {
                sql: sql.to_string(),
                applied: vec![],
                flags: vec![AlignFlag::Unparseable { message: e.message }],
            }
        }
    };
    let mut applied = Vec::new();
    let mut flags = Vec::new();
    for _ in 0..MAX_ROUNDS {
        let pass = run_rules(&mut ast, ctx);
        flags = pass.flags;
        if pass.rewrites.is_empty() {
            break;
        }
        applied.extend(pass.rewrites);
        // Continue from the emitted text so the result is a fixed point of
        // parse and emit as well as of the rules.
        if let Ok(reparsed) = parse_sql(&emit_sql(&ast)) {
            ast = reparsed;
        }
    }
    flags.dedup();
    let sql = if applied.is_empty() {
        sql.to_string()
    } else {
        emit_sql(&ast)
    };
    Aligned { sql, applied, flags }
}

/// Ask the model to repair SQL the rules flagged but could not fix. The
/// reply must carry a `#SQL:` line that parses; anything else is ignored.
pub fn assist_flagged(
    sql: &str,
    flags: &[AlignFlag],
    schema_text: &str,
    llm: &dyn LlmGateway,
    cfg: &LlmConfig,
) -> Option<String> {
    if flags.is_empty() {
        return None;
    }
    let issues: Vec<String> = flags.iter().map(|f| format!("- {f}")).collect();
    let prompt = format!(
        "{schema_text}\n/* The SQL below does not match the database. Fix only these issues and keep everything else. */\n{}\n#Error SQL: {sql}\n#SQL:",
        issues.join("\n")
    );
    let reply = llm
        .complete(&LlmRequest::new(Stage::AlignAssist, &prompt, &cfg.with_samples(1)))
        .ok()?;
    let cot = crate::cot::parse_cot(reply.texts.first()?).ok()?;
    parse_sql(&cot.sql).ok().map(|_| cot.sql)
}

#[cfg(test)]
mod tests;
