use std::collections::HashSet;
use std::fmt;
use std::ops::ControlFlow;
use std::sync::LazyLock;

use regex::Regex;
use sqlparser::ast::{visit_expressions_mut, visit_relations_mut, Expr, ObjectNamePart, Statement};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::keywords::Keyword;
use sqlparser::parser::Parser;
use sqlparser::tokenizer::{Token, Tokenizer};

/// Parse failure with the position reported by the parser, when it gave one.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct SqlSyntaxError {
    pub message: String,
    pub line: Option<u64>,
    pub column: Option<u64>,
}

impl fmt::Display for SqlSyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

static POSITION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"Line: (\d+), Column: (\d+)").expect("valid regex"));

impl SqlSyntaxError {
    fn new(message: String) -> Self {
        let caps = POSITION.captures(&message);
        let num = |i| caps.as_ref().and_then(|c| c.get(i)).and_then(|m| m.as_str().parse().ok());
        Self {
            line: num(1),
            column: num(2),
            message,
        }
    }
}

/// A single parsed SQL statement.
#[derive(Debug, Clone, PartialEq)]
pub struct SqlAst {
    pub(crate) stmt: Statement,
}

impl SqlAst {
    pub fn statement(&self) -> &Statement {
        &self.stmt
    }

    pub fn statement_mut(&mut self) -> &mut Statement {
        &mut self.stmt
    }
}

impl fmt::Display for SqlAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.stmt.fmt(f)
    }
}

/// Parse one statement in the SQLite dialect.
///
/// Generated SQL sometimes names a table with a bare keyword (`FROM table`).
/// When plain parsing fails, such words in table positions are quoted and the
/// parse retried; the quotes are dropped again afterwards so emission keeps
/// the original spelling.
pub fn parse_sql(text: &str) -> Result<SqlAst, SqlSyntaxError> {
    match parse_one(text) {
        Ok(stmt) => Ok(SqlAst { stmt }),
        Err(first) => {
            let Some((quoted, names)) = quote_keyword_names(text) else {
                return Err(first);
            };
            let mut stmt = parse_one(&quoted).map_err(|_| first)?;
            unquote(&mut stmt, &names);
            Ok(SqlAst { stmt })
        }
    }
}

pub fn emit_sql(ast: &SqlAst) -> String {
    ast.stmt.to_string()
}

fn parse_one(text: &str) -> Result<Statement, SqlSyntaxError> {
    let mut stmts = Parser::parse_sql(&SQLiteDialect {}, text)
        .map_err(|e| SqlSyntaxError::new(e.to_string()))?;
    match stmts.len() {
        1 => Ok(stmts.remove(0)),
        0 => Err(SqlSyntaxError::new("empty statement".into())),
        n => Err(SqlSyntaxError::new(format!("expected one statement, found {n}"))),
    }
}

fn quote_keyword_names(text: &str) -> Option<(String, HashSet<String>)> {
    let tokens = Tokenizer::new(&SQLiteDialect {}, text)
        .tokenize_with_location()
        .ok()?;
    let sig: Vec<_> = tokens
        .iter()
        .filter(|t| !matches!(t.token, Token::Whitespace(_)))
        .collect();
    let line_starts: Vec<usize> = std::iter::once(0)
        .chain(text.match_indices('\n').map(|(i, _)| i + 1))
        .collect();
    let offset = |line: u64, col: u64| -> Option<usize> {
        let start = *line_starts.get(line.checked_sub(1)? as usize)?;
        let rest = &text[start..];
        let skip = col.checked_sub(1)? as usize;
        Some(start + rest.char_indices().nth(skip).map_or(rest.len(), |(i, _)| i))
    };
    let mut spans = Vec::new();
    let mut names = HashSet::new();
    for (k, tok) in sig.iter().enumerate() {
        let Token::Word(w) = &tok.token else { continue };
        if w.quote_style.is_some() || w.keyword == Keyword::NoKeyword {
            continue;
        }
        let prev = k.checked_sub(1).map(|i| &sig[i].token);
        let next = sig.get(k + 1).map(|t| &t.token);
        let after_from = matches!(prev, Some(Token::Word(p)) if matches!(p.keyword, Keyword::FROM | Keyword::JOIN));
        let dotted = matches!(next, Some(Token::Period)) || matches!(prev, Some(Token::Period));
        if after_from || dotted {
            let start = offset(tok.span.start.line, tok.span.start.column)?;
            let end = offset(tok.span.end.line, tok.span.end.column)?;
            spans.push((start, end));
            names.insert(w.value.to_ascii_lowercase());
        }
    }
    if spans.is_empty() {
        return None;
    }
    let mut out = text.to_string();
    for (start, end) in spans.into_iter().rev() {
        out.insert(end, '`');
        out.insert(start, '`');
    }
    Some((out, names))
}

fn unquote(stmt: &mut Statement, names: &HashSet<String>) {
    let fix = |id: &mut sqlparser::ast::Ident| {
        if id.quote_style == Some('`') && names.contains(&id.value.to_ascii_lowercase()) {
            id.quote_style = None;
        }
    };
    let _ = visit_relations_mut(stmt, |name| {
        for part in &mut name.0 {
            if let ObjectNamePart::Identifier(id) = part {
                fix(id);
            }
        }
        ControlFlow::<()>::Continue(())
    });
    let _ = visit_expressions_mut(stmt, |e| {
        match e {
            Expr::Identifier(id) => fix(id),
            Expr::CompoundIdentifier(ids) => ids.iter_mut().for_each(fix),
            _ => {}
        }
        ControlFlow::<()>::Continue(())
    });
}

/// Token-level whitespace normalization: tokens joined by single spaces.
/// Text the tokenizer rejects falls back to collapsing whitespace runs.
pub fn normalize_sql_whitespace(sql: &str) -> String {
    match Tokenizer::new(&SQLiteDialect {}, sql).tokenize() {
        Ok(tokens) => tokens
            .iter()
            .filter(|t| !matches!(t, Token::Whitespace(_) | Token::SemiColon))
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(" "),
        Err(_) => sql.split_whitespace().collect::<Vec<_>>().join(" "),
    }
}
