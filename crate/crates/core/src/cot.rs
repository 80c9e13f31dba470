//! Structured chain-of-thought replies: `#reason:` through `#SQL:`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Marker {
    Reason,
    Columns,
    Values,
    Select,
    SqlLike,
    Sql,
}

impl Marker {
    pub const ALL: [Marker; 6] = [
        Marker::Reason,
        Marker::Columns,
        Marker::Values,
        Marker::Select,
        Marker::SqlLike,
        Marker::Sql,
    ];

    pub fn literal(self) -> &'static str {
        match self {
            Marker::Reason => "#reason:",
            Marker::Columns => "#columns:",
            Marker::Values => "#values:",
            Marker::Select => "#SELECT:",
            Marker::SqlLike => "#SQL-like:",
            Marker::Sql => "#SQL:",
        }
    }

    /// Marker opening this line, and the rest of the line after it.
    fn strip(line: &str) -> Option<(Marker, &str)> {
        let t = line.trim_start();
        Marker::ALL.into_iter().find_map(|m| {
            let lit = m.literal();
            t.get(..lit.len())
                .filter(|head| head.eq_ignore_ascii_case(lit))
                .map(|_| (m, &t[lit.len()..]))
        })
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("reply has no `#SQL:` section")]
pub struct CotParseError {
    pub raw: String,
}

/// Parsed structured generation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoTOutput {
    pub reason: String,
    pub columns: Vec<String>,
    pub values: String,
    pub select_clause: String,
    pub sql_like: String,
    pub sql: String,
}

impl CoTOutput {
    /// Bare SQL with every reasoning field empty.
    pub fn sql_only(sql: impl Into<String>) -> Self {
        Self {
            sql: sql.into(),
            ..Self::default()
        }
    }

    /// SQL-Like is meant to leave join conditions out.
    pub fn sql_like_has_join(&self) -> bool {
        self.sql_like
            .split(|c: char| !c.is_ascii_alphanumeric() && c != '_')
            .any(|w| w.eq_ignore_ascii_case("join"))
    }

    pub fn render(&self) -> String {
        format!(
            "{} {}\n{} {}\n{} {}\n{} {}\n{} {}\n{} {}",
            Marker::Reason.literal(),
            self.reason,
            Marker::Columns.literal(),
            self.columns.join(", "),
            Marker::Values.literal(),
            self.values,
            Marker::Select.literal(),
            self.select_clause,
            Marker::SqlLike.literal(),
            self.sql_like,
            Marker::Sql.literal(),
            self.sql
        )
    }
}

/// Marker-delimited sections of a reply, first occurrence of each marker.
/// Text before the first marker is dropped.
pub fn split_sections(reply: &str) -> Vec<(Marker, String)> {
    let mut out: Vec<(Marker, String)> = Vec::new();
    let mut current: Option<(Marker, Vec<&str>)> = None;
    let flush = |cur: Option<(Marker, Vec<&str>)>, out: &mut Vec<(Marker, String)>| {
        if let Some((m, lines)) = cur {
            if !out.iter().any(|(seen, _)| *seen == m) {
                out.push((m, lines.join("\n").trim().to_string()));
            }
        }
    };
    for line in reply.lines() {
        if let Some((m, rest)) = Marker::strip(line) {
            flush(current.take(), &mut out);
            current = Some((m, vec![rest]));
        } else if let Some((_, lines)) = current.as_mut() {
            lines.push(line);
        }
    }
    flush(current, &mut out);
    out
}

/// Remove markdown code fences around (or trailing) a SQL body.
pub fn strip_fences(sql: &str) -> String {
    let mut lines: Vec<&str> = Vec::new();
    let mut in_fence = false;
    for line in sql.lines() {
        let t = line.trim();
        if t.starts_with("```") {
            if in_fence {
                break;
            }
            in_fence = true;
            let rest = t.trim_start_matches('`');
            let rest = rest.strip_prefix("sql").or(rest.strip_prefix("SQL")).unwrap_or(rest);
            if !rest.trim().is_empty() {
                lines.push(rest.trim());
            }
            continue;
        }
        lines.push(line);
    }
    lines.join("\n").trim().to_string()
}

/// Split a `#columns:` body on top-level commas.
pub fn split_column_list(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    let mut depth = 0i32;
    for c in text.chars() {
        match (quote, c) {
            (Some(q), c) if c == q => {
                quote = None;
                cur.push(c);
            }
            (Some(_), c) => cur.push(c),
            (None, '`' | '"' | '\'') => {
                quote = Some(c);
                cur.push(c);
            }
            (None, '[') => {
                quote = Some(']');
                cur.push(c);
            }
            (None, '(') => {
                depth += 1;
                cur.push(c);
            }
            (None, ')') => {
                depth -= 1;
                cur.push(c);
            }
            (None, ',' | '\n') if depth <= 0 => {
                out.push(std::mem::take(&mut cur));
            }
            (None, c) => cur.push(c),
        }
    }
    out.push(cur);
    out.into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Parse a structured reply. Only `#SQL:` is mandatory.
pub fn parse_cot(reply: &str) -> Result<CoTOutput, CotParseError> {
    let sections = split_sections(reply);
    let get = |m: Marker| {
        sections
            .iter()
            .find(|(k, _)| *k == m)
            .map(|(_, v)| v.clone())
    };
    let sql = get(Marker::Sql)
        .map(|s| strip_fences(&s))
        .filter(|s| !s.is_empty())
        .ok_or_else(|| CotParseError {
            raw: reply.to_string(),
        })?;
    Ok(CoTOutput {
        reason: get(Marker::Reason).unwrap_or_default(),
        columns: get(Marker::Columns)
            .map(|c| split_column_list(&c))
            .unwrap_or_default(),
        values: get(Marker::Values).unwrap_or_default(),
        select_clause: get(Marker::Select).unwrap_or_default(),
        sql_like: get(Marker::SqlLike).unwrap_or_default(),
        sql,
    })
}

/// Markers present in a reply, in encounter order.
pub fn present_markers(reply: &str) -> Vec<Marker> {
    split_sections(reply).into_iter().map(|(m, _)| m).collect()
}
