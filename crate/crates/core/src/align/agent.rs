use std::ops::ControlFlow;

use sqlparser::ast::{visit_expressions_mut, BinaryOperator, Expr, Ident, Value, ValueWithSpan};

use super::scope::{column_name, ColName, Scope};
use super::{AlignFlag, AlignmentContext, Pass, Rewrite};
use crate::embed::UnitVector;
use crate::index::EntryKind;
use crate::schema::{quote_ident, ColumnRef, ColumnType};

/// Match stored values and real column names.
///
/// String literals compared with `=`, `!=`, `LIKE` or `IN` against a text
/// column are replaced by the closest stored value when the literal itself is
/// not stored and the match clears the threshold. Column names the catalog
/// does not know are remapped to the one same-named column in scope.
pub fn agent_align(ast: &mut super::SqlAst, ctx: &AlignmentContext<'_>) -> Pass {
    let mut pass = Pass::default();
    remap_columns(ast, ctx, &mut pass);
    let scope = Scope::of(&ast.stmt, ctx.catalog);
    let _ = visit_expressions_mut(&mut ast.stmt, |e| {
        match e {
            Expr::BinaryOp {
                left,
                op: BinaryOperator::Eq | BinaryOperator::NotEq,
                right,
            } => {
                if let Some(col) = column_name(left).and_then(|c| scope.resolve(ctx.catalog, &c)) {
                    fix_literal(ctx, &col, right, false, &mut pass);
                } else if let Some(col) = column_name(right).and_then(|c| scope.resolve(ctx.catalog, &c)) {
                    fix_literal(ctx, &col, left, false, &mut pass);
                }
            }
            Expr::Like { expr, pattern, .. } | Expr::ILike { expr, pattern, .. } => {
                if let Some(col) = column_name(expr).and_then(|c| scope.resolve(ctx.catalog, &c)) {
                    fix_literal(ctx, &col, pattern, true, &mut pass);
                }
            }
            Expr::InList { expr, list, .. } => {
                if let Some(col) = column_name(expr).and_then(|c| scope.resolve(ctx.catalog, &c)) {
                    for item in list.iter_mut() {
                        fix_literal(ctx, &col, item, false, &mut pass);
                    }
                }
            }
            _ => {}
        }
        ControlFlow::<()>::Continue(())
    });
    pass
}

fn normalized(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

fn remap_columns(ast: &mut super::SqlAst, ctx: &AlignmentContext<'_>, pass: &mut Pass) {
    let scope = Scope::of(&ast.stmt, ctx.catalog);
    let catalog = ctx.catalog;
    let _ = visit_expressions_mut(&mut ast.stmt, |e| {
        if !matches!(e, Expr::Identifier(_) | Expr::CompoundIdentifier(_)) {
            return ControlFlow::<()>::Continue(());
        }
        let Some(cn) = column_name(e) else {
            return ControlFlow::Continue(());
        };
        if cn.quote == Some('"') || scope.resolve(catalog, &cn).is_some() {
            return ControlFlow::Continue(());
        }
        let tables: Vec<&str> = match &cn.qualifier {
            Some(q) => match scope.table_for(q) {
                Some(t) => vec![t],
                None => return ControlFlow::Continue(()),
            },
            None => {
                let exact = scope
                    .tables
                    .iter()
                    .any(|t| catalog.column(t, &cn.column).is_some());
                if exact
                    || scope.foreign_sources
                    || scope.select_aliases.contains(&cn.column.to_ascii_lowercase())
                {
                    return ControlFlow::Continue(());
                }
                scope.tables.iter().map(String::as_str).collect()
            }
        };
        let want = normalized(&cn.column);
        let matches: Vec<ColumnRef> = tables
            .iter()
            .filter_map(|t| catalog.table(t))
            .flat_map(|t| {
                t.columns
                    .iter()
                    .filter(|c| normalized(&c.name) == want)
                    .map(|c| ColumnRef::new(&t.name, &c.name))
            })
            .collect();
        let shown = display_name(&cn);
        let target = match e {
            Expr::Identifier(id) => Some(id),
            Expr::CompoundIdentifier(ids) => ids.last_mut(),
            _ => None,
        };
        match (matches.as_slice(), target) {
            ([only], Some(id)) => {
                *id = column_ident(&only.column);
                pass.rewrites.push(Rewrite::ColumnRemap {
                    from: shown,
                    to: only.to_string(),
                });
            }
            _ => pass.flags.push(AlignFlag::UnknownColumn { name: shown }),
        }
        ControlFlow::Continue(())
    });
}

fn display_name(cn: &ColName) -> String {
    match &cn.qualifier {
        Some(q) => format!("{q}.{}", cn.column),
        None => cn.column.clone(),
    }
}

fn column_ident(name: &str) -> Ident {
    if quote_ident(name).starts_with('`') {
        Ident::with_quote('`', name)
    } else {
        Ident::new(name)
    }
}

fn string_literal(e: &mut Expr) -> Option<&mut String> {
    match e {
        Expr::Value(ValueWithSpan {
            value: Value::SingleQuotedString(s),
            ..
        }) => Some(s),
        _ => None,
    }
}

enum Choice {
    Keep,
    Replace(String),
    Unresolved,
}

fn fix_literal(ctx: &AlignmentContext<'_>, col: &ColumnRef, e: &mut Expr, like: bool, pass: &mut Pass) {
    let Some(lit) = string_literal(e) else { return };
    let is_text = ctx
        .catalog
        .column(&col.table, &col.column)
        .is_some_and(|c| c.declared_type == ColumnType::Text);
    if !is_text {
        return;
    }
    match choose(ctx, col, lit, like) {
        Choice::Keep => {}
        Choice::Replace(to) => {
            pass.rewrites.push(Rewrite::ValueLiteral {
                column: col.to_string(),
                from: lit.clone(),
                to: to.clone(),
            });
            *lit = to;
        }
        Choice::Unresolved => pass.flags.push(AlignFlag::UnresolvedValue {
            column: col.to_string(),
            literal: lit.clone(),
        }),
    }
}

fn choose(ctx: &AlignmentContext<'_>, col: &ColumnRef, lit: &str, like: bool) -> Choice {
    let stored: Vec<(&str, Option<&UnitVector>)> = match ctx.index {
        Some(index) if index.has_values_for(&col.table, &col.column) => index
            .column_values(&col.table, &col.column)
            .map(|e| (e.text.as_str(), Some(&e.vector)))
            .collect(),
        _ => ctx
            .value_hits
            .iter()
            .filter(|h| {
                h.kind == EntryKind::CellValue
                    && h.table.eq_ignore_ascii_case(&col.table)
                    && h.column.eq_ignore_ascii_case(&col.column)
            })
            .map(|h| (h.text.as_str(), None))
            .collect(),
    };
    if stored.is_empty() {
        return Choice::Keep;
    }
    let (prefix, inner, suffix) = if like {
        if stored.iter().any(|(s, _)| sqlite_like(lit, s)) {
            return Choice::Keep;
        }
        let inner = lit.trim_matches('%');
        if inner.is_empty() || inner.contains(['%', '_']) {
            return Choice::Keep;
        }
        let start = lit.len() - lit.trim_start_matches('%').len();
        let end = lit.trim_end_matches('%').len();
        (&lit[..start], inner, &lit[end..])
    } else {
        if stored.iter().any(|(s, _)| *s == lit) {
            return Choice::Keep;
        }
        ("", lit, "")
    };
    let Some(best) = best_match(ctx, inner, &stored) else {
        return Choice::Unresolved;
    };
    Choice::Replace(format!("{prefix}{best}{suffix}"))
}

/// Highest-scoring stored value at or above the threshold; first wins ties.
fn best_match<'s>(
    ctx: &AlignmentContext<'_>,
    query: &str,
    stored: &[(&'s str, Option<&UnitVector>)],
) -> Option<&'s str> {
    let score: Box<dyn Fn(&str, Option<&UnitVector>) -> f64> = match ctx.embedder {
        Some(emb) => {
            let q = emb.embed(query).ok()?;
            Box::new(move |text, vector| match vector {
                Some(v) => q.cosine(v),
                None => emb.embed(text).map_or(f64::NEG_INFINITY, |v| q.cosine(&v)),
            })
        }
        None => Box::new(|text, _| if text.eq_ignore_ascii_case(query) { 1.0 } else { 0.0 }),
    };
    let mut best: Option<(&str, f64)> = None;
    for (text, vector) in stored {
        let s = score(text, *vector);
        if s >= ctx.threshold && best.is_none_or(|(_, b)| s > b) {
            best = Some((text, s));
        }
    }
    best.map(|(t, _)| t)
}

/// SQLite `LIKE` without an escape clause: ASCII case-insensitive, `%` for
/// any run and `_` for one character.
pub fn sqlite_like(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().map(|c| c.to_ascii_lowercase()).collect();
    let t: Vec<char> = text.chars().map(|c| c.to_ascii_lowercase()).collect();
    // reach[j]: pattern prefix consumed so far matches text prefix of length j.
    let mut reach = vec![false; t.len() + 1];
    reach[0] = true;
    for &pc in &p {
        let mut next = vec![false; t.len() + 1];
        match pc {
            '%' => {
                let mut any = false;
                for j in 0..=t.len() {
                    any |= reach[j];
                    next[j] = any;
                }
            }
            _ => {
                for j in 0..t.len() {
                    if reach[j] && (pc == '_' || pc == t[j]) {
                        next[j + 1] = true;
                    }
                }
            }
        }
        reach = next;
    }
    reach[t.len()]
}
