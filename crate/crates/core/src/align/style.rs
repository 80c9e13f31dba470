use serde::{Deserialize, Serialize};
use sqlparser::ast::{
    BinaryOperator, Expr, GroupByExpr, LimitClause, OrderBy, OrderByExpr, OrderByKind,
    OrderByOptions, Query, SelectItem, SetExpr, Statement, Value,
};

use super::scope::{column_name, function_name, is_aggregate, single_arg, Scope};
use super::{Pass, Rewrite, SqlAst};
use crate::schema::{ColumnRef, ColumnType, SchemaCatalog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StyleProfile {
    pub null_guard_on_order_limit: bool,
    pub prefer_limit_over_max: bool,
}

impl Default for StyleProfile {
    fn default() -> Self {
        Self {
            null_guard_on_order_limit: true,
            prefer_limit_over_max: true,
        }
    }
}

impl StyleProfile {
    pub fn off() -> Self {
        Self {
            null_guard_on_order_limit: false,
            prefer_limit_over_max: false,
        }
    }
}

/// Dataset conventions: single extremum selects use `ORDER BY ... LIMIT 1`,
/// and the leading sort column of a limited ordering is guarded with
/// `IS NOT NULL`.
pub fn style_align(ast: &mut SqlAst, catalog: &SchemaCatalog, profile: &StyleProfile) -> Pass {
    let mut pass = Pass::default();
    let scope = Scope::of(&ast.stmt, catalog);
    let Statement::Query(q) = &mut ast.stmt else {
        return pass;
    };
    if profile.prefer_limit_over_max {
        if let Some(column) = limit_over_extremum(q) {
            pass.rewrites.push(Rewrite::LimitOverExtremum { column });
        }
    }
    if profile.null_guard_on_order_limit {
        if let Some(column) = null_guard(q, &scope, catalog) {
            pass.rewrites.push(Rewrite::NullGuard { column });
        }
    }
    pass
}

fn limit_over_extremum(q: &mut Query) -> Option<String> {
    if q.order_by.is_some() || q.limit_clause.is_some() || q.with.is_some() {
        return None;
    }
    let SetExpr::Select(s) = q.body.as_mut() else {
        return None;
    };
    let bare_group = matches!(&s.group_by, GroupByExpr::Expressions(e, m) if e.is_empty() && m.is_empty());
    if s.distinct.is_some() || s.having.is_some() || !bare_group || s.from.is_empty() || s.projection.len() != 1 {
        return None;
    }
    let (SelectItem::UnnamedExpr(item) | SelectItem::ExprWithAlias { expr: item, .. }) = &mut s.projection[0] else {
        return None;
    };
    let Expr::Function(f) = item else { return None };
    let asc = match function_name(f).as_str() {
        "MAX" => false,
        "MIN" => true,
        _ => return None,
    };
    if !is_aggregate(f) {
        return None;
    }
    if let sqlparser::ast::FunctionArguments::List(l) = &f.args {
        if l.duplicate_treatment.is_some() {
            return None;
        }
    }
    let arg = single_arg(f)?.clone();
    column_name(&arg)?;
    *item = arg.clone();
    let shown = arg.to_string();
    q.order_by = Some(OrderBy {
        kind: OrderByKind::Expressions(vec![OrderByExpr {
            expr: arg,
            options: OrderByOptions {
                asc: Some(asc),
                nulls_first: None,
            },
            with_fill: None,
        }]),
        interpolate: None,
    });
    q.limit_clause = Some(LimitClause::LimitOffset {
        limit: Some(Expr::value(Value::Number("1".into(), false))),
        offset: None,
        limit_by: vec![],
    });
    Some(shown)
}

fn has_limit(q: &Query) -> bool {
    match &q.limit_clause {
        Some(LimitClause::LimitOffset { limit, .. }) => limit.is_some(),
        Some(LimitClause::OffsetCommaLimit { .. }) => true,
        None => false,
    }
}

fn never_null(catalog: &SchemaCatalog, col: &ColumnRef) -> bool {
    let Some(table) = catalog.table(&col.table) else {
        return false;
    };
    let Some(def) = table.column(&col.column) else {
        return false;
    };
    // A single INTEGER primary key is the rowid and cannot hold NULL.
    let rowid = table.primary_key.len() == 1
        && table.is_primary_key(&def.name)
        && def.declared_type == ColumnType::Integer;
    def.not_null || rowid
}

fn conjuncts(e: &Expr) -> Vec<&Expr> {
    match e {
        Expr::BinaryOp {
            left,
            op: BinaryOperator::And,
            right,
        } => {
            let mut v = conjuncts(left);
            v.extend(conjuncts(right));
            v
        }
        Expr::Nested(inner) => conjuncts(inner),
        other => vec![other],
    }
}

fn null_guard(q: &mut Query, scope: &Scope, catalog: &SchemaCatalog) -> Option<String> {
    if !has_limit(q) {
        return None;
    }
    let Some(OrderByKind::Expressions(keys)) = q.order_by.as_ref().map(|o| &o.kind) else {
        return None;
    };
    let key = keys.first()?.expr.clone();
    let col = scope.resolve(catalog, &column_name(&key)?)?;
    if never_null(catalog, &col) {
        return None;
    }
    let SetExpr::Select(s) = q.body.as_mut() else {
        return None;
    };
    let guarded = s.selection.as_ref().is_some_and(|w| {
        conjuncts(w).into_iter().any(|c| match c {
            Expr::IsNotNull(inner) => column_name(inner)
                .and_then(|n| scope.resolve(catalog, &n))
                .is_some_and(|r| r == col),
            _ => false,
        })
    });
    if guarded {
        return None;
    }
    let guard = Expr::IsNotNull(Box::new(key.clone()));
    s.selection = Some(match s.selection.take() {
        None => guard,
        Some(existing) => {
            let existing = match existing {
                e @ Expr::BinaryOp {
                    op: BinaryOperator::Or,
                    ..
                } => Expr::Nested(Box::new(e)),
                e => e,
            };
            Expr::BinaryOp {
                left: Box::new(guard),
                op: BinaryOperator::And,
                right: Box::new(existing),
            }
        }
    });
    Some(key.to_string())
}
