use std::collections::HashSet;
use std::ops::ControlFlow;

use sqlparser::ast::{
    visit_expressions_mut, Expr, GroupByExpr, JoinConstraint, JoinOperator, OrderByKind, Query,
    SelectItem, SelectItemQualifiedWildcardKind, SetExpr, Statement, TableFactor, Visit, Visitor,
};

use super::scope::{contains_aggregate, function_name, is_aggregate, last_ident, single_arg, single_arg_mut};
use super::{Pass, Rewrite, SqlAst};
use crate::schema::SchemaCatalog;

/// Standardize aggregate usage: aggregates in ORDER BY of a non-aggregate
/// query, aggregates nested in aggregates, and joins nothing refers to.
pub fn function_align(ast: &mut SqlAst, catalog: &SchemaCatalog) -> Pass {
    let mut pass = Pass::default();
    if let Statement::Query(q) = &mut ast.stmt {
        if aggregate_order_by(q) {
            pass.rewrites.push(Rewrite::AggregateOrderBy);
        }
    }
    unnest_aggregates(&mut ast.stmt, &mut pass);
    drop_unused_joins(&mut ast.stmt, catalog, &mut pass);
    pass
}

fn group_by_is_empty(g: &GroupByExpr) -> bool {
    matches!(g, GroupByExpr::Expressions(e, m) if e.is_empty() && m.is_empty())
}

/// `SELECT a FROM t ORDER BY MAX(b)` becomes `... GROUP BY a ORDER BY b`.
fn aggregate_order_by(q: &mut Query) -> bool {
    let SetExpr::Select(s) = q.body.as_mut() else {
        return false;
    };
    let Some(OrderByKind::Expressions(keys)) = q.order_by.as_mut().map(|o| &mut o.kind) else {
        return false;
    };
    if !group_by_is_empty(&s.group_by) || s.having.is_some() || s.projection.is_empty() {
        return false;
    }
    let mut plain = Vec::new();
    for item in &s.projection {
        match item {
            SelectItem::UnnamedExpr(e) | SelectItem::ExprWithAlias { expr: e, .. } => {
                if contains_aggregate(e) {
                    return false;
                }
                plain.push(e.clone());
            }
            _ => return false,
        }
    }
    let mut changed = false;
    for key in keys.iter_mut() {
        if let Expr::Function(f) = &key.expr {
            if is_aggregate(f) {
                if let Some(arg) = single_arg(f) {
                    key.expr = arg.clone();
                    changed = true;
                }
            }
        }
    }
    if changed {
        s.group_by = GroupByExpr::Expressions(plain, vec![]);
    }
    changed
}

/// `MAX(COUNT(x))` becomes `MAX(x)`.
fn unnest_aggregates(stmt: &mut Statement, pass: &mut Pass) {
    let _ = visit_expressions_mut(stmt, |e| {
        if let Expr::Function(outer) = e {
            if is_aggregate(outer) {
                let name = function_name(outer);
                if let Some(arg) = single_arg_mut(outer) {
                    let inner_arg = match arg {
                        Expr::Function(inner) if is_aggregate(inner) => single_arg(inner).cloned(),
                        _ => None,
                    };
                    if let Some(x) = inner_arg {
                        *arg = x;
                        pass.rewrites.push(Rewrite::NestedAggregate { function: name });
                    }
                }
            }
        }
        ControlFlow::<()>::Continue(())
    });
}

#[derive(Default)]
struct References {
    qualifiers: HashSet<String>,
    bare: HashSet<String>,
    wildcard: bool,
}

impl Visitor for References {
    type Break = ();

    fn pre_visit_query(&mut self, q: &Query) -> ControlFlow<()> {
        if let SetExpr::Select(s) = q.body.as_ref() {
            for item in &s.projection {
                match item {
                    SelectItem::Wildcard(_) => self.wildcard = true,
                    SelectItem::QualifiedWildcard(SelectItemQualifiedWildcardKind::ObjectName(n), _) => {
                        if let Some(id) = last_ident(n) {
                            self.qualifiers.insert(id.value.to_ascii_lowercase());
                        }
                    }
                    SelectItem::QualifiedWildcard(..) => self.wildcard = true,
                    _ => {}
                }
            }
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_expr(&mut self, e: &Expr) -> ControlFlow<()> {
        match e {
            Expr::Identifier(id) => {
                self.bare.insert(id.value.to_ascii_lowercase());
            }
            Expr::CompoundIdentifier(ids) if ids.len() >= 2 => {
                self.qualifiers
                    .insert(ids[ids.len() - 2].value.to_ascii_lowercase());
            }
            _ => {}
        }
        ControlFlow::Continue(())
    }
}

fn on_constraint(op: &mut JoinOperator) -> Option<&mut JoinConstraint> {
    match op {
        JoinOperator::Join(c)
        | JoinOperator::Inner(c)
        | JoinOperator::Left(c)
        | JoinOperator::LeftOuter(c) => matches!(c, JoinConstraint::On(_)).then_some(c),
        _ => None,
    }
}

/// Remove joins whose table is mentioned only in its own ON clause.
fn drop_unused_joins(stmt: &mut Statement, catalog: &SchemaCatalog, pass: &mut Pass) {
    let Statement::Query(q) = stmt else { return };
    let n_joins = match q.body.as_ref() {
        SetExpr::Select(s) if s.from.len() == 1 => s.from[0].joins.len(),
        _ => return,
    };
    for j in (0..n_joins).rev() {
        let (key, table) = {
            let SetExpr::Select(s) = q.body.as_mut() else { return };
            let join = &mut s.from[0].joins[j];
            let TableFactor::Table { name, alias, .. } = &join.relation else {
                continue;
            };
            let Some(tname) = last_ident(name).map(|i| i.value.clone()) else {
                continue;
            };
            let key = alias
                .as_ref()
                .map_or(tname.clone(), |a| a.name.value.clone())
                .to_ascii_lowercase();
            if on_constraint(&mut join.join_operator).is_none() {
                continue;
            }
            (key, tname)
        };
        // Blank this join's ON clause while collecting references elsewhere.
        let saved = {
            let SetExpr::Select(s) = q.body.as_mut() else { return };
            let c = on_constraint(&mut s.from[0].joins[j].join_operator).expect("checked above");
            std::mem::replace(c, JoinConstraint::None)
        };
        let mut refs = References::default();
        let _ = q.visit(&mut refs);
        let SetExpr::Select(s) = q.body.as_mut() else { return };
        *on_constraint_any(&mut s.from[0].joins[j].join_operator) = saved;
        let bare_hit = catalog
            .table(&table)
            .is_some_and(|t| t.columns.iter().any(|c| refs.bare.contains(&c.name.to_ascii_lowercase())));
        if refs.wildcard || bare_hit || refs.qualifiers.contains(&key) {
            continue;
        }
        s.from[0].joins.remove(j);
        pass.rewrites.push(Rewrite::RedundantJoin { table });
    }
}

fn on_constraint_any(op: &mut JoinOperator) -> &mut JoinConstraint {
    match op {
        JoinOperator::Join(c)
        | JoinOperator::Inner(c)
        | JoinOperator::Left(c)
        | JoinOperator::LeftOuter(c) => c,
        _ => unreachable!("only ON joins are considered"),
    }
}
