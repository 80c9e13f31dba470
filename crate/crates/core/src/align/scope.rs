use std::collections::{HashMap, HashSet};
use std::ops::ControlFlow;

use sqlparser::ast::{
    Expr, Function, FunctionArg, FunctionArgExpr, FunctionArguments, Ident, ObjectName,
    ObjectNamePart, Query, SelectItem, SetExpr, Statement, TableFactor, Visit, Visitor,
};

use crate::schema::{ColumnRef, SchemaCatalog};

/// Name resolution for one statement: table aliases, select aliases, and
/// whether anything is read from outside the catalog (CTEs, subqueries).
#[derive(Debug, Default)]
pub(crate) struct Scope {
    aliases: HashMap<String, Option<String>>,
    pub tables: Vec<String>,
    pub select_aliases: HashSet<String>,
    pub foreign_sources: bool,
}

struct Collector<'a> {
    catalog: &'a SchemaCatalog,
    scope: Scope,
}

impl Collector<'_> {
    fn bind(&mut self, key: &str, table: &str) {
        let entry = self
            .scope
            .aliases
            .entry(key.to_ascii_lowercase())
            .or_insert_with(|| Some(table.to_string()));
        // An alias bound to two different tables is ambiguous.
        if entry.as_deref().is_some_and(|t| !t.eq_ignore_ascii_case(table)) {
            *entry = None;
        }
    }
}

impl Visitor for Collector<'_> {
    type Break = ();

    fn pre_visit_query(&mut self, query: &Query) -> ControlFlow<()> {
        if query.with.is_some() {
            self.scope.foreign_sources = true;
        }
        if let SetExpr::Select(s) = query.body.as_ref() {
            for item in &s.projection {
                if let SelectItem::ExprWithAlias { alias, .. } = item {
                    self.scope.select_aliases.insert(alias.value.to_ascii_lowercase());
                }
            }
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_table_factor(&mut self, factor: &TableFactor) -> ControlFlow<()> {
        match factor {
            TableFactor::Table { name, alias, .. } => {
                let Some(t) = last_ident(name).and_then(|n| self.catalog.table(&n.value)) else {
                    self.scope.foreign_sources = true;
                    return ControlFlow::Continue(());
                };
                let table = t.name.clone();
                if !self.scope.tables.contains(&table) {
                    self.scope.tables.push(table.clone());
                }
                self.bind(&table, &table);
                if let Some(a) = alias {
                    self.bind(&a.name.value, &table);
                }
            }
            _ => self.scope.foreign_sources = true,
        }
        ControlFlow::Continue(())
    }
}

impl Scope {
    pub fn of(stmt: &Statement, catalog: &SchemaCatalog) -> Scope {
        let mut c = Collector {
            catalog,
            scope: Scope::default(),
        };
        let _ = stmt.visit(&mut c);
        c.scope
    }

    /// Catalog table bound to a qualifier, if unambiguous.
    pub fn table_for(&self, qualifier: &str) -> Option<&str> {
        self.aliases
            .get(&qualifier.to_ascii_lowercase())
            .and_then(|t| t.as_deref())
    }

    /// Resolve a column reference to a catalog column.
    pub fn resolve(&self, catalog: &SchemaCatalog, r: &ColName) -> Option<ColumnRef> {
        match &r.qualifier {
            Some(q) => catalog.resolve(self.table_for(q)?, &r.column),
            None => {
                if self.select_aliases.contains(&r.column.to_ascii_lowercase()) {
                    return None;
                }
                let mut hits = self
                    .tables
                    .iter()
                    .filter_map(|t| catalog.resolve(t, &r.column));
                let first = hits.next()?;
                hits.next().is_none().then_some(first)
            }
        }
    }
}

/// A syntactic column reference `[qualifier.]column`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ColName {
    pub qualifier: Option<String>,
    pub column: String,
    pub quote: Option<char>,
}

pub(crate) fn column_name(expr: &Expr) -> Option<ColName> {
    match expr {
        Expr::Identifier(id) => Some(ColName {
            qualifier: None,
            column: id.value.clone(),
            quote: id.quote_style,
        }),
        Expr::CompoundIdentifier(ids) if ids.len() >= 2 => {
            let col = &ids[ids.len() - 1];
            Some(ColName {
                qualifier: Some(ids[ids.len() - 2].value.clone()),
                column: col.value.clone(),
                quote: col.quote_style,
            })
        }
        Expr::Nested(inner) => column_name(inner),
        _ => None,
    }
}

pub(crate) fn last_ident(name: &ObjectName) -> Option<&Ident> {
    match name.0.last()? {
        ObjectNamePart::Identifier(id) => Some(id),
        _ => None,
    }
}

pub(crate) fn function_name(f: &Function) -> String {
    f.name.to_string().to_ascii_uppercase()
}

pub(crate) fn plain_args(f: &Function) -> Option<Vec<&Expr>> {
    let FunctionArguments::List(list) = &f.args else {
        return None;
    };
    if !list.clauses.is_empty() {
        return None;
    }
    list.args
        .iter()
        .map(|a| match a {
            FunctionArg::Unnamed(FunctionArgExpr::Expr(e)) => Some(e),
            _ => None,
        })
        .collect()
}

/// The lone plain argument of a one-argument call.
pub(crate) fn single_arg(f: &Function) -> Option<&Expr> {
    match plain_args(f)?.as_slice() {
        [e] => Some(e),
        _ => None,
    }
}

pub(crate) fn single_arg_mut(f: &mut Function) -> Option<&mut Expr> {
    let FunctionArguments::List(list) = &mut f.args else {
        return None;
    };
    if !list.clauses.is_empty() || list.args.len() != 1 {
        return None;
    }
    match &mut list.args[0] {
        FunctionArg::Unnamed(FunctionArgExpr::Expr(e)) => Some(e),
        _ => None,
    }
}

const AGGREGATES: [&str; 5] = ["COUNT", "SUM", "AVG", "TOTAL", "GROUP_CONCAT"];

/// Aggregate call. MAX and MIN count only in their one-argument form; with
/// more arguments they are scalar.
pub(crate) fn is_aggregate(f: &Function) -> bool {
    if f.over.is_some() {
        return false;
    }
    let name = function_name(f);
    if AGGREGATES.contains(&name.as_str()) {
        return true;
    }
    let one_arg = match &f.args {
        FunctionArguments::List(l) => l.args.len() == 1,
        _ => false,
    };
    matches!(name.as_str(), "MAX" | "MIN") && one_arg
}

/// Any aggregate anywhere inside `expr`.
pub(crate) fn contains_aggregate(expr: &Expr) -> bool {
    sqlparser::ast::visit_expressions(expr, |e| match e {
        Expr::Function(f) if is_aggregate(f) => ControlFlow::Break(()),
        _ => ControlFlow::Continue(()),
    })
    .is_break()
}
