//! Schema catalog of one database: ingest from SQLite metadata, prompt
//! rendering, and the primary-key / same-name selection expansion.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::db::{Database, DbError};

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error(transparent)]
    Db(#[from] DbError),
    #[error("ingesting {path}: {source}")]
    Ingest {
        path: String,
        #[source]
        source: rusqlite::Error,
    },
    #[error("duplicate table `{0}`")]
    DuplicateTable(String),
    #[error("duplicate column `{table}.{column}`")]
    DuplicateColumn { table: String, column: String },
    #[error("primary key column `{table}.{column}` is not a column of the table")]
    BadPrimaryKey { table: String, column: String },
    #[error("foreign key `{table}.{column}` references unknown `{target}`")]
    DanglingForeignKey {
        table: String,
        column: String,
        target: String,
    },
    #[error("unknown column `{table}.{column}`")]
    UnknownColumn { table: String, column: String },
    #[error("reading description file {path}: {message}")]
    Description { path: String, message: String },
}

/// Closed set of declared column types, following SQLite affinity rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Text,
    Integer,
    Real,
    Blob,
    Other,
}

impl ColumnType {
    pub fn from_declared(declared: &str) -> Self {
        let d = declared.to_ascii_uppercase();
        if d.contains("INT") {
            ColumnType::Integer
        } else if d.contains("CHAR") || d.contains("CLOB") || d.contains("TEXT") {
            ColumnType::Text
        } else if d.contains("BLOB") {
            ColumnType::Blob
        } else if d.contains("REAL") || d.contains("FLOA") || d.contains("DOUB") {
            ColumnType::Real
        } else {
            ColumnType::Other
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ColumnType::Text => "text",
            ColumnType::Integer => "integer",
            ColumnType::Real => "real",
            ColumnType::Blob => "blob",
            ColumnType::Other => "other",
        }
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub declared_type: ColumnType,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub not_null: bool,
}

impl ColumnDef {
    pub fn new(name: impl Into<String>, declared_type: ColumnType) -> Self {
        Self {
            name: name.into(),
            declared_type,
            description: None,
            not_null: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub column: String,
    pub ref_table: String,
    pub ref_column: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    pub primary_key: Vec<String>,
    pub foreign_keys: Vec<ForeignKey>,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns
            .iter()
            .find(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn is_primary_key(&self, column: &str) -> bool {
        self.primary_key
            .iter()
            .any(|k| k.eq_ignore_ascii_case(column))
    }
}

/// A `(table, column)` pair using the catalog's canonical spelling.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        Self {
            table: table.into(),
            column: column.into(),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", quote_ident(&self.table), quote_ident(&self.column))
    }
}

/// Immutable model of one database's tables, columns and keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaCatalog {
    db_id: String,
    tables: Vec<TableDef>,
}

impl SchemaCatalog {
    /// Build a catalog, checking name uniqueness and key resolution.
    pub fn new(db_id: impl Into<String>, tables: Vec<TableDef>) -> Result<Self, SchemaError> {
        let mut seen = BTreeSet::new();
        for t in &tables {
            if !seen.insert(t.name.to_ascii_lowercase()) {
                return Err(SchemaError::DuplicateTable(t.name.clone()));
            }
            let mut cols = BTreeSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.to_ascii_lowercase()) {
                    return Err(SchemaError::DuplicateColumn {
                        table: t.name.clone(),
                        column: c.name.clone(),
                    });
                }
            }
            for k in &t.primary_key {
                if t.column(k).is_none() {
                    return Err(SchemaError::BadPrimaryKey {
                        table: t.name.clone(),
                        column: k.clone(),
                    });
                }
            }
        }
        let catalog = Self {
            db_id: db_id.into(),
            tables,
        };
        for t in &catalog.tables {
            for fk in &t.foreign_keys {
                if catalog.resolve(&t.name, &fk.column).is_none()
                    || catalog.resolve(&fk.ref_table, &fk.ref_column).is_none()
                {
                    return Err(SchemaError::DanglingForeignKey {
                        table: t.name.clone(),
                        column: fk.column.clone(),
                        target: format!("{}.{}", fk.ref_table, fk.ref_column),
                    });
                }
            }
        }
        Ok(catalog)
    }

    pub fn db_id(&self) -> &str {
        &self.db_id
    }

    pub fn tables(&self) -> &[TableDef] {
        &self.tables
    }

    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables
            .iter()
            .find(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn column(&self, table: &str, column: &str) -> Option<&ColumnDef> {
        self.table(table).and_then(|t| t.column(column))
    }

    /// Canonical reference for a possibly differently-cased name.
    pub fn resolve(&self, table: &str, column: &str) -> Option<ColumnRef> {
        let t = self.table(table)?;
        let c = t.column(column)?;
        Some(ColumnRef::new(&t.name, &c.name))
    }

    /// Every column, in declaration order.
    pub fn all_columns(&self) -> impl Iterator<Item = ColumnRef> + '_ {
        self.tables
            .iter()
            .flat_map(|t| t.columns.iter().map(|c| ColumnRef::new(&t.name, &c.name)))
    }

    /// Tables declaring a column with this name.
    pub fn tables_with_column(&self, column: &str) -> Vec<&TableDef> {
        self.tables
            .iter()
            .filter(|t| t.column(column).is_some())
            .collect()
    }

    /// Validated selection over this catalog.
    pub fn select<I, T, C>(&self, entries: I) -> Result<ColumnSelection, SchemaError>
    where
        I: IntoIterator<Item = (T, C)>,
        T: AsRef<str>,
        C: AsRef<str>,
    {
        let mut set = BTreeSet::new();
        for (t, c) in entries {
            let r = self
                .resolve(t.as_ref(), c.as_ref())
                .ok_or_else(|| SchemaError::UnknownColumn {
                    table: t.as_ref().to_string(),
                    column: c.as_ref().to_string(),
                })?;
            set.insert(r);
        }
        Ok(ColumnSelection { entries: set })
    }

    pub fn full_selection(&self) -> ColumnSelection {
        ColumnSelection {
            entries: self.all_columns().collect(),
        }
    }

    /// Attach BIRD-style `database_description/<table>.csv` descriptions.
    pub fn with_descriptions(mut self, dir: &Path) -> Result<Self, SchemaError> {
        let files = match std::fs::read_dir(dir) {
            Ok(rd) => rd
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
                .collect::<Vec<_>>(),
            Err(_) => return Ok(self),
        };
        for table in &mut self.tables {
            let Some(file) = files.iter().find(|p| {
                p.file_stem()
                    .is_some_and(|s| s.to_string_lossy().eq_ignore_ascii_case(&table.name))
            }) else {
                continue;
            };
            for (column, text) in read_description_csv(file)? {
                if let Some(c) = table
                    .columns
                    .iter_mut()
                    .find(|c| c.name.trim().eq_ignore_ascii_case(column.trim()))
                {
                    if !text.is_empty() {
                        c.description = Some(text);
                    }
                }
            }
        }
        Ok(self)
    }
}

fn read_description_csv(path: &Path) -> Result<Vec<(String, String)>, SchemaError> {
    let err = |message: String| SchemaError::Description {
        path: path.display().to_string(),
        message,
    };
    let bytes = std::fs::read(path).map_err(|e| err(e.to_string()))?;
    // Several BIRD description files are latin-1 encoded.
    let text = String::from_utf8_lossy(&bytes);
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(text.trim_start_matches('\u{feff}').as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| err(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_ascii_lowercase())
        .collect::<Vec<_>>();
    let idx = |name: &str| headers.iter().position(|h| h == name);
    let Some(original) = idx("original_column_name") else {
        return Ok(Vec::new());
    };
    let desc = idx("column_description");
    let value_desc = idx("value_description");
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| err(e.to_string()))?;
        let get = |i: Option<usize>| {
            i.and_then(|i| record.get(i))
                .map(|s| s.split_whitespace().collect::<Vec<_>>().join(" "))
                .unwrap_or_default()
        };
        let mut text = get(desc);
        let values = get(value_desc);
        if !values.is_empty() {
            if !text.is_empty() {
                text.push_str("; ");
            }
            text.push_str(&values);
        }
        out.push((get(Some(original)), text));
    }
    Ok(out)
}

/// Introspect a database into a catalog. Tables and columns keep declaration
/// order; descriptions are loaded from a sibling `database_description/`
/// directory when present.
pub fn ingest_schema(db: &Database) -> Result<SchemaCatalog, SchemaError> {
    let conn = db.connect()?;
    let wrap = |source| SchemaError::Ingest {
        path: db.path().display().to_string(),
        source,
    };
    let names: Vec<String> = {
        let mut stmt = conn
            .prepare(
                "SELECT name FROM sqlite_master WHERE type = 'table' \
                 AND name NOT LIKE 'sqlite_%' ORDER BY rowid",
            )
            .map_err(wrap)?;
        let rows = stmt.query_map([], |r| r.get(0)).map_err(wrap)?;
        rows.collect::<Result<_, _>>().map_err(wrap)?
    };

    let mut tables = Vec::with_capacity(names.len());
    for name in &names {
        let quoted = name.replace('"', "\"\"");
        let mut stmt = conn
            .prepare(&format!("PRAGMA table_info(\"{quoted}\")"))
            .map_err(wrap)?;
        let info = stmt
            .query_map([], |r| {
                Ok((
                    r.get::<_, String>(1)?,
                    r.get::<_, Option<String>>(2)?.unwrap_or_default(),
                    r.get::<_, i64>(3)? != 0,
                    r.get::<_, i64>(5)?,
                ))
            })
            .map_err(wrap)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(wrap)?;
        let mut pk: Vec<(i64, String)> = info
            .iter()
            .filter(|c| c.3 > 0)
            .map(|c| (c.3, c.0.clone()))
            .collect();
        pk.sort();
        let columns = info
            .into_iter()
            .map(|(col, decl, not_null, _)| ColumnDef {
                declared_type: ColumnType::from_declared(&decl),
                name: col,
                description: None,
                not_null,
            })
            .collect();

        let mut stmt = conn
            .prepare(&format!("PRAGMA foreign_key_list(\"{quoted}\")"))
            .map_err(wrap)?;
        let raw_fks = stmt
            .query_map([], |r| {
                Ok((
                    r.get::<_, String>(2)?,
                    r.get::<_, String>(3)?,
                    r.get::<_, Option<String>>(4)?,
                ))
            })
            .map_err(wrap)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(wrap)?;
        tables.push((
            TableDef {
                name: name.clone(),
                columns,
                primary_key: pk.into_iter().map(|(_, c)| c).collect(),
                foreign_keys: Vec::new(),
            },
            raw_fks,
        ));
    }

    // Resolve foreign keys once every table is known. References to a
    // missing target (common in the wild) are dropped.
    let known: Vec<TableDef> = tables.iter().map(|(t, _)| t.clone()).collect();
    let lookup = |table: &str| known.iter().find(|t| t.name.eq_ignore_ascii_case(table));
    let mut resolved = Vec::with_capacity(tables.len());
    for (mut table, raw) in tables {
        for (target, from, to) in raw {
            let Some(target_def) = lookup(&target) else {
                tracing::warn!(table = %table.name, %target, "dropping foreign key to unknown table");
                continue;
            };
            let to = match to {
                Some(to) => target_def.column(&to).map(|c| c.name.clone()),
                None => target_def.primary_key.first().cloned(),
            };
            let (Some(from_col), Some(to)) = (table.column(&from).map(|c| c.name.clone()), to)
            else {
                tracing::warn!(table = %table.name, %from, %target, "dropping unresolvable foreign key");
                continue;
            };
            table.foreign_keys.push(ForeignKey {
                column: from_col,
                ref_table: target_def.name.clone(),
                ref_column: to,
            });
        }
        resolved.push(table);
    }

    let catalog = SchemaCatalog::new(db.db_id(), resolved)?;
    match db.path().parent().map(|p| p.join("database_description")) {
        Some(dir) if dir.is_dir() => catalog.with_descriptions(&dir),
        _ => Ok(catalog),
    }
}

/// A set of catalog columns. Only constructible through a catalog, so every
/// entry names an existing column.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSelection {
    entries: BTreeSet<ColumnRef>,
}

impl ColumnSelection {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, table: &str, column: &str) -> bool {
        self.entries.iter().any(|r| {
            r.table.eq_ignore_ascii_case(table) && r.column.eq_ignore_ascii_case(column)
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &ColumnRef> {
        self.entries.iter()
    }

    pub fn is_subset(&self, other: &ColumnSelection) -> bool {
        self.entries.is_subset(&other.entries)
    }

    /// Union of two selections drawn from the same catalog.
    pub fn union(&self, other: &ColumnSelection) -> ColumnSelection {
        ColumnSelection {
            entries: self.entries.union(&other.entries).cloned().collect(),
        }
    }

    pub fn validate(&self, catalog: &SchemaCatalog) -> Result<(), SchemaError> {
        for r in &self.entries {
            if catalog.column(&r.table, &r.column).is_none() {
                return Err(SchemaError::UnknownColumn {
                    table: r.table.clone(),
                    column: r.column.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Add the primary keys of every table owning a selected column, and every
/// same-named column in any table, until nothing changes.
pub fn expand_selection(catalog: &SchemaCatalog, selection: &ColumnSelection) -> ColumnSelection {
    let mut entries = selection.entries.clone();
    loop {
        let mut added = Vec::new();
        for r in &entries {
            if let Some(t) = catalog.table(&r.table) {
                for k in &t.primary_key {
                    added.push(ColumnRef::new(&t.name, k));
                }
            }
            for t in catalog.tables_with_column(&r.column) {
                let c = t.column(&r.column).expect("filtered on column presence");
                added.push(ColumnRef::new(&t.name, &c.name));
            }
        }
        let before = entries.len();
        entries.extend(added);
        if entries.len() == before {
            break;
        }
    }
    ColumnSelection { entries }
}

/// Prompt rendering switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOptions {
    pub descriptions: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { descriptions: true }
    }
}

pub const SCHEMA_HEADER: &str = "/* Database schema */";

/// Render the catalog (or the selected part of it) as a prompt block.
pub fn render_schema(
    catalog: &SchemaCatalog,
    selection: Option<&ColumnSelection>,
    options: RenderOptions,
) -> Result<String, SchemaError> {
    if let Some(sel) = selection {
        sel.validate(catalog)?;
    }
    let mut out = String::from(SCHEMA_HEADER);
    out.push('\n');
    for table in catalog.tables() {
        let columns: Vec<&ColumnDef> = table
            .columns
            .iter()
            .filter(|c| selection.is_none_or(|s| s.contains(&table.name, &c.name)))
            .collect();
        if columns.is_empty() {
            continue;
        }
        out.push_str(&format!("Table {}:\n", quote_ident(&table.name)));
        for c in columns {
            let mut markers = vec![c.declared_type.as_str().to_string()];
            if table.is_primary_key(&c.name) {
                markers.push("primary key".into());
            }
            for fk in table
                .foreign_keys
                .iter()
                .filter(|fk| fk.column.eq_ignore_ascii_case(&c.name))
            {
                markers.push(format!(
                    "references {}",
                    ColumnRef::new(&fk.ref_table, &fk.ref_column)
                ));
            }
            out.push_str(&format!(
                "{} ({})",
                ColumnRef::new(&table.name, &c.name),
                markers.join(", ")
            ));
            if options.descriptions {
                if let Some(d) = c.description.as_deref().filter(|d| !d.is_empty()) {
                    out.push_str(" -- ");
                    out.push_str(d);
                }
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Backquote identifiers that are not plain words or collide with keywords.
pub fn quote_ident(name: &str) -> String {
    let plain = name
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    if plain && !is_reserved(name) {
        name.to_string()
    } else {
        format!("`{}`", name.replace('`', "``"))
    }
}

pub fn is_reserved(word: &str) -> bool {
    let upper = word.to_ascii_uppercase();
    SQLITE_KEYWORDS.binary_search(&upper.as_str()).is_ok()
}

// SQLite's keyword list, sorted for binary search.
const SQLITE_KEYWORDS: &[&str] = &[
    "ABORT", "ACTION", "ADD", "AFTER", "ALL", "ALTER", "ALWAYS", "ANALYZE", "AND", "AS", "ASC",
    "ATTACH", "AUTOINCREMENT", "BEFORE", "BEGIN", "BETWEEN", "BY", "CASCADE", "CASE", "CAST",
    "CHECK", "COLLATE", "COLUMN", "COMMIT", "CONFLICT", "CONSTRAINT", "CREATE", "CROSS",
    "CURRENT", "CURRENT_DATE", "CURRENT_TIME", "CURRENT_TIMESTAMP", "DATABASE", "DEFAULT",
    "DEFERRABLE", "DEFERRED", "DELETE", "DESC", "DETACH", "DISTINCT", "DO", "DROP", "EACH",
    "ELSE", "END", "ESCAPE", "EXCEPT", "EXCLUDE", "EXCLUSIVE", "EXISTS", "EXPLAIN", "FAIL",
    "FILTER", "FIRST", "FOLLOWING", "FOR", "FOREIGN", "FROM", "FULL", "GENERATED", "GLOB",
    "GROUP", "GROUPS", "HAVING", "IF", "IGNORE", "IMMEDIATE", "IN", "INDEX", "INDEXED",
    "INITIALLY", "INNER", "INSERT", "INSTEAD", "INTERSECT", "INTO", "IS", "ISNULL", "JOIN",
    "KEY", "LAST", "LEFT", "LIKE", "LIMIT", "MATCH", "MATERIALIZED", "NATURAL", "NO", "NOT",
    "NOTHING", "NOTNULL", "NULL", "NULLS", "OF", "OFFSET", "ON", "OR", "ORDER", "OTHERS",
    "OUTER", "OVER", "PARTITION", "PLAN", "PRAGMA", "PRECEDING", "PRIMARY", "QUERY", "RAISE",
    "RANGE", "RECURSIVE", "REFERENCES", "REGEXP", "REINDEX", "RELEASE", "RENAME", "REPLACE",
    "RESTRICT", "RETURNING", "RIGHT", "ROLLBACK", "ROW", "ROWS", "SAVEPOINT", "SELECT", "SET",
    "TABLE", "TEMP", "TEMPORARY", "THEN", "TIES", "TO", "TRANSACTION", "TRIGGER", "UNBOUNDED",
    "UNION", "UNIQUE", "UPDATE", "USING", "VACUUM", "VALUES", "VIEW", "VIRTUAL", "WHEN",
    "WHERE", "WINDOW", "WITH", "WITHOUT",
];

/// Column descriptions grouped by table, for callers that want them as a map.
pub fn descriptions(catalog: &SchemaCatalog) -> HashMap<ColumnRef, String> {
    catalog
        .tables()
        .iter()
        .flat_map(|t| {
            t.columns.iter().filter_map(move |c| {
                c.description
                    .clone()
                    .map(|d| (ColumnRef::new(&t.name, &c.name), d))
            })
        })
        .collect()
}
