//! Exact cosine index over string cell values and column names.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::db::{Database, DbError};
use crate::embed::{EmbedError, Embedder, UnitVector};
use crate::schema::{ColumnSelection, ColumnType, SchemaCatalog};

pub const INDEX_FORMAT: &str = "t2s-value-index";
pub const INDEX_VERSION: u32 = 1;
/// Cell values longer than this many characters are truncated before embedding.
pub const MAX_VALUE_CHARS: usize = 256;
/// Weight of the owning table's name when embedding a column name.
pub const TABLE_CONTEXT_WEIGHT: f32 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error(transparent)]
    Db(#[from] DbError),
    #[error("scanning {table}.{column}: {source}")]
    Scan {
        table: String,
        column: String,
        #[source]
        source: rusqlite::Error,
    },
    #[error("embedding failed after {done} of {total} entries: {source}")]
    Embed {
        done: usize,
        total: usize,
        #[source]
        source: EmbedError,
    },
    #[error("index file {path}: {message}")]
    Format { path: String, message: String },
    #[error("index was built with embedder `{found}`, expected `{expected}`")]
    EmbedderMismatch { found: String, expected: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    CellValue,
    ColumnName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedEntry {
    pub kind: EntryKind,
    pub table: String,
    pub column: String,
    pub text: String,
    pub vector: UnitVector,
}

/// One retrieval result. Carries the entry's identity but not its vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueHit {
    pub kind: EntryKind,
    pub table: String,
    pub column: String,
    pub text: String,
    pub similarity: f64,
}

impl ValueHit {
    fn from_entry(e: &IndexedEntry, similarity: f64) -> Self {
        Self {
            kind: e.kind,
            table: e.table.clone(),
            column: e.column.clone(),
            text: e.text.clone(),
            similarity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub top_k: usize,
    pub threshold: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            top_k: 5,
            threshold: 0.65,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueIndex {
    db_id: String,
    embedder: String,
    dimension: usize,
    entries: Vec<IndexedEntry>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    db_id: String,
    embedder: String,
    dimension: usize,
    entries: usize,
}

impl ValueIndex {
    pub fn from_entries(
        db_id: impl Into<String>,
        embedder: impl Into<String>,
        dimension: usize,
        entries: Vec<IndexedEntry>,
    ) -> Self {
        Self {
            db_id: db_id.into(),
            embedder: embedder.into(),
            dimension,
            entries,
        }
    }

    pub fn db_id(&self) -> &str {
        &self.db_id
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder
    }

    pub fn entries(&self) -> &[IndexedEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stored cell values of one column.
    pub fn column_values<'a>(
        &'a self,
        table: &'a str,
        column: &'a str,
    ) -> impl Iterator<Item = &'a IndexedEntry> + 'a {
        self.entries.iter().filter(move |e| {
            e.kind == EntryKind::CellValue
                && e.table.eq_ignore_ascii_case(table)
                && e.column.eq_ignore_ascii_case(column)
        })
    }

    pub fn has_values_for(&self, table: &str, column: &str) -> bool {
        self.column_values(table, column).next().is_some()
    }

    /// Scan with an arbitrary entry filter. Scores are the maximum over the
    /// query phrases; results are thresholded, then sorted descending (ties
    /// keep index order), then truncated to `top_k`.
    pub fn search_filtered(
        &self,
        embedder: &dyn Embedder,
        query: &str,
        cfg: &RetrievalConfig,
        split: bool,
        filter: impl Fn(&IndexedEntry) -> bool,
    ) -> Result<Vec<ValueHit>, EmbedError> {
        let phrases = query_phrases(query, split);
        let mut vectors = Vec::with_capacity(phrases.len());
        for p in &phrases {
            vectors.push(embedder.embed(p)?);
        }
        if vectors.is_empty() {
            return Ok(Vec::new());
        }
        let mut scored: Vec<(usize, f64)> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| filter(e))
            .map(|(i, e)| {
                let best = vectors
                    .iter()
                    .map(|v| v.cosine(&e.vector))
                    .fold(f64::NEG_INFINITY, f64::max);
                (i, best)
            })
            .filter(|(_, s)| *s >= cfg.threshold)
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(cfg.top_k);
        Ok(scored
            .into_iter()
            .map(|(i, s)| ValueHit::from_entry(&self.entries[i], s))
            .collect())
    }

    /// Retrieval over every entry, values and column names alike.
    pub fn search_values(
        &self,
        embedder: &dyn Embedder,
        query: &str,
        cfg: &RetrievalConfig,
        split: bool,
    ) -> Result<Vec<ValueHit>, EmbedError> {
        self.search_filtered(embedder, query, cfg, split, |_| true)
    }

    /// Retrieval restricted to stored cell values.
    pub fn search_cells(
        &self,
        embedder: &dyn Embedder,
        query: &str,
        cfg: &RetrievalConfig,
        split: bool,
    ) -> Result<Vec<ValueHit>, EmbedError> {
        self.search_filtered(embedder, query, cfg, split, |e| {
            e.kind == EntryKind::CellValue
        })
    }

    /// Column-name hits for an entity, ranked, above the threshold.
    pub fn rank_columns(
        &self,
        embedder: &dyn Embedder,
        entity: &str,
        threshold: f64,
    ) -> Result<Vec<ValueHit>, EmbedError> {
        let cfg = RetrievalConfig {
            top_k: usize::MAX,
            threshold,
        };
        self.search_filtered(embedder, entity, &cfg, false, |e| {
            e.kind == EntryKind::ColumnName
        })
    }

    /// Columns whose name entries score at least `cfg.threshold` against the entity.
    pub fn search_columns(
        &self,
        embedder: &dyn Embedder,
        catalog: &SchemaCatalog,
        entity: &str,
        cfg: &RetrievalConfig,
    ) -> Result<ColumnSelection, EmbedError> {
        let hits = self.rank_columns(embedder, entity, cfg.threshold)?;
        Ok(catalog
            .select(
                hits.iter()
                    .filter(|h| catalog.resolve(&h.table, &h.column).is_some())
                    .map(|h| (h.table.as_str(), h.column.as_str())),
            )
            .expect("filtered to resolvable columns"))
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let mut w = BufWriter::new(File::create(path)?);
        let header = Header {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            db_id: self.db_id.clone(),
            embedder: self.embedder.clone(),
            dimension: self.dimension,
            entries: self.entries.len(),
        };
        serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        for e in &self.entries {
            serde_json::to_writer(&mut w, e).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Load a saved index, optionally checking which embedder produced it.
    pub fn load(path: &Path, expected_embedder: Option<&str>) -> Result<Self, IndexError> {
        let fmt_err = |message: String| IndexError::Format {
            path: path.display().to_string(),
            message,
        };
        let mut lines = BufReader::new(File::open(path)?).lines();
        let header: Header = match lines.next() {
            Some(line) => serde_json::from_str(&line?).map_err(|e| fmt_err(e.to_string()))?,
            None => return Err(fmt_err("missing header".into())),
        };
        if header.format != INDEX_FORMAT || header.version != INDEX_VERSION {
            return Err(fmt_err(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        if let Some(expected) = expected_embedder {
            if expected != header.embedder {
                return Err(IndexError::EmbedderMismatch {
                    found: header.embedder,
                    expected: expected.into(),
                });
            }
        }
        let mut entries = Vec::with_capacity(header.entries);
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: IndexedEntry = serde_json::from_str(&line)
                .map_err(|e| fmt_err(format!("record {}: {e}", n + 1)))?;
            if e.vector.dimension() != header.dimension {
                return Err(fmt_err(format!("record {}: wrong dimension", n + 1)));
            }
            let vector = UnitVector::from_stored(e.vector.as_slice().to_vec())
                .ok_or_else(|| fmt_err(format!("record {}: zero vector", n + 1)))?;
            entries.push(IndexedEntry { vector, ..e });
        }
        if entries.len() != header.entries {
            return Err(fmt_err(format!(
                "header announces {} entries, found {}",
                header.entries,
                entries.len()
            )));
        }
        Ok(Self {
            db_id: header.db_id,
            embedder: header.embedder,
            dimension: header.dimension,
            entries,
        })
    }
}

/// The whole query, plus word n-grams of length 1..=3 in split mode.
pub fn query_phrases(query: &str, split: bool) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    let whole = query.split_whitespace().collect::<Vec<_>>().join(" ");
    if !whole.is_empty() && seen.insert(whole.to_lowercase()) {
        out.push(whole);
    }
    if split {
        let words: Vec<&str> = query.split_whitespace().collect();
        for n in 1..=3 {
            for w in words.windows(n) {
                let phrase = w.join(" ");
                if seen.insert(phrase.to_lowercase()) {
                    out.push(phrase);
                }
            }
        }
    }
    out
}

fn truncate_chars(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Scan the database and embed every distinct string value of every text
/// column, plus every column name (blended with its table name).
pub fn build_index(
    catalog: &SchemaCatalog,
    db: &Database,
    embedder: &dyn Embedder,
) -> Result<ValueIndex, IndexError> {
    let conn = db.connect()?;
    struct Pending {
        kind: EntryKind,
        table: String,
        column: String,
        text: String,
    }
    let mut pending = Vec::new();
    for table in catalog.tables() {
        for col in &table.columns {
            pending.push(Pending {
                kind: EntryKind::ColumnName,
                table: table.name.clone(),
                column: col.name.clone(),
                text: col.name.clone(),
            });
            if col.declared_type != ColumnType::Text {
                continue;
            }
            let q = format!(
                "SELECT DISTINCT \"{c}\" FROM \"{t}\" WHERE typeof(\"{c}\") = 'text'",
                c = col.name.replace('"', "\"\""),
                t = table.name.replace('"', "\"\"")
            );
            let scan = |source| IndexError::Scan {
                table: table.name.clone(),
                column: col.name.clone(),
                source,
            };
            let mut stmt = conn.prepare(&q).map_err(scan)?;
            let values: BTreeSet<String> = stmt
                .query_map([], |r| r.get::<_, String>(0))
                .map_err(scan)?
                .filter_map(|v| v.ok())
                .map(|v| truncate_chars(&v, MAX_VALUE_CHARS).to_string())
                .filter(|v| !v.trim().is_empty())
                .collect();
            pending.extend(values.into_iter().map(|text| Pending {
                kind: EntryKind::CellValue,
                table: table.name.clone(),
                column: col.name.clone(),
                text,
            }));
        }
    }

    let total = pending.len();
    let vectors: Vec<Result<UnitVector, EmbedError>> = pending
        .par_iter()
        .map(|p| match p.kind {
            EntryKind::CellValue => embedder.embed(&p.text),
            EntryKind::ColumnName => {
                let col = embedder.embed(&p.text)?;
                Ok(match embedder.embed(&p.table) {
                    Ok(t) => col.blend(&t, TABLE_CONTEXT_WEIGHT),
                    Err(EmbedError::EmptyInput) => col,
                    Err(e) => return Err(e),
                })
            }
        })
        .collect();
    let mut entries = Vec::with_capacity(total);
    for (p, v) in pending.into_iter().zip(vectors) {
        match v {
            Ok(vector) => entries.push(IndexedEntry {
                kind: p.kind,
                table: p.table,
                column: p.column,
                text: p.text,
                vector,
            }),
            Err(source) => {
                return Err(IndexError::Embed {
                    done: entries.len(),
                    total,
                    source,
                })
            }
        }
    }
    Ok(ValueIndex {
        db_id: catalog.db_id().to_string(),
        embedder: embedder.id(),
        dimension: embedder.dimension(),
        entries,
    })
}
