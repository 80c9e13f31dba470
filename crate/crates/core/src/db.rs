//! Read-only handle on one benchmark database file.

use std::path::{Path, PathBuf};

use rusqlite::{Connection, OpenFlags};

#[derive(Debug, thiserror::Error)]
pub enum DbError {
    #[error("cannot open database {path}: {source}")]
    Open {
        path: PathBuf,
        #[source]
        source: rusqlite::Error,
    },
    #[error("database {path} is not readable: {source}")]
    Corrupt {
        path: PathBuf,
        #[source]
        source: rusqlite::Error,
    },
}

/// A database identified by its SQLite file. Connections are opened per use
/// so a handle can be shared freely between threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Database {
    db_id: String,
    path: PathBuf,
}

impl Database {
    /// Handle on `path`, with the file stem as `db_id`.
    pub fn new(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        let db_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self { db_id, path }
    }

    pub fn with_id(db_id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Self {
            db_id: db_id.into(),
            path: path.into(),
        }
    }

    /// Resolve `<root>/<db_id>/<db_id>.sqlite`, the BIRD and Spider layout.
    pub fn in_root(root: &Path, db_id: &str) -> Self {
        Self::with_id(db_id, root.join(db_id).join(format!("{db_id}.sqlite")))
    }

    pub fn db_id(&self) -> &str {
        &self.db_id
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Open a read-only connection and verify the file really is a database.
    pub fn connect(&self) -> Result<Connection, DbError> {
        let conn = Connection::open_with_flags(
            &self.path,
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
        )
        .map_err(|source| DbError::Open {
            path: self.path.clone(),
            source,
        })?;
        // Opening is lazy in SQLite; touching the schema surfaces corrupt files.
        conn.query_row("SELECT count(*) FROM sqlite_master", [], |r| {
            r.get::<_, i64>(0)
        })
        .map_err(|source| DbError::Corrupt {
            path: self.path.clone(),
            source,
        })?;
        Ok(conn)
    }
}
