#![allow(dead_code)]

use std::path::{Path, PathBuf};

use t2s_core::fewshot::Augmenter;
use t2s_core::harness::load_training_pairs;
use t2s_core::{FewShotLibrary, ScriptedGateway, Task, TrigramEmbedder};

pub const DB_ID: &str = "hospital";

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/hospital")
}

pub fn fixture(name: &str) -> PathBuf {
    fixture_dir().join(name)
}

/// A BIRD-layout root holding the hospital database.
pub struct Root {
    pub dir: tempfile::TempDir,
}

impl Root {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let db_dir = dir.path().join(DB_ID);
        std::fs::create_dir_all(&db_dir).unwrap();
        let conn = rusqlite::Connection::open(db_dir.join(format!("{DB_ID}.sqlite"))).unwrap();
        conn.execute_batch(&std::fs::read_to_string(fixture("schema.sql")).unwrap())
            .unwrap();
        Self { dir }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn database(&self) -> t2s_core::Database {
        t2s_core::Database::in_root(self.path(), DB_ID)
    }
}

pub fn tasks() -> Vec<Task> {
    t2s_core::load_dataset(&fixture("dev.json")).unwrap()
}

pub fn gateway() -> ScriptedGateway {
    ScriptedGateway::from_file(&fixture("transcript.jsonl"), true).unwrap()
}

/// Few-shot library augmented from the training pairs through the transcript.
pub fn library(dir: &Path, llm: &ScriptedGateway) -> FewShotLibrary {
    let pairs = load_training_pairs(&fixture("train.json")).unwrap();
    Augmenter::new(llm, &TrigramEmbedder)
        .build(&pairs, &dir.join("fewshot.jsonl"), |_| None)
        .unwrap()
}

/// Expected final SQL per question id.
pub fn expected() -> Vec<(String, String)> {
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("expected.json")).unwrap()).unwrap();
    v.as_object()
        .unwrap()
        .iter()
        .map(|(k, s)| (k.clone(), s.as_str().unwrap().to_string()))
        .collect()
}
