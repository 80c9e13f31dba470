use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::fewshot::TrainingPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
    Extra,
}

impl Difficulty {
    /// Accepts both the Spider labels and BIRD's simple/moderate/challenging.
    pub fn parse(label: &str) -> Option<Self> {
        match label.trim().to_ascii_lowercase().as_str() {
            "easy" | "simple" => Some(Self::Easy),
            "medium" | "moderate" => Some(Self::Medium),
            "hard" | "challenging" => Some(Self::Hard),
            "extra" | "extra hard" | "extra_hard" => Some(Self::Extra),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Easy => "easy",
            Self::Medium => "medium",
            Self::Hard => "hard",
            Self::Extra => "extra",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub question_id: String,
    pub db_id: String,
    pub question: String,
    #[serde(default)]
    pub evidence: String,
    pub gold_sql: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not a JSON array: {message}")]
    NotArray { path: String, message: String },
    #[error("record {index}: {message}")]
    Record { index: usize, message: String },
}

fn text_field(rec: &serde_json::Map<String, Value>, names: &[&str]) -> Option<String> {
    names.iter().find_map(|n| match rec.get(*n)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(x) => Some(x.to_string()),
        _ => None,
    })
}

fn read_array(path: &Path) -> Result<Vec<Value>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| DatasetError::NotArray {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn record(index: usize, v: &Value) -> Result<Task, DatasetError> {
    let err = |message: &str| DatasetError::Record {
        index,
        message: message.to_string(),
    };
    let rec = v.as_object().ok_or_else(|| err("not an object"))?;
    let need = |names: &[&str]| {
        text_field(rec, names)
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| err(&format!("missing {}", names.join("/"))))
    };
    Ok(Task {
        question_id: text_field(rec, &["question_id", "id"]).unwrap_or_else(|| index.to_string()),
        db_id: need(&["db_id"])?,
        question: need(&["question"])?,
        evidence: text_field(rec, &["evidence"]).unwrap_or_default(),
        gold_sql: need(&["SQL", "sql", "query"])?,
        difficulty: text_field(rec, &["difficulty", "hardness"]).and_then(|d| Difficulty::parse(&d)),
    })
}

/// Tasks from a BIRD (`SQL`, `evidence`) or Spider (`query`) JSON array, in
/// file order.
pub fn load_dataset(path: &Path) -> Result<Vec<Task>, DatasetError> {
    parse_dataset(&read_array(path)?)
}

pub fn parse_dataset(records: &[Value]) -> Result<Vec<Task>, DatasetError> {
    records.iter().enumerate().map(|(i, v)| record(i, v)).collect()
}

/// Question-SQL pairs of a training split.
pub fn load_training_pairs(path: &Path) -> Result<Vec<TrainingPair>, DatasetError> {
    Ok(load_dataset(path)?
        .into_iter()
        .map(|t| TrainingPair {
            question: t.question,
            evidence: t.evidence,
            sql: t.gold_sql,
            db_id: Some(t.db_id),
        })
        .collect())
}
