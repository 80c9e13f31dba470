//! Per-question stage trace.

use serde::{Deserialize, Serialize};

pub const EXTRACTION: &str = "extraction";
pub const VALUE_RETRIEVAL: &str = "value_retrieval";
pub const COLUMN_FILTERING: &str = "column_filtering";
pub const INFO_ALIGNMENT: &str = "info_alignment";
pub const FEWSHOT: &str = "fewshot";
pub const GENERATION: &str = "generation";
pub const COT: &str = "cot";
pub const ALIGNMENT: &str = "alignment";
pub const EXECUTION: &str = "execution";
pub const CORRECTION: &str = "correction";
pub const VOTE: &str = "vote";

/// Stages in pipeline order.
pub const STAGES: [&str; 11] = [
    EXTRACTION,
    VALUE_RETRIEVAL,
    COLUMN_FILTERING,
    INFO_ALIGNMENT,
    FEWSHOT,
    GENERATION,
    COT,
    ALIGNMENT,
    EXECUTION,
    CORRECTION,
    VOTE,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub stage: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub detail: serde_json::Value,
}

impl TraceEvent {
    pub fn new(stage: &str, detail: impl Serialize) -> Self {
        Self {
            stage: stage.to_string(),
            detail: serde_json::to_value(detail).unwrap_or(serde_json::Value::Null),
        }
    }
}
