use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{prompt_key, Completion, LlmError, LlmGateway, LlmRequest, Stage, Usage};

/// Key prefix for fuzzy records matched by prompt substring.
pub const CONTAINS_PREFIX: &str = "contains:";
/// Key matching any prompt of the record's stage.
pub const WILDCARD_KEY: &str = "*";

/// One transcript line. Several records with the same key and stage are the
/// variants returned for multi-sample requests, in file order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    pub reply: String,
}

impl TranscriptRecord {
    pub fn exact(stage: Stage, prompt: &str, reply: impl Into<String>) -> Self {
        Self {
            key: prompt_key(prompt),
            stage: Some(stage),
            reply: reply.into(),
        }
    }

    pub fn contains(stage: Stage, needle: &str, reply: impl Into<String>) -> Self {
        Self {
            key: format!("{CONTAINS_PREFIX}{needle}"),
            stage: Some(stage),
            reply: reply.into(),
        }
    }

    fn stage_matches(&self, stage: Stage) -> bool {
        self.stage.is_none_or(|s| s == stage)
    }
}

/// Replays recorded replies.
///
/// Lookup order: exact prompt-hash key, then the longest `contains:` needle
/// found in the prompt for that stage, then a stage wildcard `*`. In strict
/// mode an unmatched prompt is an error; otherwise it yields empty replies.
#[derive(Debug, Clone)]
pub struct ScriptedGateway {
    records: Vec<TranscriptRecord>,
    strict: bool,
}

impl ScriptedGateway {
    pub fn new(records: Vec<TranscriptRecord>, strict: bool) -> Self {
        Self { records, strict }
    }

    pub fn from_file(path: &Path, strict: bool) -> Result<Self, LlmError> {
        let file = File::open(path)
            .map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| LlmError::Transcript(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TranscriptRecord = serde_json::from_str(&line).map_err(|e| {
                LlmError::Transcript(format!("{} line {}: {e}", path.display(), n + 1))
            })?;
            records.push(rec);
        }
        Ok(Self::new(records, strict))
    }

    pub fn records(&self) -> &[TranscriptRecord] {
        &self.records
    }

    fn variants(&self, stage: Stage, prompt: &str) -> Option<Vec<&str>> {
        let key = prompt_key(prompt);
        let collect = |k: &str| -> Vec<&str> {
            self.records
                .iter()
                .filter(|r| r.key == k && r.stage_matches(stage))
                .map(|r| r.reply.as_str())
                .collect()
        };
        let exact = collect(&key);
        if !exact.is_empty() {
            return Some(exact);
        }
        let needle = self
            .records
            .iter()
            .filter(|r| r.stage_matches(stage))
            .filter_map(|r| r.key.strip_prefix(CONTAINS_PREFIX))
            .filter(|n| prompt.contains(n))
            .max_by_key(|n| n.len());
        if let Some(n) = needle {
            return Some(collect(&format!("{CONTAINS_PREFIX}{n}")));
        }
        let wild = collect(WILDCARD_KEY);
        (!wild.is_empty()).then_some(wild)
    }
}

impl LlmGateway for ScriptedGateway {
    fn complete(&self, request: &LlmRequest<'_>) -> Result<Completion, LlmError> {
        if request.prompt.trim().is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let n = request.config.n_samples.max(1);
        let texts = match self.variants(request.stage, request.prompt) {
            Some(v) => v.iter().cycle().take(n).map(|s| s.to_string()).collect(),
            None if self.strict => {
                return Err(LlmError::MissingTranscript {
                    stage: request.stage,
                    key: prompt_key(request.prompt),
                })
            }
            None => vec![String::new(); n],
        };
        Ok(Completion {
            texts,
            usage: Usage::default(),
        })
    }
}

/// Forwards to another gateway and appends every exchange to a transcript
/// file that [`ScriptedGateway`] can replay.
pub struct RecordingGateway<G> {
    inner: G,
    sink: Mutex<File>,
}

impl<G> RecordingGateway<G> {
    pub fn new(inner: G, path: &Path) -> std::io::Result<Self> {
        let sink = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner,
            sink: Mutex::new(sink),
        })
    }
}

impl<G: LlmGateway> LlmGateway for RecordingGateway<G> {
    fn complete(&self, request: &LlmRequest<'_>) -> Result<Completion, LlmError> {
        let out = self.inner.complete(request)?;
        let mut sink = self.sink.lock().unwrap_or_else(|e| e.into_inner());
        for text in &out.texts {
            let rec = TranscriptRecord::exact(request.stage, request.prompt, text.clone());
            let line = serde_json::to_string(&rec).map_err(|e| LlmError::Transcript(e.to_string()))?;
            writeln!(sink, "{line}").map_err(|e| LlmError::Transcript(e.to_string()))?;
        }
        Ok(out)
    }
}
