//! Self-taught few-shot library: Query-CoT-SQL examples selected by masked
//! question similarity, plus correction examples keyed by error type.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::cot::{present_markers, split_column_list, split_sections, Marker};
use crate::embed::{EmbedError, Embedder, UnitVector};
use crate::llm::{LlmConfig, LlmError, LlmGateway, LlmRequest, Stage};
use crate::refine::ErrorType;

pub const LIBRARY_FORMAT: &str = "t2s-fewshot-library";
pub const LIBRARY_VERSION: u32 = 1;
pub const DEFAULT_FEWSHOTS: usize = 5;
/// Few-shot counts explored in the experiments.
pub const FEWSHOT_SWEEP: [usize; 5] = [0, 3, 5, 7, 9];

/// Reasoning fields of a Query-CoT-SQL example.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoTBody {
    pub reason: String,
    pub columns: Vec<String>,
    pub values: String,
    pub select: String,
    pub sql_like: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShot {
    pub question: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub evidence: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub db_id: Option<String>,
    /// `None` for a degraded Query-SQL example.
    pub cot: Option<CoTBody>,
    pub sql: String,
    pub masked_question: String,
    pub question_vector: UnitVector,
}

impl FewShot {
    /// Question with its evidence appended, as shown in prompts.
    pub fn full_question(&self) -> String {
        join_question(&self.question, &self.evidence)
    }

    pub fn render(&self) -> String {
        let head = format!("/* Answer the following: {} */", self.full_question());
        match &self.cot {
            None => format!("{head}\n#SQL: {}", self.sql),
            Some(c) => format!(
                "{head}\n#reason: {}\n#columns: {}\n#values: {}\n#SELECT: {}\n#SQL-like: {}\n#SQL: {}",
                c.reason,
                c.columns.join(", "),
                c.values,
                c.select,
                c.sql_like,
                self.sql
            ),
        }
    }
}

pub fn join_question(question: &str, evidence: &str) -> String {
    let (q, e) = (question.trim(), evidence.trim());
    if e.is_empty() {
        q.to_string()
    } else {
        format!("{q} {e}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionShot {
    pub error_key: ErrorType,
    pub template: String,
}

const CORRECTION_HEADER: &str = "/* Fix the SQL and answer the question */";

impl CorrectionShot {
    pub fn new(error_key: ErrorType, template: impl Into<String>) -> Self {
        Self {
            error_key,
            template: template.into(),
        }
    }

    pub fn is_well_formed(&self) -> bool {
        ["#question:", "#Error SQL:", "#SQL:"]
            .iter()
            .all(|m| self.template.contains(m))
    }
}

fn correction(question: &str, sql: &str, error: &str, values: &str, advice: &str, fixed: &str) -> String {
    format!(
        "{CORRECTION_HEADER}\n#question: {question}\n#Error SQL: {sql}\nError: {error}\n#values: {values}\n#Change Ambiguity: {advice}\n#SQL: {fixed}"
    )
}

/// Correction examples shipped with the library, one per error type.
pub fn builtin_corrections() -> BTreeMap<ErrorType, Vec<CorrectionShot>> {
    let mut m = BTreeMap::new();
    m.insert(
        ErrorType::EmptyResult,
        vec![CorrectionShot::new(
            ErrorType::EmptyResult,
            correction(
                "How many customers live in new york?",
                "SELECT COUNT(*) FROM customer WHERE city = 'new york'",
                "Result: None",
                "customer.city = 'New York'",
                "The stored value is 'New York'; match its exact spelling and casing.",
                "SELECT COUNT(*) FROM customer WHERE city = 'New York'",
            ),
        )],
    );
    m.insert(
        ErrorType::Syntax,
        vec![CorrectionShot::new(
            ErrorType::Syntax,
            correction(
                "List the five largest schools by enrollment.",
                "SELECT name FROM school ORDER BY enrollment DESC LIMT 5",
                "near \"LIMT\": syntax error",
                "",
                "LIMT is a misspelled keyword; use LIMIT.",
                "SELECT name FROM school ORDER BY enrollment DESC LIMIT 5",
            ),
        )],
    );
    m.insert(
        ErrorType::SchemaMismatch,
        vec![CorrectionShot::new(
            ErrorType::SchemaMismatch,
            correction(
                "What is the name of the employee with the highest salary?",
                "SELECT T1.name FROM salary AS T1 INNER JOIN employee AS T2 ON T1.emp_id = T2.id ORDER BY T1.amount DESC LIMIT 1",
                "no such column: T1.name",
                "",
                "name belongs to employee, which is aliased T2.",
                "SELECT T2.name FROM salary AS T1 INNER JOIN employee AS T2 ON T1.emp_id = T2.id ORDER BY T1.amount DESC LIMIT 1",
            ),
        )],
    );
    m.insert(
        ErrorType::Timeout,
        vec![CorrectionShot::new(
            ErrorType::Timeout,
            correction(
                "How many orders were placed by customers from Paris?",
                "SELECT COUNT(*) FROM orders, customer WHERE customer.city = 'Paris'",
                "interrupted: execution timed out",
                "customer.city = 'Paris'",
                "The tables are cross joined; join them on the customer key.",
                "SELECT COUNT(*) FROM orders AS T1 INNER JOIN customer AS T2 ON T1.customer_id = T2.id WHERE T2.city = 'Paris'",
            ),
        )],
    );
    m
}

/// Used when no example is registered for an error type.
pub fn generic_correction() -> String {
    correction(
        "How many products cost more than 100?",
        "SELECT COUNT(id) FROM product WHERE price > '100' GROUP BY",
        "the statement failed",
        "",
        "Read the error, keep the question's intent, and change only what the error points at.",
        "SELECT COUNT(id) FROM product WHERE price > 100",
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotLibrary {
    pub shots: Vec<FewShot>,
    pub corrections: BTreeMap<ErrorType, Vec<CorrectionShot>>,
}

impl Default for FewShotLibrary {
    fn default() -> Self {
        Self {
            shots: Vec::new(),
            corrections: builtin_corrections(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FewShotError {
    #[error("few-shot library I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("few-shot library format: {0}")]
    Format(String),
    #[error("embedding failed: {0}")]
    Embed(#[from] EmbedError),
    #[error("augmenting example {index} failed after {done} completed: {source}")]
    Llm {
        index: usize,
        done: usize,
        #[source]
        source: LlmError,
    },
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Shot(Box<FewShot>),
    Correction(CorrectionShot),
}

impl FewShotLibrary {
    pub fn new(shots: Vec<FewShot>) -> Self {
        Self {
            shots,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<(), FewShotError> {
        let mut w = BufWriter::new(File::create(path)?);
        write_header(&mut w)?;
        for c in self.corrections.values().flatten() {
            write_record(&mut w, &Record::Correction(c.clone()))?;
        }
        for s in &self.shots {
            write_record(&mut w, &Record::Shot(Box::new(s.clone())))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Load a library file. Correction records, when present, replace the
    /// built-in examples for their error type.
    pub fn load(path: &Path) -> Result<Self, FewShotError> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header: Header = match lines.next() {
            Some(l) => serde_json::from_str(&l?).map_err(|e| FewShotError::Format(e.to_string()))?,
            None => return Err(FewShotError::Format("empty file".into())),
        };
        if header.format != LIBRARY_FORMAT || header.version != LIBRARY_VERSION {
            return Err(FewShotError::Format(format!(
                "unsupported header {} v{}",
                header.format, header.version
            )));
        }
        let mut lib = FewShotLibrary::default();
        let mut loaded: BTreeMap<ErrorType, Vec<CorrectionShot>> = BTreeMap::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            // A build interrupted mid-write leaves at most one torn final line.
            let rec: Record = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(e) => {
                    return Err(FewShotError::Format(format!("line {}: {e}", n + 2)));
                }
            };
            match rec {
                Record::Shot(s) => lib.shots.push(*s),
                Record::Correction(c) => loaded.entry(c.error_key).or_default().push(c),
            }
        }
        lib.corrections.extend(loaded);
        Ok(lib)
    }

    /// Examples for an error type, joined; the generic example otherwise.
    pub fn correction_fewshot(&self, error: ErrorType) -> String {
        match self.corrections.get(&error) {
            Some(v) if !v.is_empty() => v
                .iter()
                .map(|c| c.template.as_str())
                .collect::<Vec<_>>()
                .join("\n\n"),
            _ => generic_correction(),
        }
    }
}

fn write_header(w: &mut impl Write) -> Result<(), FewShotError> {
    let h = Header {
        format: LIBRARY_FORMAT.into(),
        version: LIBRARY_VERSION,
    };
    writeln!(w, "{}", serde_json::to_string(&h).map_err(|e| FewShotError::Format(e.to_string()))?)?;
    Ok(())
}

fn write_record(w: &mut impl Write, r: &Record) -> Result<(), FewShotError> {
    writeln!(w, "{}", serde_json::to_string(r).map_err(|e| FewShotError::Format(e.to_string()))?)?;
    Ok(())
}

/// Replaces instance-specific literals in a question.
pub trait MaskStrategy: Send + Sync {
    fn mask(&self, question: &str) -> String;
}

/// Quoted literals become `<VAL>`, dates `<DATE>`, other numbers `<NUM>`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LiteralMasker;

static DATE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:\d{4}[-/.]\d{1,2}(?:[-/.]\d{1,2})?|\d{1,2}[-/.]\d{1,2}[-/.]\d{2,4})\b")
        .expect("valid regex")
});
static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\d+(?:[.,]\d+)*").expect("valid regex"));

fn closing_quote(open: char) -> Option<char> {
    match open {
        '\'' => Some('\''),
        '"' => Some('"'),
        '`' => Some('`'),
        '\u{2018}' => Some('\u{2019}'),
        '\u{201C}' => Some('\u{201D}'),
        _ => None,
    }
}

fn mask_quoted(q: &str) -> String {
    let chars: Vec<char> = q.chars().collect();
    let mut out = String::with_capacity(q.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let opens = closing_quote(c).filter(|_| i == 0 || !chars[i - 1].is_alphanumeric());
        if let Some(close) = opens {
            // The closing quote must not be followed by a letter or digit, so
            // apostrophes inside words do not end the literal.
            let end = (i + 1..chars.len()).find(|&j| {
                chars[j] == close && chars.get(j + 1).is_none_or(|n| !n.is_alphanumeric())
            });
            if let Some(j) = end {
                out.push_str("<VAL>");
                i = j + 1;
                continue;
            }
        }
        out.push(c);
        i += 1;
    }
    out
}

impl MaskStrategy for LiteralMasker {
    fn mask(&self, question: &str) -> String {
        // Numbers go first so a closing quote followed by digits is still
        // seen as closing on a second pass.
        let q = DATE.replace_all(question, "<DATE>");
        let q = NUMBER.replace_all(&q, "<NUM>");
        mask_quoted(&q)
    }
}

pub fn mask_question(question: &str) -> String {
    LiteralMasker.mask(question)
}

/// The `k` shots most similar to the masked question, ties in library order.
/// When `same_db` is given, only shots from that database are considered.
pub fn select_fewshots<'l>(
    library: &'l FewShotLibrary,
    question: &str,
    k: usize,
    embedder: &dyn Embedder,
    masker: &dyn MaskStrategy,
    same_db: Option<&str>,
) -> Result<Vec<&'l FewShot>, EmbedError> {
    if k == 0 || library.is_empty() {
        return Ok(Vec::new());
    }
    let pool: Vec<&FewShot> = library
        .shots
        .iter()
        .filter(|s| same_db.is_none_or(|db| s.db_id.as_deref() == Some(db)))
        .collect();
    let masked = masker.mask(question);
    let q = match embedder.embed(&masked) {
        Ok(v) => v,
        Err(EmbedError::EmptyInput) => return Ok(pool.into_iter().take(k).collect()),
        Err(e) => return Err(e),
    };
    let mut scored: Vec<(usize, f64)> = pool
        .iter()
        .enumerate()
        .map(|(i, s)| (i, q.cosine(&s.question_vector)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().take(k).map(|(i, _)| pool[i]).collect())
}

/// A training question with its gold SQL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub question: String,
    #[serde(default)]
    pub evidence: String,
    pub sql: String,
    #[serde(default)]
    pub db_id: Option<String>,
}

const AUGMENT_MARKERS: [Marker; 5] = [
    Marker::Reason,
    Marker::Columns,
    Marker::Values,
    Marker::Select,
    Marker::SqlLike,
];

pub fn augment_prompt(pair: &TrainingPair, schema_text: Option<&str>) -> String {
    let mut p = String::from(
        "/* Given a question and its correct SQL, write the reasoning that leads from the question to the SQL. Do not change the SQL. */\n",
    );
    if let Some(s) = schema_text {
        p.push_str(s);
        p.push('\n');
    }
    p.push_str(&format!(
        "/* Answer the following: {} */\n#SQL: {}\n\nReply in exactly this format:\n\
         #reason: Analyze how to generate SQL based on the question.\n\
         #columns: All columns ultimately used in SQL\n\
         #values: the filter in SQL\n\
         #SELECT: SELECT content table.column.\n\
         #SQL-like: SQL-like statements ignoring Join conditions\n\
         #SQL: {}",
        join_question(&pair.question, &pair.evidence),
        pair.sql,
        pair.sql
    ));
    p
}

/// Parse the reasoning fields of an augmentation reply. Every field but the
/// SQL is required; the SQL itself is ignored.
pub fn parse_cot_body(reply: &str) -> Option<CoTBody> {
    let present = present_markers(reply);
    if !AUGMENT_MARKERS.iter().all(|m| present.contains(m)) {
        return None;
    }
    let sections = split_sections(reply);
    let get = |m: Marker| {
        sections
            .iter()
            .find(|(k, _)| *k == m)
            .map(|(_, v)| v.clone())
            .unwrap_or_default()
    };
    Some(CoTBody {
        reason: get(Marker::Reason),
        columns: split_column_list(&get(Marker::Columns)),
        values: get(Marker::Values),
        select: get(Marker::Select),
        sql_like: get(Marker::SqlLike),
    })
}

/// Turns training pairs into library examples.
pub struct Augmenter<'a> {
    pub llm: &'a dyn LlmGateway,
    pub config: LlmConfig,
    pub embedder: &'a dyn Embedder,
    pub masker: &'a dyn MaskStrategy,
    /// Extra attempts after a reply that lacks a required field.
    pub max_retries: u32,
    pub parallelism: usize,
}

impl<'a> Augmenter<'a> {
    pub fn new(llm: &'a dyn LlmGateway, embedder: &'a dyn Embedder) -> Self {
        Self {
            llm,
            config: LlmConfig::default(),
            embedder,
            masker: &LiteralMasker,
            max_retries: 2,
            parallelism: 4,
        }
    }

    /// Augment one pair. A reply that never yields every reasoning field
    /// produces a degraded Query-SQL example; gateway failure is an error.
    pub fn augment(&self, pair: &TrainingPair, schema_text: Option<&str>) -> Result<FewShot, LlmError> {
        let prompt = augment_prompt(pair, schema_text);
        let cfg = self.config.with_samples(1);
        let mut cot = None;
        for attempt in 0..=self.max_retries {
            let reply = self.llm.complete(&LlmRequest::new(Stage::FewshotAugment, &prompt, &cfg))?;
            if let Some(body) = reply.texts.first().and_then(|t| parse_cot_body(t)) {
                cot = Some(body);
                break;
            }
            tracing::debug!(attempt, "augmentation reply missing fields");
        }
        if cot.is_none() {
            tracing::warn!(question = %pair.question, "keeping degraded Query-SQL example");
        }
        let masked_question = self.masker.mask(&join_question(&pair.question, &pair.evidence));
        let question_vector = self
            .embedder
            .embed(&masked_question)
            .or_else(|_| self.embedder.embed(&pair.sql))
            .map_err(|e| LlmError::Fatal(format!("embedding: {e}")))?;
        Ok(FewShot {
            question: pair.question.clone(),
            evidence: pair.evidence.clone(),
            db_id: pair.db_id.clone(),
            cot,
            sql: pair.sql.clone(),
            masked_question,
            question_vector,
        })
    }

    /// Build or resume a library file at `path`. Pairs already present are
    /// skipped; each new example is appended as soon as it and every example
    /// before it are done, so an aborted build resumes where it stopped.
    pub fn build(
        &self,
        pairs: &[TrainingPair],
        path: &Path,
        schema_text: impl Fn(&TrainingPair) -> Option<String> + Sync,
    ) -> Result<FewShotLibrary, FewShotError> {
        let mut lib = if path.exists() {
            FewShotLibrary::load(path)?
        } else {
            let lib = FewShotLibrary::default();
            lib.save(path)?;
            lib
        };
        let done: HashSet<(String, String)> = lib
            .shots
            .iter()
            .map(|s| (s.question.clone(), s.sql.clone()))
            .collect();
        let todo: Vec<(usize, &TrainingPair)> = pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| !done.contains(&(p.question.clone(), p.sql.clone())))
            .collect();
        let mut out = OpenOptions::new().append(true).open(path)?;
        let mut completed = 0;
        for chunk in todo.chunks(self.parallelism.max(1)) {
            let results: Vec<Result<FewShot, LlmError>> = chunk
                .par_iter()
                .map(|(_, p)| self.augment(p, schema_text(p).as_deref()))
                .collect();
            for ((index, _), r) in chunk.iter().zip(results) {
                match r {
                    Ok(shot) => {
                        write_record(&mut out, &Record::Shot(Box::new(shot.clone())))?;
                        out.flush()?;
                        lib.shots.push(shot);
                        completed += 1;
                    }
                    Err(source) => {
                        return Err(FewShotError::Llm {
                            index: *index,
                            done: completed,
                            source,
                        })
                    }
                }
            }
        }
        Ok(lib)
    }
}
