//! Extraction agent: entities, similar values, the question-specific column
//! set, and the phrase each SELECT expression answers.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::cot::{split_column_list, split_sections, Marker};
use crate::embed::Embedder;
use crate::fewshot::join_question;
use crate::index::{ValueHit, ValueIndex};
use crate::llm::{LlmConfig, LlmError, LlmGateway, LlmRequest, Stage};
use crate::schema::{expand_selection, render_schema, ColumnSelection, RenderOptions, SchemaCatalog};
use crate::trace::{self, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntitySource {
    LlmExtracted,
    Predefined,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub text: String,
    pub source: EntitySource,
}

/// A question phrase and the SELECT expression that answers it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectPair {
    pub phrase: String,
    pub expression: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub entities: Vec<Entity>,
    pub value_hits: Vec<ValueHit>,
    pub selection: ColumnSelection,
    pub select_alignment: Vec<SelectPair>,
    /// Model reasoning followed by one `degraded:` line per fallback taken.
    pub reason: String,
    #[serde(skip)]
    pub trace: Vec<TraceEvent>,
}

/// Failures that abort extraction. Anything else degrades the step.
fn fatal(e: &LlmError) -> bool {
    matches!(e, LlmError::Exhausted { .. })
}

fn table_list(catalog: &SchemaCatalog) -> String {
    catalog
        .tables()
        .iter()
        .map(|t| {
            let cols: Vec<&str> = t.columns.iter().map(|c| c.name.as_str()).collect();
            format!("{}({})", t.name, cols.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn entity_prompt(question: &str, evidence: &str, catalog: &SchemaCatalog) -> String {
    format!(
        "/* Database tables */\n{}\n/* List the entities of the question that may name stored values, columns or tables. One entity per line, nothing else. */\n/* Answer the following: {} */",
        table_list(catalog),
        join_question(question, evidence)
    )
}

/// One entity per non-empty line; list bullets and numbering are dropped.
pub fn parse_entity_lines(reply: &str) -> Vec<String> {
    reply
        .lines()
        .map(|l| {
            let l = l.trim();
            let l = l.trim_start_matches(['-', '*', '•']).trim_start();
            let digits = l.len() - l.trim_start_matches(|c: char| c.is_ascii_digit()).len();
            let l = if digits > 0 && l[digits..].starts_with(['.', ')']) {
                l[digits + 1..].trim_start()
            } else {
                l
            };
            l.trim_matches(|c| c == '"' || c == '\'' || c == '`').trim().to_string()
        })
        .filter(|l| !l.is_empty() && !l.starts_with('#') && !l.starts_with("/*"))
        .collect()
}

fn merge_entities(llm: Vec<String>, predefined: &[String]) -> Vec<Entity> {
    let mut seen = HashSet::new();
    let tagged = llm
        .into_iter()
        .map(|t| (t, EntitySource::LlmExtracted))
        .chain(predefined.iter().map(|t| (t.clone(), EntitySource::Predefined)));
    let mut out = Vec::new();
    for (text, source) in tagged {
        let text = text.trim().to_string();
        if !text.is_empty() && seen.insert(text.to_lowercase()) {
            out.push(Entity { text, source });
        }
    }
    out
}

/// Entities proposed by the model merged with the predefined terms,
/// deduplicated case-insensitively with model entities first.
pub fn extract_entities(
    question: &str,
    evidence: &str,
    catalog: &SchemaCatalog,
    predefined: &[String],
    llm: &dyn LlmGateway,
    cfg: &LlmConfig,
) -> Result<(Vec<Entity>, Option<String>), LlmError> {
    let prompt = entity_prompt(question, evidence, catalog);
    let (lines, note) = match llm.complete(&LlmRequest::new(Stage::Entity, &prompt, cfg)) {
        Ok(c) => (c.texts.first().map(|t| parse_entity_lines(t)).unwrap_or_default(), None),
        Err(e) if fatal(&e) => return Err(e),
        Err(e) => (Vec::new(), Some(format!("entity extraction unavailable: {e}"))),
    };
    Ok((merge_entities(lines, predefined), note))
}

pub const EXTRACTION_RULE: &str = "/* Reply with #reason: how the question maps onto the schema; #columns: every table.column the SQL needs, comma separated; #values: the filters and the stored values they use; #SELECT: the SELECT content, one expression per item, comma separated */";

pub fn extraction_prompt(question: &str, evidence: &str, schema_text: &str) -> String {
    format!(
        "{}\n{EXTRACTION_RULE}\n/* Answer the following: {} */",
        schema_text.trim_end(),
        join_question(question, evidence)
    )
}

/// Sections of an extraction reply.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtractionReply {
    pub reason: String,
    pub columns: Vec<String>,
    pub values: String,
    pub select: Vec<String>,
}

pub fn parse_extraction_reply(reply: &str) -> ExtractionReply {
    let mut out = ExtractionReply::default();
    for (m, body) in split_sections(reply) {
        match m {
            Marker::Reason => out.reason = body,
            Marker::Columns => out.columns = split_column_list(&body),
            Marker::Values => out.values = body,
            Marker::Select => out.select = split_column_list(&body),
            _ => {}
        }
    }
    out
}

fn unquote(part: &str) -> &str {
    let p = part.trim();
    for (open, close) in [('`', '`'), ('"', '"'), ('[', ']')] {
        if p.len() >= 2 && p.starts_with(open) && p.ends_with(close) {
            return &p[1..p.len() - 1];
        }
    }
    p
}

/// Split `table.column` on the first dot outside quotes.
pub fn split_column_token(token: &str) -> (Option<&str>, &str) {
    let mut quote: Option<char> = None;
    for (i, c) in token.char_indices() {
        match (quote, c) {
            (Some(q), c) if c == q => quote = None,
            (Some(_), _) => {}
            (None, '`' | '"') => quote = Some(c),
            (None, '[') => quote = Some(']'),
            (None, '.') => return (Some(unquote(&token[..i])), unquote(&token[i + 1..])),
            _ => {}
        }
    }
    (None, unquote(token))
}

/// Column names from the model, kept only when the catalog knows them. An
/// unqualified name is kept when exactly one table has it.
pub fn validate_columns(catalog: &SchemaCatalog, tokens: &[String]) -> (ColumnSelection, Vec<String>) {
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for t in tokens {
        let r = match split_column_token(t) {
            (Some(table), column) => catalog.resolve(table, column),
            (None, column) => match catalog.tables_with_column(column)[..] {
                [only] => catalog.resolve(&only.name, column),
                _ => None,
            },
        };
        match r {
            Some(r) => keep.push((r.table, r.column)),
            None => dropped.push(t.clone()),
        }
    }
    let sel = catalog.select(keep).expect("resolved columns exist");
    (sel, dropped)
}

/// Union of the model's columns and every column whose name clears the
/// threshold against an entity; the full catalog when both are empty.
pub fn filter_columns(
    llm_columns: &ColumnSelection,
    entities: &[Entity],
    catalog: &SchemaCatalog,
    index: &ValueIndex,
    embedder: &dyn Embedder,
    threshold: f64,
) -> ColumnSelection {
    let cfg = crate::index::RetrievalConfig {
        top_k: usize::MAX,
        threshold,
    };
    let mut sel = llm_columns.clone();
    for e in entities {
        match index.search_columns(embedder, catalog, &e.text, &cfg) {
            Ok(hits) => sel = sel.union(&hits),
            Err(err) => tracing::debug!(entity = %e.text, error = %err, "column retrieval skipped"),
        }
    }
    if sel.is_empty() {
        catalog.full_selection()
    } else {
        sel
    }
}

/// Split retrieval over stored cell values for every entity, merged by
/// (table, column, text) keeping the best score, sorted descending.
pub fn retrieve_values(
    entities: &[Entity],
    index: &ValueIndex,
    embedder: &dyn Embedder,
    cfg: &crate::index::RetrievalConfig,
) -> Vec<ValueHit> {
    let mut merged: Vec<ValueHit> = Vec::new();
    for e in entities {
        let hits = match index.search_cells(embedder, &e.text, cfg, true) {
            Ok(h) => h,
            Err(err) => {
                tracing::debug!(entity = %e.text, error = %err, "value retrieval skipped");
                continue;
            }
        };
        for h in hits {
            match merged
                .iter_mut()
                .find(|m| m.table == h.table && m.column == h.column && m.text == h.text)
            {
                Some(m) => m.similarity = m.similarity.max(h.similarity),
                None => merged.push(h),
            }
        }
    }
    // Stable, so equal scores keep first-seen order.
    merged.sort_by(|a, b| b.similarity.total_cmp(&a.similarity));
    merged
}

pub fn info_align_prompt(question: &str, evidence: &str, draft_select: &[String]) -> String {
    let items: Vec<String> = draft_select.iter().map(|s| format!("- {s}")).collect();
    format!(
        "/* For each SELECT expression below, copy the phrase of the question it answers. Reply with one line per expression, in the same order, as: <phrase> refer to <expression> */\n{}\n/* Answer the following: {} */",
        items.join("\n"),
        join_question(question, evidence)
    )
}

fn find_ci(haystack: &str, needle: &str) -> Option<String> {
    let n = needle.trim();
    if n.is_empty() {
        return None;
    }
    let h = haystack.to_lowercase();
    let at = h.find(&n.to_lowercase())?;
    // Lowercasing can shift byte offsets for non-ASCII text.
    haystack.get(at..at + n.len()).map(str::to_string)
}

fn parse_pairs(reply: &str, source: &str, draft_select: &[String]) -> Option<Vec<SelectPair>> {
    let lines: Vec<&str> = reply
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("/*"))
        .collect();
    if lines.len() != draft_select.len() {
        return None;
    }
    lines
        .iter()
        .zip(draft_select)
        .map(|(l, expr)| {
            let l = l.trim_start_matches(['-', '*']).trim();
            let l = l.strip_prefix("#SELECT:").unwrap_or(l).trim();
            let phrase = l.rsplit_once(" refer to ").map_or(l, |(p, _)| p);
            find_ci(source, phrase.trim_matches(['"', '\'', '[', ']'])).map(|phrase| SelectPair {
                phrase,
                expression: expr.clone(),
            })
        })
        .collect()
}

const PHRASE_STOPS: [&str; 24] = [
    "with", "in", "of", "for", "who", "that", "which", "whose", "from", "by", "on", "at", "after",
    "before", "where", "when", "is", "are", "was", "were", "did", "does", "do", "has",
];

/// Leading words of the question up to the first connective, at most six.
pub fn leading_phrase(question: &str) -> String {
    let words: Vec<&str> = question.split_whitespace().collect();
    let mut n = 0;
    for (i, w) in words.iter().enumerate().take(6) {
        let bare = w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
        if i >= 2 && PHRASE_STOPS.contains(&bare.as_str()) {
            break;
        }
        n = i + 1;
        if w.ends_with(['?', ',', ';', '.']) {
            break;
        }
    }
    words[..n]
        .join(" ")
        .trim_end_matches(['?', ',', ';', '.'])
        .to_string()
}

fn heuristic_pairs(question: &str, evidence: &str, draft_select: &[String]) -> Vec<SelectPair> {
    let source = join_question(question, evidence);
    draft_select
        .iter()
        .enumerate()
        .map(|(i, expr)| {
            let phrase = if i == 0 {
                leading_phrase(question)
            } else {
                let (_, column) = split_column_token(expr.trim_end_matches(')'));
                let words = column.replace('_', " ");
                find_ci(&source, &words).unwrap_or_else(|| question.trim().to_string())
            };
            SelectPair {
                phrase,
                expression: expr.clone(),
            }
        })
        .collect()
}

/// Pair each SELECT expression with the question phrase it answers, one pair
/// per expression in expression order. Falls back to a heuristic when the
/// model's reply does not line up.
pub fn info_align(
    question: &str,
    evidence: &str,
    draft_select: &[String],
    llm: &dyn LlmGateway,
    cfg: &LlmConfig,
) -> Result<(Vec<SelectPair>, Option<String>), LlmError> {
    if draft_select.is_empty() {
        return Ok((Vec::new(), None));
    }
    let prompt = info_align_prompt(question, evidence, draft_select);
    let source = join_question(question, evidence);
    let reply = match llm.complete(&LlmRequest::new(Stage::InfoAlign, &prompt, cfg)) {
        Ok(c) => c.texts.into_iter().next().unwrap_or_default(),
        Err(e) if fatal(&e) => return Err(e),
        Err(e) => {
            tracing::warn!(error = %e, "info alignment degraded to heuristic");
            return Ok((
                heuristic_pairs(question, evidence, draft_select),
                Some(format!("info alignment unavailable: {e}")),
            ));
        }
    };
    Ok(match parse_pairs(&reply, &source, draft_select) {
        Some(p) => (p, None),
        None => (
            heuristic_pairs(question, evidence, draft_select),
            Some("info alignment reply did not match the SELECT items".into()),
        ),
    })
}

/// Run the whole stage for one question. Ablation flags in `cfg` bypass
/// value retrieval, column filtering and info alignment individually.
pub fn run_extraction(
    question: &str,
    evidence: &str,
    catalog: &SchemaCatalog,
    index: &ValueIndex,
    embedder: &dyn Embedder,
    llm: &dyn LlmGateway,
    cfg: &PipelineConfig,
) -> Result<ExtractionResult, LlmError> {
    let llm_cfg = cfg.extraction_llm();
    let mut notes = Vec::new();
    let mut trace = Vec::new();

    let (entities, note) = extract_entities(question, evidence, catalog, &cfg.predefined_entities, llm, &llm_cfg)?;
    notes.extend(note);

    let schema_text = render_schema(
        catalog,
        None,
        RenderOptions {
            descriptions: cfg.descriptions_in_extraction,
        },
    )
    .expect("full catalog renders");
    let prompt = extraction_prompt(question, evidence, &schema_text);
    let reply = match llm.complete(&LlmRequest::new(Stage::Extraction, &prompt, &llm_cfg)) {
        Ok(c) => parse_extraction_reply(c.texts.first().map_or("", String::as_str)),
        Err(e) if fatal(&e) => return Err(e),
        Err(e) => {
            notes.push(format!("column selection unavailable: {e}"));
            ExtractionReply::default()
        }
    };
    trace.push(TraceEvent::new(
        trace::EXTRACTION,
        serde_json::json!({
            "entities": entities.iter().map(|e| &e.text).collect::<Vec<_>>(),
            "columns": reply.columns,
            "select": reply.select,
        }),
    ));

    let value_hits = if cfg.ablation.no_value_retrieval {
        Vec::new()
    } else {
        let hits = retrieve_values(&entities, index, embedder, &cfg.values);
        trace.push(TraceEvent::new(
            trace::VALUE_RETRIEVAL,
            hits.iter()
                .map(|h| format!("{}.{} = {} ({:.3})", h.table, h.column, h.text, h.similarity))
                .collect::<Vec<_>>(),
        ));
        hits
    };

    let selection = if cfg.ablation.no_column_filtering {
        catalog.full_selection()
    } else {
        let (llm_columns, dropped) = validate_columns(catalog, &reply.columns);
        if !dropped.is_empty() {
            notes.push(format!("dropped unknown columns: {}", dropped.join(", ")));
        }
        let sel = filter_columns(&llm_columns, &entities, catalog, index, embedder, cfg.column_threshold);
        trace.push(TraceEvent::new(
            trace::COLUMN_FILTERING,
            sel.iter().map(|r| r.to_string()).collect::<Vec<_>>(),
        ));
        sel
    };
    let selection = expand_selection(catalog, &selection);

    let select_alignment = if cfg.ablation.no_info_alignment {
        Vec::new()
    } else {
        let (pairs, note) = info_align(question, evidence, &reply.select, llm, &llm_cfg)?;
        notes.extend(note);
        trace.push(TraceEvent::new(trace::INFO_ALIGNMENT, &pairs));
        pairs
    };

    let mut reason = reply.reason;
    for n in notes {
        if !reason.is_empty() {
            reason.push('\n');
        }
        reason.push_str("degraded: ");
        reason.push_str(&n);
    }
    Ok(ExtractionResult {
        entities,
        value_hits,
        selection,
        select_alignment,
        reason,
        trace,
    })
}
