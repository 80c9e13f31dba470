//! Generation agent: prompt assembly and candidate sampling.

use crate::cot::{parse_cot, CoTOutput};
use crate::extraction::SelectPair;
use crate::fewshot::{join_question, FewShot};
use crate::index::ValueHit;
use crate::llm::{LlmConfig, LlmError, LlmGateway, LlmRequest, Stage};
use crate::schema::ColumnRef;

pub const COT_INSTRUCTION: &str =
    "Reply in order with #reason:, #columns:, #values:, #SELECT:, #SQL-like: and #SQL:";
pub const SQL_ONLY_INSTRUCTION: &str = "Reply with #SQL: followed by the SQL only";

/// Everything the generation prompt is built from.
#[derive(Debug, Clone, Copy)]
pub struct GenerationInput<'a> {
    pub fewshots: &'a [&'a FewShot],
    pub schema_text: &'a str,
    pub value_hits: &'a [ValueHit],
    pub rules: &'a [String],
    pub question: &'a str,
    pub evidence: &'a str,
    pub select_alignment: &'a [SelectPair],
    /// Ask for the structured reasoning fields before the SQL.
    pub cot: bool,
}

fn value_line(h: &ValueHit) -> String {
    format!(
        "{} = '{}'",
        ColumnRef::new(&h.table, &h.column),
        h.text.replace('\'', "''")
    )
}

/// Few-shots, schema, similar values, rules, question, then the SELECT
/// content the answer should have. Empty sections are left out.
pub fn build_generation_prompt(input: &GenerationInput<'_>) -> String {
    let mut blocks: Vec<String> = Vec::new();
    if !input.fewshots.is_empty() {
        let shots: Vec<String> = input
            .fewshots
            .iter()
            .map(|s| {
                if input.cot {
                    s.render()
                } else {
                    format!("/* Answer the following: {} */\n#SQL: {}", s.full_question(), s.sql)
                }
            })
            .collect();
        blocks.push(shots.join("\n\n"));
    }
    blocks.push(input.schema_text.trim_end().to_string());
    if !input.value_hits.is_empty() {
        let lines: Vec<String> = input.value_hits.iter().map(value_line).collect();
        blocks.push(format!("/* Similar values */\n{}", lines.join("\n")));
    }
    let mut rules: Vec<String> = input.rules.iter().map(|r| format!("- {r}")).collect();
    rules.push(format!(
        "- {}",
        if input.cot { COT_INSTRUCTION } else { SQL_ONLY_INSTRUCTION }
    ));
    blocks.push(format!("/* Rules */\n{}", rules.join("\n")));
    let mut ask = format!(
        "/* Answer the following: {} */",
        join_question(input.question, input.evidence)
    );
    if !input.select_alignment.is_empty() {
        let phrases: Vec<&str> = input
            .select_alignment
            .iter()
            .map(|p| p.phrase.as_str())
            .collect();
        ask.push_str(&format!("\nSELECT content: [{}]", phrases.join(", ")));
    }
    blocks.push(ask);
    blocks.join("\n\n")
}

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("none of the {replies} replies carried a #SQL: line")]
    NoCandidates { replies: usize },
}

/// Sample `cfg.n_samples` replies and parse each; malformed replies are
/// dropped, keeping the rest in reply order.
pub fn generate_candidates(
    prompt: &str,
    llm: &dyn LlmGateway,
    cfg: &LlmConfig,
) -> Result<Vec<CoTOutput>, GenerationError> {
    let completion = llm.complete(&LlmRequest::new(Stage::Generation, prompt, cfg))?;
    let replies = completion.texts.len();
    let pool: Vec<CoTOutput> = completion
        .texts
        .iter()
        .filter_map(|t| match parse_cot(t) {
            Ok(c) => Some(c),
            Err(e) => {
                tracing::debug!(error = %e, "dropping malformed candidate");
                None
            }
        })
        .collect();
    if pool.is_empty() {
        return Err(GenerationError::NoCandidates { replies });
    }
    Ok(pool)
}
