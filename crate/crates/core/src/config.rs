//! Pipeline configuration, ablation switches and the published sweeps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::StyleProfile;
use crate::fewshot::DEFAULT_FEWSHOTS;
use crate::index::RetrievalConfig;
use crate::llm::LlmConfig;
use crate::refine::ExecOptions;

pub use crate::fewshot::FEWSHOT_SWEEP;

/// Candidate counts explored in the experiments.
pub const CANDIDATE_SWEEP: [usize; 4] = [1, 7, 15, 21];
pub const DEFAULT_CANDIDATES: usize = 21;
pub const DEFAULT_THRESHOLD: f64 = 0.65;

/// The rule printed in the generation example, plus a dialect note.
pub const DEFAULT_RULES: [&str; 2] = [
    "For parts involving division that contain integer types, CAST them to REAL",
    "Write SQL for SQLite: use strftime for dates and backquote names containing spaces",
];

pub const DEFAULT_PREDEFINED_ENTITIES: [&str; 4] = ["highest", "lowest", "most", "least"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Temperatures {
    pub extraction: f64,
    pub generation: f64,
    pub refinement: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Self {
            extraction: 0.0,
            generation: 0.7,
            refinement: 0.7,
        }
    }
}

/// Each flag removes one component; all false is the full pipeline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub no_extraction: bool,
    pub no_value_retrieval: bool,
    pub no_column_filtering: bool,
    pub no_info_alignment: bool,
    pub no_fewshot: bool,
    pub no_cot: bool,
    pub no_alignments: bool,
    pub no_correction: bool,
    pub no_vote: bool,
}

impl Ablation {
    pub const FLAGS: [&'static str; 9] = [
        "no_extraction",
        "no_value_retrieval",
        "no_column_filtering",
        "no_info_alignment",
        "no_fewshot",
        "no_cot",
        "no_alignments",
        "no_correction",
        "no_vote",
    ];

    fn slot(&mut self, name: &str) -> Option<&mut bool> {
        Some(match name.trim_start_matches("--").replace('-', "_").as_str() {
            "no_extraction" => &mut self.no_extraction,
            "no_value_retrieval" => &mut self.no_value_retrieval,
            "no_column_filtering" => &mut self.no_column_filtering,
            "no_info_alignment" => &mut self.no_info_alignment,
            "no_fewshot" => &mut self.no_fewshot,
            "no_cot" => &mut self.no_cot,
            "no_alignments" => &mut self.no_alignments,
            "no_correction" => &mut self.no_correction,
            "no_vote" => &mut self.no_vote,
            _ => return None,
        })
    }

    /// Set a flag by name, accepting `no_vote`, `no-vote` or `--no-vote`.
    pub fn set(&mut self, name: &str) -> Result<(), ConfigError> {
        *self
            .slot(name)
            .ok_or_else(|| ConfigError::UnknownFlag(name.to_string()))? = true;
        Ok(())
    }

    pub fn only(name: &str) -> Result<Self, ConfigError> {
        let mut a = Self::default();
        a.set(name)?;
        Ok(a)
    }

    pub fn enabled(&self) -> Vec<&'static str> {
        let mut probe = *self;
        Self::FLAGS
            .into_iter()
            .filter(|f| *probe.slot(f).expect("listed flag"))
            .collect()
    }
}

/// Reward per runtime-ratio tier, highest bound first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvesTier {
    /// Lower bound on gold time over predicted time.
    pub min_ratio: f64,
    pub reward: f64,
}

/// BIRD's published reward table.
pub fn bird_rves_tiers() -> Vec<RvesTier> {
    [(2.0, 1.25), (1.0, 1.0), (0.5, 0.75), (0.25, 0.5), (0.0, 0.25)]
        .into_iter()
        .map(|(min_ratio, reward)| RvesTier { min_ratio, reward })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub llm: LlmConfig,
    pub temperatures: Temperatures,
    pub values: RetrievalConfig,
    /// Column filtering applies only the threshold; every passing column is kept.
    pub column_threshold: f64,
    pub fewshots: usize,
    pub fewshot_same_db: bool,
    pub n_candidates: usize,
    pub rules: Vec<String>,
    pub predefined_entities: Vec<String>,
    pub descriptions_in_extraction: bool,
    pub descriptions_in_generation: bool,
    pub style: StyleProfile,
    pub align_assist: bool,
    pub exec: ExecOptions,
    pub correction_rounds: u32,
    pub rves_repeats: usize,
    pub rves_tiers: Vec<RvesTier>,
    pub ablation: Ablation,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            llm: LlmConfig::default(),
            temperatures: Temperatures::default(),
            values: RetrievalConfig {
                top_k: 5,
                threshold: DEFAULT_THRESHOLD,
            },
            column_threshold: DEFAULT_THRESHOLD,
            fewshots: DEFAULT_FEWSHOTS,
            fewshot_same_db: false,
            n_candidates: DEFAULT_CANDIDATES,
            rules: DEFAULT_RULES.iter().map(|s| s.to_string()).collect(),
            predefined_entities: DEFAULT_PREDEFINED_ENTITIES
                .iter()
                .map(|s| s.to_string())
                .collect(),
            descriptions_in_extraction: true,
            descriptions_in_generation: true,
            style: StyleProfile::default(),
            align_assist: false,
            exec: ExecOptions::default(),
            correction_rounds: 2,
            rves_repeats: 5,
            rves_tiers: bird_rves_tiers(),
            ablation: Ablation::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown ablation flag {0}")]
    UnknownFlag(String),
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        for (name, t) in [("values.threshold", self.values.threshold), ("column_threshold", self.column_threshold)] {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("{name} must lie in [0, 1], got {t}"));
            }
        }
        if self.n_candidates == 0 {
            return bad("n_candidates must be at least 1".into());
        }
        if self.values.top_k == 0 {
            return bad("values.top_k must be at least 1".into());
        }
        let t = &self.temperatures;
        if [t.extraction, t.generation, t.refinement].iter().any(|x| *x < 0.0 || !x.is_finite()) {
            return bad("temperatures must be finite and non-negative".into());
        }
        if self.exec.timing_runs == 0 || self.rves_repeats == 0 {
            return bad("timing runs must be at least 1".into());
        }
        if self.exec.timeout.is_zero() {
            return bad("exec.timeout must be positive".into());
        }
        let tiers = &self.rves_tiers;
        if tiers.is_empty() || tiers.windows(2).any(|w| w[0].min_ratio <= w[1].min_ratio) {
            return bad("rves_tiers must be non-empty with strictly decreasing min_ratio".into());
        }
        if tiers.last().is_some_and(|t| t.min_ratio > 0.0) {
            return bad("the last rves tier must start at ratio 0".into());
        }
        Ok(())
    }

    pub fn extraction_llm(&self) -> LlmConfig {
        self.llm.with_temperature(self.temperatures.extraction).with_samples(1)
    }

    pub fn generation_llm(&self) -> LlmConfig {
        self.llm
            .with_temperature(self.temperatures.generation)
            .with_samples(self.n_candidates)
    }

    pub fn refinement_llm(&self) -> LlmConfig {
        self.llm.with_temperature(self.temperatures.refinement).with_samples(1)
    }

    pub fn column_retrieval(&self) -> RetrievalConfig {
        RetrievalConfig {
            top_k: usize::MAX,
            threshold: self.column_threshold,
        }
    }

    /// Reward for a correct prediction at runtime ratio `tau`.
    pub fn rves_reward(&self, tau: f64) -> f64 {
        self.rves_tiers
            .iter()
            .find(|t| tau >= t.min_ratio)
            .map_or(0.0, |t| t.reward)
    }
}
