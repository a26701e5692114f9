//! Output validation gate. Generated chunks reach the consumer only after
//! every registered validator has returned Pass or Flag for them; a Block,
//! or a validator that panics, halts release for good.

mod corpus;
mod gate;
mod rules;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corpus::{evaluate_corpus, load_corpus, measure_overhead, CategoryMetrics, CorpusItem, OverheadReport};
pub use gate::{gate_stream, ungated_baseline, ChunkStream, FlagRecord, GatedOutput, Mode, ReleaseRecord, Terminal};
pub use rules::{load_rules, parse_rules, Action, RuleValidator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    HarmfulContent,
    PrivacyLeak,
    RangeCheck,
    /// Stand-in for hallucination detection: references in the output must appear in the input.
    ConsistencyCheck,
}

impl Category {
    pub const ALL: [Category; 4] =
        [Category::HarmfulContent, Category::PrivacyLeak, Category::RangeCheck, Category::ConsistencyCheck];

    pub fn name(self) -> &'static str {
        match self {
            Category::HarmfulContent => "harmful_content",
            Category::PrivacyLeak => "privacy_leak",
            Category::RangeCheck => "range_check",
            Category::ConsistencyCheck => "consistency_check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Flag(String),
    Block(String),
}

impl Verdict {
    pub fn is_block(&self) -> bool {
        matches!(self, Verdict::Block(_))
    }

    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

/// What a validator sees besides the chunk itself.
#[derive(Debug, Clone, Copy)]
pub struct ChunkContext<'a> {
    pub index: usize,
    /// Everything released before this chunk.
    pub prior: &'a str,
    /// Identifiers of the input the output may cite.
    pub sources: &'a [String],
}

/// A deterministic, side-effect-free check.
pub trait Validator: Send + Sync {
    fn name(&self) -> &str;
    fn category(&self) -> Category;
    fn check(&self, chunk: &str, ctx: &ChunkContext<'_>) -> Verdict;
}

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("rule file: {0}")]
    Rules(String),
    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
