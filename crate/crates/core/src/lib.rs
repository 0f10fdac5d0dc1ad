//! LLM-based error correction for conversational ASR transcripts.
//!
//! The crate covers the whole loop: loading conversation manifests, turning
//! N-best hypothesis lists into correction prompts (with or without previous
//! conversation turns), sending them to a completion backend, applying the
//! length-based fallback, and scoring the result with a normalized word error
//! rate broken down by speaker and utterance length.
//!
//! Scoring is generic over the scalar used for rates ([`Scalar`]); the
//! aliases at the crate root fix it to `f64`, `f32` or an exact rational.

pub mod backend;
pub mod corpus;
pub mod corrector;
mod error;
pub mod jsonl;
pub mod metrics;
pub mod promptgen;
pub mod report;
pub mod scalar;
pub mod synthgen;
pub mod textnorm;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use corpus::{Corpus, FoldAssignment, Speaker, SplitTag, Utterance};
pub use corrector::{ContextMode, CorrectionResult};
pub use metrics::{AlignmentStats, BucketScheme};
pub use promptgen::{PromptInstance, PromptTemplate, SftRecord};
pub use synthgen::{CorruptionConfig, NBestList};
pub use textnorm::{Normalizer, NormalizerConfig};

/// Exact rational used where rates must compare without rounding.
pub type Exact = num_rational::Rational64;

/// Per-utterance score row with `f64` rates.
pub type EvalRow = metrics::EvalRow<f64>;
/// Per-utterance score row with `f32` rates.
pub type EvalRowF32 = metrics::EvalRow<f32>;
/// Per-utterance score row with exact rational rates.
pub type ExactEvalRow = metrics::EvalRow<Exact>;

/// Corpus-level summary with `f64` rates.
pub type EvalSummary = metrics::EvalSummary<f64>;
/// Corpus-level summary with `f32` rates.
pub type EvalSummaryF32 = metrics::EvalSummary<f32>;
/// Corpus-level summary with exact rational rates.
pub type ExactEvalSummary = metrics::EvalSummary<Exact>;

/// Schema versions of every file format read or written by the crate.
pub const SCHEMA_VERSIONS: &[(&str, u32)] = &[
    ("utterances.jsonl", 1),
    ("nbest.jsonl", 1),
    ("corrections.jsonl", 1),
    ("prompts.jsonl", 1),
    ("sft.jsonl", 1),
    ("eval_rows.csv", 1),
    ("buckets.csv", 1),
    ("template", 1),
    ("normalizer.json", 1),
];
