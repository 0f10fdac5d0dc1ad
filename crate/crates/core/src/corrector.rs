//! Prompt → completion → post-processing, per utterance and per session.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{CompletionBackend, GenerationParams, DEFAULT_CONCURRENCY};
use crate::corpus::{Corpus, Utterance};
use crate::promptgen::{build_prompt, PromptTemplate, Turn};
use crate::synthgen::NBestList;
use crate::{jsonl, Error, Result};

pub use crate::promptgen::{ContextMode, ContextWindow};

/// A reply longer than the best hypothesis by more than this many words is
/// discarded.
pub const FALLBACK_MARGIN_WORDS: usize = 3;

/// Final transcript for one utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionResult {
    pub utt_id: String,
    pub corrected: String,
    #[serde(rename = "raw_llm")]
    pub raw_output: String,
    #[serde(rename = "fallback")]
    pub fallback_applied: bool,
    pub context_k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn load_corrections(path: &Path) -> Result<Vec<CorrectionResult>> {
    Ok(jsonl::read(path)?.into_iter().map(|(_, r)| r).collect())
}

pub fn write_corrections(path: &Path, results: &[CorrectionResult]) -> Result<()> {
    jsonl::write(path, results)
}

pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

fn strip_quotes(s: &str) -> &str {
    const PAIRS: [(char, char); 4] = [('"', '"'), ('\'', '\''), ('\u{201C}', '\u{201D}'), ('`', '`')];
    for (open, close) in PAIRS {
        if let Some(inner) = s.strip_prefix(open).and_then(|r| r.strip_suffix(close)) {
            return inner.trim();
        }
    }
    s
}

fn strip_speaker_tag(s: &str) -> &str {
    for tag in ["child:", "adult:"] {
        if s.len() >= tag.len() && s.is_char_boundary(tag.len()) && s[..tag.len()].eq_ignore_ascii_case(tag) {
            return s[tag.len()..].trim_start();
        }
    }
    s
}

/// First non-empty line of a reply, with surrounding quotes and a leading
/// `Child:`/`Adult:` tag removed.
pub fn clean_output(raw: &str) -> String {
    let line = raw.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let s = strip_quotes(line);
    let s = strip_speaker_tag(s);
    strip_quotes(s.trim()).to_string()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PostProcessed {
    pub corrected: String,
    pub fallback_applied: bool,
}

/// Cleans `raw` and, when enabled, reverts to `best` if the cleaned reply
/// has more than `word_count(best) + 3` whitespace tokens.
pub fn postprocess(raw: &str, best: &str, fallback_enabled: bool) -> PostProcessed {
    let cleaned = clean_output(raw);
    if fallback_enabled && word_count(&cleaned) > word_count(best) + FALLBACK_MARGIN_WORDS {
        PostProcessed {
            corrected: best.to_string(),
            fallback_applied: true,
        }
    } else {
        PostProcessed {
            corrected: cleaned,
            fallback_applied: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CorrectorConfig {
    pub mode: ContextMode,
    pub template: PromptTemplate,
    pub params: GenerationParams,
    pub fallback_enabled: bool,
    /// Upper bound on concurrent backend calls.
    pub concurrency: usize,
}

impl CorrectorConfig {
    /// Default template for `mode`, fallback on.
    pub fn new(mode: ContextMode) -> Self {
        let template = match mode {
            ContextMode::NoContext => PromptTemplate::default_no_context(),
            ContextMode::Previous(_) => PromptTemplate::default_context(),
        };
        CorrectorConfig {
            mode,
            template,
            params: GenerationParams::default(),
            fallback_enabled: true,
            concurrency: DEFAULT_CONCURRENCY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.template.kind() != self.mode.template_kind() {
            return Err(Error::Config(format!(
                "{} template cannot be used in {} mode",
                self.template.kind().as_str(),
                self.mode
            )));
        }
        if self.concurrency == 0 {
            return Err(Error::Config("concurrency must be at least 1".into()));
        }
        self.params.validate()
    }
}

/// Corrects one utterance. Backend failures degrade to the best hypothesis
/// with `error` set; prompt construction failures are returned.
pub fn correct_utterance(
    utt: &Utterance,
    nbest: &NBestList,
    history: &[Turn],
    cfg: &CorrectorConfig,
    backend: &dyn CompletionBackend,
) -> Result<CorrectionResult> {
    let prompt = build_prompt(utt, nbest, history, cfg.mode, &cfg.template)?;
    let result = match backend.complete(&prompt, &cfg.params) {
        Ok(raw) => {
            let post = postprocess(&raw, &prompt.best_hypothesis, cfg.fallback_enabled);
            CorrectionResult {
                utt_id: utt.utt_id.clone(),
                corrected: post.corrected,
                raw_output: raw,
                fallback_applied: post.fallback_applied,
                context_k: prompt.context_k,
                error: None,
            }
        }
        Err(e) => {
            log::warn!("{}: backend {} failed, keeping best hypothesis: {e}", utt.utt_id, backend.name());
            CorrectionResult {
                utt_id: utt.utt_id.clone(),
                corrected: prompt.best_hypothesis.clone(),
                raw_output: String::new(),
                fallback_applied: false,
                context_k: prompt.context_k,
                error: Some(e.to_string()),
            }
        }
    };
    Ok(result)
}

fn lookup<'a>(nbests: &HashMap<&str, &'a NBestList>, utt: &Utterance) -> Result<&'a NBestList> {
    nbests
        .get(utt.utt_id.as_str())
        .copied()
        .ok_or_else(|| Error::MissingNBest(utt.utt_id.clone()))
}

/// Corrects the utterances of one session in index order. In context modes
/// the history of each turn is the corrected text of the turns before it.
pub fn correct_session(
    utterances: &[Utterance],
    nbests: &HashMap<&str, &NBestList>,
    cfg: &CorrectorConfig,
    backend: &dyn CompletionBackend,
) -> Result<Vec<CorrectionResult>> {
    let k = cfg.mode.k();
    let mut history: Vec<Turn> = Vec::new();
    let mut out = Vec::with_capacity(utterances.len());
    for utt in utterances {
        let nbest = lookup(nbests, utt)?;
        let start = history.len().saturating_sub(k);
        let result = correct_utterance(utt, nbest, &history[start..], cfg, backend)?;
        if k > 0 {
            history.push(Turn::new(utt.speaker, result.corrected.clone()));
        }
        out.push(result);
    }
    Ok(out)
}

/// Corrects a whole corpus, returning results in corpus order.
///
/// Without context every utterance is independent; with context sessions
/// run in parallel but each session is strictly sequential. At most
/// `cfg.concurrency` backend calls are in flight.
pub fn correct_corpus(
    corpus: &Corpus,
    nbests: &[NBestList],
    cfg: &CorrectorConfig,
    backend: &dyn CompletionBackend,
) -> Result<Vec<CorrectionResult>> {
    cfg.validate()?;
    let by_id: HashMap<&str, &NBestList> = nbests.iter().map(|n| (n.utt_id.as_str(), n)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.concurrency)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cfg.mode {
        ContextMode::NoContext => corpus
            .utterances()
            .par_iter()
            .map(|u| correct_utterance(u, lookup(&by_id, u)?, &[], cfg, backend))
            .collect(),
        ContextMode::Previous(_) => {
            let sessions: Vec<&[Utterance]> = corpus.sessions().map(|(_, utts)| utts).collect();
            let per_session: Vec<Vec<CorrectionResult>> = sessions
                .par_iter()
                .map(|utts| correct_session(utts, &by_id, cfg, backend))
                .collect::<Result<_>>()?;
            Ok(per_session.into_iter().flatten().collect())
        }
    })
}

/// Number of results that degraded to the best hypothesis after a backend
/// error.
pub fn degraded_count(results: &[CorrectionResult]) -> usize {
    results.iter().filter(|r| r.error.is_some()).count()
}
