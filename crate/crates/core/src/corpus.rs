//! Conversation manifests: loading, validation, duration filtering and
//! session-level two-fold splits.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{jsonl, Error, Result};

/// Default maximum utterance duration, in seconds.
pub const DEFAULT_MAX_DURATION_S: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Child,
    Adult,
}

impl Speaker {
    pub const ALL: [Speaker; 2] = [Speaker::Child, Speaker::Adult];

    /// On-disk spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::Child => "child",
            Speaker::Adult => "adult",
        }
    }

    /// Capitalized role name used in prompts and reports.
    pub fn label(self) -> &'static str {
        match self {
            Speaker::Child => "Child",
            Speaker::Adult => "Adult",
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Speaker {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "child" => Ok(Speaker::Child),
            "adult" => Ok(Speaker::Adult),
            other => Err(Error::UnknownSpeaker(other.to_string())),
        }
    }
}

/// One turn of one speaker in one session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub session_id: String,
    pub utt_id: String,
    pub index: usize,
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
    #[default]
    Unsplit,
}

/// An ordered, validated set of utterances.
///
/// Utterances are sorted by `(session_id, index)` and `utt_id`s are unique.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub split_tag: SplitTag,
    utterances: Vec<Utterance>,
}

/// Checks applied when reading a manifest.
#[derive(Clone, Copy, Debug, Default)]
pub struct ManifestOptions {
    /// Accept gaps in session indices, as left behind by
    /// [`filter_max_duration`]. Indices must still be strictly increasing.
    pub allow_index_gaps: bool,
}

#[derive(Deserialize)]
struct RawRecord {
    session_id: String,
    utt_id: String,
    index: usize,
    speaker: String,
    text: String,
    #[serde(default)]
    duration_s: Option<f64>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

impl Corpus {
    /// Builds a corpus from utterances in any order, enforcing uniqueness of
    /// `utt_id` and of `(session_id, index)`. Index contiguity is not checked.
    pub fn new(name: impl Into<String>, utterances: Vec<Utterance>) -> Result<Self> {
        let lines: Vec<usize> = (1..=utterances.len()).collect();
        Self::build(name.into(), utterances, &lines, ManifestOptions { allow_index_gaps: true })
    }

    fn build(name: String, utterances: Vec<Utterance>, lines: &[usize], opts: ManifestOptions) -> Result<Self> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (u, &line) in utterances.iter().zip(lines) {
            if let Some(&first) = seen.get(u.utt_id.as_str()) {
                return Err(Error::DuplicateUttId {
                    utt_id: u.utt_id.clone(),
                    first_line: first,
                    second_line: line,
                });
            }
            seen.insert(&u.utt_id, line);
        }

        let mut utterances = utterances;
        utterances.sort_by(|a, b| (&a.session_id, a.index).cmp(&(&b.session_id, b.index)));

        for w in utterances.windows(2) {
            if w[0].session_id == w[1].session_id && w[0].index == w[1].index {
                return Err(Error::Config(format!(
                    "session {:?} has two utterances with index {} ({:?}, {:?})",
                    w[0].session_id, w[0].index, w[0].utt_id, w[1].utt_id
                )));
            }
        }

        let corpus = Corpus {
            name,
            split_tag: SplitTag::Unsplit,
            utterances,
        };
        if !opts.allow_index_gaps {
            corpus.check_contiguous()?;
        }
        Ok(corpus)
    }

    fn check_contiguous(&self) -> Result<()> {
        for (session_id, utts) in self.sessions() {
            for (expected, u) in utts.iter().enumerate() {
                if u.index != expected {
                    return Err(Error::NonContiguousSession {
                        session_id: session_id.to_string(),
                        expected,
                        found: u.index,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn get(&self, utt_id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.utt_id == utt_id)
    }

    /// `utt_id → utterance` index for repeated lookups.
    pub fn by_id(&self) -> HashMap<&str, &Utterance> {
        self.utterances.iter().map(|u| (u.utt_id.as_str(), u)).collect()
    }

    /// Sessions in sorted order, each as an index-ordered slice.
    pub fn sessions(&self) -> impl Iterator<Item = (&str, &[Utterance])> {
        self.utterances
            .chunk_by(|a, b| a.session_id == b.session_id)
            .map(|chunk| (chunk[0].session_id.as_str(), chunk))
    }

    pub fn session_ids(&self) -> Vec<&str> {
        self.sessions().map(|(id, _)| id).collect()
    }

    /// Utterances whose session is in `sessions`.
    pub fn restrict_to(&self, sessions: &BTreeSet<String>) -> Corpus {
        Corpus {
            name: self.name.clone(),
            split_tag: self.split_tag,
            utterances: self
                .utterances
                .iter()
                .filter(|u| sessions.contains(&u.session_id))
                .cloned()
                .collect(),
        }
    }
}

/// Loads and validates a `utterances.jsonl` manifest, requiring contiguous
/// 0-based indices in every session.
pub fn load_manifest(path: &Path) -> Result<Corpus> {
    load_manifest_with(path, ManifestOptions::default())
}

pub fn load_manifest_with(path: &Path, opts: ManifestOptions) -> Result<Corpus> {
    let records: Vec<(usize, RawRecord)> = jsonl::read(path)?;
    let mut utterances = Vec::with_capacity(records.len());
    let mut lines = Vec::with_capacity(records.len());
    for (line, r) in records {
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let speaker = r.speaker.parse::<Speaker>().map_err(|e| parse_err(e.to_string()))?;
        if let Some(d) = r.duration_s {
            if d.is_nan() || d < 0.0 {
                return Err(parse_err(format!("duration_s must be non-negative, got {d}")));
            }
        }
        if !r.extra.is_empty() {
            let keys: Vec<&str> = r.extra.keys().map(String::as_str).collect();
            log::warn!("{}:{line}: ignoring unknown fields {keys:?}", path.display());
        }
        utterances.push(Utterance {
            session_id: r.session_id,
            utt_id: r.utt_id,
            index: r.index,
            speaker,
            text: r.text,
            duration_s: r.duration_s,
        });
        lines.push(line);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Corpus::build(name, utterances, &lines, opts)
}

pub fn write_manifest(path: &Path, corpus: &Corpus) -> Result<()> {
    jsonl::write(path, corpus.utterances())
}

/// Outcome of [`filter_max_duration`].
#[derive(Clone, Debug, PartialEq)]
pub struct FilterReport {
    pub max_s: f64,
    pub removed: usize,
    pub no_duration: usize,
    /// Sessions left with index gaps.
    pub gapped_sessions: Vec<String>,
}

/// Drops utterances strictly longer than `max_s`. Utterances without a
/// duration are kept and tallied. Indices are not renumbered.
pub fn filter_max_duration(corpus: &Corpus, max_s: f64) -> (Corpus, FilterReport) {
    let mut removed = 0;
    let mut no_duration = 0;
    let mut gapped = BTreeSet::new();
    let mut kept = Vec::with_capacity(corpus.len());
    for u in corpus.utterances() {
        match u.duration_s {
            Some(d) if d > max_s => {
                removed += 1;
                gapped.insert(u.session_id.clone());
            }
            Some(_) => kept.push(u.clone()),
            None => {
                no_duration += 1;
                kept.push(u.clone());
            }
        }
    }
    let filtered = Corpus {
        name: corpus.name.clone(),
        split_tag: corpus.split_tag,
        utterances: kept,
    };
    // A session is only gapped if something after the removed turn survived;
    // trailing removals leave a contiguous prefix.
    let gapped_sessions = filtered
        .sessions()
        .filter(|(id, utts)| gapped.contains(*id) && utts.iter().enumerate().any(|(i, u)| u.index != i))
        .map(|(id, _)| id.to_string())
        .collect();
    (
        filtered,
        FilterReport {
            max_s,
            removed,
            no_duration,
            gapped_sessions,
        },
    )
}

/// Session-level partition of a corpus into two folds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldAssignment {
    pub fold_a: BTreeSet<String>,
    pub fold_b: BTreeSet<String>,
    pub seed: u64,
}

/// Splits sessions into two folds of sizes `ceil(n/2)` and `floor(n/2)`.
/// Deterministic for a given seed and session set.
pub fn split_two_fold(corpus: &Corpus, seed: u64) -> Result<FoldAssignment> {
    let mut sessions: Vec<String> = corpus.session_ids().into_iter().map(String::from).collect();
    if sessions.len() < 2 {
        return Err(Error::TooFewSessions(sessions.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sessions.shuffle(&mut rng);
    let half = sessions.len().div_ceil(2);
    let fold_b = sessions.split_off(half);
    Ok(FoldAssignment {
        fold_a: sessions.into_iter().collect(),
        fold_b: fold_b.into_iter().collect(),
        seed,
    })
}
