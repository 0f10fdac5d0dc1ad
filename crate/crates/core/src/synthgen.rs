//! N-best lists and seeded synthetic corruption of reference transcripts.
//!
//! Two error regimes are modeled: character-level spelling noise
//! (substitute / delete / insert a letter, never touching whitespace) and
//! word-level confusions drawn from a lexicon of similar-sounding words.
//! Every random draw comes from a ChaCha stream seeded per utterance, so
//! output does not depend on processing order or thread count.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, Speaker, Utterance};
use crate::{jsonl, Error, Result};

/// Largest N-best list accepted.
pub const MAX_HYPOTHESES: usize = 10;
/// Re-draws attempted when a hypothesis duplicates a higher-ranked one.
pub const MAX_REDRAWS: usize = 10;

/// Ranked ASR hypotheses for one utterance, best first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NBestList {
    pub utt_id: String,
    pub hyps: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    pub source: String,
}

impl NBestList {
    pub fn new(utt_id: impl Into<String>, hyps: Vec<String>, source: impl Into<String>) -> Result<Self> {
        let list = NBestList {
            utt_id: utt_id.into(),
            hyps,
            scores: None,
            source: source.into(),
        };
        list.validate()?;
        Ok(list)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |message: String| {
            Err(Error::NBest {
                utt_id: self.utt_id.clone(),
                message,
            })
        };
        if self.hyps.is_empty() || self.hyps.len() > MAX_HYPOTHESES {
            return err(format!("expected 1..={MAX_HYPOTHESES} hypotheses, got {}", self.hyps.len()));
        }
        if let Some(scores) = &self.scores {
            if scores.len() != self.hyps.len() {
                return err(format!("{} scores for {} hypotheses", scores.len(), self.hyps.len()));
            }
            if scores.windows(2).any(|w| w[0].partial_cmp(&w[1]).is_none_or(|o| o.is_lt())) {
                return err("scores must be weakly descending".into());
            }
        }
        Ok(())
    }

    pub fn best(&self) -> &str {
        &self.hyps[0]
    }

    pub fn others(&self) -> &[String] {
        &self.hyps[1..]
    }
}

/// Reads an `nbest.jsonl` file, validating each list and rejecting repeated
/// `utt_id`s.
pub fn load_nbest(path: &Path) -> Result<Vec<NBestList>> {
    let records: Vec<(usize, NBestList)> = jsonl::read(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for (line, list) in records {
        list.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        if !seen.insert(list.utt_id.clone()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("duplicate utt_id {:?}", list.utt_id),
            });
        }
        out.push(list);
    }
    Ok(out)
}

pub fn write_nbest(path: &Path, lists: &[NBestList]) -> Result<()> {
    jsonl::write(path, lists)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionModel {
    /// Character-level spelling noise.
    CtcSpelling,
    /// Whole-word confusions from a lexicon.
    LexicalSubstitution,
}

impl CorruptionModel {
    pub fn source_tag(self) -> &'static str {
        match self {
            CorruptionModel::CtcSpelling => "synthetic-ctc",
            CorruptionModel::LexicalSubstitution => "synthetic-lexical",
        }
    }
}

/// Which character edits [`corrupt_chars`] may pick from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharOps {
    pub substitute: bool,
    pub delete: bool,
    pub insert: bool,
}

impl Default for CharOps {
    fn default() -> Self {
        CharOps {
            substitute: true,
            delete: true,
            insert: true,
        }
    }
}

impl CharOps {
    pub const SUBSTITUTE_ONLY: CharOps = CharOps {
        substitute: true,
        delete: false,
        insert: false,
    };

    fn enabled(self) -> Vec<CharOp> {
        [
            (self.substitute, CharOp::Substitute),
            (self.delete, CharOp::Delete),
            (self.insert, CharOp::Insert),
        ]
        .into_iter()
        .filter_map(|(on, op)| on.then_some(op))
        .collect()
    }
}

#[derive(Clone, Copy, Debug)]
enum CharOp {
    Substitute,
    Delete,
    Insert,
}

pub type Lexicon = BTreeMap<String, Vec<String>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub model: CorruptionModel,
    pub base_rate: f64,
    pub rank_rate_step: f64,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub char_ops: CharOps,
    /// Falls back to [`builtin_lexicon`] when absent.
    #[serde(default)]
    pub confusion_lexicon: Option<Lexicon>,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            model: CorruptionModel::CtcSpelling,
            base_rate: 0.05,
            rank_rate_step: 0.05,
            n: 5,
            seed: 0,
            char_ops: CharOps::default(),
            confusion_lexicon: None,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.base_rate) {
            return Err(Error::Config(format!("base_rate {} outside [0, 1]", self.base_rate)));
        }
        if self.rank_rate_step.is_nan() || self.rank_rate_step < 0.0 {
            return Err(Error::Config(format!("rank_rate_step {} must be >= 0", self.rank_rate_step)));
        }
        if self.n == 0 || self.n > MAX_HYPOTHESES {
            return Err(Error::Config(format!("n must be in 1..={MAX_HYPOTHESES}, got {}", self.n)));
        }
        if self.char_ops.enabled().is_empty() {
            return Err(Error::Config("at least one character edit must be enabled".into()));
        }
        Ok(())
    }

    /// Corruption rate applied to the hypothesis at 1-based `rank`.
    pub fn rate_for_rank(&self, rank: usize) -> f64 {
        (self.base_rate + (rank.saturating_sub(1)) as f64 * self.rank_rate_step).clamp(0.0, 1.0)
    }
}

/// Seed of the per-utterance stream: first 8 bytes of
/// `SHA-256(global_seed_le || utt_id)`.
pub fn derive_seed(global_seed: u64, utt_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update(utt_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

const LETTERS: &[u8; 26] = b"abcdefghijklmnopqrstuvwxyz";

fn random_letter_except<R: Rng + ?Sized>(rng: &mut R, except: char) -> char {
    loop {
        let c = LETTERS[rng.gen_range(0..LETTERS.len())] as char;
        if c != except {
            return c;
        }
    }
}

/// Applies one random edit, with probability `rate`, to each non-whitespace
/// character.
pub fn corrupt_chars<R: Rng + ?Sized>(text: &str, rate: f64, ops: CharOps, rng: &mut R) -> String {
    let ops = ops.enabled();
    let mut out = String::with_capacity(text.len() + 8);
    for c in text.chars() {
        if c.is_whitespace() || ops.is_empty() || !rng.gen_bool(rate.clamp(0.0, 1.0)) {
            out.push(c);
            continue;
        }
        match ops[rng.gen_range(0..ops.len())] {
            CharOp::Substitute => out.push(random_letter_except(rng, c)),
            CharOp::Delete => {}
            CharOp::Insert => {
                out.push(c);
                out.push(LETTERS[rng.gen_range(0..LETTERS.len())] as char);
            }
        }
    }
    out
}

/// Replaces each word, with probability `rate`, by a lexicon candidate.
/// Surrounding punctuation, capitalization of the first letter and the
/// original whitespace are kept, so the word count never changes.
pub fn corrupt_words<R: Rng + ?Sized>(text: &str, rate: f64, lexicon: &Lexicon, rng: &mut R) -> String {
    let mut out = String::with_capacity(text.len());
    for part in text.split_inclusive(char::is_whitespace) {
        let token = part.trim_end_matches(char::is_whitespace);
        let trailing_ws = &part[token.len()..];
        if token.is_empty() {
            out.push_str(part);
            continue;
        }
        let hit = rng.gen_bool(rate.clamp(0.0, 1.0));
        let core_start = token.find(|c: char| c.is_alphanumeric() || c == '\'').unwrap_or(token.len());
        let core_end = token
            .rfind(|c: char| c.is_alphanumeric() || c == '\'')
            .map_or(core_start, |i| i + token[i..].chars().next().map_or(1, char::len_utf8));
        let core = &token[core_start..core_end.max(core_start)];
        let replacement = hit
            .then(|| lexicon.get(&core.to_lowercase()))
            .flatten()
            .and_then(|cands| cands.choose(rng));
        match replacement {
            Some(rep) => {
                out.push_str(&token[..core_start]);
                if core.chars().next().is_some_and(char::is_uppercase) {
                    let mut chars = rep.chars();
                    if let Some(first) = chars.next() {
                        out.extend(first.to_uppercase());
                        out.push_str(chars.as_str());
                    }
                } else {
                    out.push_str(rep);
                }
                out.push_str(&token[core_end.max(core_start)..]);
            }
            None => out.push_str(token),
        }
        out.push_str(trailing_ws);
    }
    out
}

fn corrupt_once<R: Rng + ?Sized>(text: &str, rate: f64, cfg: &CorruptionConfig, lexicon: &Lexicon, rng: &mut R) -> String {
    match cfg.model {
        CorruptionModel::CtcSpelling => corrupt_chars(text, rate, cfg.char_ops, rng),
        CorruptionModel::LexicalSubstitution => corrupt_words(text, rate, lexicon, rng),
    }
}

/// Generates an N-best list for `utt`. Rank `r` is corrupted at
/// [`CorruptionConfig::rate_for_rank`]; a hypothesis equal to a higher-ranked
/// one is re-drawn up to [`MAX_REDRAWS`] times and then kept.
pub fn make_nbest(utt: &Utterance, cfg: &CorruptionConfig) -> Result<NBestList> {
    cfg.validate()?;
    let builtin;
    let lexicon = match &cfg.confusion_lexicon {
        Some(l) => l,
        None => {
            builtin = builtin_lexicon();
            &builtin
        }
    };
    Ok(make_nbest_with(utt, cfg, lexicon))
}

fn make_nbest_with(utt: &Utterance, cfg: &CorruptionConfig, lexicon: &Lexicon) -> NBestList {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &utt.utt_id));
    let mut hyps: Vec<String> = Vec::with_capacity(cfg.n);
    for rank in 1..=cfg.n {
        let rate = cfg.rate_for_rank(rank);
        let mut hyp = corrupt_once(&utt.text, rate, cfg, lexicon, &mut rng);
        for _ in 0..MAX_REDRAWS {
            if !hyps.contains(&hyp) {
                break;
            }
            hyp = corrupt_once(&utt.text, rate, cfg, lexicon, &mut rng);
        }
        hyps.push(hyp);
    }
    NBestList {
        utt_id: utt.utt_id.clone(),
        hyps,
        scores: None,
        source: cfg.model.source_tag().to_string(),
    }
}

/// N-best lists for every utterance of `corpus`, in corpus order.
pub fn make_corpus_nbest(corpus: &Corpus, cfg: &CorruptionConfig) -> Result<Vec<NBestList>> {
    use rayon::prelude::*;
    cfg.validate()?;
    let lexicon = cfg.confusion_lexicon.clone().unwrap_or_else(builtin_lexicon);
    Ok(corpus
        .utterances()
        .par_iter()
        .map(|u| make_nbest_with(u, cfg, &lexicon))
        .collect())
}

const CONFUSABLE_PAIRS: &[(&str, &str)] = &[
    ("see", "sea"),
    ("there", "their"),
    ("there", "they're"),
    ("to", "two"),
    ("to", "too"),
    ("two", "too"),
    ("for", "four"),
    ("no", "know"),
    ("right", "write"),
    ("here", "hear"),
    ("one", "won"),
    ("eight", "ate"),
    ("son", "sun"),
    ("by", "buy"),
    ("by", "bye"),
    ("blue", "blew"),
    ("new", "knew"),
    ("red", "read"),
    ("meet", "meat"),
    ("would", "wood"),
    ("our", "hour"),
    ("be", "bee"),
    ("flower", "flour"),
    ("night", "knight"),
    ("wait", "weight"),
    ("week", "weak"),
    ("made", "maid"),
    ("tail", "tale"),
    ("pair", "pear"),
    ("plane", "plain"),
    ("road", "rode"),
    ("sail", "sale"),
    ("so", "sew"),
    ("whole", "hole"),
    ("wear", "where"),
    ("which", "witch"),
    ("its", "it's"),
    ("your", "you're"),
    ("cat", "cap"),
    ("cat", "bat"),
    ("bed", "bad"),
    ("big", "pig"),
    ("dog", "dock"),
    ("ball", "bowl"),
    ("car", "card"),
    ("play", "pray"),
    ("think", "sink"),
    ("three", "tree"),
    ("this", "these"),
    ("want", "won't"),
    ("went", "want"),
    ("yes", "yeah"),
    ("can", "can't"),
    ("thing", "sing"),
    ("that", "dat"),
    ("the", "a"),
    ("and", "in"),
    ("and", "an"),
    ("is", "his"),
    ("he", "she"),
    ("him", "them"),
    ("was", "were"),
    ("did", "do"),
    ("like", "light"),
    ("look", "book"),
    ("fish", "dish"),
    ("fun", "sun"),
    ("hat", "had"),
    ("house", "mouse"),
    ("toy", "boy"),
    ("game", "came"),
    ("happy", "hoppy"),
    ("mad", "mat"),
    ("sad", "said"),
    ("feel", "fill"),
    ("friend", "friends"),
    ("school", "cool"),
    ("mom", "mum"),
    ("dad", "that"),
    ("water", "walker"),
    ("rock", "rocks"),
    ("magnet", "magnets"),
    ("light", "lied"),
    ("plant", "plants"),
    ("energy", "enemy"),
    ("circuit", "circle"),
    ("battery", "bakery"),
    ("wire", "why're"),
    ("heat", "he"),
    ("sound", "sand"),
    ("push", "pushed"),
    ("pull", "pool"),
    ("seed", "seat"),
    ("leaf", "leave"),
    ("root", "route"),
    ("bug", "buck"),
    ("story", "sorry"),
    ("picture", "pitcher"),
    ("puzzle", "pizza"),
    ("annoyed", "avoid"),
    ("angry", "hungry"),
];

/// Small symmetric confusion lexicon of similar-sounding words.
pub fn builtin_lexicon() -> Lexicon {
    let mut lex = Lexicon::new();
    for &(a, b) in CONFUSABLE_PAIRS {
        lex.entry(a.to_string()).or_default().push(b.to_string());
        lex.entry(b.to_string()).or_default().push(a.to_string());
    }
    for v in lex.values_mut() {
        v.sort();
        v.dedup();
    }
    lex
}

const ADULT_LINES: &[&str] = &[
    "How are you today?",
    "What did you do at school this week?",
    "Can you tell me a story about this picture?",
    "What happens when we push the magnet closer?",
    "Do you have any friends at school?",
    "What makes you feel annoyed?",
    "Tell me about a time you were really happy.",
    "Where do you think the water goes?",
    "Why do you think the light turned on?",
    "Okay, let's look at the next one.",
    "That's right, good job!",
    "What would you do if you were sad?",
    "Can you show me how it works?",
    "What do plants need to grow?",
    "Is there anything that makes you angry?",
    "Which one is bigger, the red one or the blue one?",
    "What did you eat for breakfast?",
    "Do you want to play a game with me?",
    "How does the battery make the circuit work?",
    "What do you see in this picture?",
    "Hmm, tell me more about that.",
    "Who do you like to play with?",
    "What is the sound made of?",
    "Let's try that again.",
];

const CHILD_LINES: &[&str] = &[
    "I don't know.",
    "Yes.",
    "No.",
    "Good.",
    "I went to school.",
    "I like to play with my friends.",
    "The magnet pulls the other magnet.",
    "It goes down the drain.",
    "Because the battery has energy.",
    "I want to play the game.",
    "My mom made pancakes.",
    "Um, the red one.",
    "The blue one is bigger.",
    "When my brother takes my toys.",
    "I feel sad when my dog is sick.",
    "They need water and sun.",
    "I see a boy and a cat.",
    "Uh, I think it's heavy.",
    "The light turned on because the wire touched it.",
    "I was happy at my birthday.",
    "Me and Sam play tag.",
    "It's made of vibrations.",
    "I can't remember.",
    "Can I have a sticker?",
    "The seed grows into a plant.",
    "We read a book about fish.",
    "He pushed me at recess.",
    "Okay.",
    "(laughs)",
];

/// Options for [`synthetic_corpus`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticCorpusConfig {
    pub sessions: usize,
    pub turns_per_session: usize,
    pub seed: u64,
}

/// A child–adult conversation corpus drawn from a fixed bank of turns.
///
/// Sessions alternate adult and child turns starting with the adult.
/// Durations are roughly 0.4 s per word. `utt_id`s are
/// `syn-s{session:03}-u{index:03}`.
pub fn synthetic_corpus(cfg: SyntheticCorpusConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut utterances = Vec::with_capacity(cfg.sessions * cfg.turns_per_session);
    for s in 0..cfg.sessions {
        let session_id = format!("syn-s{s:03}");
        for i in 0..cfg.turns_per_session {
            let speaker = if i % 2 == 0 { Speaker::Adult } else { Speaker::Child };
            let bank = match speaker {
                Speaker::Adult => ADULT_LINES,
                Speaker::Child => CHILD_LINES,
            };
            let text = bank.choose(&mut rng).expect("non-empty bank").to_string();
            let words = text.split_whitespace().count() as f64;
            let duration = ((words * 0.4 + rng.gen_range(0.2..1.0)) * 100.0).round() / 100.0;
            utterances.push(Utterance {
                utt_id: format!("{session_id}-u{i:03}"),
                session_id: session_id.clone(),
                index: i,
                speaker,
                text,
                duration_s: Some(duration),
            });
        }
    }
    Corpus::new(format!("synthetic-{}", cfg.seed), utterances).expect("generated ids are unique")
}
