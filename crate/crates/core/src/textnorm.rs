//! English text normalization applied to both sides of a WER comparison.
//!
//! Six steps run in a fixed order:
//!
//! 1. lowercase (typographic apostrophes are folded to `'`)
//! 2. remove `[...]` and `(...)` annotations
//! 3. expand contractions from a lookup table
//! 4. drop filler tokens
//! 5. strip punctuation: apostrophes are deleted, every other non-alphanumeric
//!    character becomes a space
//! 6. collapse whitespace
//!
//! Steps 3 and 4 operate on word runs (maximal sequences of alphanumerics and
//! apostrophes). A run containing apostrophes also matches an
//! apostrophe-free key once its apostrophes are removed, so that step 5
//! cannot create a word a second pass would rewrite. Expansions must not
//! themselves contain table keys or fillers. Digits are left as digits.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Lowercase,
    RemoveAnnotations,
    ExpandContractions,
    DropFillers,
    StripPunctuation,
    CollapseWhitespace,
}

impl Step {
    pub const ALL: [Step; 6] = [
        Step::Lowercase,
        Step::RemoveAnnotations,
        Step::ExpandContractions,
        Step::DropFillers,
        Step::StripPunctuation,
        Step::CollapseWhitespace,
    ];
}

const CONTRACTIONS: &[(&str, &str)] = &[
    ("ain't", "aint"),
    ("aren't", "are not"),
    ("can't", "can not"),
    ("cannot", "can not"),
    ("couldn't", "could not"),
    ("didn't", "did not"),
    ("doesn't", "does not"),
    ("don't", "do not"),
    ("hadn't", "had not"),
    ("hasn't", "has not"),
    ("haven't", "have not"),
    ("isn't", "is not"),
    ("mightn't", "might not"),
    ("mustn't", "must not"),
    ("needn't", "need not"),
    ("shouldn't", "should not"),
    ("wasn't", "was not"),
    ("weren't", "were not"),
    ("won't", "will not"),
    ("wouldn't", "would not"),
    ("i'm", "i am"),
    ("you're", "you are"),
    ("we're", "we are"),
    ("they're", "they are"),
    ("what're", "what are"),
    ("who're", "who are"),
    ("he's", "he is"),
    ("she's", "she is"),
    ("it's", "it is"),
    ("that's", "that is"),
    ("what's", "what is"),
    ("there's", "there is"),
    ("here's", "here is"),
    ("where's", "where is"),
    ("who's", "who is"),
    ("how's", "how is"),
    ("let's", "let us"),
    ("i've", "i have"),
    ("you've", "you have"),
    ("we've", "we have"),
    ("they've", "they have"),
    ("could've", "could have"),
    ("would've", "would have"),
    ("should've", "should have"),
    ("might've", "might have"),
    ("i'll", "i will"),
    ("you'll", "you will"),
    ("he'll", "he will"),
    ("she'll", "she will"),
    ("it'll", "it will"),
    ("we'll", "we will"),
    ("they'll", "they will"),
    ("that'll", "that will"),
    ("what'll", "what will"),
    ("there'll", "there will"),
    ("i'd", "i would"),
    ("you'd", "you would"),
    ("he'd", "he would"),
    ("she'd", "she would"),
    ("we'd", "we would"),
    ("they'd", "they would"),
    ("y'all", "you all"),
    ("ma'am", "madam"),
    ("gonna", "going to"),
    ("wanna", "want to"),
    ("gotta", "got to"),
    ("kinda", "kind of"),
    ("sorta", "sort of"),
    ("dunno", "do not know"),
    ("imma", "i am going to"),
    ("i'ma", "i am going to"),
    ("woulda", "would have"),
    ("coulda", "could have"),
    ("shoulda", "should have"),
];

const FILLERS: &[&str] = &["hmm", "mm", "mhm", "mmm", "uh", "um"];

/// Tables and step selection for [`Normalizer`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizerConfig {
    pub contraction_table: BTreeMap<String, String>,
    pub filler_tokens: BTreeSet<String>,
    pub enabled_steps: Vec<Step>,
}

impl Default for NormalizerConfig {
    fn default() -> Self {
        NormalizerConfig {
            contraction_table: CONTRACTIONS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            filler_tokens: FILLERS.iter().map(|s| s.to_string()).collect(),
            enabled_steps: Step::ALL.to_vec(),
        }
    }
}

impl NormalizerConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: NormalizerConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !self.enabled_steps.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(format!(
                "enabled_steps must follow the fixed order {:?} without repeats",
                Step::ALL
            )));
        }
        let bad_key = |k: &String| k.is_empty() || k.chars().any(|c| c.is_uppercase() || !is_word_char(c));
        if let Some(k) = self.contraction_table.keys().find(|k| bad_key(k)) {
            return Err(Error::Config(format!("contraction key {k:?} must be a lowercase word")));
        }
        if let Some(k) = self.filler_tokens.iter().find(|k| bad_key(k)) {
            return Err(Error::Config(format!("filler token {k:?} must be a lowercase word")));
        }
        for (k, v) in &self.contraction_table {
            if let Some(w) = v
                .split_whitespace()
                .find(|w| self.contraction_table.contains_key(*w) || self.filler_tokens.contains(*w))
            {
                return Err(Error::Config(format!(
                    "expansion of {k:?} contains {w:?}, which would be rewritten again"
                )));
            }
        }
        Ok(())
    }
}

/// Characters that survive punctuation stripping, plus the apostrophe.
/// Letters with no lowercase form (such as `ℤ`) count as separators here
/// too, or dropping them later could expose a filler.
fn is_word_char(c: char) -> bool {
    c == '\'' || (c.is_alphanumeric() && !c.is_uppercase())
}

fn is_apostrophe(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}' | '\u{2018}' | '\u{02BC}')
}

/// A validated normalizer ready to run.
#[derive(Clone, Debug)]
pub struct Normalizer {
    cfg: NormalizerConfig,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer::new(NormalizerConfig::default()).expect("built-in config is valid")
    }
}

impl Normalizer {
    pub fn new(cfg: NormalizerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Normalizer { cfg })
    }

    pub fn config(&self) -> &NormalizerConfig {
        &self.cfg
    }

    pub fn normalize(&self, text: &str) -> String {
        let mut s = text.to_string();
        for step in &self.cfg.enabled_steps {
            s = match step {
                Step::Lowercase => lowercase(&s),
                Step::RemoveAnnotations => remove_annotations(&s),
                Step::ExpandContractions => map_word_runs(&s, |w| self.expand(w)),
                Step::DropFillers => map_word_runs(&s, |w| self.is_filler(w).then(String::new)),
                Step::StripPunctuation => strip_punctuation(&s),
                Step::CollapseWhitespace => s.split_whitespace().collect::<Vec<_>>().join(" "),
            };
        }
        s
    }

    /// Normalizes and splits into words.
    pub fn words(&self, text: &str) -> Vec<String> {
        self.normalize(text).split_whitespace().map(String::from).collect()
    }

    fn expand(&self, word: &str) -> Option<String> {
        self.cfg
            .contraction_table
            .get(word)
            .or_else(|| self.bare_lookup(word).and_then(|b| self.cfg.contraction_table.get(&b)))
            .cloned()
    }

    fn is_filler(&self, word: &str) -> bool {
        self.cfg.filler_tokens.contains(word)
            || self.bare_lookup(word).is_some_and(|b| self.cfg.filler_tokens.contains(&b))
    }

    /// `word` without apostrophes, if it had any. Only keys that contain no
    /// apostrophe can match this way ("gon'na" → "gonna", but "we'l'l" is
    /// not "we'll").
    fn bare_lookup(&self, word: &str) -> Option<String> {
        word.contains('\'').then(|| word.replace('\'', ""))
    }
}

/// Normalizes with the built-in configuration.
pub fn normalize(text: &str) -> String {
    thread_local! {
        static DEFAULT: Normalizer = Normalizer::default();
    }
    DEFAULT.with(|n| n.normalize(text))
}

fn lowercase(s: &str) -> String {
    s.chars()
        .map(|c| if is_apostrophe(c) { '\'' } else { c })
        .flat_map(char::to_lowercase)
        .collect()
}

/// Removes balanced `[...]` and `(...)` spans, including nested ones.
/// Unbalanced brackets are left for punctuation stripping.
fn remove_annotations(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut keep = vec![true; chars.len()];
    let mut stack: Vec<(char, usize)> = Vec::new();
    for (i, &c) in chars.iter().enumerate() {
        match c {
            '[' | '(' => stack.push((c, i)),
            ']' | ')' => {
                let open = if c == ']' { '[' } else { '(' };
                if let Some(pos) = stack.iter().rposition(|&(o, _)| o == open) {
                    let (_, start) = stack[pos];
                    stack.truncate(pos);
                    keep[start..=i].iter_mut().for_each(|k| *k = false);
                }
            }
            _ => {}
        }
    }
    let mut out = String::with_capacity(s.len());
    let mut in_gap = false;
    for (c, k) in chars.into_iter().zip(keep) {
        if k {
            if in_gap {
                out.push(' ');
                in_gap = false;
            }
            out.push(c);
        } else {
            in_gap = true;
        }
    }
    out
}

/// Rewrites every word run for which `f` returns `Some`.
fn map_word_runs(s: &str, f: impl Fn(&str) -> Option<String>) -> String {
    let mut out = String::with_capacity(s.len());
    let mut run = String::new();
    let flush = |run: &mut String, out: &mut String| {
        if !run.is_empty() {
            match f(run) {
                Some(rep) => out.push_str(&rep),
                None => out.push_str(run),
            }
            run.clear();
        }
    };
    for c in s.chars() {
        if is_word_char(c) {
            run.push(c);
        } else {
            flush(&mut run, &mut out);
            out.push(c);
        }
    }
    flush(&mut run, &mut out);
    out
}

fn strip_punctuation(s: &str) -> String {
    s.chars()
        .filter(|&c| c != '\'')
        .map(|c| {
            if c.is_whitespace() || (c.is_alphanumeric() && !c.is_uppercase()) {
                c
            } else {
                ' '
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basic_examples() {
        assert_eq!(normalize("Hello, World!"), "hello world");
        assert_eq!(normalize("I'm OK \u{2014} don't worry."), "i am ok do not worry");
        assert_eq!(normalize("  multiple   spaces "), "multiple spaces");
        assert_eq!(normalize(""), "");
    }

    #[test]
    fn possessive_apostrophe_is_deleted() {
        assert_eq!(normalize("the children's toys"), "the childrens toys");
    }

    #[test]
    fn annotations_removed() {
        assert_eq!(normalize("(laughs)"), "");
        assert_eq!(normalize("a [b (c) d] e"), "a e");
        assert_eq!(normalize("open ( paren"), "open paren");
    }

    #[test]
    fn curly_apostrophes_expand() {
        assert_eq!(normalize("I\u{2019}m here"), "i am here");
    }

    #[test]
    fn apostrophe_split_words_are_stable() {
        for s in ["u'h", "gon'na", "do'nt", "'um'"] {
            let once = normalize(s);
            assert_eq!(normalize(&once), once, "{s}");
        }
    }

    #[test]
    fn caseless_capitals_split_words() {
        let once = normalize("hmm\u{2124} ok");
        assert_eq!(once, "ok");
        assert_eq!(normalize(&once), once);
    }

    #[test]
    fn digits_kept() {
        assert_eq!(normalize("It is 2 PM."), "it is 2 pm");
    }

    #[test]
    fn steps_must_be_ordered() {
        let cfg = NormalizerConfig {
            enabled_steps: vec![Step::StripPunctuation, Step::Lowercase],
            ..Default::default()
        };
        assert!(Normalizer::new(cfg).is_err());

        let mut cfg = NormalizerConfig::default();
        cfg.contraction_table.insert("Don't".into(), "do not".into());
        assert!(Normalizer::new(cfg).is_err());
    }

    #[test]
    fn config_json_round_trips() {
        let cfg = NormalizerConfig::default();
        let back: NormalizerConfig = serde_json::from_str(&cfg.to_json_pretty()).unwrap();
        assert_eq!(back, cfg);
    }

    proptest! {
        #[test]
        fn idempotent(s in "\\PC{0,40}") {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once), once);
        }

        #[test]
        fn output_alphabet(s in "[a-zA-Z' ,.!?()\\[\\]\u{2019}-]{0,40}") {
            let out = normalize(&s);
            prop_assert!(!out.starts_with(' ') && !out.ends_with(' ') && !out.contains("  "));
            prop_assert!(out.chars().all(|c| c == ' ' || (c.is_alphanumeric() && !c.is_uppercase())));
        }
    }
}
