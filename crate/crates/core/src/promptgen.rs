//! Correction prompts built from N-best lists, and chat-format SFT records.
//!
//! A template's user text may reference `{speaker}`, `{best}`, `{others}`
//! and, for context templates, `{num_context}` and `{prev_sentences}`.
//! Substitution is a single pass, so placeholder-like text inside a
//! hypothesis is never expanded.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Speaker, Utterance};
use crate::synthgen::NBestList;
use crate::{Error, Result};

/// Rendered in place of an empty `{others}` or `{prev_sentences}`.
pub const NONE_SENTINEL: &str = "None";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    NoContext,
    Context,
}

impl TemplateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::NoContext => "no_context",
            TemplateKind::Context => "context",
        }
    }
}

impl FromStr for TemplateKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "no_context" => Ok(TemplateKind::NoContext),
            "context" => Ok(TemplateKind::Context),
            other => Err(Error::Template(format!("unknown kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Placeholder {
    Speaker,
    Best,
    Others,
    NumContext,
    PrevSentences,
}

impl Placeholder {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "speaker" => Placeholder::Speaker,
            "best" => Placeholder::Best,
            "others" => Placeholder::Others,
            "num_context" => Placeholder::NumContext,
            "prev_sentences" => Placeholder::PrevSentences,
            _ => return None,
        })
    }

    fn is_context(self) -> bool {
        matches!(self, Placeholder::NumContext | Placeholder::PrevSentences)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Segment {
    Literal(String),
    Slot(Placeholder),
}

fn parse_segments(text: &str) -> Result<Vec<Segment>> {
    let mut segments = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find(['{', '}']) {
        if rest[open..].starts_with('}') {
            return Err(Error::Template(format!("stray '}}' in {:?}", snippet(&rest[open..]))));
        }
        let close = rest[open..]
            .find('}')
            .map(|i| open + i)
            .ok_or_else(|| Error::Template(format!("unclosed '{{' in {:?}", snippet(&rest[open..]))))?;
        let name = &rest[open + 1..close];
        let slot = Placeholder::parse(name)
            .ok_or_else(|| Error::Template(format!("unknown placeholder {{{name}}}")))?;
        if open > 0 {
            segments.push(Segment::Literal(rest[..open].to_string()));
        }
        segments.push(Segment::Slot(slot));
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        segments.push(Segment::Literal(rest.to_string()));
    }
    Ok(segments)
}

fn snippet(s: &str) -> String {
    s.chars().take(24).collect()
}

/// A validated prompt template.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptTemplate {
    kind: TemplateKind,
    system_text: String,
    user_text: String,
    segments: Vec<Segment>,
}

const CONVERSATION_SYSTEM: &str = "You are a helpful assistant that corrects speech recognition transcripts \
of a conversation between a child and an adult.";

const TUTORING_SYSTEM: &str =
    "You are a helpful assistant that helps to correct transcriptions from a child in a tutoring session.";

const DEFAULT_NO_CONTEXT_USER: &str = "The following are the top speech recognition hypotheses for one utterance \
spoken by the {speaker}.
Most likely hypothesis:
{best}
Other hypotheses:
{others}
Reply with the corrected transcription of the utterance only.";

const DEFAULT_CONTEXT_USER: &str = "The previous {num_context} utterance(s) of the conversation:
{prev_sentences}
The following are the top speech recognition hypotheses for the next utterance, spoken by the {speaker}.
Most likely hypothesis:
{best}
Other hypotheses:
{others}
Reply with the corrected transcription of the utterance only.";

impl PromptTemplate {
    pub fn new(kind: TemplateKind, system_text: impl Into<String>, user_text: impl Into<String>) -> Result<Self> {
        let system_text = system_text.into();
        let user_text = user_text.into();
        if system_text.contains(['{', '}']) {
            return Err(Error::Template("system text may not contain braces or placeholders".into()));
        }
        let segments = parse_segments(&user_text)?;
        let has = |p: Placeholder| segments.contains(&Segment::Slot(p));
        if !has(Placeholder::Best) {
            return Err(Error::Template("user text must contain {best}".into()));
        }
        match kind {
            TemplateKind::Context => {
                if !has(Placeholder::NumContext) || !has(Placeholder::PrevSentences) {
                    return Err(Error::Template(
                        "context template must contain {num_context} and {prev_sentences}".into(),
                    ));
                }
            }
            TemplateKind::NoContext => {
                if segments.iter().any(|s| matches!(s, Segment::Slot(p) if p.is_context())) {
                    return Err(Error::Template(
                        "no_context template may not contain {num_context} or {prev_sentences}".into(),
                    ));
                }
            }
        }
        Ok(PromptTemplate {
            kind,
            system_text,
            user_text,
            segments,
        })
    }

    /// Default two-speaker template without context.
    pub fn default_no_context() -> Self {
        Self::new(TemplateKind::NoContext, CONVERSATION_SYSTEM, DEFAULT_NO_CONTEXT_USER).expect("valid")
    }

    /// Default two-speaker template with previous turns.
    pub fn default_context() -> Self {
        Self::new(TemplateKind::Context, CONVERSATION_SYSTEM, DEFAULT_CONTEXT_USER).expect("valid")
    }

    /// Child-only tutoring template without context.
    pub fn tutoring_no_context() -> Self {
        Self::new(TemplateKind::NoContext, TUTORING_SYSTEM, DEFAULT_NO_CONTEXT_USER).expect("valid")
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn system_text(&self) -> &str {
        &self.system_text
    }

    pub fn user_text(&self) -> &str {
        &self.user_text
    }

    /// Parses the template file format:
    ///
    /// ```text
    /// kind: no_context
    /// [system]
    /// ...
    /// [user]
    /// ...
    /// ```
    ///
    /// Section bodies are taken verbatim with the final newline removed.
    pub fn parse(text: &str) -> Result<Self> {
        let (header, body) = text.split_once('\n').unwrap_or((text, ""));
        let kind = header
            .trim()
            .strip_prefix("kind:")
            .ok_or_else(|| Error::Template("first line must be `kind: no_context|context`".into()))?
            .parse::<TemplateKind>()?;
        let body = body
            .strip_prefix("[system]\n")
            .ok_or_else(|| Error::Template("expected a [system] section after the kind line".into()))?;
        let (system, user) = body
            .split_once("\n[user]\n")
            .ok_or_else(|| Error::Template("missing [user] section".into()))?;
        let user = user.strip_suffix('\n').unwrap_or(user);
        Self::new(kind, system, user)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Template(format!("{}: {e}", path.display())))
    }

    pub fn to_file_string(&self) -> String {
        format!(
            "kind: {}\n[system]\n{}\n[user]\n{}\n",
            self.kind.as_str(),
            self.system_text,
            self.user_text
        )
    }

    fn render(&self, values: &HashMap<Placeholder, String>) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Slot(p) => out.push_str(&values[p]),
            }
        }
        out
    }
}

/// Number of previous turns included in a context prompt.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContextWindow(usize);

impl ContextWindow {
    /// Accepts 1 or 3.
    pub fn new(k: usize) -> Result<Self> {
        match k {
            1 | 3 => Ok(ContextWindow(k)),
            _ => Err(Error::Prompt(format!("context window must be 1 or 3, got {k}"))),
        }
    }

    /// Any positive window.
    pub fn any(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Prompt("context window must be positive".into()));
        }
        Ok(ContextWindow(k))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

/// Whether prompts carry previous turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextMode {
    NoContext,
    Previous(ContextWindow),
}

impl ContextMode {
    /// `0` means no context. `allow_any_k` lifts the {1, 3} restriction.
    pub fn from_k(k: usize, allow_any_k: bool) -> Result<Self> {
        match k {
            0 => Ok(ContextMode::NoContext),
            k if allow_any_k => Ok(ContextMode::Previous(ContextWindow::any(k)?)),
            k => Ok(ContextMode::Previous(ContextWindow::new(k)?)),
        }
    }

    pub fn k(self) -> usize {
        match self {
            ContextMode::NoContext => 0,
            ContextMode::Previous(w) => w.get(),
        }
    }

    pub fn template_kind(self) -> TemplateKind {
        match self {
            ContextMode::NoContext => TemplateKind::NoContext,
            ContextMode::Previous(_) => TemplateKind::Context,
        }
    }
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextMode::NoContext => f.write_str("no_context"),
            ContextMode::Previous(w) => write!(f, "context_{}", w.get()),
        }
    }
}

/// A previous turn of the conversation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

impl Turn {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        Turn {
            speaker,
            text: text.into(),
        }
    }
}

/// A fully rendered prompt for one utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub utt_id: String,
    pub context_k: usize,
    pub system: String,
    pub user: String,
    pub best_hypothesis: String,
}

fn check_inputs(utt: &Utterance, nbest: &NBestList, tpl: &PromptTemplate, kind: TemplateKind) -> Result<()> {
    if nbest.hyps.is_empty() {
        return Err(Error::Prompt(format!("empty N-best list for {:?}", utt.utt_id)));
    }
    if nbest.utt_id != utt.utt_id {
        return Err(Error::Prompt(format!(
            "N-best list for {:?} given for utterance {:?}",
            nbest.utt_id, utt.utt_id
        )));
    }
    if tpl.kind != kind {
        return Err(Error::Prompt(format!(
            "template kind {} does not match requested {}",
            tpl.kind.as_str(),
            kind.as_str()
        )));
    }
    Ok(())
}

fn base_values(utt: &Utterance, nbest: &NBestList) -> HashMap<Placeholder, String> {
    let others = if nbest.others().is_empty() {
        NONE_SENTINEL.to_string()
    } else {
        nbest.others().join("\n")
    };
    HashMap::from([
        (Placeholder::Speaker, utt.speaker.label().to_string()),
        (Placeholder::Best, nbest.best().to_string()),
        (Placeholder::Others, others),
    ])
}

pub fn build_no_context(utt: &Utterance, nbest: &NBestList, tpl: &PromptTemplate) -> Result<PromptInstance> {
    check_inputs(utt, nbest, tpl, TemplateKind::NoContext)?;
    Ok(PromptInstance {
        utt_id: utt.utt_id.clone(),
        context_k: 0,
        system: tpl.system_text.clone(),
        user: tpl.render(&base_values(utt, nbest)),
        best_hypothesis: nbest.best().to_string(),
    })
}

/// `history` holds at most `window` turns, most recent last.
pub fn build_with_context(
    utt: &Utterance,
    nbest: &NBestList,
    history: &[Turn],
    window: ContextWindow,
    tpl: &PromptTemplate,
) -> Result<PromptInstance> {
    check_inputs(utt, nbest, tpl, TemplateKind::Context)?;
    if history.len() > window.get() {
        return Err(Error::Prompt(format!(
            "{} history turns for a window of {}",
            history.len(),
            window.get()
        )));
    }
    let prev = if history.is_empty() {
        NONE_SENTINEL.to_string()
    } else {
        history
            .iter()
            .map(|t| format!("{}: {}", t.speaker.label(), t.text))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let mut values = base_values(utt, nbest);
    values.insert(Placeholder::NumContext, window.get().to_string());
    values.insert(Placeholder::PrevSentences, prev);
    Ok(PromptInstance {
        utt_id: utt.utt_id.clone(),
        context_k: window.get(),
        system: tpl.system_text.clone(),
        user: tpl.render(&values),
        best_hypothesis: nbest.best().to_string(),
    })
}

/// Builds the prompt for `utt` under `mode`; `history` is ignored without
/// context and trimmed to the window otherwise.
pub fn build_prompt(
    utt: &Utterance,
    nbest: &NBestList,
    history: &[Turn],
    mode: ContextMode,
    tpl: &PromptTemplate,
) -> Result<PromptInstance> {
    match mode {
        ContextMode::NoContext => build_no_context(utt, nbest, tpl),
        ContextMode::Previous(w) => {
            let start = history.len().saturating_sub(w.get());
            build_with_context(utt, nbest, &history[start..], w, tpl)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// One (system, user, assistant) instruction-tuning example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub messages: [Message; 3],
}

impl SftRecord {
    pub fn new(prompt: &PromptInstance, target: &str) -> Self {
        let msg = |role, content: &str| Message {
            role,
            content: content.to_string(),
        };
        SftRecord {
            messages: [
                msg(Role::System, &prompt.system),
                msg(Role::User, &prompt.user),
                msg(Role::Assistant, target),
            ],
        }
    }

    pub fn assistant(&self) -> &str {
        &self.messages[2].content
    }
}

/// Prompts for every utterance in corpus order, with context taken from the
/// reference transcripts of earlier turns in the same session.
pub fn reference_context_prompts(
    corpus: &Corpus,
    nbests: &[NBestList],
    mode: ContextMode,
    tpl: &PromptTemplate,
) -> Result<Vec<PromptInstance>> {
    let by_id: HashMap<&str, &NBestList> = nbests.iter().map(|n| (n.utt_id.as_str(), n)).collect();
    let mut out = Vec::with_capacity(corpus.len());
    for (_, utts) in corpus.sessions() {
        for (i, utt) in utts.iter().enumerate() {
            let nbest = by_id
                .get(utt.utt_id.as_str())
                .ok_or_else(|| Error::MissingNBest(utt.utt_id.clone()))?;
            let start = i.saturating_sub(mode.k());
            let history: Vec<Turn> = utts[start..i].iter().map(|u| Turn::new(u.speaker, u.text.clone())).collect();
            out.push(build_prompt(utt, nbest, &history, mode, tpl)?);
        }
    }
    Ok(out)
}

/// One training record per utterance; the target is the verbatim reference.
pub fn emit_sft_dataset(
    corpus: &Corpus,
    nbests: &[NBestList],
    mode: ContextMode,
    tpl: &PromptTemplate,
) -> Result<Vec<SftRecord>> {
    let prompts = reference_context_prompts(corpus, nbests, mode, tpl)?;
    Ok(corpus
        .utterances()
        .iter()
        .zip(&prompts)
        .map(|(u, p)| SftRecord::new(p, &u.text))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(id: &str, index: usize, speaker: Speaker, text: &str) -> Utterance {
        Utterance {
            session_id: "s".into(),
            utt_id: id.into(),
            index,
            speaker,
            text: text.into(),
            duration_s: None,
        }
    }

    fn nbest(id: &str, hyps: &[&str]) -> NBestList {
        NBestList::new(id, hyps.iter().map(|s| s.to_string()).collect(), "test").unwrap()
    }

    #[test]
    fn no_context_substitution() {
        let u = utt("u1", 0, Speaker::Child, "i want to play");
        let p = build_no_context(&u, &nbest("u1", &["i want play", "i went play"]), &PromptTemplate::default_no_context())
            .unwrap();
        assert!(p.user.contains("spoken by the Child."));
        assert!(p.user.contains("Most likely hypothesis:\ni want play\n"));
        assert!(p.user.contains("Other hypotheses:\ni went play\n"));
        assert_eq!(p.best_hypothesis, "i want play");
        assert_eq!(p.context_k, 0);
        assert!(!p.user.contains('{'));
    }

    #[test]
    fn others_list_in_rank_order() {
        let u = utt("u1", 0, Speaker::Adult, "x");
        let tpl = PromptTemplate::new(TemplateKind::NoContext, "sys", "{speaker}|{best}|{others}").unwrap();
        let p = build_no_context(&u, &nbest("u1", &["a", "b", "c"]), &tpl).unwrap();
        assert_eq!(p.user, "Adult|a|b\nc");
        let p = build_no_context(&u, &nbest("u1", &["a"]), &tpl).unwrap();
        assert_eq!(p.user, "Adult|a|None");
    }

    #[test]
    fn placeholder_text_in_hypothesis_is_not_expanded() {
        let u = utt("u1", 0, Speaker::Adult, "x");
        let tpl = PromptTemplate::new(TemplateKind::NoContext, "sys", "{best}/{others}").unwrap();
        let p = build_no_context(&u, &nbest("u1", &["say {others}", "b"]), &tpl).unwrap();
        assert_eq!(p.user, "say {others}/b");
    }

    #[test]
    fn template_validation() {
        use TemplateKind::*;
        assert!(PromptTemplate::new(NoContext, "s", "{speaker} {others}").is_err());
        assert!(PromptTemplate::new(NoContext, "s", "{best} {bogus}").is_err());
        assert!(PromptTemplate::new(NoContext, "s", "{best} }").is_err());
        assert!(PromptTemplate::new(NoContext, "s", "{best} {").is_err());
        assert!(PromptTemplate::new(NoContext, "s {best}", "{best}").is_err());
        assert!(PromptTemplate::new(NoContext, "s", "{best} {prev_sentences}").is_err());
        assert!(PromptTemplate::new(Context, "s", "{best} {prev_sentences}").is_err());
        assert!(PromptTemplate::new(Context, "s", "{best} {num_context} {prev_sentences}").is_ok());
    }

    #[test]
    fn template_file_round_trip() {
        for tpl in [
            PromptTemplate::default_no_context(),
            PromptTemplate::default_context(),
            PromptTemplate::tutoring_no_context(),
        ] {
            assert_eq!(PromptTemplate::parse(&tpl.to_file_string()).unwrap(), tpl);
        }
        assert!(PromptTemplate::parse("kind: other\n[system]\ns\n[user]\n{best}\n").is_err());
        assert!(PromptTemplate::parse("[system]\ns\n[user]\n{best}\n").is_err());
        let missing_best = "kind: no_context\n[system]\ns\n[user]\n{speaker} {others}\n";
        assert!(PromptTemplate::parse(missing_best).is_err());
    }

    #[test]
    fn tutoring_system_prompt() {
        assert_eq!(
            PromptTemplate::tutoring_no_context().system_text(),
            "You are a helpful assistant that helps to correct transcriptions from a child in a tutoring session."
        );
    }

    #[test]
    fn context_rendering() {
        let tpl = PromptTemplate::new(TemplateKind::Context, "s", "{num_context}|{prev_sentences}|{best}").unwrap();
        let u = utt("u1", 0, Speaker::Child, "x");
        let n = nbest("u1", &["fine"]);
        let w1 = ContextWindow::new(1).unwrap();
        let w3 = ContextWindow::new(3).unwrap();

        let p = build_with_context(&u, &n, &[], w1, &tpl).unwrap();
        assert_eq!(p.user, "1|None|fine");

        let p = build_with_context(&u, &n, &[Turn::new(Speaker::Adult, "how are you")], w1, &tpl).unwrap();
        assert_eq!(p.user, "1|Adult: how are you|fine");
        assert_eq!(p.context_k, 1);

        let two = [Turn::new(Speaker::Adult, "hi"), Turn::new(Speaker::Child, "hello")];
        let p = build_with_context(&u, &n, &two, w3, &tpl).unwrap();
        assert_eq!(p.user, "3|Adult: hi\nChild: hello|fine");

        assert!(build_with_context(&u, &n, &two, w1, &tpl).is_err());
        assert!(build_with_context(&u, &n, &[], w1, &PromptTemplate::default_no_context()).is_err());
        assert!(build_no_context(&u, &n, &tpl).is_err());
    }

    #[test]
    fn window_sizes() {
        assert!(ContextWindow::new(2).is_err());
        assert!(ContextWindow::any(2).is_ok());
        assert!(ContextWindow::any(0).is_err());
        assert_eq!(ContextMode::from_k(0, false).unwrap(), ContextMode::NoContext);
        assert!(ContextMode::from_k(2, false).is_err());
        assert_eq!(ContextMode::from_k(2, true).unwrap().k(), 2);
    }

    #[test]
    fn build_prompt_uses_most_recent_turns() {
        let tpl = PromptTemplate::new(TemplateKind::Context, "s", "{num_context}|{prev_sentences}|{best}").unwrap();
        let u = utt("u1", 0, Speaker::Child, "x");
        let hist = [
            Turn::new(Speaker::Adult, "one"),
            Turn::new(Speaker::Child, "two"),
            Turn::new(Speaker::Adult, "three"),
        ];
        let mode = ContextMode::from_k(1, false).unwrap();
        let p = build_prompt(&u, &nbest("u1", &["b"]), &hist, mode, &tpl).unwrap();
        assert_eq!(p.user, "1|Adult: three|b");
    }

    #[test]
    fn sft_emission() {
        let corpus = Corpus::new(
            "c",
            vec![
                utt("a", 0, Speaker::Adult, "How are you?"),
                utt("b", 1, Speaker::Child, "Good."),
                utt("c", 2, Speaker::Adult, "Great!"),
            ],
        )
        .unwrap();
        let nb = vec![nbest("a", &["how are you"]), nbest("b", &["could"]), nbest("c", &["grape"])];

        let recs = emit_sft_dataset(&corpus, &nb, ContextMode::NoContext, &PromptTemplate::default_no_context()).unwrap();
        let targets: Vec<_> = recs.iter().map(SftRecord::assistant).collect();
        assert_eq!(targets, ["How are you?", "Good.", "Great!"]);

        let mode = ContextMode::from_k(1, false).unwrap();
        let recs = emit_sft_dataset(&corpus, &nb, mode, &PromptTemplate::default_context()).unwrap();
        assert!(recs[0].messages[1].content.contains("\nNone\n"));
        assert!(recs[2].messages[1].content.contains("Child: Good.\n"));
        assert!(!recs[2].messages[1].content.contains("Child: could"));

        let json = serde_json::to_string(&recs[0]).unwrap();
        assert!(json.starts_with(r#"{"messages":[{"role":"system","content":"#));

        assert!(matches!(
            emit_sft_dataset(&corpus, &nb[..2], ContextMode::NoContext, &PromptTemplate::default_no_context()),
            Err(Error::MissingNBest(id)) if id == "c"
        ));
        let empty = Corpus::new("e", vec![]).unwrap();
        assert!(emit_sft_dataset(&empty, &[], ContextMode::NoContext, &PromptTemplate::default_no_context())
            .unwrap()
            .is_empty());
    }
}
