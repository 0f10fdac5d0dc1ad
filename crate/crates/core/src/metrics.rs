//! Word alignment, per-utterance WER and corpus aggregation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Speaker;
use crate::scalar::{mean, Scalar};
use crate::textnorm::Normalizer;
use crate::{Error, Result};

/// Edit-operation counts of a minimal word alignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AlignmentStats {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    /// Number of reference words.
    pub ref_len: usize,
}

impl AlignmentStats {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `(S + D + I) / N`, undefined for an empty reference.
    pub fn wer<T: Scalar>(&self) -> Option<T> {
        (self.ref_len > 0).then(|| T::ratio(self.errors(), self.ref_len))
    }
}

impl std::ops::Add for AlignmentStats {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        AlignmentStats {
            substitutions: self.substitutions + o.substitutions,
            deletions: self.deletions + o.deletions,
            insertions: self.insertions + o.insertions,
            ref_len: self.ref_len + o.ref_len,
        }
    }
}

impl std::iter::Sum for AlignmentStats {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

/// Levenshtein alignment with unit costs.
///
/// Among minimal alignments the backtrace prefers a match or substitution,
/// then a deletion, then an insertion, so the S/D/I split is reproducible.
pub fn align<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> AlignmentStats {
    let n = reference.len();
    let m = hypothesis.len();
    let width = m + 1;
    let mut dist = vec![0usize; (n + 1) * width];
    for (j, d) in dist[..width].iter_mut().enumerate() {
        *d = j;
    }
    for i in 1..=n {
        dist[i * width] = i;
        for j in 1..=m {
            let sub = dist[(i - 1) * width + j - 1] + usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            let del = dist[(i - 1) * width + j] + 1;
            let ins = dist[i * width + j - 1] + 1;
            dist[i * width + j] = sub.min(del).min(ins);
        }
    }

    let mut stats = AlignmentStats {
        ref_len: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dist[i * width + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            if here == dist[(i - 1) * width + j - 1] + usize::from(!same) {
                if !same {
                    stats.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == dist[(i - 1) * width + j] + 1 {
            stats.deletions += 1;
            i -= 1;
        } else {
            stats.insertions += 1;
            j -= 1;
        }
    }
    stats
}

/// Normalizes both strings and aligns them. `None` when the normalized
/// reference is empty, in which case WER is undefined.
pub fn wer_utterance(reference: &str, hypothesis: &str, norm: &Normalizer) -> Option<AlignmentStats> {
    let r = norm.words(reference);
    if r.is_empty() {
        return None;
    }
    Some(align(&r, &norm.words(hypothesis)))
}

/// Scored utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow<T = f64> {
    pub utt_id: String,
    pub speaker: Speaker,
    pub condition: String,
    pub stats: AlignmentStats,
    pub wer: T,
}

impl<T> EvalRow<T> {
    pub fn ref_len(&self) -> usize {
        self.stats.ref_len
    }
}

/// Outcome of scoring one utterance.
#[derive(Clone, Debug, PartialEq)]
pub enum Scored<T = f64> {
    Included(EvalRow<T>),
    /// Normalized reference was empty.
    Excluded {
        utt_id: String,
        speaker: Speaker,
        condition: String,
    },
}

impl<T> Scored<T> {
    pub fn row(&self) -> Option<&EvalRow<T>> {
        match self {
            Scored::Included(r) => Some(r),
            Scored::Excluded { .. } => None,
        }
    }

    pub fn condition(&self) -> &str {
        match self {
            Scored::Included(r) => &r.condition,
            Scored::Excluded { condition, .. } => condition,
        }
    }
}

pub fn score_utterance<T: Scalar>(
    utt_id: &str,
    speaker: Speaker,
    condition: &str,
    reference: &str,
    hypothesis: &str,
    norm: &Normalizer,
) -> Scored<T> {
    match wer_utterance(reference, hypothesis, norm) {
        Some(stats) => Scored::Included(EvalRow {
            utt_id: utt_id.to_string(),
            speaker,
            condition: condition.to_string(),
            stats,
            wer: stats.wer().expect("non-empty reference"),
        }),
        None => Scored::Excluded {
            utt_id: utt_id.to_string(),
            speaker,
            condition: condition.to_string(),
        },
    }
}

/// Writes `utt_id,speaker,condition,ref_len,wer,excluded` rows.
pub fn write_rows_csv<T: Scalar, W: Write>(w: &mut W, rows: &[Scored<T>]) -> std::io::Result<()> {
    writeln!(w, "utt_id,speaker,condition,ref_len,wer,excluded")?;
    for r in rows {
        match r {
            Scored::Included(r) => writeln!(
                w,
                "{},{},{},{},{},false",
                csv_field(&r.utt_id),
                r.speaker,
                csv_field(&r.condition),
                r.stats.ref_len,
                r.wer.to_f64_lossy()
            )?,
            Scored::Excluded {
                utt_id,
                speaker,
                condition,
            } => writeln!(w, "{},{},{},0,,true", csv_field(utt_id), speaker, csv_field(condition))?,
        }
    }
    Ok(())
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One length bucket: reference word counts in `lo..=hi`, or `lo..` when
/// `hi` is `None`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bucket {
    pub lo: usize,
    pub hi: Option<usize>,
}

impl Bucket {
    pub fn contains(&self, len: usize) -> bool {
        len >= self.lo && self.hi.is_none_or(|hi| len <= hi)
    }

    pub fn label(&self) -> String {
        match self.hi {
            None => format!("{}+", self.lo),
            Some(hi) if hi == self.lo => self.lo.to_string(),
            Some(hi) => format!("{}-{}", self.lo, hi),
        }
    }
}

/// A partition of the positive integers into length buckets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BucketScheme {
    buckets: Vec<Bucket>,
}

impl Default for BucketScheme {
    /// `1, 2, ..., 10, 11+`.
    fn default() -> Self {
        let mut buckets: Vec<Bucket> = (1..=10).map(|n| Bucket { lo: n, hi: Some(n) }).collect();
        buckets.push(Bucket { lo: 11, hi: None });
        BucketScheme { buckets }
    }
}

impl BucketScheme {
    pub fn new(buckets: Vec<Bucket>) -> Result<Self> {
        let invalid = |msg: String| Err(Error::Config(format!("bucket scheme: {msg}")));
        let mut next = 1;
        for (i, b) in buckets.iter().enumerate() {
            if b.lo != next {
                return invalid(format!("bucket {} starts at {}, expected {next}", b.label(), b.lo));
            }
            match b.hi {
                Some(hi) if hi < b.lo => return invalid(format!("empty bucket {}-{hi}", b.lo)),
                Some(hi) => next = hi + 1,
                None if i + 1 != buckets.len() => return invalid("only the last bucket may be open-ended".into()),
                None => {}
            }
        }
        if buckets.last().is_none_or(|b| b.hi.is_some()) {
            return invalid("last bucket must be open-ended (e.g. \"11+\")".into());
        }
        Ok(BucketScheme { buckets })
    }

    pub fn buckets(&self) -> &[Bucket] {
        &self.buckets
    }

    pub fn bucket_for(&self, len: usize) -> Option<&Bucket> {
        self.buckets.iter().find(|b| b.contains(len))
    }
}

impl FromStr for BucketScheme {
    type Err = Error;

    /// Parses `default` or a comma list such as `1,2-3,4+`.
    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "default" {
            return Ok(Self::default());
        }
        let parse_n = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bucket scheme: bad bound {t:?}")))
        };
        let buckets = s
            .split(',')
            .map(|part| {
                let part = part.trim();
                if let Some(lo) = part.strip_suffix('+') {
                    Ok(Bucket { lo: parse_n(lo)?, hi: None })
                } else if let Some((lo, hi)) = part.split_once(['-', '\u{2013}']) {
                    Ok(Bucket {
                        lo: parse_n(lo)?,
                        hi: Some(parse_n(hi)?),
                    })
                } else {
                    let n = parse_n(part)?;
                    Ok(Bucket { lo: n, hi: Some(n) })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(buckets)
    }
}

impl fmt::Display for BucketScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<String> = self.buckets.iter().map(Bucket::label).collect();
        f.write_str(&labels.join(","))
    }
}

/// Macro and pooled WER over a group of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupStats<T = f64> {
    pub macro_wer: T,
    pub pooled_wer: T,
    pub count: usize,
}

impl<T: Scalar> GroupStats<T> {
    /// `None` for an empty group.
    pub fn of<'a>(rows: impl IntoIterator<Item = &'a EvalRow<T>>) -> Option<Self> {
        let rows: Vec<&EvalRow<T>> = rows.into_iter().collect();
        let macro_wer = mean(rows.iter().map(|r| r.wer))?;
        let pooled: AlignmentStats = rows.iter().map(|r| r.stats).sum();
        Some(GroupStats {
            macro_wer,
            pooled_wer: pooled.wer()?,
            count: rows.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BucketRow<T = f64> {
    pub label: String,
    /// `None` when no row falls in the bucket.
    pub macro_wer: Option<T>,
    pub count: usize,
}

/// Assigns rows to buckets by reference word count.
pub fn bucket_by_length<'a, T: Scalar>(
    rows: impl IntoIterator<Item = &'a EvalRow<T>>,
    scheme: &BucketScheme,
) -> Vec<BucketRow<T>> {
    let mut groups: Vec<Vec<T>> = vec![Vec::new(); scheme.buckets().len()];
    for r in rows {
        if let Some(i) = scheme.buckets().iter().position(|b| b.contains(r.ref_len())) {
            groups[i].push(r.wer);
        }
    }
    scheme
        .buckets()
        .iter()
        .zip(groups)
        .map(|(b, wers)| BucketRow {
            label: b.label(),
            count: wers.len(),
            macro_wer: mean(wers),
        })
        .collect()
}

/// Aggregate scores of one condition.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary<T = f64> {
    pub condition: String,
    /// Mean of per-utterance WER.
    pub macro_wer: T,
    /// Summed errors over summed reference length.
    pub pooled_wer: T,
    pub count: usize,
    pub per_speaker: BTreeMap<Speaker, GroupStats<T>>,
    pub buckets: Vec<BucketRow<T>>,
    pub excluded_count: usize,
}

/// Aggregates the rows of a single condition.
pub fn aggregate<T: Scalar>(rows: &[Scored<T>], scheme: &BucketScheme) -> Result<EvalSummary<T>> {
    let condition = match rows.first() {
        Some(r) => r.condition().to_string(),
        None => return Err(Error::Aggregate("no rows".into())),
    };
    if let Some(other) = rows.iter().find(|r| r.condition() != condition) {
        return Err(Error::Aggregate(format!(
            "rows mix conditions {condition:?} and {:?}",
            other.condition()
        )));
    }
    let included: Vec<&EvalRow<T>> = rows.iter().filter_map(Scored::row).collect();
    let excluded_count = rows.len() - included.len();
    let overall = GroupStats::of(included.iter().copied()).ok_or_else(|| {
        Error::Aggregate(format!(
            "condition {condition:?}: all {excluded_count} rows have an empty reference"
        ))
    })?;
    let per_speaker = Speaker::ALL
        .into_iter()
        .filter_map(|s| GroupStats::of(included.iter().copied().filter(|r| r.speaker == s)).map(|g| (s, g)))
        .collect();
    Ok(EvalSummary {
        condition,
        macro_wer: overall.macro_wer,
        pooled_wer: overall.pooled_wer,
        count: overall.count,
        per_speaker,
        buckets: bucket_by_length(included.iter().copied(), scheme),
        excluded_count,
    })
}
