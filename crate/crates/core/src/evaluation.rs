//! Attribution metrics: span-level multi-label F1, Time-F1 over fixed-width
//! time bins, dataset aggregation and answer-option consistency.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curation::TraceAttribution;
use crate::model::{SourceId, TimeSpan, Trace};

/// Default Time-F1 bin width in seconds.
pub const DEFAULT_BIN_S: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("bin width must be positive, got {0}")]
    BadBinWidth(f64),
    #[error("negative or non-finite time in span ({0}, {1})")]
    BadTime(f64, f64),
    #[error("macro averaging needs at least one chunk")]
    EmptyMacro,
    #[error("untimed source {0} selected for a time-evaluated task")]
    UntimedSource(SourceId),
    #[error("unknown source {0}")]
    UnknownSource(SourceId),
    #[error("trace has no option map")]
    NoOptionMap,
    #[error("no gold labels for example '{0}'")]
    MissingGold(String),
    #[error("example '{example}': gold has {gold} chunks, prediction has {pred}")]
    ChunkCount { example: String, gold: usize, pred: usize },
    #[error("{0}")]
    GoldKind(String),
}

/// Precision, recall and F1 with the underlying counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Prf {
    /// Scores from counts. With no predictions and no gold the result is a
    /// perfect score (nothing to attribute, nothing attributed).
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        if tp + fp + fn_ == 0 {
            return Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
                tp,
                fp,
                fn_,
            };
        }
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let recall = if tp + fn_ > 0 {
            tp as f64 / (tp + fn_) as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }

    pub fn is_both_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }
}

fn set_prf<T: Ord>(pred: &BTreeSet<T>, gold: &BTreeSet<T>) -> Prf {
    let tp = pred.intersection(gold).count() as u64;
    Prf::from_counts(tp, pred.len() as u64 - tp, gold.len() as u64 - tp)
}

/// Multi-label PRF over source-id sets.
pub fn span_prf(pred: &BTreeSet<SourceId>, gold: &BTreeSet<SourceId>) -> Prf {
    set_prf(pred, gold)
}

/// Indices of the `bin_s`-wide bins touched by `spans`.
///
/// Spans are treated as half-open `[s, e)` and marked bins run from
/// `floor(s / bin_s)` to `ceil(e / bin_s) - 1`; a zero-length span marks the
/// bin containing it. Overlapping spans are merged first.
pub fn time_bins(spans: &[TimeSpan], bin_s: f64) -> Result<BTreeSet<i64>, EvalError> {
    if !(bin_s > 0.0 && bin_s.is_finite()) {
        return Err(EvalError::BadBinWidth(bin_s));
    }
    for s in spans {
        if !(s.start_s.is_finite() && s.end_s.is_finite()) || s.start_s < 0.0 || s.end_s < s.start_s {
            return Err(EvalError::BadTime(s.start_s, s.end_s));
        }
    }
    let mut bins = BTreeSet::new();
    for s in crate::gold::merge_spans(spans) {
        let first = (s.start_s / bin_s).floor() as i64;
        if s.end_s == s.start_s {
            bins.insert(first);
        } else {
            let last = (s.end_s / bin_s).ceil() as i64 - 1;
            bins.extend(first..=last.max(first));
        }
    }
    Ok(bins)
}

pub fn time_f1(pred: &[TimeSpan], gold: &[TimeSpan], bin_s: f64) -> Result<Prf, EvalError> {
    Ok(set_prf(&time_bins(pred, bin_s)?, &time_bins(gold, bin_s)?))
}

/// Time intervals of the selected sources, for time-evaluated tasks.
pub fn selected_spans(trace: &Trace, selected: &[SourceId]) -> Result<Vec<TimeSpan>, EvalError> {
    selected
        .iter()
        .map(|id| {
            let s = trace.source(*id).ok_or(EvalError::UnknownSource(*id))?;
            s.time.ok_or(EvalError::UntimedSource(*id))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AverageMode {
    Micro,
    Macro,
}

/// A dataset-level score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mode: AverageMode,
    pub prf: Prf,
    /// Set when every chunk had neither predictions nor gold; the score is
    /// then reported as 1.0 by convention.
    pub all_empty: bool,
    pub chunks: usize,
}

/// Micro: PRF of the summed counts. Macro: mean of per-chunk scores, where
/// both-empty chunks count as 1.0.
pub fn aggregate_dataset(per_chunk: &[Prf], mode: AverageMode) -> Result<Aggregate, EvalError> {
    let all_empty = per_chunk.iter().all(Prf::is_both_empty);
    let prf = match mode {
        AverageMode::Micro => {
            let (tp, fp, fn_) = per_chunk
                .iter()
                .fold((0, 0, 0), |(a, b, c), p| (a + p.tp, b + p.fp, c + p.fn_));
            Prf::from_counts(tp, fp, fn_)
        }
        AverageMode::Macro => {
            if per_chunk.is_empty() {
                return Err(EvalError::EmptyMacro);
            }
            let k = per_chunk.len() as f64;
            let mean = |f: fn(&Prf) -> f64| per_chunk.iter().map(f).sum::<f64>() / k;
            let (tp, fp, fn_) = per_chunk
                .iter()
                .fold((0, 0, 0), |(a, b, c), p| (a + p.tp, b + p.fp, c + p.fn_));
            Prf {
                precision: mean(|p| p.precision),
                recall: mean(|p| p.recall),
                f1: mean(|p| p.f1),
                tp,
                fp,
                fn_,
            }
        }
    };
    Ok(Aggregate {
        mode,
        prf,
        all_empty,
        chunks: per_chunk.len(),
    })
}

static ANSWER_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:answer|option|choice)\b").expect("valid regex"));
static OPTION_LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b([A-E])\b").expect("valid regex"));
static TERMINAL_LETTER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:^|[\s(\[])([A-E])[)\].:!]*\s*$").expect("valid regex"));

/// Extracts the chosen option letter.
///
/// The first standalone capital `A`-`E` after the last "answer", "option" or
/// "choice" marker wins; failing that, a standalone letter ending the text.
pub fn parse_option(text: &str) -> Option<String> {
    if let Some(m) = ANSWER_MARKER.find_iter(text).last() {
        if let Some(c) = OPTION_LETTER.captures(&text[m.end()..]) {
            return Some(c[1].to_string());
        }
    }
    TERMINAL_LETTER.captures(text).map(|c| c[1].to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionConsistencyResult {
    /// Option parsed from the generation.
    pub predicted_option: Option<String>,
    /// Option whose source receives the most answer-chunk vote mass.
    pub attribution_option: Option<String>,
    pub masses: BTreeMap<String, f64>,
    pub consistent: bool,
    /// No option could be parsed; excluded from the consistency rate.
    pub unparsable: bool,
}

/// Compares the parsed answer option with the option whose source carries
/// the largest vote mass inside the answer chunk (the last chunk that
/// contains a parsable option). Mass ties go to the lexicographically first
/// label.
pub fn option_consistency(trace: &Trace, attribution: &TraceAttribution) -> Result<OptionConsistencyResult, EvalError> {
    let option_map = trace.option_map.as_ref().ok_or(EvalError::NoOptionMap)?;
    let answer = attribution
        .spans
        .iter()
        .rev()
        .find_map(|s| parse_option(&s.chunk.text).map(|o| (s, o)));
    let Some((span, predicted)) = answer else {
        return Ok(OptionConsistencyResult {
            predicted_option: None,
            attribution_option: None,
            masses: BTreeMap::new(),
            consistent: false,
            unparsable: true,
        });
    };
    let mut masses: BTreeMap<String, f64> = option_map.keys().map(|k| (k.clone(), 0.0)).collect();
    for &t in &span.chunk.token_steps {
        let tok = &attribution.tokens[t - 1];
        for (label, id) in option_map {
            if tok.source_id == Some(*id) {
                *masses.get_mut(label).expect("label present") += tok.vote;
            }
        }
    }
    let mut best: Option<(&String, f64)> = None;
    for (label, &m) in &masses {
        if best.is_none_or(|(_, bm)| m > bm) {
            best = Some((label, m));
        }
    }
    let attribution_option = best.map(|(l, _)| l.clone());
    Ok(OptionConsistencyResult {
        consistent: attribution_option.as_deref() == Some(predicted.as_str()),
        predicted_option: Some(predicted),
        attribution_option,
        masses,
        unparsable: false,
    })
}

/// Top-1 consistency rate over parsable results, with the count of
/// unparsable ones.
pub fn consistency_rate(results: &[OptionConsistencyResult]) -> (Option<f64>, usize) {
    let scored: Vec<_> = results.iter().filter(|r| !r.unparsable).collect();
    let unparsable = results.len() - scored.len();
    if scored.is_empty() {
        return (None, unparsable);
    }
    let hits = scored.iter().filter(|r| r.consistent).count();
    (Some(hits as f64 / scored.len() as f64), unparsable)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> BTreeSet<SourceId> {
        v.iter().map(|&i| SourceId(i)).collect()
    }

    fn spans(v: &[(f64, f64)]) -> Vec<TimeSpan> {
        v.iter().map(|&(s, e)| TimeSpan::new(s, e)).collect()
    }

    #[test]
    fn span_prf_cases() {
        let p = span_prf(&ids(&[1, 2]), &ids(&[2, 3]));
        assert_eq!((p.precision, p.recall, p.f1), (0.5, 0.5, 0.5));
        let e = span_prf(&ids(&[]), &ids(&[]));
        assert_eq!((e.f1, e.tp, e.fp, e.fn_), (1.0, 0, 0, 0));
        let fp = span_prf(&ids(&[1]), &ids(&[]));
        assert_eq!((fp.precision, fp.recall, fp.f1, fp.fp), (0.0, 0.0, 0.0, 1));
    }

    #[test]
    fn binning() {
        assert_eq!(time_bins(&spans(&[(0.0, 2.0)]), 1.0).unwrap(), BTreeSet::from([0, 1]));
        assert_eq!(time_bins(&spans(&[(1.2, 1.2)]), 1.0).unwrap(), BTreeSet::from([1]));
        assert_eq!(
            time_bins(&spans(&[(0.0, 1.5), (1.2, 3.0)]), 1.0).unwrap(),
            BTreeSet::from([0, 1, 2])
        );
        assert_eq!(time_bins(&spans(&[(0.5, 2.5)]), 2.0).unwrap(), BTreeSet::from([0, 1]));
        assert_eq!(
            time_bins(&spans(&[(-1.0, 2.0)]), 1.0),
            Err(EvalError::BadTime(-1.0, 2.0))
        );
        assert_eq!(time_bins(&[], 0.0), Err(EvalError::BadBinWidth(0.0)));
    }

    #[test]
    fn time_f1_cases() {
        let p = time_f1(&spans(&[(0.0, 2.0)]), &spans(&[(1.0, 3.0)]), 1.0).unwrap();
        assert_eq!((p.tp, p.fp, p.fn_, p.f1), (1, 1, 1, 0.5));
        let same = time_f1(&spans(&[(3.0, 9.0)]), &spans(&[(3.0, 9.0)]), 1.0).unwrap();
        assert_eq!(same.f1, 1.0);
        let miss = time_f1(&[], &spans(&[(0.0, 5.0)]), 1.0).unwrap();
        assert_eq!((miss.f1, miss.fn_), (0.0, 5));
    }

    #[test]
    fn aggregation() {
        let one = span_prf(&ids(&[1, 2]), &ids(&[2, 3]));
        let micro = aggregate_dataset(&[one], AverageMode::Micro).unwrap();
        let macro_ = aggregate_dataset(&[one], AverageMode::Macro).unwrap();
        assert_eq!(micro.prf.f1, one.f1);
        assert_eq!(macro_.prf.f1, one.f1);

        let a = Prf::from_counts(1, 1, 0);
        let b = Prf::from_counts(0, 0, 1);
        let m = aggregate_dataset(&[a, b], AverageMode::Micro).unwrap();
        assert_eq!((m.prf.tp, m.prf.fp, m.prf.fn_), (1, 1, 1));
        assert_eq!(m.prf.f1, 0.5);

        let empty = Prf::from_counts(0, 0, 0);
        let all = aggregate_dataset(&[empty, empty], AverageMode::Macro).unwrap();
        assert!(all.all_empty);
        assert_eq!(all.prf.f1, 1.0);
        let all_micro = aggregate_dataset(&[empty, empty], AverageMode::Micro).unwrap();
        assert!(all_micro.all_empty);
        assert_eq!(all_micro.prf.f1, 1.0);
        assert_eq!(aggregate_dataset(&[], AverageMode::Macro), Err(EvalError::EmptyMacro));
    }

    #[test]
    fn option_parsing() {
        assert_eq!(parse_option("The answer is B.").as_deref(), Some("B"));
        assert_eq!(parse_option("Option (C) fits best").as_deref(), Some("C"));
        assert_eq!(
            parse_option("After comparing all options, I pick answer: D").as_deref(),
            Some("D")
        );
        assert_eq!(parse_option("So it must be A").as_deref(), Some("A"));
        assert_eq!(parse_option("It is a cat on a mat."), None);
        assert_eq!(parse_option(""), None);
    }
}
