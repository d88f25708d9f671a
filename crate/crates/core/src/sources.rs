//! Source-unit construction from a token timeline.
//!
//! Without hints every maximal run of same-modality tokens becomes one unit,
//! with text runs further split at sentence boundaries. With hints (e.g. ASR
//! segments or processor image blocks) exactly the hinted units are emitted.
//! Ids follow timeline order starting at 0.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunking::{assign_by_overlap, Segmenter};
use crate::model::{Modality, SourceId, SourceUnit, TimeSpan, TokenTimeline};

#[derive(Debug, Error, PartialEq)]
pub enum SourceBuildError {
    #[error("hint {0} lies outside the timeline")]
    HintOutOfBounds(usize),
    #[error("hint {0} covers no timeline tokens")]
    HintCoversNoTokens(usize),
    #[error("hint {0} needs a token_range or a time interval")]
    EmptyHint(usize),
    #[error("hints {0} and {1} overlap")]
    OverlappingHints(usize, usize),
    #[error("{modality} run starting at token {start} has no timestamps")]
    UntimedMedia { modality: Modality, start: usize },
}

/// An externally supplied segment, located by token range or by time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SegmentHint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_range: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality: Option<Modality>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

fn time_hull(timeline: &TokenTimeline, range: Range<usize>) -> Option<TimeSpan> {
    timeline.tokens[range]
        .iter()
        .filter_map(|t| t.time)
        .fold(None, |acc: Option<TimeSpan>, t| {
            Some(match acc {
                None => t,
                Some(a) => TimeSpan::new(a.start_s.min(t.start_s), a.end_s.max(t.end_s)),
            })
        })
}

fn run_text(timeline: &TokenTimeline, range: Range<usize>) -> String {
    timeline.tokens[range]
        .iter()
        .filter_map(|t| t.text.as_deref())
        .collect()
}

pub fn build_sources(
    timeline: &TokenTimeline,
    hints: Option<&[SegmentHint]>,
) -> Result<Vec<SourceUnit>, SourceBuildError> {
    match hints {
        Some(h) => from_hints(timeline, h),
        None => from_runs(timeline, &Segmenter::default()),
    }
}

fn from_runs(timeline: &TokenTimeline, segmenter: &Segmenter) -> Result<Vec<SourceUnit>, SourceBuildError> {
    let mut ranges: Vec<(Modality, Range<usize>)> = Vec::new();
    for (i, tok) in timeline.tokens.iter().enumerate() {
        match ranges.last_mut() {
            Some((m, r)) if *m == tok.modality => r.end = i + 1,
            _ => ranges.push((tok.modality, i..i + 1)),
        }
    }

    let mut units = Vec::new();
    for (modality, range) in ranges {
        let pieces = if modality == Modality::Text {
            split_text_run(timeline, range.clone(), segmenter)
        } else {
            vec![range.clone()]
        };
        for r in pieces {
            let time = time_hull(timeline, r.clone());
            if modality.is_timed() && time.is_none() {
                return Err(SourceBuildError::UntimedMedia {
                    modality,
                    start: r.start,
                });
            }
            let text = run_text(timeline, r.clone());
            units.push(SourceUnit {
                id: SourceId(units.len() as u32),
                modality,
                token_range: r,
                time,
                text: (!text.is_empty()).then_some(text),
                embedding: None,
            });
        }
    }
    Ok(units)
}

fn split_text_run(timeline: &TokenTimeline, run: Range<usize>, segmenter: &Segmenter) -> Vec<Range<usize>> {
    let mut pos = 0;
    let spans: Vec<Range<usize>> = timeline.tokens[run.clone()]
        .iter()
        .map(|t| {
            let start = pos;
            pos += t.text.as_deref().map_or(0, |s| s.chars().count());
            start..pos
        })
        .collect();
    let text = run_text(timeline, run.clone());
    let sentences = segmenter.split(&text);
    if sentences.len() <= 1 {
        return vec![run];
    }
    let mut out: Vec<Range<usize>> = Vec::new();
    let mut last_chunk = None;
    for (offset, k) in assign_by_overlap(&spans, &sentences).into_iter().enumerate() {
        let i = run.start + offset;
        match out.last_mut() {
            Some(r) if k == last_chunk => r.end = i + 1,
            _ => out.push(i..i + 1),
        }
        last_chunk = k;
    }
    out
}

fn from_hints(timeline: &TokenTimeline, hints: &[SegmentHint]) -> Result<Vec<SourceUnit>, SourceBuildError> {
    let n = timeline.len();
    let mut units: Vec<(usize, SourceUnit)> = Vec::with_capacity(hints.len());
    for (h_idx, hint) in hints.iter().enumerate() {
        let (range, time) = match (hint.token_range, hint.time) {
            (Some([start, end]), time) => {
                if start >= n || start >= end {
                    return Err(SourceBuildError::HintOutOfBounds(h_idx));
                }
                let r = start..end.min(n);
                (r.clone(), time.or_else(|| time_hull(timeline, r)))
            }
            (None, Some(t)) => {
                let mut t = t;
                if let Some(d) = timeline.duration_s {
                    if t.start_s >= d && !(t.start_s == d && t.end_s == d) {
                        return Err(SourceBuildError::HintOutOfBounds(h_idx));
                    }
                    t.end_s = t.end_s.min(d);
                }
                t.start_s = t.start_s.max(0.0);
                if t.end_s < t.start_s {
                    return Err(SourceBuildError::HintOutOfBounds(h_idx));
                }
                let covered: Vec<usize> = timeline
                    .tokens
                    .iter()
                    .filter(|tok| hint.modality.is_none_or(|m| m == tok.modality))
                    .filter_map(|tok| {
                        let tt = tok.time?;
                        (tt.start_s >= t.start_s
                            && (tt.start_s < t.end_s || t.start_s == t.end_s && tt.start_s == t.start_s))
                            .then_some(tok.index)
                    })
                    .collect();
                let (Some(&first), Some(&last)) = (covered.first(), covered.last()) else {
                    return Err(SourceBuildError::HintCoversNoTokens(h_idx));
                };
                (first..last + 1, Some(t))
            }
            (None, None) => return Err(SourceBuildError::EmptyHint(h_idx)),
        };
        let modality = hint.modality.unwrap_or(timeline.tokens[range.start].modality);
        let text = hint.text.clone().or_else(|| {
            let t = run_text(timeline, range.clone());
            (!t.is_empty()).then_some(t)
        });
        units.push((
            h_idx,
            SourceUnit {
                id: SourceId(0),
                modality,
                token_range: range,
                time,
                text,
                embedding: None,
            },
        ));
    }
    units.sort_by_key(|(_, u)| u.token_range.start);
    for pair in units.windows(2) {
        if pair[1].1.token_range.start < pair[0].1.token_range.end {
            let (a, b) = (pair[0].0.min(pair[1].0), pair[0].0.max(pair[1].0));
            return Err(SourceBuildError::OverlappingHints(a, b));
        }
    }
    Ok(units
        .into_iter()
        .enumerate()
        .map(|(i, (_, mut u))| {
            u.id = SourceId(i as u32);
            u
        })
        .collect())
}
