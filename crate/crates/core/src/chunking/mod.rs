//! Output segmentation into sentence-level chunks, and the step-to-chunk
//! alignment that gives each chunk its token set.
//!
//! Boundaries fall after terminal punctuation (`. ! ? 。 ！ ？`) that is
//! followed by whitespace or the end of the text, and after every newline so
//! that list items stay separate. Whitespace following a boundary belongs to
//! the chunk it closes, which keeps the chunks a lossless partition of the text.

mod pos;

use std::collections::BTreeSet;
use std::ops::Range;

use serde::Serialize;

use crate::model::Trace;

pub use pos::{tag_pos, tag_sequence, Pos};

/// A sentence-level span of the generated output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Chunk {
    pub index: usize,
    /// Half-open interval in characters (Unicode scalar values).
    pub char_range: Range<usize>,
    /// 1-based decoding steps whose text falls mostly inside this chunk.
    pub token_steps: Vec<usize>,
    pub text: String,
}

pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "etc.", "vs.", "cf.", "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "jr.", "st.", "fig.", "figs.",
    "no.", "vol.", "approx.", "inc.", "ltd.", "co.", "al.", "eq.", "sec.", "p.",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '}', '”', '’', '»', '」', '』'];

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '。' | '！' | '？')
}

fn is_fullwidth_terminal(c: char) -> bool {
    matches!(c, '。' | '！' | '？')
}

/// Rule-based sentence splitter with an abbreviation guard.
#[derive(Debug, Clone)]
pub struct Segmenter {
    abbreviations: BTreeSet<String>,
}

impl Default for Segmenter {
    fn default() -> Self {
        Segmenter::with_abbreviations(DEFAULT_ABBREVIATIONS.iter().copied())
    }
}

impl Segmenter {
    pub fn with_abbreviations<'a>(entries: impl IntoIterator<Item = &'a str>) -> Self {
        Segmenter {
            abbreviations: entries.into_iter().map(str::to_lowercase).collect(),
        }
    }

    /// Reads a guard list, one entry per line; blank lines and `#` comments
    /// are skipped.
    pub fn from_guard_list(text: &str) -> Self {
        Segmenter::with_abbreviations(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    fn is_abbreviation(&self, chars: &[char], dot: usize) -> bool {
        let mut start = dot;
        while start > 0 && !chars[start - 1].is_whitespace() {
            start -= 1;
        }
        let word: String = chars[start..=dot]
            .iter()
            .skip_while(|c| matches!(c, '(' | '[' | '"' | '\'' | '“' | '‘'))
            .flat_map(|c| c.to_lowercase())
            .collect();
        self.abbreviations.contains(&word)
    }

    /// Splits `text` into character ranges that partition it.
    pub fn split(&self, text: &str) -> Vec<Range<usize>> {
        let chars: Vec<char> = text.chars().collect();
        let len = chars.len();
        let mut cuts = Vec::new();
        let mut i = 0;
        while i < len {
            let c = chars[i];
            let mut end = None;
            if c == '\n' {
                end = Some(i + 1);
            } else if is_terminal(c) {
                let mut j = i + 1;
                while j < len && (is_terminal(chars[j]) || CLOSERS.contains(&chars[j])) {
                    j += 1;
                }
                let closes = is_fullwidth_terminal(c) || j == len || chars[j].is_whitespace();
                if closes && !(c == '.' && self.is_abbreviation(&chars, i)) {
                    end = Some(j);
                } else {
                    i = j;
                    continue;
                }
            }
            match end {
                Some(mut j) => {
                    while j < len && chars[j].is_whitespace() {
                        j += 1;
                    }
                    cuts.push(j);
                    i = j;
                }
                None => i += 1,
            }
        }
        if cuts.last() != Some(&len) {
            cuts.push(len);
        }

        let mut ranges: Vec<Range<usize>> = Vec::new();
        let mut start = 0;
        for cut in cuts {
            if cut > start {
                ranges.push(start..cut);
                start = cut;
            }
        }
        // Whitespace-only pieces attach to their predecessor (or successor
        // when leading).
        let blank = |r: &Range<usize>| chars[r.clone()].iter().all(|c| c.is_whitespace());
        let mut merged: Vec<Range<usize>> = Vec::with_capacity(ranges.len());
        let mut pending_start: Option<usize> = None;
        for r in ranges {
            if blank(&r) {
                match merged.last_mut() {
                    Some(prev) => prev.end = r.end,
                    None => {
                        pending_start.get_or_insert(r.start);
                    }
                }
            } else {
                let start = pending_start.take().unwrap_or(r.start);
                merged.push(start..r.end);
            }
        }
        if let Some(start) = pending_start {
            merged.push(start..len);
        }
        merged
    }
}

/// Assigns each piece to the chunk holding the majority of its characters.
///
/// Exact ties go to the earlier chunk. Zero-length pieces go to the chunk
/// containing their position (the last chunk at end of text). Returns `None`
/// only when there are no chunks.
pub fn assign_by_overlap(pieces: &[Range<usize>], chunks: &[Range<usize>]) -> Vec<Option<usize>> {
    pieces
        .iter()
        .map(|p| {
            if chunks.is_empty() {
                return None;
            }
            if p.is_empty() {
                let k = chunks
                    .iter()
                    .position(|c| c.contains(&p.start))
                    .unwrap_or(chunks.len() - 1);
                return Some(k);
            }
            let mut best = (0usize, 0usize);
            for (k, c) in chunks.iter().enumerate() {
                let overlap = p.end.min(c.end).saturating_sub(p.start.max(c.start));
                if overlap > best.1 {
                    best = (k, overlap);
                }
            }
            Some(best.0)
        })
        .collect()
}

/// Character span of every step's token inside `generated_text`, found by
/// sequential left-to-right alignment under the trace's joining policy.
pub fn step_char_spans(trace: &Trace) -> Vec<Range<usize>> {
    let mut pos = 0;
    trace
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if trace.space_joined && i > 0 {
                pos += 1;
            }
            let start = pos;
            pos += s.token_text.chars().count();
            start..pos
        })
        .collect()
}

/// Segments the trace's output with the default guard list.
pub fn segment_output(trace: &Trace) -> Vec<Chunk> {
    segment_with(trace, &Segmenter::default())
}

pub fn segment_with(trace: &Trace, segmenter: &Segmenter) -> Vec<Chunk> {
    let text = &trace.generated_text;
    let ranges = segmenter.split(text);
    let chars: Vec<char> = text.chars().collect();
    let mut chunks: Vec<Chunk> = ranges
        .iter()
        .enumerate()
        .map(|(index, r)| Chunk {
            index,
            char_range: r.clone(),
            token_steps: Vec::new(),
            text: chars[r.clone()].iter().collect(),
        })
        .collect();
    for (i, k) in assign_by_overlap(&step_char_spans(trace), &ranges)
        .into_iter()
        .enumerate()
    {
        if let Some(k) = k {
            chunks[k].token_steps.push(trace.steps[i].step);
        }
    }
    chunks
}
