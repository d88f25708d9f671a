//! Gold attribution labels (`.gold.json`).
//!
//! ```text
//! {"example_id":"ex","chunks":[{"source_ids":[0,2]},{"spans":[[3.0,7.0]]}]}
//! ```
//!
//! Each record is either a set of source ids (text/image tasks) or a list of
//! closed time intervals in seconds (audio/video tasks). Overlapping intervals
//! are merged on load.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunking::segment_output;
use crate::model::{SourceId, TimeSpan, Trace, ValidationError};

#[derive(Debug, Error)]
pub enum GoldError {
    #[error("invalid gold file: {0}")]
    Parse(String),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

impl GoldError {
    pub fn code(&self) -> &'static str {
        match self {
            GoldError::Parse(_) => "parse",
            GoldError::Validation(v) => v.code(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GoldChunk {
    Sources { source_ids: BTreeSet<SourceId> },
    Spans { spans: Vec<TimeSpan> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldLabels {
    pub example_id: String,
    pub chunks: Vec<GoldChunk>,
}

impl GoldLabels {
    pub fn chunk_count(&self) -> usize {
        self.chunks.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("gold serializes")
    }
}

/// Sorts and merges overlapping intervals. Touching intervals stay separate
/// so a zero-length span at the end of another keeps its own bin.
pub fn merge_spans(spans: &[TimeSpan]) -> Vec<TimeSpan> {
    let mut sorted: Vec<TimeSpan> = spans.to_vec();
    sorted.sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then(a.end_s.total_cmp(&b.end_s)));
    let mut out: Vec<TimeSpan> = Vec::with_capacity(sorted.len());
    for s in sorted {
        match out.last_mut() {
            Some(last) if s.start_s < last.end_s => last.end_s = last.end_s.max(s.end_s),
            _ => out.push(s),
        }
    }
    out
}

/// Parses gold labels without reference to a trace: intervals are checked
/// and merged.
pub fn parse_gold(bytes: &[u8]) -> Result<GoldLabels, GoldError> {
    let mut gold: GoldLabels = serde_json::from_slice(bytes).map_err(|e| GoldError::Parse(e.to_string()))?;
    for chunk in gold.chunks.iter_mut() {
        if let GoldChunk::Spans { spans } = chunk {
            for s in spans.iter() {
                if !(s.start_s.is_finite() && s.end_s.is_finite()) || s.start_s > s.end_s || s.start_s < 0.0 {
                    return Err(ValidationError::InvertedInterval {
                        start: s.start_s,
                        end: s.end_s,
                    }
                    .into());
                }
            }
            *spans = merge_spans(spans);
        }
    }
    Ok(gold)
}

/// Parses gold labels and checks them against `trace`: same example, known
/// source ids, and one record per output chunk.
pub fn validate_gold(bytes: &[u8], trace: &Trace) -> Result<GoldLabels, GoldError> {
    let gold = parse_gold(bytes)?;
    if gold.example_id != trace.example_id {
        return Err(ValidationError::ExampleIdMismatch {
            gold: gold.example_id,
            trace: trace.example_id.clone(),
        }
        .into());
    }
    for chunk in &gold.chunks {
        if let GoldChunk::Sources { source_ids } = chunk {
            if let Some(id) = source_ids.iter().find(|id| trace.source(**id).is_none()) {
                return Err(ValidationError::UnknownSourceId(*id).into());
            }
        }
    }
    let chunks = segment_output(trace).len();
    if chunks != gold.chunk_count() {
        return Err(ValidationError::ChunkCountMismatch {
            gold: gold.chunk_count(),
            chunks,
        }
        .into());
    }
    Ok(gold)
}
