//! Per-step signal reduction and token-to-source tracing.
//!
//! Each step's raw channel is reduced to one non-negative vector over the
//! context, normalized to unit sum. A source's mass is the sum of that vector
//! over the source's token range; the token is traced to the heaviest source
//! and its confidence is that mass. Positions of previously generated tokens
//! keep their share of the normalization but never count towards any source.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::chunking::tag_sequence;
use crate::model::{ScoreVector, SourceId, SourceUnit, StepRecord, Trace};

/// Channel preferred by `attmean` and `rawatt` when several are present.
pub const DEFAULT_ATTENTION_CHANNEL: &str = "attn";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReductionMethod {
    /// Mean over every layer and head.
    AttMean,
    /// Mean over the heads of the final layer.
    RawAtt,
    /// A named precomputed channel (e.g. gradient-weighted attention),
    /// negatives clamped to zero.
    Passthrough(String),
}

impl fmt::Display for ReductionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReductionMethod::AttMean => f.write_str("attmean"),
            ReductionMethod::RawAtt => f.write_str("rawatt"),
            ReductionMethod::Passthrough(name) => write!(f, "raw:{name}"),
        }
    }
}

impl FromStr for ReductionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "attmean" => Ok(ReductionMethod::AttMean),
            "rawatt" => Ok(ReductionMethod::RawAtt),
            _ => match s.strip_prefix("raw:") {
                Some(name) if !name.is_empty() => Ok(ReductionMethod::Passthrough(name.to_string())),
                _ => Err(format!(
                    "unknown channel method '{s}' (expected attmean, rawatt or raw:<name>)"
                )),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TracingError {
    #[error("step {step}: missing channel '{channel}'")]
    MissingChannel { step: usize, channel: String },
    #[error("step {step}: channel '{channel}' has no layer/head shape")]
    MissingLayerHeadShape { step: usize, channel: String },
}

/// The reduced, normalized signal `a_t(·)` of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedStepSignal {
    pub step: usize,
    /// Non-negative, summing to 1 (or all zero).
    pub scores: Vec<f64>,
}

/// Where one generated token was traced to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenTraceResult {
    pub step: usize,
    pub source_id: Option<SourceId>,
    pub confidence: f64,
    pub pos_tag: String,
    /// Curation vote weight; zero until curation fills it in.
    pub vote: f64,
}

fn attention_channel(step: &StepRecord) -> Result<(&str, &ScoreVector), TracingError> {
    if let Some((name, ch)) = step.channels.get_key_value(DEFAULT_ATTENTION_CHANNEL) {
        return Ok((name, ch));
    }
    if step.channels.len() == 1 {
        let (name, ch) = step.channels.iter().next().expect("one channel");
        return Ok((name, ch));
    }
    step.channels
        .iter()
        .find(|(_, ch)| ch.lh_shape.is_some())
        .map(|(n, ch)| (n.as_str(), ch))
        .ok_or_else(|| TracingError::MissingChannel {
            step: step.step,
            channel: DEFAULT_ATTENTION_CHANNEL.to_string(),
        })
}

fn mean_rows(rows: &[Vec<f64>], ctx: usize) -> Vec<f64> {
    let mut out = vec![0.0; ctx];
    for row in rows {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let k = rows.len().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= k);
    out
}

/// Clamps negatives to zero and rescales to unit sum; an all-zero vector
/// stays all zero.
pub fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
    }
    v
}

/// Reduces one step's raw channel(s) to `a_t(·)` over a context of `ctx`
/// positions.
pub fn reduce_channel(
    step: &StepRecord,
    method: &ReductionMethod,
    ctx: usize,
) -> Result<ReducedStepSignal, TracingError> {
    let raw = match method {
        ReductionMethod::AttMean | ReductionMethod::RawAtt => {
            let (name, ch) = attention_channel(step)?;
            let (layers, heads) = ch.lh_shape.ok_or_else(|| TracingError::MissingLayerHeadShape {
                step: step.step,
                channel: name.to_string(),
            })?;
            let rows = ch.to_rows(ctx);
            if *method == ReductionMethod::AttMean {
                mean_rows(&rows, ctx)
            } else {
                mean_rows(&rows[(layers - 1) * heads..layers * heads], ctx)
            }
        }
        ReductionMethod::Passthrough(name) => {
            let ch = step.channels.get(name).ok_or_else(|| TracingError::MissingChannel {
                step: step.step,
                channel: name.clone(),
            })?;
            mean_rows(&ch.to_rows(ctx), ctx)
        }
    };
    Ok(ReducedStepSignal {
        step: step.step,
        scores: normalize(raw),
    })
}

/// Mass of every source under `scores`, in the order of `sources`.
pub fn source_masses(scores: &[f64], sources: &[SourceUnit]) -> Vec<f64> {
    sources
        .iter()
        .map(|s| {
            let end = s.token_range.end.min(scores.len());
            let start = s.token_range.start.min(end);
            scores[start..end].iter().sum()
        })
        .collect()
}

/// Maps one step to its heaviest source; ties go to the lowest id.
pub fn trace_token(signal: &ReducedStepSignal, sources: &[SourceUnit]) -> TokenTraceResult {
    let masses = source_masses(&signal.scores, sources);
    let mut best: Option<(SourceId, f64)> = None;
    for (s, &m) in sources.iter().zip(&masses) {
        if m <= 0.0 {
            continue;
        }
        best = match best {
            Some((id, bm)) if bm > m || (bm == m && id < s.id) => Some((id, bm)),
            _ => Some((s.id, m)),
        };
    }
    TokenTraceResult {
        step: signal.step,
        source_id: best.map(|(id, _)| id),
        confidence: best.map_or(0.0, |(_, m)| m),
        pos_tag: String::new(),
        vote: 0.0,
    }
}

/// Traces every step of `trace` against `sources` (normally `trace.sources`;
/// a subset restricts tracing to e.g. one modality).
pub fn trace_with_sources(
    trace: &Trace,
    sources: &[SourceUnit],
    method: &ReductionMethod,
) -> Result<Vec<TokenTraceResult>, TracingError> {
    let fallback = tag_sequence(&trace.steps.iter().map(|s| s.token_text.as_str()).collect::<Vec<_>>());
    trace
        .steps
        .iter()
        .zip(fallback)
        .map(|(step, fallback_tag)| {
            let signal = reduce_channel(step, method, trace.context_len(step.step))?;
            let mut r = trace_token(&signal, sources);
            r.pos_tag = step.pos_tag.clone().unwrap_or_else(|| fallback_tag.to_string());
            Ok(r)
        })
        .collect()
}

/// One result per step, in step order.
pub fn trace_all(trace: &Trace, method: &ReductionMethod) -> Result<Vec<TokenTraceResult>, TracingError> {
    trace_with_sources(trace, &trace.sources, method)
}
