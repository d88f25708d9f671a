//! Shared domain types: the input token timeline, source units, per-step score
//! channels and the trace that ties them together.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
    Audio,
    Video,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Text, Modality::Image, Modality::Audio, Modality::Video];

    /// Audio and video units are located by time rather than by token position.
    pub fn is_timed(self) -> bool {
        matches!(self, Modality::Audio | Modality::Video)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Audio => "audio",
            Modality::Video => "video",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Modality::Text),
            "image" => Ok(Modality::Image),
            "audio" => Ok(Modality::Audio),
            "video" => Ok(Modality::Video),
            other => Err(format!("unknown modality '{other}'")),
        }
    }
}

/// Identifier of a [`SourceUnit`] within one trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceId(pub u32);

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Interval in seconds, serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64)", into = "(f64, f64)")]
pub struct TimeSpan {
    pub start_s: f64,
    pub end_s: f64,
}

impl TimeSpan {
    pub fn new(start_s: f64, end_s: f64) -> Self {
        TimeSpan { start_s, end_s }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start_s + self.end_s)
    }

    fn check(&self) -> Result<(), ValidationError> {
        if !self.start_s.is_finite() || !self.end_s.is_finite() || self.start_s > self.end_s {
            return Err(ValidationError::InvertedInterval {
                start: self.start_s,
                end: self.end_s,
            });
        }
        Ok(())
    }
}

impl From<(f64, f64)> for TimeSpan {
    fn from((s, e): (f64, f64)) -> Self {
        TimeSpan::new(s, e)
    }
}

impl From<TimeSpan> for (f64, f64) {
    fn from(t: TimeSpan) -> Self {
        (t.start_s, t.end_s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputToken {
    pub index: usize,
    pub modality: Modality,
    pub text: Option<String>,
    pub time: Option<TimeSpan>,
}

/// The interleaved input sequence the model was conditioned on.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TokenTimeline {
    pub tokens: Vec<InputToken>,
    pub duration_s: Option<f64>,
}

impl TokenTimeline {
    /// Number of input tokens `n`.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if let Some(d) = self.duration_s {
            if !d.is_finite() || d < 0.0 {
                return Err(ValidationError::InvalidDuration(d));
            }
        }
        for (expected, tok) in self.tokens.iter().enumerate() {
            if tok.index != expected {
                return Err(ValidationError::TokenIndex {
                    expected,
                    found: tok.index,
                });
            }
            if let Some(t) = tok.time {
                t.check()?;
                if t.start_s < 0.0 || self.duration_s.is_some_and(|d| t.end_s > d) {
                    return Err(ValidationError::TimeOutOfBounds {
                        what: format!("token {expected}"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// A contiguous attribution target: a text span, an image token block or a
/// media time interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceUnit {
    pub id: SourceId,
    pub modality: Modality,
    pub token_range: Range<usize>,
    pub time: Option<TimeSpan>,
    pub text: Option<String>,
    pub embedding: Option<Vec<f64>>,
}

/// Checks the source invariants against a timeline of `n` tokens.
pub fn validate_sources(sources: &[SourceUnit], timeline: &TokenTimeline) -> Result<(), ValidationError> {
    let n = timeline.len();
    let mut seen = std::collections::BTreeSet::new();
    for s in sources {
        if !seen.insert(s.id) {
            return Err(ValidationError::DuplicateSourceId(s.id));
        }
        if s.token_range.start >= s.token_range.end {
            return Err(ValidationError::EmptySourceRange(s.id));
        }
        if s.token_range.end > n {
            return Err(ValidationError::SourceOutOfBounds {
                id: s.id,
                end: s.token_range.end,
                len: n,
            });
        }
        match s.time {
            Some(t) => {
                t.check()?;
                if t.start_s < 0.0 || timeline.duration_s.is_some_and(|d| t.end_s > d) {
                    return Err(ValidationError::TimeOutOfBounds {
                        what: format!("source {}", s.id),
                    });
                }
            }
            None if s.modality.is_timed() => return Err(ValidationError::UntimedMediaSource(s.id)),
            None => {}
        }
        if let Some(e) = &s.embedding {
            if e.iter().any(|v| !v.is_finite()) {
                return Err(ValidationError::NonFiniteEmbedding(s.id));
            }
        }
    }
    let mut by_start: Vec<&SourceUnit> = sources.iter().collect();
    by_start.sort_by_key(|s| (s.token_range.start, s.id));
    for pair in by_start.windows(2) {
        if pair[1].token_range.start < pair[0].token_range.end {
            return Err(ValidationError::SourcesOverlap {
                first: pair[0].id,
                second: pair[1].id,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreData {
    Dense(Vec<f64>),
    Sparse { idx: Vec<usize>, val: Vec<f64> },
}

/// Raw scores of one channel at one decoding step.
///
/// With `lh_shape = Some((L, H))` the data holds `L * H` rows of context
/// length, flattened row-major with row index `layer * H + head`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub data: ScoreData,
    pub lh_shape: Option<(usize, usize)>,
}

impl ScoreVector {
    pub fn dense(values: Vec<f64>) -> Self {
        ScoreVector {
            data: ScoreData::Dense(values),
            lh_shape: None,
        }
    }

    pub fn rows(&self) -> usize {
        self.lh_shape.map_or(1, |(l, h)| l * h)
    }

    /// Expands the channel into `rows()` dense rows of length `ctx`.
    pub fn to_rows(&self, ctx: usize) -> Vec<Vec<f64>> {
        let rows = self.rows();
        let mut out = vec![vec![0.0; ctx]; rows];
        match &self.data {
            ScoreData::Dense(v) => {
                for (i, x) in v.iter().enumerate().take(rows * ctx) {
                    out[i / ctx][i % ctx] = *x;
                }
            }
            ScoreData::Sparse { idx, val } => {
                for (&i, &x) in idx.iter().zip(val) {
                    if i < rows * ctx {
                        out[i / ctx][i % ctx] = x;
                    }
                }
            }
        }
        out
    }

    fn values(&self) -> &[f64] {
        match &self.data {
            ScoreData::Dense(v) => v,
            ScoreData::Sparse { val, .. } => val,
        }
    }

    pub(crate) fn validate(&self, step: usize, channel: &str, ctx: usize) -> Result<(), ValidationError> {
        let err_ctx = || (step, channel.to_string());
        if let Some((l, h)) = self.lh_shape {
            if l == 0 || h == 0 {
                let (step, channel) = err_ctx();
                return Err(ValidationError::LayerHeadShape { step, channel });
            }
        }
        let expected = self.rows() * ctx;
        match &self.data {
            ScoreData::Dense(v) => {
                if v.len() != expected {
                    let (step, channel) = err_ctx();
                    return Err(ValidationError::ContextLength {
                        step,
                        channel,
                        expected,
                        found: v.len(),
                    });
                }
            }
            ScoreData::Sparse { idx, val } => {
                let increasing = idx.windows(2).all(|w| w[0] < w[1]);
                if idx.len() != val.len() || !increasing || idx.last().is_some_and(|&i| i >= expected) {
                    let (step, channel) = err_ctx();
                    return Err(ValidationError::SparseIndex { step, channel });
                }
            }
        }
        let values = self.values();
        if values.iter().any(|v| !v.is_finite()) {
            let (step, channel) = err_ctx();
            return Err(ValidationError::NonFiniteScore { step, channel });
        }
        // Layer/head channels hold attention probabilities; only flat
        // gradient-derived channels may go negative.
        if self.lh_shape.is_some() && values.iter().any(|v| *v < 0.0) {
            let (step, channel) = err_ctx();
            return Err(ValidationError::NegativeAttention { step, channel });
        }
        Ok(())
    }
}

/// Scores recorded while generating token `y_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Decoding index, 1-based.
    pub step: usize,
    pub token_text: String,
    pub channels: BTreeMap<String, ScoreVector>,
    pub pos_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub schema_version: u32,
    pub example_id: String,
    pub timeline: TokenTimeline,
    pub sources: Vec<SourceUnit>,
    pub steps: Vec<StepRecord>,
    /// Always equal to `detokenize(&steps, space_joined)`.
    pub generated_text: String,
    pub option_map: Option<BTreeMap<String, SourceId>>,
    pub space_joined: bool,
}

/// Joins step token texts under the trace's detokenization policy.
pub fn detokenize(steps: &[StepRecord], space_joined: bool) -> String {
    let sep = if space_joined { " " } else { "" };
    steps
        .iter()
        .map(|s| s.token_text.as_str())
        .collect::<Vec<_>>()
        .join(sep)
}

impl Trace {
    /// Builds a trace, deriving `generated_text` from the steps.
    pub fn new(
        example_id: impl Into<String>,
        timeline: TokenTimeline,
        sources: Vec<SourceUnit>,
        steps: Vec<StepRecord>,
        space_joined: bool,
    ) -> Self {
        let generated_text = detokenize(&steps, space_joined);
        Trace {
            schema_version: crate::SCHEMA_VERSION,
            example_id: example_id.into(),
            timeline,
            sources,
            steps,
            generated_text,
            option_map: None,
            space_joined,
        }
    }

    pub fn source(&self, id: SourceId) -> Option<&SourceUnit> {
        self.sources.iter().find(|s| s.id == id)
    }

    /// Context length seen when generating step `t` (input plus prior output).
    pub fn context_len(&self, step: usize) -> usize {
        self.timeline.len() + step - 1
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        self.timeline.validate()?;
        validate_sources(&self.sources, &self.timeline)?;
        for (i, step) in self.steps.iter().enumerate() {
            if step.step != i + 1 {
                return Err(ValidationError::StepGap {
                    expected: i + 1,
                    found: step.step,
                });
            }
            let ctx = self.context_len(step.step);
            for (name, ch) in &step.channels {
                ch.validate(step.step, name, ctx)?;
            }
        }
        if let Some(map) = &self.option_map {
            for (label, id) in map {
                if self.source(*id).is_none() {
                    return Err(ValidationError::UnknownOptionSource {
                        label: label.clone(),
                        id: *id,
                    });
                }
            }
        }
        if self.generated_text != detokenize(&self.steps, self.space_joined) {
            return Err(ValidationError::GeneratedTextMismatch);
        }
        Ok(())
    }
}

/// Structural invariant violations. [`ValidationError::code`] is stable.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("token index gap: expected {expected}, found {found}")]
    TokenIndex { expected: usize, found: usize },
    #[error("invalid media duration {0}")]
    InvalidDuration(f64),
    #[error("inverted interval ({start}, {end})")]
    InvertedInterval { start: f64, end: f64 },
    #[error("{what} has a time interval outside the timeline")]
    TimeOutOfBounds { what: String },
    #[error("source {0} has an empty token range")]
    EmptySourceRange(SourceId),
    #[error("source {id} ends at {end}, beyond timeline length {len}")]
    SourceOutOfBounds { id: SourceId, end: usize, len: usize },
    #[error("sources overlap: {first} and {second}")]
    SourcesOverlap { first: SourceId, second: SourceId },
    #[error("duplicate source id {0}")]
    DuplicateSourceId(SourceId),
    #[error("audio/video source {0} has no time interval")]
    UntimedMediaSource(SourceId),
    #[error("source {0} has a non-finite embedding")]
    NonFiniteEmbedding(SourceId),
    #[error("step gap: expected step {expected}, found {found}")]
    StepGap { expected: usize, found: usize },
    #[error("step {step} channel '{channel}': expected {expected} values, found {found}")]
    ContextLength {
        step: usize,
        channel: String,
        expected: usize,
        found: usize,
    },
    #[error("step {step} channel '{channel}': sparse indices must be strictly increasing, within context and paired with values")]
    SparseIndex { step: usize, channel: String },
    #[error("step {step} channel '{channel}': invalid layer/head shape")]
    LayerHeadShape { step: usize, channel: String },
    #[error("step {step} channel '{channel}': non-finite score")]
    NonFiniteScore { step: usize, channel: String },
    #[error("step {step} channel '{channel}': negative attention weight")]
    NegativeAttention { step: usize, channel: String },
    #[error("option '{label}' refers to unknown source {id}")]
    UnknownOptionSource { label: String, id: SourceId },
    #[error("generated text does not match the concatenated step tokens")]
    GeneratedTextMismatch,
    #[error("gold has {gold} chunks but the generation segments into {chunks}")]
    ChunkCountMismatch { gold: usize, chunks: usize },
    #[error("unknown source id {0}")]
    UnknownSourceId(SourceId),
    #[error("gold example '{gold}' does not match trace example '{trace}'")]
    ExampleIdMismatch { gold: String, trace: String },
}

impl ValidationError {
    pub fn code(&self) -> &'static str {
        use ValidationError::*;
        match self {
            TokenIndex { .. } => "token-index",
            InvalidDuration(_) => "invalid-duration",
            InvertedInterval { .. } => "inverted-interval",
            TimeOutOfBounds { .. } => "time-out-of-bounds",
            EmptySourceRange(_) => "empty-source-range",
            SourceOutOfBounds { .. } => "source-out-of-bounds",
            SourcesOverlap { .. } => "sources-overlap",
            DuplicateSourceId(_) => "duplicate-source-id",
            UntimedMediaSource(_) => "untimed-media-source",
            NonFiniteEmbedding(_) => "non-finite-embedding",
            StepGap { .. } => "step-gap",
            ContextLength { .. } => "context-length",
            SparseIndex { .. } => "sparse-index",
            LayerHeadShape { .. } => "layer-head-shape",
            NonFiniteScore { .. } => "non-finite-score",
            NegativeAttention { .. } => "negative-attention",
            UnknownOptionSource { .. } => "unknown-option-source",
            GeneratedTextMismatch => "generated-text-mismatch",
            ChunkCountMismatch { .. } => "chunk-count-mismatch",
            UnknownSourceId(_) => "unknown-source-id",
            ExampleIdMismatch { .. } => "example-id-mismatch",
        }
    }
}
