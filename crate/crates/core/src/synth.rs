//! Synthetic traces with planted token-to-source ground truth.
//!
//! Every input source is a contiguous block of `tokens_per_source` tokens.
//! Each output chunk is planted on a set of sources; its content steps are
//! split into contiguous blocks, one per planted source, and each step puts
//! `1 - noise` of its attention mass uniformly on its source's tokens and
//! `noise` uniformly over every other context position. With zero noise the
//! attribution pipeline must recover the planted sets exactly.

use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gold::{GoldChunk, GoldLabels};
use crate::model::{
    InputToken, Modality, ScoreData, ScoreVector, SourceId, SourceUnit, StepRecord, TimeSpan, TokenTimeline, Trace,
    ValidationError,
};
use crate::tracing::DEFAULT_ATTENTION_CHANNEL;

const NOUNS: &[&str] = &[
    "cat", "dog", "bird", "river", "mountain", "engine", "window", "garden", "forest", "harbor", "lantern", "meadow",
    "planet", "signal", "bridge", "castle", "market", "valley", "comet", "island", "canyon", "violin", "tower",
    "meteor",
];

const OPTION_LABELS: [&str; 5] = ["A", "B", "C", "D", "E"];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Invalid(String),
    #[error("invalid synth spec file: {0}")]
    Parse(String),
    #[error("generated trace failed validation: {0}")]
    Validation(#[from] ValidationError),
}

/// How randomly planted sources are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Placement {
    /// Every source equally likely.
    #[default]
    Uniform,
    /// Source weight linear in its normalized position, tuned so the
    /// expected position equals `mean`.
    Linear { mean: f64 },
}

impl Placement {
    /// Sampling weight per source index.
    ///
    /// With positions `m_j = (j + 0.5) / N` and weights `1 + k (m_j - 1/2)`,
    /// the weighted mean position is `1/2 + k (N^2 - 1) / (12 N^2)`.
    pub fn weights(&self, n: usize) -> Result<Vec<f64>, SynthError> {
        match *self {
            Placement::Uniform => Ok(vec![1.0; n]),
            Placement::Linear { mean } => {
                if n < 2 {
                    return Err(SynthError::Invalid("linear placement needs at least 2 sources".into()));
                }
                let nf = n as f64;
                let k = (mean - 0.5) * 12.0 * nf * nf / (nf * nf - 1.0);
                let w: Vec<f64> = (0..n).map(|j| 1.0 + k * ((j as f64 + 0.5) / nf - 0.5)).collect();
                if w.iter().any(|x| *x < 0.0) {
                    return Err(SynthError::Invalid(format!(
                        "placement mean {mean} is not reachable with {n} sources"
                    )));
                }
                Ok(w)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Defaults to `synth-<seed>`.
    pub example_id: Option<String>,
    pub n_sources: usize,
    pub tokens_per_source: usize,
    /// Content chunks, excluding the answer chunk.
    pub chunks: usize,
    pub steps_per_chunk: usize,
    /// Source `j` has modality `modalities[j % len]`.
    pub modalities: Vec<Modality>,
    pub noise: f64,
    pub seed: u64,
    /// Explicit planted source ids per content chunk; drawn at random when
    /// absent.
    pub planted: Option<Vec<Vec<u32>>>,
    pub sources_per_chunk: usize,
    pub placement: Placement,
    /// When set, sources `0..min(n_sources, 5)` become options `A..` and a
    /// final chunk "The answer is X." is planted on option X's source.
    pub option_label: Option<String>,
    /// Function-word steps per content chunk, spread over non-planted sources
    /// of the first planted source's modality.
    pub distractor_steps: usize,
    pub layers: usize,
    pub heads: usize,
    /// Emit gold as time spans of the planted sources.
    pub time_gold: bool,
    /// Duration of one timed input token.
    pub token_seconds: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            example_id: None,
            n_sources: 4,
            tokens_per_source: 8,
            chunks: 2,
            steps_per_chunk: 6,
            modalities: vec![Modality::Text],
            noise: 0.0,
            seed: 0,
            planted: None,
            sources_per_chunk: 1,
            placement: Placement::Uniform,
            option_label: None,
            distractor_steps: 0,
            layers: 1,
            heads: 1,
            time_gold: false,
            token_seconds: 0.5,
        }
    }
}

impl SynthSpec {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        toml::from_str(text).map_err(|e| SynthError::Parse(e.to_string()))
    }

    pub fn example_id(&self) -> String {
        self.example_id
            .clone()
            .unwrap_or_else(|| format!("synth-{}", self.seed))
    }

    fn modality_of(&self, j: usize) -> Modality {
        self.modalities[j % self.modalities.len()]
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if !(0.0..=1.0).contains(&self.noise) {
            return bad(format!("noise {} outside [0, 1]", self.noise));
        }
        if self.n_sources == 0 || self.tokens_per_source == 0 {
            return bad("need at least one source of at least one token".into());
        }
        if self.modalities.is_empty() {
            return bad("modalities must not be empty".into());
        }
        if self.layers == 0 || self.heads == 0 {
            return bad("layers and heads must be positive".into());
        }
        if !(self.token_seconds > 0.0 && self.token_seconds.is_finite()) {
            return bad("token_seconds must be positive".into());
        }
        if self.chunks == 0 && self.option_label.is_none() {
            return bad("need at least one chunk".into());
        }
        match &self.planted {
            Some(p) => {
                if p.len() != self.chunks {
                    return bad(format!("{} planted sets for {} chunks", p.len(), self.chunks));
                }
                for set in p {
                    if set.is_empty() || set.len() > self.steps_per_chunk {
                        return bad(format!(
                            "planted set {set:?} must be non-empty and at most steps_per_chunk"
                        ));
                    }
                    if let Some(id) = set.iter().find(|id| **id as usize >= self.n_sources) {
                        return bad(format!("planted id {id} out of range"));
                    }
                    if set.iter().collect::<BTreeSet<_>>().len() != set.len() {
                        return bad(format!("planted set {set:?} has duplicates"));
                    }
                }
            }
            None => {
                if self.sources_per_chunk == 0 || self.sources_per_chunk > self.n_sources {
                    return bad("sources_per_chunk must be in 1..=n_sources".into());
                }
                if self.sources_per_chunk > self.steps_per_chunk {
                    return bad("sources_per_chunk exceeds steps_per_chunk".into());
                }
            }
        }
        if let Some(label) = &self.option_label {
            let n_options = self.n_sources.min(OPTION_LABELS.len());
            if !OPTION_LABELS[..n_options].contains(&label.as_str()) {
                return bad(format!(
                    "option label '{label}' not among the first {n_options} options"
                ));
            }
        }
        self.placement.weights(self.n_sources)?;
        Ok(())
    }
}

fn draw_planted(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<u32>>, SynthError> {
    if let Some(p) = &spec.planted {
        return Ok(p.clone());
    }
    let base = spec.placement.weights(spec.n_sources)?;
    (0..spec.chunks)
        .map(|_| {
            let mut w = base.clone();
            let mut set = Vec::with_capacity(spec.sources_per_chunk);
            for _ in 0..spec.sources_per_chunk {
                let dist = WeightedIndex::new(&w)
                    .map_err(|_| SynthError::Invalid("placement leaves too few sources with positive weight".into()))?;
                let j = dist.sample(rng);
                w[j] = 0.0;
                set.push(j as u32);
            }
            set.sort_unstable();
            Ok(set)
        })
        .collect()
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

struct PlannedStep {
    text: String,
    pos: &'static str,
    source: usize,
}

/// Builds the trace and its gold labels; deterministic in `spec.seed`.
pub fn generate_trace(spec: &SynthSpec) -> Result<(Trace, GoldLabels), SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tps = spec.tokens_per_source;
    let n = spec.n_sources * tps;

    let mut tokens = Vec::with_capacity(n);
    let mut clock = 0.0;
    for j in 0..spec.n_sources {
        let m = spec.modality_of(j);
        for _ in 0..tps {
            let time = m.is_timed().then(|| {
                let t = TimeSpan::new(clock, clock + spec.token_seconds);
                clock += spec.token_seconds;
                t
            });
            let text = (m == Modality::Text).then(|| format!(" {}", NOUNS.choose(&mut rng).expect("non-empty")));
            tokens.push(InputToken {
                index: tokens.len(),
                modality: m,
                text,
                time,
            });
        }
    }
    let timeline = TokenTimeline {
        tokens,
        duration_s: (clock > 0.0).then_some(clock),
    };
    let sources: Vec<SourceUnit> = (0..spec.n_sources)
        .map(|j| {
            let range = j * tps..(j + 1) * tps;
            let toks = &timeline.tokens[range.clone()];
            let time = match (toks.first().and_then(|t| t.time), toks.last().and_then(|t| t.time)) {
                (Some(a), Some(b)) => Some(TimeSpan::new(a.start_s, b.end_s)),
                _ => None,
            };
            let text: String = toks.iter().filter_map(|t| t.text.as_deref()).collect();
            SourceUnit {
                id: SourceId(j as u32),
                modality: spec.modality_of(j),
                token_range: range,
                time,
                text: (!text.is_empty()).then_some(text),
                embedding: None,
            }
        })
        .collect();

    let planted = draw_planted(spec, &mut rng)?;
    let mut plan: Vec<PlannedStep> = Vec::new();
    let mut gold_sets: Vec<Vec<u32>> = Vec::new();
    for set in &planted {
        let mut chunk_steps: Vec<PlannedStep> = Vec::new();
        let m = set.len();
        for (b, &sid) in set.iter().enumerate() {
            let size = spec.steps_per_chunk / m + usize::from(b < spec.steps_per_chunk % m);
            for _ in 0..size {
                chunk_steps.push(PlannedStep {
                    text: NOUNS.choose(&mut rng).expect("non-empty").to_string(),
                    pos: "NOUN",
                    source: sid as usize,
                });
            }
        }
        if spec.distractor_steps > 0 {
            let modality = spec.modality_of(set[0] as usize);
            let others: Vec<usize> = (0..spec.n_sources)
                .filter(|j| spec.modality_of(*j) == modality && !set.contains(&(*j as u32)))
                .collect();
            if others.is_empty() {
                return Err(SynthError::Invalid(
                    "distractor steps need a non-planted source of the same modality".into(),
                ));
            }
            let last = chunk_steps.pop().expect("steps_per_chunk >= 1");
            for d in 0..spec.distractor_steps {
                let (text, pos) = if d % 2 == 0 { ("the", "DET") } else { ("of", "ADP") };
                chunk_steps.push(PlannedStep {
                    text: text.to_string(),
                    pos,
                    source: others[d % others.len()],
                });
            }
            chunk_steps.push(last);
        }
        plan.extend(finish_sentence(chunk_steps, plan.is_empty()));
        gold_sets.push(set.clone());
    }
    let mut option_map = None;
    if let Some(label) = &spec.option_label {
        let n_options = spec.n_sources.min(OPTION_LABELS.len());
        let map: BTreeMap<String, SourceId> = (0..n_options)
            .map(|j| (OPTION_LABELS[j].to_string(), SourceId(j as u32)))
            .collect();
        let target = map[label].0 as usize;
        let words = [
            ("The", "DET"),
            ("answer", "NOUN"),
            ("is", "AUX"),
            (label.as_str(), "PROPN"),
        ];
        let steps: Vec<PlannedStep> = words
            .iter()
            .map(|(w, pos)| PlannedStep {
                text: w.to_string(),
                pos,
                source: target,
            })
            .collect();
        plan.extend(finish_sentence(steps, plan.is_empty()));
        gold_sets.push(vec![target as u32]);
        option_map = Some(map);
    }

    let rows = spec.layers * spec.heads;
    let steps: Vec<StepRecord> = plan
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let t = i + 1;
            let ctx = n + t - 1;
            let target = p.source * tps..(p.source + 1) * tps;
            let off = ctx - tps;
            let (on_w, off_w) = if off == 0 {
                (1.0 / tps as f64, 0.0)
            } else {
                ((1.0 - spec.noise) / tps as f64, spec.noise / off as f64)
            };
            let row: Vec<f64> = (0..ctx)
                .map(|c| if target.contains(&c) { on_w } else { off_w })
                .collect();
            let data: Vec<f64> = (0..rows).flat_map(|_| row.iter().copied()).collect();
            StepRecord {
                step: t,
                token_text: p.text,
                channels: BTreeMap::from([(
                    DEFAULT_ATTENTION_CHANNEL.to_string(),
                    ScoreVector {
                        data: ScoreData::Dense(data),
                        lh_shape: Some((spec.layers, spec.heads)),
                    },
                )]),
                pos_tag: Some(p.pos.to_string()),
            }
        })
        .collect();

    let gold_chunks = gold_sets
        .iter()
        .map(|set| {
            if spec.time_gold {
                let spans = set
                    .iter()
                    .map(|id| {
                        sources[*id as usize]
                            .time
                            .ok_or_else(|| SynthError::Invalid(format!("time_gold with untimed planted source {id}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(GoldChunk::Spans {
                    spans: crate::gold::merge_spans(&spans),
                })
            } else {
                Ok(GoldChunk::Sources {
                    source_ids: set.iter().map(|&i| SourceId(i)).collect(),
                })
            }
        })
        .collect::<Result<Vec<_>, SynthError>>()?;

    let example_id = spec.example_id();
    let mut trace = Trace::new(example_id.clone(), timeline, sources, steps, false);
    trace.option_map = option_map;
    trace.validate()?;
    Ok((
        trace,
        GoldLabels {
            example_id,
            chunks: gold_chunks,
        },
    ))
}

/// Spaces and capitalizes a sentence's words and ends it with a period.
fn finish_sentence(mut steps: Vec<PlannedStep>, first_in_output: bool) -> Vec<PlannedStep> {
    let n = steps.len();
    for (i, s) in steps.iter_mut().enumerate() {
        let word = if i == 0 { capitalize(&s.text) } else { s.text.clone() };
        let lead = if i == 0 && first_in_output { "" } else { " " };
        let tail = if i + 1 == n { "." } else { "" };
        s.text = format!("{lead}{word}{tail}");
    }
    steps
}
