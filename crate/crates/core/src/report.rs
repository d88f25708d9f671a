//! Machine-readable result files.
//!
//! `attr.json` holds an [`AttributionReport`]: per example, the source table
//! needed to evaluate or analyze without the trace, and per chunk the
//! selected sources with their curation diagnostics. `eval.json` holds an
//! [`EvaluationReport`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::curation::{CurationDiagnostics, SpanAttribution};
use crate::evaluation::{
    aggregate_dataset, consistency_rate, span_prf, time_f1, Aggregate, AverageMode, EvalError, OptionConsistencyResult,
    Prf,
};
use crate::gold::{GoldChunk, GoldLabels};
use crate::model::{Modality, SourceId, TimeSpan, Trace};

pub const ATTRIBUTION_KIND: &str = "attribution";
pub const EVALUATION_KIND: &str = "evaluation";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub id: SourceId,
    pub modality: Modality,
    pub token_range: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkAttribution {
    pub index: usize,
    pub text: String,
    pub token_steps: Vec<usize>,
    pub selected: Vec<SourceId>,
    pub diagnostics: CurationDiagnostics,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_modality: BTreeMap<Modality, CurationDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleAttribution {
    pub example_id: String,
    pub n_input_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    pub sources: Vec<SourceSummary>,
    pub chunks: Vec<ChunkAttribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_consistency: Option<OptionConsistencyResult>,
}

impl ExampleAttribution {
    pub fn new(trace: &Trace, spans: &[SpanAttribution]) -> Self {
        ExampleAttribution {
            example_id: trace.example_id.clone(),
            n_input_tokens: trace.timeline.len(),
            duration_s: trace.timeline.duration_s,
            sources: trace
                .sources
                .iter()
                .map(|s| SourceSummary {
                    id: s.id,
                    modality: s.modality,
                    token_range: [s.token_range.start, s.token_range.end],
                    time: s.time,
                })
                .collect(),
            chunks: spans
                .iter()
                .map(|s| ChunkAttribution {
                    index: s.chunk.index,
                    text: s.chunk.text.clone(),
                    token_steps: s.chunk.token_steps.clone(),
                    selected: s.selected.clone(),
                    diagnostics: s.diagnostics.clone(),
                    by_modality: s.by_modality.clone(),
                })
                .collect(),
            option_consistency: None,
        }
    }

    pub fn source(&self, id: SourceId) -> Option<&SourceSummary> {
        self.sources.iter().find(|s| s.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub kind: String,
    /// Reduction method, or the baseline name.
    pub method: String,
    pub config_hash: String,
    pub examples: Vec<ExampleAttribution>,
}

impl AttributionReport {
    pub fn new(method: impl Into<String>, config_hash: impl Into<String>, examples: Vec<ExampleAttribution>) -> Self {
        AttributionReport {
            kind: ATTRIBUTION_KIND.to_string(),
            method: method.into(),
            config_hash: config_hash.into(),
            examples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Multi-label F1 over source ids.
    Span,
    /// F1 over fixed-width time bins.
    Time,
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "span" => Ok(Metric::Span),
            "time" => Ok(Metric::Time),
            _ => Err(format!("unknown mode '{s}' (expected span or time)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    /// One score per chunk.
    Chunk,
    /// One score per example over the union of its chunks.
    Example,
}

impl FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chunk" => Ok(Scope::Chunk),
            "example" => Ok(Scope::Example),
            _ => Err(format!("unknown scope '{s}' (expected chunk or example)")),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Span => "span",
            Metric::Time => "time",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleEvaluation {
    pub example_id: String,
    pub units: Vec<Prf>,
    pub micro: Prf,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySummary {
    pub rate: Option<f64>,
    pub consistent: usize,
    pub scored: usize,
    pub unparsable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub micro: Aggregate,
    #[serde(rename = "macro")]
    pub macro_: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub kind: String,
    pub metric: Metric,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_s: Option<f64>,
    pub scope: Scope,
    pub method: String,
    pub config_hash: String,
    pub examples: Vec<ExampleEvaluation>,
    pub summary: EvaluationSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_consistency: Option<ConsistencySummary>,
}

fn gold_ids(chunk: &GoldChunk) -> Result<&BTreeSet<SourceId>, EvalError> {
    match chunk {
        GoldChunk::Sources { source_ids } => Ok(source_ids),
        GoldChunk::Spans { .. } => Err(EvalError::GoldKind("span mode needs source-id gold".into())),
    }
}

fn gold_spans(chunk: &GoldChunk, ex: &ExampleAttribution) -> Result<Vec<TimeSpan>, EvalError> {
    match chunk {
        GoldChunk::Spans { spans } => Ok(spans.clone()),
        GoldChunk::Sources { source_ids } => source_spans(ex, source_ids.iter()),
    }
}

fn source_spans<'a>(
    ex: &ExampleAttribution,
    ids: impl Iterator<Item = &'a SourceId>,
) -> Result<Vec<TimeSpan>, EvalError> {
    ids.map(|id| {
        let s = ex.source(*id).ok_or(EvalError::UnknownSource(*id))?;
        s.time.ok_or(EvalError::UntimedSource(*id))
    })
    .collect()
}

/// Scores one example's chunk attributions against its gold labels.
pub fn evaluate_example(
    ex: &ExampleAttribution,
    gold: &GoldLabels,
    metric: Metric,
    bin_s: f64,
    scope: Scope,
) -> Result<ExampleEvaluation, EvalError> {
    if gold.chunk_count() != ex.chunks.len() {
        return Err(EvalError::ChunkCount {
            example: ex.example_id.clone(),
            gold: gold.chunk_count(),
            pred: ex.chunks.len(),
        });
    }
    let units = match (metric, scope) {
        (Metric::Span, Scope::Chunk) => ex
            .chunks
            .iter()
            .zip(&gold.chunks)
            .map(|(c, g)| Ok(span_prf(&c.selected.iter().copied().collect(), gold_ids(g)?)))
            .collect::<Result<Vec<_>, EvalError>>()?,
        (Metric::Span, Scope::Example) => {
            let pred: BTreeSet<SourceId> = ex.chunks.iter().flat_map(|c| c.selected.iter().copied()).collect();
            let mut all = BTreeSet::new();
            for g in &gold.chunks {
                all.extend(gold_ids(g)?.iter().copied());
            }
            vec![span_prf(&pred, &all)]
        }
        (Metric::Time, Scope::Chunk) => ex
            .chunks
            .iter()
            .zip(&gold.chunks)
            .map(|(c, g)| time_f1(&source_spans(ex, c.selected.iter())?, &gold_spans(g, ex)?, bin_s))
            .collect::<Result<Vec<_>, EvalError>>()?,
        (Metric::Time, Scope::Example) => {
            let pred = source_spans(ex, ex.chunks.iter().flat_map(|c| c.selected.iter()))?;
            let mut all = Vec::new();
            for g in &gold.chunks {
                all.extend(gold_spans(g, ex)?);
            }
            vec![time_f1(&pred, &all, bin_s)?]
        }
    };
    let micro = aggregate_dataset(&units, AverageMode::Micro)?.prf;
    let macro_f1 = if units.is_empty() {
        1.0
    } else {
        aggregate_dataset(&units, AverageMode::Macro)?.prf.f1
    };
    Ok(ExampleEvaluation {
        example_id: ex.example_id.clone(),
        units,
        micro,
        macro_f1,
    })
}

/// Scores every example of `report` against the gold file with the same
/// example id; micro and macro summaries pool all units.
pub fn evaluate_report(
    report: &AttributionReport,
    golds: &[GoldLabels],
    metric: Metric,
    bin_s: f64,
    scope: Scope,
) -> Result<EvaluationReport, EvalError> {
    let by_id: BTreeMap<&str, &GoldLabels> = golds.iter().map(|g| (g.example_id.as_str(), g)).collect();
    let mut examples = Vec::with_capacity(report.examples.len());
    for ex in &report.examples {
        let gold = by_id
            .get(ex.example_id.as_str())
            .ok_or_else(|| EvalError::MissingGold(ex.example_id.clone()))?;
        examples.push(evaluate_example(ex, gold, metric, bin_s, scope)?);
    }
    let units: Vec<Prf> = examples.iter().flat_map(|e| e.units.iter().copied()).collect();
    let micro = aggregate_dataset(&units, AverageMode::Micro)?;
    let macro_ = if units.is_empty() {
        micro
    } else {
        aggregate_dataset(&units, AverageMode::Macro)?
    };

    let results: Vec<OptionConsistencyResult> = report
        .examples
        .iter()
        .filter_map(|e| e.option_consistency.clone())
        .collect();
    let option_consistency = (!results.is_empty()).then(|| {
        let (rate, unparsable) = consistency_rate(&results);
        ConsistencySummary {
            rate,
            consistent: results.iter().filter(|r| r.consistent).count(),
            scored: results.len() - unparsable,
            unparsable,
        }
    });

    Ok(EvaluationReport {
        kind: EVALUATION_KIND.to_string(),
        metric,
        bin_s: (metric == Metric::Time).then_some(bin_s),
        scope,
        method: report.method.clone(),
        config_hash: report.config_hash.clone(),
        examples,
        summary: EvaluationSummary { micro, macro_ },
        option_consistency,
    })
}
