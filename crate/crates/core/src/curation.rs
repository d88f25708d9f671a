//! Span-level aggregation and confidence-based source selection.
//!
//! Every token in a chunk casts a vote for the source it was traced to,
//! weighted by its POS tag and by its confidence raised to `gamma`. A source's
//! `p_mass` is its share of all votes and its `run_frac` is the heaviest
//! contiguous run of votes it received, also as a share of the total. Sources
//! are ranked by `alpha * p_mass + (1 - alpha) * run_frac` (ties to the lower
//! id) and taken in rank order until the selected mass reaches `coverage`.
//! Sources under `p_min` are skipped unless their run reaches `run_min`;
//! skipped sources never count towards coverage.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunking::{segment_output, Chunk};
use crate::config::CurationConfig;
use crate::model::{Modality, SourceId, SourceUnit, Trace};
use crate::tracing::{trace_with_sources, ReductionMethod, TokenTraceResult, TracingError};

#[derive(Debug, Error, PartialEq)]
pub enum CurationError {
    #[error("source sequence has {ids} entries but {votes} votes were given")]
    LengthMismatch { ids: usize, votes: usize },
}

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error(transparent)]
    Tracing(#[from] TracingError),
    #[error(transparent)]
    Curation(#[from] CurationError),
    #[error("per-modality attributions disagree on chunking: {0}")]
    ChunkMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    pub id: SourceId,
    pub p_mass: f64,
    pub run_frac: f64,
    pub score: f64,
}

/// Per-source vote statistics for one chunk, sorted by source id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CurationDiagnostics {
    pub total_vote: f64,
    pub sources: Vec<SourceStats>,
}

impl CurationDiagnostics {
    pub fn get(&self, id: SourceId) -> Option<&SourceStats> {
        self.sources.iter().find(|s| s.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Curation {
    /// Selected ids in rank order.
    pub selected: Vec<SourceId>,
    pub diagnostics: CurationDiagnostics,
}

/// A chunk together with its curated supporting sources.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanAttribution {
    pub chunk: Chunk,
    pub selected: Vec<SourceId>,
    pub diagnostics: CurationDiagnostics,
    /// Filled only by [`union_multimodal`].
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub by_modality: BTreeMap<Modality, CurationDiagnostics>,
}

/// Token-level traces (votes filled in) plus the per-chunk attributions.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceAttribution {
    pub tokens: Vec<TokenTraceResult>,
    pub spans: Vec<SpanAttribution>,
}

/// Vote weight of one token: POS weight times shaped confidence.
pub fn vote_weight(pos_tag: &str, confidence: f64, cfg: &CurationConfig) -> f64 {
    let pw = if cfg.use_pos { cfg.pos_weights.get(pos_tag) } else { 1.0 };
    let cw = if !cfg.use_conf {
        1.0
    } else {
        let gamma = if cfg.use_conf_weight { cfg.gamma } else { 1.0 };
        confidence.max(0.0).powf(gamma)
    };
    pw * cw
}

/// Votes for a chunk's token results; untraced tokens vote zero.
pub fn compute_votes(results: &[TokenTraceResult], cfg: &CurationConfig) -> Vec<f64> {
    results
        .iter()
        .map(|r| match r.source_id {
            Some(_) => vote_weight(&r.pos_tag, r.confidence, cfg),
            None => 0.0,
        })
        .collect()
}

/// Shares, scores and thresholds all live in `[0, 1]`; values closer than
/// this are equal. Keeps selections independent of vote scale and summation
/// order, which real arithmetic guarantees and rounding does not.
pub const TIE_EPS: f64 = 1e-10;

struct Tally {
    id: SourceId,
    mass: f64,
    run_max: f64,
}

fn tally_mut(tallies: &mut Vec<Tally>, id: SourceId) -> &mut Tally {
    let i = match tallies.iter().position(|t| t.id == id) {
        Some(i) => i,
        None => {
            tallies.push(Tally {
                id,
                mass: 0.0,
                run_max: 0.0,
            });
            tallies.len() - 1
        }
    };
    &mut tallies[i]
}

/// Selects the supporting sources of one chunk from its per-token source
/// assignments and votes. `None` entries (untraced tokens) break runs and
/// are never selected.
pub fn curate_sources_with_conf(
    source_ids: &[Option<SourceId>],
    votes: &[f64],
    cfg: &CurationConfig,
) -> Result<Curation, CurationError> {
    if source_ids.len() != votes.len() {
        return Err(CurationError::LengthMismatch {
            ids: source_ids.len(),
            votes: votes.len(),
        });
    }
    if source_ids.is_empty() {
        return Ok(Curation::default());
    }
    let mut total = 0.0;
    for v in votes {
        total += v;
    }
    if total <= 0.0 {
        return Ok(Curation::default());
    }

    // One pass: per-source mass and longest contiguous vote run.
    let mut tallies: Vec<Tally> = Vec::new();
    let mut cur = source_ids[0];
    let mut cur_run = votes[0];
    if let Some(id) = cur {
        tally_mut(&mut tallies, id).mass += votes[0];
    }
    for (&id, &v) in source_ids.iter().zip(votes).skip(1) {
        if let Some(s) = id {
            tally_mut(&mut tallies, s).mass += v;
        }
        if id == cur {
            cur_run += v;
        } else {
            if let Some(s) = cur {
                let t = tally_mut(&mut tallies, s);
                t.run_max = t.run_max.max(cur_run);
            }
            cur = id;
            cur_run = v;
        }
    }
    if let Some(s) = cur {
        let t = tally_mut(&mut tallies, s);
        t.run_max = t.run_max.max(cur_run);
    }

    tallies.sort_by_key(|t| t.id);
    let stats: Vec<SourceStats> = tallies
        .iter()
        .map(|t| {
            let p_mass = t.mass / total;
            let run_frac = t.run_max / total;
            let run_term = if cfg.use_run { run_frac } else { 0.0 };
            SourceStats {
                id: t.id,
                p_mass,
                run_frac,
                score: cfg.alpha * p_mass + (1.0 - cfg.alpha) * run_term,
            }
        })
        .collect();

    let ranked = rank(&stats);

    let mut selected = Vec::new();
    let mut cum = 0.0;
    for s in ranked {
        let strong_run = cfg.use_run && s.run_frac >= cfg.run_min - TIE_EPS;
        if cfg.use_p_min && s.p_mass < cfg.p_min - TIE_EPS && !strong_run {
            continue;
        }
        selected.push(s.id);
        cum += s.p_mass;
        if cum >= cfg.coverage - TIE_EPS {
            break;
        }
    }

    Ok(Curation {
        selected,
        diagnostics: CurationDiagnostics {
            total_vote: total,
            sources: stats,
        },
    })
}

/// Descending score; scores within [`TIE_EPS`] of their neighbour form one
/// tie group, ordered by id.
fn rank(stats: &[SourceStats]) -> Vec<&SourceStats> {
    let mut by_score: Vec<&SourceStats> = stats.iter().collect();
    by_score.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    let mut ranked = Vec::with_capacity(by_score.len());
    let mut group: Vec<&SourceStats> = Vec::new();
    for s in by_score {
        if group.last().is_some_and(|g| g.score - s.score > TIE_EPS) {
            group.sort_by_key(|g| g.id);
            ranked.append(&mut group);
        }
        group.push(s);
    }
    group.sort_by_key(|g| g.id);
    ranked.append(&mut group);
    ranked
}

fn curate_chunks(
    chunks: Vec<Chunk>,
    tokens: &[TokenTraceResult],
    cfg: &CurationConfig,
) -> Result<Vec<SpanAttribution>, CurationError> {
    chunks
        .into_iter()
        .map(|chunk| {
            let members: Vec<&TokenTraceResult> = chunk.token_steps.iter().map(|&t| &tokens[t - 1]).collect();
            let ids: Vec<Option<SourceId>> = members.iter().map(|r| r.source_id).collect();
            let votes: Vec<f64> = members.iter().map(|r| r.vote).collect();
            let c = curate_sources_with_conf(&ids, &votes, cfg)?;
            Ok(SpanAttribution {
                chunk,
                selected: c.selected,
                diagnostics: c.diagnostics,
                by_modality: BTreeMap::new(),
            })
        })
        .collect()
}

fn attribute_against(
    trace: &Trace,
    sources: &[SourceUnit],
    cfg: &CurationConfig,
    method: &ReductionMethod,
) -> Result<TraceAttribution, AttributionError> {
    let mut tokens = trace_with_sources(trace, sources, method)?;
    let votes = compute_votes(&tokens, cfg);
    for (t, v) in tokens.iter_mut().zip(votes) {
        t.vote = v;
    }
    let spans = curate_chunks(segment_output(trace), &tokens, cfg)?;
    Ok(TraceAttribution { tokens, spans })
}

/// Full pipeline, keeping token-level results alongside the spans.
pub fn attribute_detailed(
    trace: &Trace,
    cfg: &CurationConfig,
    method: &ReductionMethod,
) -> Result<TraceAttribution, AttributionError> {
    attribute_against(trace, &trace.sources, cfg, method)
}

/// Trace, segment, then curate each chunk.
pub fn attribute(
    trace: &Trace,
    cfg: &CurationConfig,
    method: &ReductionMethod,
) -> Result<Vec<SpanAttribution>, AttributionError> {
    Ok(attribute_detailed(trace, cfg, method)?.spans)
}

/// Curates each modality separately (tracing against that modality's
/// sources only) and unions the selections.
pub fn attribute_per_modality(
    trace: &Trace,
    cfg: &CurationConfig,
    method: &ReductionMethod,
) -> Result<Vec<SpanAttribution>, AttributionError> {
    let mut per_modality = BTreeMap::new();
    for m in Modality::ALL {
        let subset: Vec<SourceUnit> = trace.sources.iter().filter(|s| s.modality == m).cloned().collect();
        if !subset.is_empty() {
            per_modality.insert(m, attribute_against(trace, &subset, cfg, method)?.spans);
        }
    }
    if per_modality.is_empty() {
        return attribute(trace, cfg, method);
    }
    union_multimodal(&per_modality)
}

/// Per chunk, the union of every modality's selection, ordered by each id's
/// best score across modalities (ties to the lower id).
pub fn union_multimodal(
    per_modality: &BTreeMap<Modality, Vec<SpanAttribution>>,
) -> Result<Vec<SpanAttribution>, AttributionError> {
    let mut iter = per_modality.iter();
    let Some((_, first)) = iter.next() else {
        return Ok(Vec::new());
    };
    for (m, spans) in iter {
        let same = spans.len() == first.len()
            && spans
                .iter()
                .zip(first)
                .all(|(a, b)| a.chunk.char_range == b.chunk.char_range);
        if !same {
            return Err(AttributionError::ChunkMismatch(format!(
                "{m} has {} chunks, expected {}",
                spans.len(),
                first.len()
            )));
        }
    }

    let out = (0..first.len())
        .map(|k| {
            let mut best: BTreeMap<SourceId, f64> = BTreeMap::new();
            let mut by_modality = BTreeMap::new();
            for (m, spans) in per_modality {
                let span = &spans[k];
                for id in &span.selected {
                    let score = span.diagnostics.get(*id).map_or(0.0, |s| s.score);
                    let e = best.entry(*id).or_insert(f64::NEG_INFINITY);
                    *e = e.max(score);
                }
                by_modality.insert(*m, span.diagnostics.clone());
            }
            let mut selected: Vec<(SourceId, f64)> = best.into_iter().collect();
            selected.sort_by(|a, b| b.1.total_cmp(&a.1));
            let mut diagnostics = CurationDiagnostics::default();
            for d in by_modality.values() {
                diagnostics.total_vote += d.total_vote;
                diagnostics.sources.extend(d.sources.iter().cloned());
            }
            diagnostics.sources.sort_by_key(|s| s.id);
            SpanAttribution {
                chunk: first[k].chunk.clone(),
                selected: selected.into_iter().map(|(id, _)| id).collect(),
                diagnostics,
                by_modality,
            }
        })
        .collect();
    Ok(out)
}
