//! Post-hoc comparison baselines producing the same per-chunk output shape
//! as curation: embedding-similarity thresholding and seeded random picks.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chunking::Chunk;
use crate::curation::{CurationDiagnostics, SpanAttribution};
use crate::model::SourceId;

/// Similarity threshold at or above which a source is selected.
pub const DEFAULT_EMBED_THRESHOLD: f64 = 0.25;

/// Selection-size weights for the random baseline: uniform over {0, 1, 2}.
pub const DEFAULT_K_WEIGHTS: [f64; 3] = [1.0, 1.0, 1.0];

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{what} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        what: String,
        found: usize,
        expected: usize,
    },
    #[error("{0} is a zero vector")]
    ZeroVector(String),
    #[error("no embedding for chunk {0}")]
    MissingChunk(usize),
    #[error("selection-size weights must be non-negative with a positive sum")]
    BadKWeights,
}

/// Precomputed vectors for the sources and chunks of one example.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    pub sources: BTreeMap<SourceId, Vec<f64>>,
    pub chunks: BTreeMap<usize, Vec<f64>>,
    pub dim: usize,
}

impl EmbeddingTable {
    /// Parses the text sidecar: one vector per line, `source <id> v1 v2 ...`
    /// or `chunk <index> v1 v2 ...`. Blank lines and `#` comments are
    /// ignored; an optional `example <id>` line is accepted and skipped.
    pub fn parse(text: &str) -> Result<Self, BaselineError> {
        let mut table = EmbeddingTable::default();
        let mut dim: Option<usize> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| BaselineError::Parse { line, message };
            let mut fields = content.split_whitespace();
            let kind = fields.next().expect("non-empty line");
            if kind == "example" {
                continue;
            }
            let id: usize = fields
                .next()
                .ok_or_else(|| err("missing id".into()))?
                .parse()
                .map_err(|e| err(format!("bad id: {e}")))?;
            let v: Vec<f64> = fields
                .map(|f| f.parse::<f64>().map_err(|e| err(format!("bad value '{f}': {e}"))))
                .collect::<Result<_, _>>()?;
            if v.is_empty() {
                return Err(err("empty vector".into()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(err("non-finite value".into()));
            }
            let expected = *dim.get_or_insert(v.len());
            if v.len() != expected {
                return Err(BaselineError::DimensionMismatch {
                    what: format!("{kind} {id} (line {line})"),
                    found: v.len(),
                    expected,
                });
            }
            let dup = match kind {
                "source" => table.sources.insert(SourceId(id as u32), v).is_some(),
                "chunk" => table.chunks.insert(id, v).is_some(),
                _ => return Err(err(format!("unknown record kind '{kind}'"))),
            };
            if dup {
                return Err(err(format!("duplicate {kind} {id}")));
            }
        }
        table.dim = dim.unwrap_or(0);
        Ok(table)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a) * norm(b))
}

fn selection(chunk: &Chunk, selected: Vec<SourceId>) -> SpanAttribution {
    SpanAttribution {
        chunk: chunk.clone(),
        selected,
        diagnostics: CurationDiagnostics::default(),
        by_modality: BTreeMap::new(),
    }
}

/// Per chunk, every source whose cosine similarity to the chunk vector is at
/// least `threshold`, most similar first (ties to the lower id).
pub fn embed_attribute(
    table: &EmbeddingTable,
    chunks: &[Chunk],
    threshold: f64,
) -> Result<Vec<SpanAttribution>, BaselineError> {
    for (id, v) in &table.sources {
        if norm(v) == 0.0 {
            return Err(BaselineError::ZeroVector(format!("source {id}")));
        }
    }
    chunks
        .iter()
        .map(|chunk| {
            let cv = table
                .chunks
                .get(&chunk.index)
                .ok_or(BaselineError::MissingChunk(chunk.index))?;
            if cv.len() != table.dim {
                return Err(BaselineError::DimensionMismatch {
                    what: format!("chunk {}", chunk.index),
                    found: cv.len(),
                    expected: table.dim,
                });
            }
            if norm(cv) == 0.0 {
                return Err(BaselineError::ZeroVector(format!("chunk {}", chunk.index)));
            }
            let mut hits: Vec<(SourceId, f64)> = table
                .sources
                .iter()
                .map(|(id, sv)| (*id, cosine(cv, sv)))
                .filter(|(_, c)| *c >= threshold)
                .collect();
            hits.sort_by(|a, b| b.1.total_cmp(&a.1));
            Ok(selection(chunk, hits.into_iter().map(|h| h.0).collect()))
        })
        .collect()
}

/// Per chunk `k`, draws a selection size from `k_weights` (weight of size
/// `i` at index `i`, clamped to the source count) and samples that many ids
/// without replacement. Each chunk uses its own ChaCha8 stream seeded with
/// `seed ^ k`, so results do not depend on processing order.
pub fn random_attribute(
    sources: &[SourceId],
    chunks: &[Chunk],
    seed: u64,
    k_weights: &[f64],
) -> Result<Vec<SpanAttribution>, BaselineError> {
    let dist = WeightedIndex::new(k_weights).map_err(|_| BaselineError::BadKWeights)?;
    Ok(chunks
        .iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ chunk.index as u64);
            let k = dist.sample(&mut rng).min(sources.len());
            let mut picked: Vec<SourceId> = sources.choose_multiple(&mut rng, k).copied().collect();
            picked.sort();
            selection(chunk, picked)
        })
        .collect())
}
