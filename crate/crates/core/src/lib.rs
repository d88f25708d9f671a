//! Generation-time span-level attribution for decoder-only omni-modal models.
//!
//! The engine consumes decoding traces (one score record per generated token,
//! see [`trace_io`]), maps every generated token to the input source unit that
//! receives most of its attribution mass ([`tracing`]), segments the output into
//! sentence-level chunks ([`chunking`]) and curates a concise set of supporting
//! sources per chunk ([`curation`]). [`evaluation`] and [`analysis`] score the
//! resulting attributions; [`baselines`] and [`synth`] provide comparison points
//! and planted-ground-truth traces.
//!
//! ```
//! use omnitrace_core::{curation, synth, tracing::ReductionMethod, CurationConfig};
//!
//! let spec = synth::SynthSpec { seed: 7, ..Default::default() };
//! let (trace, gold) = synth::generate_trace(&spec).unwrap();
//! let spans = curation::attribute(&trace, &CurationConfig::default(), &ReductionMethod::AttMean).unwrap();
//! assert_eq!(spans.len(), gold.chunk_count());
//! ```

pub mod analysis;
pub mod baselines;
pub mod chunking;
pub mod config;
pub mod curation;
pub mod evaluation;
pub mod gold;
pub mod model;
pub mod report;
pub mod sources;
pub mod synth;
pub mod trace_io;
pub mod tracing;

pub use config::{Ablation, CurationConfig, PosWeights};
pub use gold::{GoldChunk, GoldLabels};
pub use model::{
    InputToken, Modality, ScoreData, ScoreVector, SourceId, SourceUnit, StepRecord, TimeSpan, TokenTimeline, Trace,
    ValidationError,
};

/// Trace schema version understood by this engine.
pub const SCHEMA_VERSION: u32 = 1;
