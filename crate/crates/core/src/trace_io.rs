//! Line-delimited trace files (`.trace.jsonl`).
//!
//! Line 1 is a header object:
//!
//! ```text
//! {"version":1,"example_id":"ex","timeline":{"tokens":[{"index":0,"modality":"text","text":"Hi"}],"duration_s":null},
//!  "sources":[{"id":0,"modality":"text","token_range":[0,1]}],"option_map":{"A":0},"space_joined":false}
//! ```
//!
//! Every following line is one decoding step:
//!
//! ```text
//! {"t":1,"token":"Hello","pos":"NOUN","channels":{"attn":{"dense":[1.0],"lh_shape":[1,1]}}}
//! ```
//!
//! Channels are either `{"dense":[...]}` or `{"sparse":{"idx":[...],"val":[...]}}`.
//! A channel with `lh_shape = [L, H]` stores `L * H` rows of context length
//! flattened row-major. Steps are validated as they stream in, so a malformed
//! step is reported with its line number without buffering the whole file.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{
    detokenize, validate_sources, InputToken, Modality, ScoreData, ScoreVector, SourceId, SourceUnit, StepRecord,
    TimeSpan, TokenTimeline, Trace, ValidationError,
};
use crate::SCHEMA_VERSION;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported schema version {found} (supported: {supported})")]
    UnsupportedVersion { found: u64, supported: u32 },
    #[error("line {line}: {source}")]
    Validation {
        line: usize,
        #[source]
        source: ValidationError,
    },
}

impl TraceError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            TraceError::Io(_) => "io",
            TraceError::Parse { .. } => "parse",
            TraceError::UnsupportedVersion { .. } => "unsupported-version",
            TraceError::Validation { source, .. } => source.code(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TokenWire {
    index: usize,
    modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time: Option<TimeSpan>,
}

#[derive(Serialize, Deserialize)]
struct TimelineWire {
    tokens: Vec<TokenWire>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    duration_s: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct SourceWire {
    id: u32,
    modality: Modality,
    token_range: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time: Option<TimeSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct HeaderWire {
    version: u64,
    example_id: String,
    timeline: TimelineWire,
    sources: Vec<SourceWire>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    option_map: Option<BTreeMap<String, u32>>,
    #[serde(default)]
    space_joined: bool,
}

#[derive(Serialize, Deserialize)]
struct SparseWire {
    idx: Vec<usize>,
    val: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ChannelWire {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dense: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sparse: Option<SparseWire>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lh_shape: Option<[usize; 2]>,
}

#[derive(Serialize, Deserialize)]
struct StepWire {
    t: usize,
    token: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pos: Option<String>,
    channels: BTreeMap<String, ChannelWire>,
}

const HEADER_KEYS: &[&str] = &[
    "version",
    "example_id",
    "timeline",
    "sources",
    "option_map",
    "space_joined",
];
const TIMELINE_KEYS: &[&str] = &["tokens", "duration_s"];
const TOKEN_KEYS: &[&str] = &["index", "modality", "text", "time"];
const SOURCE_KEYS: &[&str] = &["id", "modality", "token_range", "time", "text", "embedding"];
const STEP_KEYS: &[&str] = &["t", "token", "pos", "channels"];
const CHANNEL_KEYS: &[&str] = &["dense", "sparse", "lh_shape"];

/// Collects unknown-field warnings, reporting each (location, field) pair once.
#[derive(Default)]
struct UnknownFields {
    seen: BTreeSet<String>,
    warnings: Vec<String>,
}

impl UnknownFields {
    fn check(&mut self, value: &Value, allowed: &[&str], location: &str, line: usize) {
        let Some(obj) = value.as_object() else { return };
        for key in obj.keys() {
            if !allowed.contains(&key.as_str()) && self.seen.insert(format!("{location}.{key}")) {
                let msg = format!("line {line}: ignoring unknown field '{key}' in {location}");
                log::warn!("{msg}");
                self.warnings.push(msg);
            }
        }
    }

    fn check_each(&mut self, value: Option<&Value>, allowed: &[&str], location: &str, line: usize) {
        if let Some(items) = value.and_then(Value::as_array) {
            for item in items {
                self.check(item, allowed, location, line);
            }
        }
    }
}

/// A parsed trace plus the non-fatal warnings emitted while reading it.
#[derive(Debug)]
pub struct ParsedTrace {
    pub trace: Trace,
    pub warnings: Vec<String>,
}

/// Parses and validates a `.trace.jsonl` stream.
pub fn parse_trace<R: BufRead>(reader: R) -> Result<Trace, TraceError> {
    parse_trace_with_warnings(reader).map(|p| p.trace)
}

pub fn parse_trace_str(s: &str) -> Result<Trace, TraceError> {
    parse_trace(s.as_bytes())
}

pub fn parse_trace_with_warnings<R: BufRead>(reader: R) -> Result<ParsedTrace, TraceError> {
    let mut unknown = UnknownFields::default();
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (header_line, header_value) = loop {
        match lines.next() {
            None => {
                return Err(TraceError::Parse {
                    line: 1,
                    message: "missing header record".into(),
                })
            }
            Some((line, text)) => {
                let text = text?;
                if text.trim().is_empty() {
                    continue;
                }
                break (line, parse_json(&text, line)?);
            }
        }
    };

    if let Some(v) = header_value.get("version") {
        match v.as_u64() {
            Some(found) if found == SCHEMA_VERSION as u64 => {}
            Some(found) => {
                return Err(TraceError::UnsupportedVersion {
                    found,
                    supported: SCHEMA_VERSION,
                })
            }
            None => {
                return Err(TraceError::Parse {
                    line: header_line,
                    message: "version must be a non-negative integer".into(),
                })
            }
        }
    }
    unknown.check(&header_value, HEADER_KEYS, "header", header_line);
    if let Some(tl) = header_value.get("timeline") {
        unknown.check(tl, TIMELINE_KEYS, "timeline", header_line);
        unknown.check_each(tl.get("tokens"), TOKEN_KEYS, "timeline token", header_line);
    }
    unknown.check_each(header_value.get("sources"), SOURCE_KEYS, "source", header_line);

    let header: HeaderWire = from_value(header_value, header_line)?;
    let vfail = |source| TraceError::Validation {
        line: header_line,
        source,
    };

    let timeline = TokenTimeline {
        tokens: header
            .timeline
            .tokens
            .into_iter()
            .map(|t| InputToken {
                index: t.index,
                modality: t.modality,
                text: t.text,
                time: t.time,
            })
            .collect(),
        duration_s: header.timeline.duration_s,
    };
    timeline.validate().map_err(vfail)?;
    let sources: Vec<SourceUnit> = header
        .sources
        .into_iter()
        .map(|s| SourceUnit {
            id: SourceId(s.id),
            modality: s.modality,
            token_range: s.token_range[0]..s.token_range[1],
            time: s.time,
            text: s.text,
            embedding: s.embedding,
        })
        .collect();
    validate_sources(&sources, &timeline).map_err(vfail)?;
    let option_map = header
        .option_map
        .map(|m| m.into_iter().map(|(k, v)| (k, SourceId(v))).collect::<BTreeMap<_, _>>());
    if let Some(map) = &option_map {
        for (label, id) in map {
            if !sources.iter().any(|s| s.id == *id) {
                return Err(vfail(ValidationError::UnknownOptionSource {
                    label: label.clone(),
                    id: *id,
                }));
            }
        }
    }

    let n = timeline.len();
    let mut steps = Vec::new();
    for (line, text) in lines {
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let value = parse_json(&text, line)?;
        unknown.check(&value, STEP_KEYS, "step", line);
        if let Some(chs) = value.get("channels").and_then(Value::as_object) {
            for ch in chs.values() {
                unknown.check(ch, CHANNEL_KEYS, "channel", line);
            }
        }
        let wire: StepWire = from_value(value, line)?;
        let expected = steps.len() + 1;
        if wire.t != expected {
            return Err(TraceError::Validation {
                line,
                source: ValidationError::StepGap {
                    expected,
                    found: wire.t,
                },
            });
        }
        let mut channels = BTreeMap::new();
        for (name, ch) in wire.channels {
            let data = match (ch.dense, ch.sparse) {
                (Some(d), None) => ScoreData::Dense(d),
                (None, Some(s)) => ScoreData::Sparse { idx: s.idx, val: s.val },
                _ => {
                    return Err(TraceError::Parse {
                        line,
                        message: format!("channel '{name}' must have exactly one of 'dense' or 'sparse'"),
                    })
                }
            };
            let sv = ScoreVector {
                data,
                lh_shape: ch.lh_shape.map(|[l, h]| (l, h)),
            };
            sv.validate(wire.t, &name, n + wire.t - 1)
                .map_err(|source| TraceError::Validation { line, source })?;
            channels.insert(name, sv);
        }
        steps.push(StepRecord {
            step: wire.t,
            token_text: wire.token,
            channels,
            pos_tag: wire.pos,
        });
    }

    let generated_text = detokenize(&steps, header.space_joined);
    let trace = Trace {
        schema_version: SCHEMA_VERSION,
        example_id: header.example_id,
        timeline,
        sources,
        steps,
        generated_text,
        option_map,
        space_joined: header.space_joined,
    };
    Ok(ParsedTrace {
        trace,
        warnings: unknown.warnings,
    })
}

fn parse_json(text: &str, line: usize) -> Result<Value, TraceError> {
    serde_json::from_str(text).map_err(|e| TraceError::Parse {
        line,
        message: e.to_string(),
    })
}

fn from_value<T: serde::de::DeserializeOwned>(value: Value, line: usize) -> Result<T, TraceError> {
    serde_json::from_value(value).map_err(|e| TraceError::Parse {
        line,
        message: e.to_string(),
    })
}

/// Writes the canonical serialization of `trace`.
///
/// Parsing the output yields an equal trace, and re-serializing it
/// reproduces the same bytes.
pub fn write_trace<W: Write>(trace: &Trace, mut out: W) -> io::Result<()> {
    let header = HeaderWire {
        version: trace.schema_version as u64,
        example_id: trace.example_id.clone(),
        timeline: TimelineWire {
            tokens: trace
                .timeline
                .tokens
                .iter()
                .map(|t| TokenWire {
                    index: t.index,
                    modality: t.modality,
                    text: t.text.clone(),
                    time: t.time,
                })
                .collect(),
            duration_s: trace.timeline.duration_s,
        },
        sources: trace
            .sources
            .iter()
            .map(|s| SourceWire {
                id: s.id.0,
                modality: s.modality,
                token_range: [s.token_range.start, s.token_range.end],
                time: s.time,
                text: s.text.clone(),
                embedding: s.embedding.clone(),
            })
            .collect(),
        option_map: trace
            .option_map
            .as_ref()
            .map(|m| m.iter().map(|(k, v)| (k.clone(), v.0)).collect()),
        space_joined: trace.space_joined,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for step in &trace.steps {
        let wire = StepWire {
            t: step.step,
            token: step.token_text.clone(),
            pos: step.pos_tag.clone(),
            channels: step
                .channels
                .iter()
                .map(|(name, ch)| {
                    let (dense, sparse) = match &ch.data {
                        ScoreData::Dense(v) => (Some(v.clone()), None),
                        ScoreData::Sparse { idx, val } => (
                            None,
                            Some(SparseWire {
                                idx: idx.clone(),
                                val: val.clone(),
                            }),
                        ),
                    };
                    let wire = ChannelWire {
                        dense,
                        sparse,
                        lh_shape: ch.lh_shape.map(|(l, h)| [l, h]),
                    };
                    (name.clone(), wire)
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &wire)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn trace_to_string(trace: &Trace) -> String {
    let mut buf = Vec::new();
    write_trace(trace, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}
