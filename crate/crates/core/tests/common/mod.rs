#![allow(dead_code)]

pub mod oracle;

use std::collections::BTreeMap;

use omnitrace_core::{
    InputToken, Modality, ScoreData, ScoreVector, SourceId, SourceUnit, StepRecord, TimeSpan, TokenTimeline, Trace,
};
use proptest::prelude::*;

pub fn finite() -> impl Strategy<Value = f64> {
    any::<f64>().prop_filter("finite", |x| x.is_finite())
}

fn modality() -> impl Strategy<Value = Modality> {
    prop_oneof![
        Just(Modality::Text),
        Just(Modality::Image),
        Just(Modality::Audio),
        Just(Modality::Video)
    ]
}

/// Random structurally valid traces: one source per modality run, an
/// `attn` channel with a layer/head shape and an optional sparse `grad`
/// channel that may hold negatives.
pub fn arb_trace() -> impl Strategy<Value = Trace> {
    let runs = prop::collection::vec((modality(), 1usize..=4), 1..=4);
    let texts = prop::collection::vec("[a-zA-Z .,é\"\\\\\n]{0,6}", 16);
    let steps = prop::collection::vec(
        (
            "[ a-zA-Z.!?]{0,5}",
            prop::option::of(prop_oneof![Just("NOUN".to_string()), Just("DET".to_string())]),
            (1usize..=2, 1usize..=2),
            any::<bool>(),
            any::<u64>(),
        ),
        0..=4,
    );
    (
        runs,
        texts,
        steps,
        any::<bool>(),
        any::<bool>(),
        prop::collection::vec(finite(), 64),
    )
        .prop_map(|(runs, texts, steps, space_joined, with_options, pool)| {
            let mut tokens = Vec::new();
            let mut sources = Vec::new();
            let mut clock = 0.0;
            for (m, len) in runs {
                let start = tokens.len();
                for _ in 0..len {
                    let time = m.is_timed().then(|| {
                        clock += 0.5;
                        TimeSpan::new(clock - 0.5, clock)
                    });
                    tokens.push(InputToken {
                        index: tokens.len(),
                        modality: m,
                        text: (m == Modality::Text).then(|| texts[tokens.len() % texts.len()].clone()),
                        time,
                    });
                }
                let time = m
                    .is_timed()
                    .then(|| TimeSpan::new(tokens[start].time.unwrap().start_s, clock));
                sources.push(SourceUnit {
                    id: SourceId(sources.len() as u32),
                    modality: m,
                    token_range: start..tokens.len(),
                    time,
                    text: None,
                    embedding: (m == Modality::Image).then(|| pool[..3].to_vec()),
                });
            }
            let n = tokens.len();
            let mut k = 0usize;
            let mut next = |nonneg: bool| {
                k += 1;
                let v = pool[k % pool.len()];
                if nonneg {
                    v.abs()
                } else {
                    v
                }
            };
            let steps: Vec<StepRecord> = steps
                .into_iter()
                .enumerate()
                .map(|(i, (tok, pos, (l, h), with_grad, mask))| {
                    let ctx = n + i;
                    let mut channels = BTreeMap::new();
                    channels.insert(
                        "attn".to_string(),
                        ScoreVector {
                            data: ScoreData::Dense((0..l * h * ctx).map(|_| next(true)).collect()),
                            lh_shape: Some((l, h)),
                        },
                    );
                    if with_grad {
                        let idx: Vec<usize> = (0..ctx.min(64)).filter(|j| mask >> j & 1 == 1).collect();
                        let val = idx.iter().map(|_| next(false)).collect();
                        channels.insert(
                            "grad".to_string(),
                            ScoreVector {
                                data: ScoreData::Sparse { idx, val },
                                lh_shape: None,
                            },
                        );
                    }
                    StepRecord {
                        step: i + 1,
                        token_text: tok,
                        channels,
                        pos_tag: pos,
                    }
                })
                .collect();
            let timeline = TokenTimeline {
                tokens,
                duration_s: (clock > 0.0).then_some(clock + 1.0),
            };
            let option_map = with_options.then(|| {
                sources
                    .iter()
                    .zip(["A", "B", "C", "D"])
                    .map(|(s, l)| (l.to_string(), s.id))
                    .collect()
            });
            let mut trace = Trace::new("ex-1", timeline, sources, steps, space_joined);
            trace.option_map = option_map;
            trace
        })
}
