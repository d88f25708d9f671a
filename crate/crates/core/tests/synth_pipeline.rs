use omnitrace_core::curation::attribute;
use omnitrace_core::evaluation::{aggregate_dataset, AverageMode, Prf};
use omnitrace_core::model::{ScoreData, TokenTimeline};
use omnitrace_core::report::{evaluate_example, ExampleAttribution, Metric, Scope};
use omnitrace_core::synth::{generate_trace, SynthSpec};
use omnitrace_core::trace_io::trace_to_string;
use omnitrace_core::tracing::ReductionMethod;
use omnitrace_core::{CurationConfig, Modality, Trace};

fn units(spec: &SynthSpec, metric: Metric) -> Vec<Prf> {
    let (trace, gold) = generate_trace(spec).unwrap();
    let spans = attribute(&trace, &CurationConfig::default(), &ReductionMethod::AttMean).unwrap();
    let ex = ExampleAttribution::new(&trace, &spans);
    evaluate_example(&ex, &gold, metric, 1.0, Scope::Chunk).unwrap().units
}

fn micro_f1(specs: impl Iterator<Item = SynthSpec>, metric: Metric) -> f64 {
    let all: Vec<Prf> = specs.flat_map(|s| units(&s, metric)).collect();
    aggregate_dataset(&all, AverageMode::Micro).unwrap().prf.f1
}

#[test]
fn noiseless_planting_is_recovered_exactly() {
    let shapes = [
        SynthSpec::default(),
        SynthSpec {
            n_sources: 9,
            chunks: 4,
            steps_per_chunk: 3,
            ..Default::default()
        },
        SynthSpec {
            sources_per_chunk: 2,
            steps_per_chunk: 8,
            ..Default::default()
        },
        SynthSpec {
            layers: 3,
            heads: 2,
            distractor_steps: 2,
            ..Default::default()
        },
        SynthSpec {
            modalities: vec![Modality::Image, Modality::Text],
            ..Default::default()
        },
        SynthSpec {
            option_label: Some("C".into()),
            n_sources: 5,
            ..Default::default()
        },
    ];
    for shape in shapes {
        for seed in 0..25 {
            let spec = SynthSpec { seed, ..shape.clone() };
            for u in units(&spec, Metric::Span) {
                assert_eq!(u.f1, 1.0, "seed {seed}, spec {spec:?}");
            }
        }
    }
}

#[test]
fn noiseless_timed_planting_is_recovered_in_time() {
    for m in [Modality::Audio, Modality::Video] {
        for seed in 0..25 {
            let spec = SynthSpec {
                seed,
                modalities: vec![m],
                time_gold: true,
                ..Default::default()
            };
            for u in units(&spec, Metric::Time) {
                assert_eq!(u.f1, 1.0, "seed {seed}, modality {m:?}");
            }
        }
    }
}

#[test]
fn f1_does_not_rise_with_noise() {
    let levels = [0.0, 0.2, 0.5, 0.8, 0.85, 0.9, 0.95, 1.0];
    let f1: Vec<f64> = levels
        .iter()
        .map(|&noise| {
            micro_f1(
                (0..120).map(|seed| SynthSpec {
                    seed,
                    noise,
                    n_sources: 6,
                    ..Default::default()
                }),
                Metric::Span,
            )
        })
        .collect();
    for w in f1.windows(2) {
        assert!(w[1] <= w[0] + 0.02, "F1 by noise level {levels:?}: {f1:?}");
    }
    assert!(f1[0] == 1.0 && f1[levels.len() - 1] < 1.0, "{f1:?}");
}

#[test]
fn same_seed_gives_identical_files() {
    let spec = SynthSpec {
        seed: 42,
        noise: 0.3,
        layers: 2,
        heads: 2,
        ..Default::default()
    };
    let (a, ga) = generate_trace(&spec).unwrap();
    let (b, gb) = generate_trace(&spec).unwrap();
    assert_eq!(trace_to_string(&a), trace_to_string(&b));
    assert_eq!(ga.to_json(), gb.to_json());
}

#[test]
fn full_noise_still_runs() {
    for seed in 0..10 {
        let spec = SynthSpec {
            seed,
            noise: 1.0,
            ..Default::default()
        };
        let (trace, gold) = generate_trace(&spec).unwrap();
        let spans = attribute(&trace, &CurationConfig::default(), &ReductionMethod::AttMean).unwrap();
        assert_eq!(spans.len(), gold.chunk_count());
    }
}

#[test]
fn all_zero_signal_selects_nothing() {
    let (mut trace, _) = generate_trace(&SynthSpec::default()).unwrap();
    for step in &mut trace.steps {
        for ch in step.channels.values_mut() {
            if let ScoreData::Dense(v) = &mut ch.data {
                v.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }
    let spans = attribute(&trace, &CurationConfig::default(), &ReductionMethod::AttMean).unwrap();
    assert!(!spans.is_empty());
    assert!(spans.iter().all(|s| s.selected.is_empty()));
}

#[test]
fn empty_generation_has_no_chunks() {
    let (trace, _) = generate_trace(&SynthSpec::default()).unwrap();
    let timeline = TokenTimeline {
        tokens: trace.timeline.tokens.clone(),
        duration_s: trace.timeline.duration_s,
    };
    let empty = Trace::new("empty", timeline, trace.sources.clone(), Vec::new(), true);
    assert_eq!(empty.validate(), Ok(()));
    assert!(attribute(&empty, &CurationConfig::default(), &ReductionMethod::AttMean)
        .unwrap()
        .is_empty());
}
