//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

#[path = "../../core/tests/common/oracle.rs"]
mod oracle;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use omnitrace_core::analysis::{position_cdf, PositionWeighting};
use omnitrace_core::curation::{attribute, attribute_detailed, curate_sources_with_conf, vote_weight};
use omnitrace_core::evaluation::{consistency_rate, option_consistency, time_bins, time_f1};
use omnitrace_core::report::{evaluate_report, AttributionReport, ExampleAttribution, Metric, Scope};
use omnitrace_core::synth::{generate_trace, Placement, SynthSpec};
use omnitrace_core::tracing::ReductionMethod;
use omnitrace_core::{Ablation, CurationConfig, GoldLabels, Modality, SourceId, TimeSpan};
use oracle::{bin_counts, curate_oracle, time_bins_oracle, OracleCfg};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = (&'static str, fn() -> Outcome);
type ArgBuilder<'a> = Box<dyn Fn(&str) -> Vec<String> + 'a>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("curation-oracle-grid", curation_grid),
        ("planted-recovery", planted_recovery),
        ("time-f1-oracle", time_f1_oracle),
        ("scale-invariance", scale_invariance),
        ("pos-ablation-image-precision", pos_ablation),
        ("option-consistency", option_consistency_suite),
        ("position-mean", position_mean),
        ("cli-determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let o = run();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "{} {name}: {} ({secs:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn engine_cfg(o: &OracleCfg) -> CurationConfig {
    CurationConfig {
        gamma: o.gamma as f64,
        alpha: o.alpha_tenths as f64 / 10.0,
        p_min: o.p_min_pct as f64 / 100.0,
        run_min: o.run_min_pct as f64 / 100.0,
        coverage: o.coverage_pct as f64 / 100.0,
        ..Default::default()
    }
}

/// Every chunk of length 1..=5 over source ids {0, 1, 2}, confidences
/// {0, 0.5, 1} and tags {NOUN, DET}, at three config points.
fn curation_grid() -> Outcome {
    let configs = [
        OracleCfg::defaults(),
        OracleCfg {
            gamma: 2,
            alpha_tenths: 5,
            p_min_pct: 25,
            run_min_pct: 30,
            coverage_pct: 90,
        },
        OracleCfg {
            gamma: 1,
            alpha_tenths: 10,
            p_min_pct: 5,
            run_min_pct: 50,
            coverage_pct: 50,
        },
    ];
    let tags = ["NOUN", "DET"];
    let start = Instant::now();
    let (mut cases, mut mismatches) = (0u64, 0u64);
    let mut first_mismatch = None;
    for o in &configs {
        let cfg = engine_cfg(o);
        for t in 1..=5u32 {
            // Each token takes one of 3 * 3 * 2 = 18 (id, conf, tag) states.
            for code in 0..18u64.pow(t) {
                let (mut ids, mut nums, mut pos) = (Vec::new(), Vec::new(), Vec::new());
                let mut c = code;
                for _ in 0..t {
                    let state = c % 18;
                    c /= 18;
                    ids.push((state % 3) as u32);
                    nums.push(((state / 3) % 3) as u32);
                    pos.push(tags[(state / 9) as usize]);
                }
                let sids: Vec<Option<SourceId>> = ids.iter().map(|&i| Some(SourceId(i))).collect();
                let votes: Vec<f64> = pos
                    .iter()
                    .zip(&nums)
                    .map(|(p, &n)| vote_weight(p, n as f64 / 2.0, &cfg))
                    .collect();
                let got: Vec<u32> = curate_sources_with_conf(&sids, &votes, &cfg)
                    .expect("lengths match")
                    .selected
                    .into_iter()
                    .map(|s| s.0)
                    .collect();
                let want = curate_oracle(&ids, &pos, &nums, o);
                cases += 1;
                if got != want {
                    mismatches += 1;
                    first_mismatch.get_or_insert_with(|| {
                        format!(" first: ids={ids:?} conf2={nums:?} pos={pos:?} got={got:?} want={want:?}")
                    });
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && cases >= 50_000 && elapsed < Duration::from_secs(60),
        format!(
            "{cases} cases, {mismatches} mismatches, {:.1}s (limit 60s){}",
            elapsed.as_secs_f64(),
            first_mismatch.unwrap_or_default()
        ),
    )
}

fn suite_micro_f1(specs: impl Iterator<Item = SynthSpec>, metric: Metric) -> f64 {
    let mut examples = Vec::new();
    let mut golds: Vec<GoldLabels> = Vec::new();
    for spec in specs {
        let (trace, gold) = generate_trace(&spec).expect("valid spec");
        let spans = attribute(&trace, &CurationConfig::default(), &ReductionMethod::AttMean).expect("attributes");
        examples.push(ExampleAttribution::new(&trace, &spans));
        golds.push(gold);
    }
    let report = AttributionReport::new("attmean", "", examples);
    evaluate_report(&report, &golds, metric, 1.0, Scope::Chunk)
        .expect("evaluates")
        .summary
        .micro
        .prf
        .f1
}

fn planted_recovery() -> Outcome {
    let start = Instant::now();
    let clean = suite_micro_f1(
        (0..500).map(|seed| SynthSpec {
            seed,
            ..Default::default()
        }),
        Metric::Span,
    );
    let noisy = suite_micro_f1(
        (0..500).map(|seed| SynthSpec {
            seed,
            noise: 0.3,
            ..Default::default()
        }),
        Metric::Span,
    );
    let elapsed = start.elapsed();
    outcome(
        clean == 1.0 && noisy >= 0.9 && elapsed < Duration::from_secs(120),
        format!("noise 0: F1 {clean:.4} (need 1.0); noise 0.3: F1 {noisy:.4} (need >= 0.9); 500 seeds each"),
    )
}

fn random_spans(rng: &mut ChaCha8Rng, horizon: f64) -> Vec<TimeSpan> {
    let n = rng.gen_range(0..=20);
    (0..n)
        .map(|_| {
            let s = if rng.gen_bool(0.2) {
                rng.gen_range(0..600) as f64
            } else {
                rng.gen_range(0.0..horizon)
            };
            let len = match rng.gen_range(0..4) {
                0 => 0.0,
                1 => rng.gen_range(0..5) as f64,
                2 => rng.gen_range(0.0..3.0),
                _ => rng.gen_range(0.0..120.0),
            };
            TimeSpan::new(s, (s + len).min(horizon))
        })
        .collect()
}

fn time_f1_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let horizon = 600.0;
    let mut mismatches = 0;
    for _ in 0..1000 {
        let pred = random_spans(&mut rng, horizon);
        let gold = random_spans(&mut rng, horizon);
        let pairs = |v: &[TimeSpan]| v.iter().map(|s| (s.start_s, s.end_s)).collect::<Vec<_>>();
        let (ob_p, ob_g) = (
            time_bins_oracle(&pairs(&pred), 1.0, horizon),
            time_bins_oracle(&pairs(&gold), 1.0, horizon),
        );
        let want_bins: Vec<i64> = ob_p
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(b, _)| b as i64)
            .collect();
        let got_bins: Vec<i64> = time_bins(&pred, 1.0).expect("valid spans").into_iter().collect();
        let (tp, fp, fn_) = bin_counts(&ob_p, &ob_g);
        let prf = time_f1(&pred, &gold, 1.0).expect("valid spans");
        let want_f1 = if tp + fp + fn_ == 0 {
            1.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        };
        if got_bins != want_bins || (prf.tp, prf.fp, prf.fn_) != (tp, fp, fn_) || (prf.f1 - want_f1).abs() > 1e-12 {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("1000 span-set pairs, bin 1.0s, {mismatches} mismatches"),
    )
}

fn scale_invariance() -> Outcome {
    let tags = ["NOUN", "PROPN", "VERB", "ADJ", "ADV", "DET", "ADP", "PUNCT"];
    let cfg = CurationConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let t = rng.gen_range(1..=30);
        let ids: Vec<Option<SourceId>> = (0..t).map(|_| Some(SourceId(rng.gen_range(0..6)))).collect();
        let pos: Vec<&str> = (0..t).map(|_| tags[rng.gen_range(0..tags.len())]).collect();
        let grid = rng.gen_bool(0.5);
        let conf: Vec<f64> = (0..t)
            .map(|_| {
                if grid {
                    rng.gen_range(0..=4) as f64 / 4.0
                } else {
                    rng.gen_range(0.0..=1.0)
                }
            })
            .collect();
        let select = |lambda: f64| {
            let votes: Vec<f64> = pos
                .iter()
                .zip(&conf)
                .map(|(p, c)| vote_weight(p, c * lambda, &cfg))
                .collect();
            curate_sources_with_conf(&ids, &votes, &cfg)
                .expect("lengths match")
                .selected
        };
        let base = select(1.0);
        mismatches += [0.5, 3.0, 10.0].iter().filter(|&&l| select(l) != base).count();
    }
    outcome(
        mismatches == 0,
        format!("1000 inputs x 3 scales, {mismatches} changed selections"),
    )
}

/// Image precision over a suite where planted content steps share chunks
/// with function-word steps attending to distractor images.
fn image_precision(cfg: &CurationConfig) -> f64 {
    let (mut tp, mut fp) = (0usize, 0usize);
    for seed in 0..200 {
        let spec = SynthSpec {
            seed,
            n_sources: 6,
            modalities: vec![Modality::Image],
            steps_per_chunk: 6,
            distractor_steps: 4,
            chunks: 3,
            ..Default::default()
        };
        let (trace, gold) = generate_trace(&spec).expect("valid spec");
        let spans = attribute(&trace, cfg, &ReductionMethod::AttMean).expect("attributes");
        for (s, g) in spans.iter().zip(&gold.chunks) {
            let omnitrace_core::GoldChunk::Sources { source_ids } = g else {
                unreachable!("span gold")
            };
            for id in &s.selected {
                if source_ids.contains(id) {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
    }
    tp as f64 / (tp + fp).max(1) as f64
}

fn pos_ablation() -> Outcome {
    let full = CurationConfig::default();
    let with_pos = image_precision(&full);
    let without = image_precision(&full.ablate(Ablation::Pos));
    outcome(
        without < with_pos,
        format!("image precision {with_pos:.4} with POS weighting, {without:.4} without (need strictly lower)"),
    )
}

fn option_consistency_suite() -> Outcome {
    let labels = ["A", "B", "C", "D", "E"];
    let results: Vec<_> = (0..100u64)
        .map(|seed| {
            let spec = SynthSpec {
                seed,
                n_sources: 5,
                noise: 0.1,
                option_label: Some(labels[seed as usize % 5].to_string()),
                ..Default::default()
            };
            let (trace, _) = generate_trace(&spec).expect("valid spec");
            let attr =
                attribute_detailed(&trace, &CurationConfig::default(), &ReductionMethod::AttMean).expect("attributes");
            option_consistency(&trace, &attr).expect("has option map")
        })
        .collect();
    let (rate, unparsable) = consistency_rate(&results);
    outcome(
        rate == Some(1.0) && unparsable == 0,
        format!(
            "top-1 consistency {:?} over {} examples, {unparsable} unparsable (reference value 0.9384)",
            rate,
            results.len()
        ),
    )
}

fn mean_position(placement: Placement) -> (f64, usize) {
    let examples: Vec<ExampleAttribution> = (0..1000)
        .map(|seed| {
            let spec = SynthSpec {
                seed,
                n_sources: 20,
                chunks: 10,
                placement,
                ..Default::default()
            };
            let (trace, _) = generate_trace(&spec).expect("valid spec");
            let spans = attribute(&trace, &CurationConfig::default(), &ReductionMethod::AttMean).expect("attributes");
            ExampleAttribution::new(&trace, &spans)
        })
        .collect();
    let stats = position_cdf(
        &AttributionReport::new("attmean", "", examples),
        PositionWeighting::Equal,
    )
    .expect("positions");
    (stats.mean, stats.normalized_positions.len())
}

fn position_mean() -> Outcome {
    let (uniform, n_u) = mean_position(Placement::Uniform);
    let (skewed, n_s) = mean_position(Placement::Linear { mean: 0.44 });
    outcome(
        (uniform - 0.5).abs() <= 0.02 && (skewed - 0.44).abs() <= 0.02 && n_u >= 10_000 && n_s >= 10_000,
        format!("uniform mean {uniform:.4} over {n_u} samples (0.5 +- 0.02); skewed mean {skewed:.4} over {n_s} samples (0.44 +- 0.02)"),
    )
}

fn run_cli(args: &[String]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_omnitrace"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .env_remove("OMNITRACE_CONFIG")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn dir_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for e in fs::read_dir(dir).expect("output dir exists") {
        let p = e.expect("dir entry").path();
        files.insert(
            p.file_name().unwrap().to_string_lossy().into_owned(),
            fs::read(&p).expect("readable"),
        );
    }
    files
}

fn cli_determinism() -> Outcome {
    match determinism_check() {
        Ok(detail) => outcome(true, detail),
        Err(e) => outcome(false, e),
    }
}

fn determinism_check() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let p = |rel: &str| -> String { root.join(rel).to_string_lossy().into_owned() };
    let spec = root.join("spec.toml");
    fs::write(
        &spec,
        "example_id = \"qa\"\nn_sources = 5\nnoise = 0.2\nmodalities = [\"image\", \"text\"]\noption_label = \"B\"\n",
    )
    .map_err(|e| e.to_string())?;
    let data = PathBuf::from(p("data"));

    let synth = |out: &str| -> Vec<String> {
        [
            "synth",
            "--spec",
            &p("spec.toml"),
            "--seed",
            "5",
            "--count",
            "3",
            "--out",
            out,
        ]
        .map(String::from)
        .to_vec()
    };
    let traces: Vec<String> = (0..3)
        .map(|i| data.join(format!("qa-{i}.trace.jsonl")).to_string_lossy().into_owned())
        .collect();
    let golds: Vec<String> = (0..3)
        .map(|i| data.join(format!("qa-{i}.gold.json")).to_string_lossy().into_owned())
        .collect();
    let emb = root.join("emb.txt");
    fs::write(&emb, "source 0 1 0\nsource 1 0 1\nsource 2 1 1\nsource 3 -1 0\nsource 4 0.5 1\nchunk 0 1 0\nchunk 1 0 1\nchunk 2 1 1\n")
        .map_err(|e| e.to_string())?;
    let quality = root.join("quality.json");
    fs::write(&quality, r#"{"qa-0": 0.9, "qa-1": 0.2, "qa-2": 0.6}"#).map_err(|e| e.to_string())?;

    let repeat = |flag: &str, items: &[String]| -> Vec<String> {
        items.iter().flat_map(|i| [flag.to_string(), i.clone()]).collect()
    };
    let with = |head: &[&str], tail: Vec<String>, out: &str| -> Vec<String> {
        let mut v: Vec<String> = head.iter().map(|s| s.to_string()).collect();
        v.extend(tail);
        v.extend(["--out".to_string(), out.to_string()]);
        v
    };

    // Synth writes into two directories that must match; everything
    // downstream reads the first.
    let mut commands: Vec<(String, ArgBuilder)> = vec![("synth".into(), Box::new(synth))];
    let (t, g) = (traces.clone(), golds.clone());
    commands.push((
        "attribute".into(),
        Box::new(move |o| {
            with(
                &["attribute", "--jobs", "3", "--ablate", "run"],
                repeat("--trace", &t),
                o,
            )
        }),
    ));
    let t = traces.clone();
    commands.push((
        "attribute-per-modality".into(),
        Box::new(move |o| with(&["attribute", "--per-modality"], repeat("--trace", &t), o)),
    ));
    let pred = p("ref/attr.json");
    let (pr, gg) = (pred.clone(), g.clone());
    commands.push((
        "evaluate".into(),
        Box::new(move |o| with(&["evaluate", "--pred", &pr], repeat("--gold", &gg), o)),
    ));
    let (pr, gg) = (pred.clone(), g.clone());
    commands.push((
        "evaluate-example-scope".into(),
        Box::new(move |o| {
            with(
                &["evaluate", "--pred", &pr, "--scope", "example"],
                repeat("--gold", &gg),
                o,
            )
        }),
    ));
    let pr = pred.clone();
    commands.push((
        "analyze-position".into(),
        Box::new(move |o| {
            with(
                &["analyze", "position", "--pred", &pr, "--weighting", "mass"],
                vec![],
                o,
            )
        }),
    ));
    let (pr, gg) = (pred.clone(), g.clone());
    commands.push((
        "analyze-calibration".into(),
        Box::new(move |o| with(&["analyze", "calibration", "--pred", &pr], repeat("--gold", &gg), o)),
    ));
    let (ev, q) = (p("ref-eval/eval.json"), quality.to_string_lossy().into_owned());
    commands.push((
        "analyze-quality".into(),
        Box::new(move |o| with(&["analyze", "quality", "--eval", &ev, "--quality", &q], vec![], o)),
    ));
    let (t, e) = (traces[..1].to_vec(), emb.to_string_lossy().into_owned());
    commands.push((
        "baseline-embed".into(),
        Box::new(move |o| with(&["baseline", "embed", "--embeddings", &e], repeat("--trace", &t), o)),
    ));
    let t = traces.clone();
    commands.push((
        "baseline-random".into(),
        Box::new(move |o| with(&["baseline", "random", "--seed", "11"], repeat("--trace", &t), o)),
    ));

    run_cli(&synth(&p("data")))?;
    run_cli(&with(&["attribute"], repeat("--trace", &traces), &p("ref")))?;
    run_cli(&with(
        &["evaluate", "--pred", &pred],
        repeat("--gold", &golds),
        &p("ref-eval"),
    ))?;

    let mut compared = 0;
    for (name, make) in &commands {
        let (a, b) = (p(&format!("{name}-a")), p(&format!("{name}-b")));
        let (sa, sb) = (run_cli(&make(&a))?, run_cli(&make(&b))?);
        // Synth echoes its output paths, the only place the two runs may differ.
        let norm = |out: &[u8], dir: &str| String::from_utf8_lossy(out).replace(dir, "OUT");
        if norm(&sa, &a) != norm(&sb, &b) {
            return Err(format!("{name}: stdout differs"));
        }
        let (fa, fb) = (dir_files(Path::new(&a)), dir_files(Path::new(&b)));
        if fa.is_empty() || fa.keys().ne(fb.keys()) {
            return Err(format!(
                "{name}: output file sets differ: {:?} vs {:?}",
                fa.keys(),
                fb.keys()
            ));
        }
        for (f, bytes) in &fa {
            if *bytes != fb[f] {
                return Err(format!("{name}: {f} differs between runs"));
            }
            compared += 1;
        }
    }

    let mut validate = vec!["validate".to_string()];
    validate.extend(repeat("--trace", &traces));
    validate.extend(repeat("--gold", &golds));
    if run_cli(&validate)? != run_cli(&validate)? {
        return Err("validate: stdout differs".into());
    }
    Ok(format!(
        "{} subcommand runs repeated, {compared} output files byte-identical",
        commands.len() + 1
    ))
}
