use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use omnitrace_core::analysis::{self, PositionWeighting, Quality};
use omnitrace_core::baselines::{self, EmbeddingTable};
use omnitrace_core::chunking::segment_output;
use omnitrace_core::config::Ablation;
use omnitrace_core::curation::{attribute_detailed, attribute_per_modality};
use omnitrace_core::evaluation::{option_consistency, Aggregate};
use omnitrace_core::gold::{parse_gold, validate_gold};
use omnitrace_core::report::{evaluate_report, AttributionReport, EvaluationReport, ExampleAttribution, Metric, Scope};
use omnitrace_core::synth::{generate_trace, SynthSpec};
use omnitrace_core::trace_io::{parse_trace, parse_trace_with_warnings, trace_to_string};
use omnitrace_core::tracing::ReductionMethod;
use omnitrace_core::{CurationConfig, GoldLabels, Trace};
use serde_json::json;

use crate::args::*;
use crate::output::*;
use crate::CliError;

pub const CONFIG_ENV: &str = "OMNITRACE_CONFIG";

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Attribute(a) => attribute(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Analyze(a) => analyze(a),
        Command::Baseline(a) => baseline(a),
        Command::Synth(a) => synth(a),
        Command::Validate(a) => validate(a),
    }
}

fn input<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

/// Applies `f` to every item on up to `jobs` threads, keeping input order.
fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let f = &f;
    let mut indexed: Vec<(usize, R)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|w| {
                s.spawn(move || {
                    items
                        .iter()
                        .enumerate()
                        .skip(w)
                        .step_by(jobs)
                        .map(|(i, t)| (i, f(t)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    });
    indexed.sort_by_key(|(i, _)| *i);
    indexed.into_iter().map(|(_, r)| r).collect()
}

fn load_config(path: Option<&Path>) -> Result<(CurationConfig, Option<PathBuf>), CliError> {
    let path = path
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let Some(p) = path else {
        return Ok((CurationConfig::default(), None));
    };
    let text = read_string(&p)?;
    let cfg = CurationConfig::from_toml(&text).map_err(input(&p))?;
    Ok((cfg, Some(p)))
}

fn load_trace(path: &Path, bytes: &[u8]) -> Result<Trace, CliError> {
    parse_trace(bytes).map_err(|e| CliError::Input(format!("{}: [{}] {e}", path.display(), e.code())))
}

fn load_report(path: &Path) -> Result<AttributionReport, CliError> {
    let report: AttributionReport = serde_json::from_slice(&read(path)?).map_err(input(path))?;
    if report.kind != omnitrace_core::report::ATTRIBUTION_KIND {
        return Err(CliError::Input(format!(
            "{}: not an attribution report",
            path.display()
        )));
    }
    Ok(report)
}

fn load_golds(paths: &[PathBuf], manifest: &mut ManifestBuilder) -> Result<Vec<GoldLabels>, CliError> {
    paths
        .iter()
        .map(|p| {
            let bytes = read(p)?;
            manifest.input(p, &bytes);
            parse_gold(&bytes).map_err(|e| CliError::Input(format!("{}: [{}] {e}", p.display(), e.code())))
        })
        .collect()
}

fn attribute(a: AttributeArgs) -> Result<(), CliError> {
    let (mut cfg, cfg_path) = load_config(a.config.as_deref())?;
    let mut ablations: Vec<Ablation> = a
        .ablate
        .iter()
        .map(|s| s.parse().map_err(|e| CliError::Input(format!("{e}"))))
        .collect::<Result<_, _>>()?;
    ablations.sort();
    ablations.dedup();
    for ab in &ablations {
        cfg = cfg.ablate(*ab);
    }
    cfg.validate().map_err(|e| CliError::Input(e.to_string()))?;
    let method: ReductionMethod = a.channel.parse().map_err(CliError::Input)?;

    let params = json!({
        "config": &cfg,
        "config_path": cfg_path.as_ref().map(|p| p.display().to_string()),
        "channel": method.to_string(),
        "ablate": ablations.iter().map(|a| a.label()).collect::<Vec<_>>(),
        "per_modality": a.per_modality,
    });
    let mut manifest = ManifestBuilder::new("attribute", params)
        .config_hash(cfg.hash())
        .channel(method.to_string());
    let mut inputs = Vec::with_capacity(a.traces.len());
    for p in &a.traces {
        let bytes = read(p)?;
        manifest.input(p, &bytes);
        inputs.push((p.clone(), bytes));
    }

    let examples = par_map(
        &inputs,
        a.jobs,
        |(path, bytes)| -> Result<ExampleAttribution, CliError> {
            let trace = load_trace(path, bytes)?;
            let detailed = attribute_detailed(&trace, &cfg, &method).map_err(input(path))?;
            let spans = if a.per_modality {
                attribute_per_modality(&trace, &cfg, &method).map_err(input(path))?
            } else {
                detailed.spans.clone()
            };
            let mut ex = ExampleAttribution::new(&trace, &spans);
            if trace.option_map.is_some() {
                ex.option_consistency = Some(option_consistency(&trace, &detailed).map_err(input(path))?);
            }
            Ok(ex)
        },
    )
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    for ex in &examples {
        let selected: usize = ex.chunks.iter().map(|c| c.selected.len()).sum();
        println!("{}\t{} chunks\t{} selected", ex.example_id, ex.chunks.len(), selected);
    }
    let report = AttributionReport::new(method.to_string(), cfg.hash(), examples);
    ensure_dir(&a.out)?;
    let attr = a.out.join("attr.json");
    write_json(&attr, &report)?;
    manifest.write(&a.out, &[attr])
}

fn summary_row(metric: &str, agg: &Aggregate) -> String {
    let mode = serde_json::to_value(agg.mode)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default();
    format!(
        "{metric}\t{mode}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}{}",
        agg.prf.precision,
        agg.prf.recall,
        agg.prf.f1,
        agg.prf.tp,
        agg.prf.fp,
        agg.prf.fn_,
        if agg.all_empty { "\t(all empty)" } else { "" }
    )
}

fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let metric = match a.mode {
        ModeArg::Span => Metric::Span,
        ModeArg::Time => Metric::Time,
    };
    let scope = match a.scope {
        ScopeArg::Chunk => Scope::Chunk,
        ScopeArg::Example => Scope::Example,
    };
    let params = json!({
        "mode": metric,
        "bin_s": (metric == Metric::Time).then_some(a.bin_s),
        "scope": scope,
    });
    let mut manifest = ManifestBuilder::new("evaluate", params);
    let pred_bytes = read(&a.pred)?;
    manifest.input(&a.pred, &pred_bytes);
    let report = load_report(&a.pred)?;
    let golds = load_golds(&a.golds, &mut manifest)?;
    let eval = evaluate_report(&report, &golds, metric, a.bin_s, scope).map_err(|e| CliError::Input(e.to_string()))?;

    println!("metric\tmode\tP\tR\tF1\ttp\tfp\tfn");
    println!("{}", summary_row(&metric.to_string(), &eval.summary.micro));
    println!("{}", summary_row(&metric.to_string(), &eval.summary.macro_));
    if let Some(oc) = &eval.option_consistency {
        println!(
            "option-consistency\t{}\t{}/{} scored\t{} unparsable",
            fmt_opt(oc.rate),
            oc.consistent,
            oc.scored,
            oc.unparsable
        );
    }
    ensure_dir(&a.out)?;
    let out = a.out.join("eval.json");
    write_json(&out, &eval)?;
    manifest
        .config_hash(report.config_hash)
        .channel(report.method)
        .write(&a.out, &[out])
}

fn analyze(cmd: AnalyzeCommand) -> Result<(), CliError> {
    match cmd {
        AnalyzeCommand::Position { pred, weighting, out } => {
            let weighting = match weighting {
                WeightingArg::Equal => PositionWeighting::Equal,
                WeightingArg::Mass => PositionWeighting::Mass,
            };
            let mut manifest = ManifestBuilder::new("analyze position", json!({ "weighting": weighting }));
            manifest.input(&pred, &read(&pred)?);
            let report = load_report(&pred)?;
            let stats = analysis::position_cdf(&report, weighting).map_err(|e| CliError::Input(e.to_string()))?;
            println!("samples\t{}", stats.normalized_positions.len());
            println!("mean\t{:.4}", stats.mean);
            ensure_dir(&out)?;
            let csv = out.join("position.csv");
            let rows: Vec<Vec<String>> = stats
                .cdf
                .iter()
                .map(|(p, c)| vec![p.to_string(), c.to_string()])
                .collect();
            write_csv(&csv, &["position", "cdf"], &rows)?;
            let js = out.join("position.json");
            write_json(
                &js,
                &json!({ "samples": stats.normalized_positions.len(), "mean": stats.mean, "cdf": stats.cdf }),
            )?;
            manifest.write(&out, &[csv, js])
        }
        AnalyzeCommand::Calibration { pred, golds, bins, out } => {
            let mut manifest = ManifestBuilder::new("analyze calibration", json!({ "bins": bins }));
            manifest.input(&pred, &read(&pred)?);
            let report = load_report(&pred)?;
            let golds = load_golds(&golds, &mut manifest)?;
            let (p, g) = analysis::image_fractions(&report, &golds).map_err(|e| CliError::Input(e.to_string()))?;
            let curve = analysis::calibration_curve(&p, &g, bins).map_err(|e| CliError::Input(e.to_string()))?;
            println!("bin\tmean_pred\tmean_gold\tcount");
            let rows: Vec<Vec<String>> = curve
                .bins
                .iter()
                .map(|b| {
                    vec![
                        b.lo.to_string(),
                        b.hi.to_string(),
                        fmt_opt(b.mean_pred),
                        fmt_opt(b.mean_gold),
                        b.count.to_string(),
                    ]
                })
                .collect();
            for b in &curve.bins {
                println!(
                    "({:.2},{:.2}]\t{}\t{}\t{}",
                    b.lo,
                    b.hi,
                    fmt_opt(b.mean_pred),
                    fmt_opt(b.mean_gold),
                    b.count
                );
            }
            ensure_dir(&out)?;
            let csv = out.join("calibration.csv");
            write_csv(&csv, &["lo", "hi", "mean_pred", "mean_gold", "count"], &rows)?;
            manifest.write(&out, &[csv])
        }
        AnalyzeCommand::Quality {
            eval,
            quality,
            bins,
            out,
        } => {
            let mut manifest = ManifestBuilder::new("analyze quality", json!({ "bins": bins }));
            let eval_bytes = read(&eval)?;
            manifest.input(&eval, &eval_bytes);
            let q_bytes = read(&quality)?;
            manifest.input(&quality, &q_bytes);
            let report: EvaluationReport = serde_json::from_slice(&eval_bytes).map_err(input(&eval))?;
            let labels: BTreeMap<String, Quality> = serde_json::from_slice(&q_bytes).map_err(input(&quality))?;
            let f1: BTreeMap<String, f64> = report
                .examples
                .iter()
                .map(|e| (e.example_id.clone(), e.micro.f1))
                .collect();
            let groups = analysis::group_by_quality(&f1, &labels, bins).map_err(|e| CliError::Input(e.to_string()))?;
            println!("group\tcount\tmean_f1");
            for g in &groups {
                println!("{}\t{}\t{}", g.label, g.count, fmt_opt(g.mean_f1));
            }
            ensure_dir(&out)?;
            let csv = out.join("quality.csv");
            let rows: Vec<Vec<String>> = groups
                .iter()
                .map(|g| vec![g.label.clone(), g.count.to_string(), fmt_opt(g.mean_f1)])
                .collect();
            write_csv(&csv, &["group", "count", "mean_f1"], &rows)?;
            manifest.write(&out, &[csv])
        }
    }
}

fn baseline(cmd: BaselineCommand) -> Result<(), CliError> {
    match cmd {
        BaselineCommand::Embed {
            traces,
            embeddings,
            threshold,
            out,
        } => {
            if traces.len() != embeddings.len() {
                return Err(CliError::Input(format!(
                    "{} traces but {} embedding files",
                    traces.len(),
                    embeddings.len()
                )));
            }
            let params = json!({ "baseline": "embed", "threshold": threshold });
            let params_hash = omnitrace_core::config::sha256_hex(params.to_string().as_bytes());
            let mut manifest = ManifestBuilder::new("baseline embed", params);
            let mut examples = Vec::new();
            for (tp, ep) in traces.iter().zip(&embeddings) {
                let tb = read(tp)?;
                manifest.input(tp, &tb);
                let trace = load_trace(tp, &tb)?;
                let text = read_string(ep)?;
                manifest.input(ep, text.as_bytes());
                let table = EmbeddingTable::parse(&text).map_err(input(ep))?;
                let spans =
                    baselines::embed_attribute(&table, &segment_output(&trace), threshold).map_err(input(ep))?;
                examples.push(ExampleAttribution::new(&trace, &spans));
            }
            write_baseline(&out, "embed", params_hash, examples, manifest)
        }
        BaselineCommand::Random {
            traces,
            seed,
            k_weights,
            out,
        } => {
            let weights: Vec<f64> = k_weights
                .split(',')
                .map(|w| w.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Input(format!("--k-weights: {e}")))?;
            let params = json!({ "baseline": "random", "seed": seed, "k_weights": weights });
            let params_hash = omnitrace_core::config::sha256_hex(params.to_string().as_bytes());
            let mut manifest = ManifestBuilder::new("baseline random", params).seed(seed);
            let mut examples = Vec::new();
            for tp in &traces {
                let tb = read(tp)?;
                manifest.input(tp, &tb);
                let trace = load_trace(tp, &tb)?;
                let ids: Vec<_> = trace.sources.iter().map(|s| s.id).collect();
                let spans = baselines::random_attribute(&ids, &segment_output(&trace), seed, &weights)
                    .map_err(|e| CliError::Input(e.to_string()))?;
                examples.push(ExampleAttribution::new(&trace, &spans));
            }
            write_baseline(&out, "random", params_hash, examples, manifest)
        }
    }
}

fn write_baseline(
    out: &Path,
    name: &str,
    params_hash: String,
    examples: Vec<ExampleAttribution>,
    manifest: ManifestBuilder,
) -> Result<(), CliError> {
    for ex in &examples {
        let selected: usize = ex.chunks.iter().map(|c| c.selected.len()).sum();
        println!("{}\t{} chunks\t{} selected", ex.example_id, ex.chunks.len(), selected);
    }
    ensure_dir(out)?;
    let attr = out.join("attr.json");
    write_json(&attr, &AttributionReport::new(name, params_hash, examples))?;
    manifest.channel(name.to_string()).write(out, &[attr])
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let (mut spec, spec_bytes) = match &a.spec {
        Some(p) => {
            let text = read_string(p)?;
            (SynthSpec::from_toml(&text).map_err(input(p))?, Some((p, text)))
        }
        None => (SynthSpec::default(), None),
    };
    let base_id = spec.example_id.clone();
    let mut manifest = ManifestBuilder::new("synth", json!({ "spec": &spec, "count": a.count })).seed(a.seed);
    if let Some((p, text)) = &spec_bytes {
        manifest.input(p, text.as_bytes());
    }
    ensure_dir(&a.out)?;
    let mut outputs = Vec::new();
    for i in 0..a.count {
        spec.seed = a
            .seed
            .checked_add(i)
            .ok_or_else(|| CliError::Input("seed overflow".into()))?;
        spec.example_id = base_id
            .as_ref()
            .map(|b| if a.count > 1 { format!("{b}-{i}") } else { b.clone() });
        let (trace, gold) = generate_trace(&spec).map_err(|e| CliError::Input(e.to_string()))?;
        let tp = a.out.join(format!("{}.trace.jsonl", trace.example_id));
        let gp = a.out.join(format!("{}.gold.json", trace.example_id));
        write_bytes(&tp, trace_to_string(&trace).as_bytes())?;
        let mut g = gold.to_json();
        g.push('\n');
        write_bytes(&gp, g.as_bytes())?;
        println!("{}\t{}\t{}", trace.example_id, tp.display(), gp.display());
        outputs.push(tp);
        outputs.push(gp);
    }
    manifest.write(&a.out, &outputs)
}

fn validate(a: ValidateArgs) -> Result<(), CliError> {
    if a.traces.is_empty() && a.golds.is_empty() {
        return Err(CliError::Input(
            "nothing to validate: pass --trace and/or --gold".into(),
        ));
    }
    let mut failures = 0usize;
    let mut traces: BTreeMap<String, Trace> = BTreeMap::new();
    for p in &a.traces {
        let bytes = read(p)?;
        match parse_trace_with_warnings(bytes.as_slice()) {
            Ok(parsed) => {
                for w in &parsed.warnings {
                    println!("warning\t{}\t{w}", p.display());
                }
                println!(
                    "ok\t{}\t{} steps\t{} sources",
                    p.display(),
                    parsed.trace.steps.len(),
                    parsed.trace.sources.len()
                );
                traces.insert(parsed.trace.example_id.clone(), parsed.trace);
            }
            Err(e) => {
                failures += 1;
                println!("invalid\t{}\t[{}] {e}", p.display(), e.code());
            }
        }
    }
    for p in &a.golds {
        let bytes = read(p)?;
        let checked = parse_gold(&bytes).and_then(|g| match traces.get(&g.example_id) {
            Some(t) => validate_gold(&bytes, t),
            None => Ok(g),
        });
        match checked {
            Ok(g) => println!("ok\t{}\t{} chunks", p.display(), g.chunk_count()),
            Err(e) => {
                failures += 1;
                println!("invalid\t{}\t[{}] {e}", p.display(), e.code());
            }
        }
    }
    if failures > 0 {
        return Err(CliError::Input(format!("{failures} invalid file(s)")));
    }
    Ok(())
}
