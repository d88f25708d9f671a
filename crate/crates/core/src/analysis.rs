//! Post-hoc analyses over attribution results: where in the input selected
//! sources sit, how predicted image share tracks gold image share, and how
//! attribution quality varies with generation quality.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gold::{GoldChunk, GoldLabels};
use crate::model::{Modality, SourceId};
use crate::report::{AttributionReport, ExampleAttribution, SourceSummary};

/// Default number of calibration bins.
pub const DEFAULT_CALIBRATION_BINS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("untimed {modality} source {id} in a timed task")]
    UntimedSource { id: SourceId, modality: Modality },
    #[error("example '{example}' has no duration for timed source {id}")]
    MissingDuration { example: String, id: SourceId },
    #[error("example '{example}' has no input tokens")]
    EmptyInput { example: String },
    #[error("unknown source {id} in example '{example}'")]
    UnknownSource { example: String, id: SourceId },
    #[error("fraction {0} outside [0, 1]")]
    FractionOutOfRange(f64),
    #[error("bin count must be at least 1")]
    NoBins,
    #[error("{0} predicted values but {1} gold values")]
    LengthMismatch(usize, usize),
    #[error("example id mismatch: '{0}'")]
    IdMismatch(String),
    #[error("quality labels mix correctness flags and scores")]
    MixedQuality,
    #[error("gold for example '{0}' is missing or has a different chunk count")]
    GoldMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PositionWeighting {
    /// Every (chunk, selected source) pair counts once.
    #[default]
    Equal,
    /// Each pair counts with the source's vote mass in the chunk.
    Mass,
}

/// Normalized position of a source: token-range midpoint over the input
/// length, or time midpoint over the media duration for timed modalities.
pub fn source_position(src: &SourceSummary, ex: &ExampleAttribution) -> Result<f64, AnalysisError> {
    if src.modality.is_timed() {
        let t = src.time.ok_or(AnalysisError::UntimedSource {
            id: src.id,
            modality: src.modality,
        })?;
        let d = ex
            .duration_s
            .filter(|d| *d > 0.0)
            .ok_or_else(|| AnalysisError::MissingDuration {
                example: ex.example_id.clone(),
                id: src.id,
            })?;
        Ok((t.midpoint() / d).clamp(0.0, 1.0))
    } else {
        if ex.n_input_tokens == 0 {
            return Err(AnalysisError::EmptyInput {
                example: ex.example_id.clone(),
            });
        }
        let [s, e] = src.token_range;
        Ok((s + e) as f64 / 2.0 / ex.n_input_tokens as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositionStats {
    pub normalized_positions: Vec<f64>,
    pub weights: Vec<f64>,
    pub mean: f64,
    /// Distinct positions with the cumulative weight fraction up to and
    /// including each.
    pub cdf: Vec<(f64, f64)>,
}

impl PositionStats {
    pub fn from_samples(samples: &[(f64, f64)]) -> Self {
        let total: f64 = samples.iter().map(|s| s.1).sum();
        let mean = if total > 0.0 {
            samples.iter().map(|(p, w)| p * w).sum::<f64>() / total
        } else {
            f64::NAN
        };
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cdf: Vec<(f64, f64)> = Vec::new();
        let mut acc = 0.0;
        for (p, w) in &sorted {
            acc += w;
            match cdf.last_mut() {
                Some(last) if last.0 == *p => last.1 = acc,
                _ => cdf.push((*p, acc)),
            }
        }
        if total > 0.0 {
            cdf.iter_mut().for_each(|c| c.1 /= total);
            if let Some(last) = cdf.last_mut() {
                last.1 = 1.0;
            }
        }
        PositionStats {
            normalized_positions: sorted.iter().map(|s| s.0).collect(),
            weights: sorted.iter().map(|s| s.1).collect(),
            mean,
            cdf,
        }
    }
}

/// (position, weight) for every selected source of every chunk.
pub fn position_samples(
    report: &AttributionReport,
    weighting: PositionWeighting,
) -> Result<Vec<(f64, f64)>, AnalysisError> {
    let mut out = Vec::new();
    for ex in &report.examples {
        for chunk in &ex.chunks {
            for id in &chunk.selected {
                let src = ex.source(*id).ok_or_else(|| AnalysisError::UnknownSource {
                    example: ex.example_id.clone(),
                    id: *id,
                })?;
                let w = match weighting {
                    PositionWeighting::Equal => 1.0,
                    PositionWeighting::Mass => chunk.diagnostics.get(*id).map_or(0.0, |s| s.p_mass),
                };
                out.push((source_position(src, ex)?, w));
            }
        }
    }
    Ok(out)
}

pub fn position_cdf(report: &AttributionReport, weighting: PositionWeighting) -> Result<PositionStats, AnalysisError> {
    Ok(PositionStats::from_samples(&position_samples(report, weighting)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub mean_pred: Option<f64>,
    pub mean_gold: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationCurve {
    pub bins: Vec<CalibrationBin>,
}

/// Equal-width bins over the predicted fraction. Bins are right-closed,
/// `(lo, hi]`, with 0 falling in the first bin.
pub fn calibration_curve(pred: &[f64], gold: &[f64], bins: usize) -> Result<CalibrationCurve, AnalysisError> {
    if bins == 0 {
        return Err(AnalysisError::NoBins);
    }
    if pred.len() != gold.len() {
        return Err(AnalysisError::LengthMismatch(pred.len(), gold.len()));
    }
    if let Some(&x) = pred.iter().chain(gold).find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(AnalysisError::FractionOutOfRange(x));
    }
    let mut members: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); bins];
    for (&p, &g) in pred.iter().zip(gold) {
        let k = ((p * bins as f64).ceil() as usize).clamp(1, bins) - 1;
        members[k].0.push(p);
        members[k].1.push(g);
    }
    // Sorted summation keeps the means independent of input order.
    let mean = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok(CalibrationCurve {
        bins: members
            .into_iter()
            .enumerate()
            .map(|(k, (mut ps, mut gs))| CalibrationBin {
                lo: k as f64 / bins as f64,
                hi: (k + 1) as f64 / bins as f64,
                count: ps.len(),
                mean_pred: mean(&mut ps),
                mean_gold: mean(&mut gs),
            })
            .collect(),
    })
}

/// Per-chunk (predicted, gold) image fractions. Predicted is the image
/// sources' share of the selected vote mass (selection count when no mass is
/// recorded); gold is the image share of the gold ids. Chunks with an empty
/// selection or empty gold are skipped.
pub fn image_fractions(
    report: &AttributionReport,
    golds: &[GoldLabels],
) -> Result<(Vec<f64>, Vec<f64>), AnalysisError> {
    let by_id: BTreeMap<&str, &GoldLabels> = golds.iter().map(|g| (g.example_id.as_str(), g)).collect();
    let (mut pred, mut gold) = (Vec::new(), Vec::new());
    for ex in &report.examples {
        let g = by_id
            .get(ex.example_id.as_str())
            .filter(|g| g.chunk_count() == ex.chunks.len())
            .ok_or_else(|| AnalysisError::GoldMismatch(ex.example_id.clone()))?;
        let is_image = |id: &SourceId| ex.source(*id).is_some_and(|s| s.modality == Modality::Image);
        for (chunk, gc) in ex.chunks.iter().zip(&g.chunks) {
            let GoldChunk::Sources { source_ids } = gc else {
                continue;
            };
            if chunk.selected.is_empty() || source_ids.is_empty() {
                continue;
            }
            let mass = |id: &SourceId| chunk.diagnostics.get(*id).map_or(0.0, |s| s.p_mass);
            let total: f64 = chunk.selected.iter().map(mass).sum();
            let p = if total > 0.0 {
                chunk.selected.iter().filter(|id| is_image(id)).map(mass).sum::<f64>() / total
            } else {
                chunk.selected.iter().filter(|id| is_image(id)).count() as f64 / chunk.selected.len() as f64
            };
            pred.push(p.clamp(0.0, 1.0));
            gold.push(source_ids.iter().filter(|id| is_image(id)).count() as f64 / source_ids.len() as f64);
        }
    }
    Ok((pred, gold))
}

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure (beta = 1) over lowercased whitespace tokens.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let c_low = candidate.to_lowercase();
    let r_low = reference.to_lowercase();
    let c: Vec<&str> = c_low.split_whitespace().collect();
    let r: Vec<&str> = r_low.split_whitespace().collect();
    match (c.is_empty(), r.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let lcs = lcs_len(&c, &r) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / c.len() as f64;
    let rec = lcs / r.len() as f64;
    2.0 * p * rec / (p + rec)
}

/// Generation-quality label of one example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Quality {
    Correct(bool),
    Score(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityGroup {
    pub label: String,
    pub count: usize,
    /// `None` for an empty group.
    pub mean_f1: Option<f64>,
}

/// Mean attribution F1 per quality group: correct/incorrect for flags, or
/// `bins` equal-width right-closed score bins over [0, 1].
pub fn group_by_quality(
    f1: &BTreeMap<String, f64>,
    quality: &BTreeMap<String, Quality>,
    bins: usize,
) -> Result<Vec<QualityGroup>, AnalysisError> {
    let a: BTreeSet<&String> = f1.keys().collect();
    let b: BTreeSet<&String> = quality.keys().collect();
    if let Some(id) = a.symmetric_difference(&b).next() {
        return Err(AnalysisError::IdMismatch((*id).clone()));
    }
    let flags = quality.values().filter(|q| matches!(q, Quality::Correct(_))).count();
    if flags != 0 && flags != quality.len() {
        return Err(AnalysisError::MixedQuality);
    }
    let labels: Vec<String> = if flags > 0 || quality.is_empty() {
        vec!["correct".into(), "incorrect".into()]
    } else {
        if bins == 0 {
            return Err(AnalysisError::NoBins);
        }
        (0..bins)
            .map(|k| format!("({:.2},{:.2}]", k as f64 / bins as f64, (k + 1) as f64 / bins as f64))
            .collect()
    };
    let bucket = |q: &Quality| match *q {
        Quality::Correct(c) => Ok(usize::from(!c)),
        Quality::Score(s) if (0.0..=1.0).contains(&s) => Ok(((s * bins as f64).ceil() as usize).clamp(1, bins) - 1),
        Quality::Score(s) => Err(AnalysisError::FractionOutOfRange(s)),
    };
    let mut acc = vec![(0.0, 0usize); labels.len()];
    for (id, q) in quality {
        let k = bucket(q)?;
        acc[k].0 += f1[id];
        acc[k].1 += 1;
    }
    Ok(labels
        .into_iter()
        .zip(acc)
        .map(|(label, (sum, count))| QualityGroup {
            label,
            count,
            mean_f1: (count > 0).then(|| sum / count as f64),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::CurationDiagnostics;
    use crate::model::TimeSpan;
    use crate::report::ChunkAttribution;

    fn report(
        sources: Vec<SourceSummary>,
        selected: Vec<Vec<u32>>,
        n: usize,
        duration_s: Option<f64>,
    ) -> AttributionReport {
        AttributionReport::new(
            "attmean",
            "h",
            vec![ExampleAttribution {
                example_id: "ex".into(),
                n_input_tokens: n,
                duration_s,
                sources,
                chunks: selected
                    .into_iter()
                    .enumerate()
                    .map(|(index, s)| ChunkAttribution {
                        index,
                        text: String::new(),
                        token_steps: vec![],
                        selected: s.into_iter().map(SourceId).collect(),
                        diagnostics: CurationDiagnostics::default(),
                        by_modality: BTreeMap::new(),
                    })
                    .collect(),
                option_consistency: None,
            }],
        )
    }

    fn text_src(id: u32, s: usize, e: usize) -> SourceSummary {
        SourceSummary {
            id: SourceId(id),
            modality: Modality::Text,
            token_range: [s, e],
            time: None,
        }
    }

    #[test]
    fn whole_input_source_sits_at_half() {
        let r = report(vec![text_src(0, 0, 10)], vec![vec![0]], 10, None);
        let stats = position_cdf(&r, PositionWeighting::Equal).unwrap();
        assert_eq!(stats.mean, 0.5);
        assert_eq!(stats.cdf, vec![(0.5, 1.0)]);
    }

    #[test]
    fn timed_positions_use_duration() {
        let src = SourceSummary {
            id: SourceId(0),
            modality: Modality::Audio,
            token_range: [0, 4],
            time: Some(TimeSpan::new(10.0, 20.0)),
        };
        let r = report(vec![src.clone()], vec![vec![0]], 4, Some(60.0));
        assert_eq!(position_cdf(&r, PositionWeighting::Equal).unwrap().mean, 0.25);
        let untimed = SourceSummary { time: None, ..src };
        let r = report(vec![untimed], vec![vec![0]], 4, Some(60.0));
        assert!(matches!(
            position_cdf(&r, PositionWeighting::Equal),
            Err(AnalysisError::UntimedSource { .. })
        ));
    }

    #[test]
    fn cdf_is_monotone_and_ends_at_one() {
        let stats = PositionStats::from_samples(&[(0.9, 1.0), (0.1, 1.0), (0.1, 2.0), (0.5, 1.0)]);
        assert_eq!(stats.cdf, vec![(0.1, 0.6), (0.5, 0.8), (0.9, 1.0)]);
        assert!((stats.mean - (0.1 * 3.0 + 0.5 + 0.9) / 5.0).abs() < 1e-12);
    }

    #[test]
    fn calibration_binning() {
        let c = calibration_curve(&[0.55; 4], &[0.35; 4], 10).unwrap();
        let occupied: Vec<_> = c.bins.iter().filter(|b| b.count > 0).collect();
        assert_eq!(occupied.len(), 1);
        assert_eq!((occupied[0].lo, occupied[0].hi), (0.5, 0.6));
        assert!((occupied[0].mean_pred.unwrap() - 0.55).abs() < 1e-12);
        assert!((occupied[0].mean_gold.unwrap() - 0.35).abs() < 1e-12);
        assert_eq!(c.bins.iter().map(|b| b.count).sum::<usize>(), 4);

        let one = calibration_curve(&[0.0, 1.0], &[0.2, 0.4], 1).unwrap();
        assert_eq!(one.bins.len(), 1);
        assert_eq!(one.bins[0].mean_pred, Some(0.5));
        assert!((one.bins[0].mean_gold.unwrap() - 0.3).abs() < 1e-12);

        assert_eq!(
            calibration_curve(&[1.5], &[0.0], 10),
            Err(AnalysisError::FractionOutOfRange(1.5))
        );
        assert_eq!(calibration_curve(&[], &[], 0), Err(AnalysisError::NoBins));
    }

    #[test]
    fn rouge_cases() {
        assert_eq!(rouge_l("the cat sat", "the cat sat"), 1.0);
        assert!((rouge_l("a b c", "a c") - 0.8).abs() < 1e-12);
        assert_eq!(rouge_l("x y", "p q"), 0.0);
        assert_eq!(rouge_l("", ""), 1.0);
        assert_eq!(rouge_l("a", ""), 0.0);
        assert_eq!(rouge_l("The Cat", "the cat"), 1.0);
    }

    #[test]
    fn quality_groups() {
        let f1: BTreeMap<String, f64> = [("a", 0.4), ("b", 0.6), ("c", 0.5)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        let q: BTreeMap<String, Quality> = [("a", true), ("b", true), ("c", false)]
            .iter()
            .map(|(k, v)| (k.to_string(), Quality::Correct(*v)))
            .collect();
        let g = group_by_quality(&f1, &q, 5).unwrap();
        assert_eq!(g[0].mean_f1, Some(0.5));
        assert_eq!(g[1].mean_f1, Some(0.5));
        assert_eq!((g[0].count, g[1].count), (2, 1));

        let all_correct: BTreeMap<String, Quality> = f1.keys().map(|k| (k.clone(), Quality::Correct(true))).collect();
        let g = group_by_quality(&f1, &all_correct, 5).unwrap();
        assert!((g[0].mean_f1.unwrap() - 0.5).abs() < 1e-12);
        assert_eq!((g[1].count, g[1].mean_f1), (0, None));

        let mut missing = q.clone();
        missing.remove("c");
        assert_eq!(
            group_by_quality(&f1, &missing, 5),
            Err(AnalysisError::IdMismatch("c".into()))
        );

        let scores: BTreeMap<String, Quality> = [("a", 0.05), ("b", 0.95), ("c", 1.0)]
            .iter()
            .map(|(k, v)| (k.to_string(), Quality::Score(*v)))
            .collect();
        let g = group_by_quality(&f1, &scores, 2).unwrap();
        assert_eq!((g[0].count, g[1].count), (1, 2));
    }
}
