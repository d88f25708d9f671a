//! Reference implementations used as test oracles. Each one is written for
//! clarity, independently of the engine code it checks.
#![allow(dead_code)]

use std::collections::BTreeMap;

/// Curation parameters in exact units: `alpha` in tenths, thresholds in
/// hundredths, `gamma` a whole exponent.
#[derive(Debug, Clone, Copy)]
pub struct OracleCfg {
    pub gamma: u32,
    pub alpha_tenths: u32,
    pub p_min_pct: u32,
    pub run_min_pct: u32,
    pub coverage_pct: u32,
}

impl OracleCfg {
    pub fn defaults() -> Self {
        OracleCfg {
            gamma: 1,
            alpha_tenths: 7,
            p_min_pct: 10,
            run_min_pct: 20,
            coverage_pct: 80,
        }
    }
}

/// POS weights in tenths.
pub fn pos_w_tenths(tag: &str) -> u128 {
    match tag {
        "NOUN" | "PROPN" | "NUM" => 10,
        "VERB" | "ADJ" => 8,
        "ADV" => 5,
        _ => 3,
    }
}

/// The reference curation procedure, step for step, in integer arithmetic.
/// Confidence `i` is `conf_num[i] / den` for a shared `den`; every quantity
/// is scaled by a common positive factor, so comparisons are exact. Maps are
/// ordered by source id and the sort is stable, so ties go to the lower id.
pub fn curate_oracle(source_ids: &[u32], pos: &[&str], conf_num: &[u32], cfg: &OracleCfg) -> Vec<u32> {
    let t_len = source_ids.len();
    if t_len == 0 {
        return vec![];
    }
    assert!(t_len == pos.len() && t_len == conf_num.len());

    let mut vote: Vec<u128> = Vec::new();
    for (p, c) in pos.iter().zip(conf_num) {
        vote.push(pos_w_tenths(p) * (*c as u128).pow(cfg.gamma));
    }

    let mut total = 0u128;
    for v in &vote {
        total += v;
    }
    if total == 0 {
        return vec![];
    }

    let mut mass: BTreeMap<u32, u128> = BTreeMap::new();
    for (s, v) in source_ids.iter().zip(&vote) {
        *mass.entry(*s).or_insert(0) += v;
    }

    let mut run_max: BTreeMap<u32, u128> = BTreeMap::new();
    let (mut cur_s, mut cur_run) = (source_ids[0], vote[0]);
    for i in 1..t_len {
        if source_ids[i] == cur_s {
            cur_run += vote[i];
        } else {
            let e = run_max.entry(cur_s).or_insert(0);
            *e = (*e).max(cur_run);
            cur_s = source_ids[i];
            cur_run = vote[i];
        }
    }
    let e = run_max.entry(cur_s).or_insert(0);
    *e = (*e).max(cur_run);

    // score * 10 * total
    let a = cfg.alpha_tenths as u128;
    let score = |s: u32| a * mass[&s] + (10 - a) * run_max[&s];

    let mut ranked: Vec<u32> = mass.keys().copied().collect();
    ranked.sort_by_key(|s| std::cmp::Reverse(score(*s)));

    let mut selected = Vec::new();
    let mut cum = 0u128;
    for s in ranked {
        let strong_run = 100 * run_max[&s] >= cfg.run_min_pct as u128 * total;
        if 100 * mass[&s] < cfg.p_min_pct as u128 * total && !strong_run {
            continue;
        }
        selected.push(s);
        cum += mass[&s];
        if 100 * cum >= cfg.coverage_pct as u128 * total {
            break;
        }
    }
    selected
}

/// Brute-force tracing of one step: average `rows`, clamp, normalize, sum
/// per source, take the heaviest (lowest id on ties). Sources are
/// `(id, start, end)` token ranges.
pub fn trace_oracle(rows: &[Vec<f64>], sources: &[(u32, usize, usize)]) -> (Option<u32>, f64) {
    let ctx = rows[0].len();
    let mut avg = vec![0.0; ctx];
    for i in 0..ctx {
        let mut s = 0.0;
        for r in rows {
            s += r[i];
        }
        avg[i] = (s / rows.len() as f64).max(0.0);
    }
    let z: f64 = avg.iter().sum();
    let mut best: Option<(u32, f64)> = None;
    let mut ordered = sources.to_vec();
    ordered.sort();
    for (id, s, e) in ordered {
        let m: f64 = if z > 0.0 { (s..e).map(|i| avg[i] / z).sum() } else { 0.0 };
        if m > 0.0 && best.is_none_or(|(_, bm)| m > bm) {
            best = Some((id, m));
        }
    }
    (best.map(|b| b.0), best.map_or(0.0, |b| b.1))
}

/// Time bins as a boolean array: bin `b` covers `[b * w, (b + 1) * w)` and
/// is marked when a span overlaps it, or contains a zero-length span.
pub fn time_bins_oracle(spans: &[(f64, f64)], bin_s: f64, horizon: f64) -> Vec<bool> {
    let n = (horizon / bin_s).ceil() as usize + 1;
    let mut marked = vec![false; n];
    for &(s, e) in spans {
        for (b, m) in marked.iter_mut().enumerate() {
            let lo = b as f64 * bin_s;
            let hi = (b + 1) as f64 * bin_s;
            let hit = if s == e { lo <= s && s < hi } else { s < hi && e > lo };
            *m |= hit;
        }
    }
    marked
}

/// (tp, fp, fn) over two boolean bin arrays.
pub fn bin_counts(pred: &[bool], gold: &[bool]) -> (u64, u64, u64) {
    let mut c = (0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        match (p, g) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            _ => {}
        }
    }
    c
}
