//! Shared helpers for integration tests: an independent 1 ms discretization
//! DER scorer used as the oracle for the interval-sweep implementation, and
//! small dataset builders.

#![allow(dead_code)]

use eendfuse::segments::SegmentList;
use eendfuse::simulate::{simulate_dataset, DatasetEntry, MixtureSpec};

/// DER components measured by sampling the timeline every millisecond and
/// counting samples: (fa, miss, se, total_speech), all in seconds. Written
/// against the definition only; shares no code with the production scorer.
pub fn der_oracle_1ms(
    reference: &SegmentList,
    hypothesis: &SegmentList,
    collar: f64,
) -> (f64, f64, f64, f64) {
    let mut totals = (0.0, 0.0, 0.0, 0.0);
    for rec in reference.recordings() {
        let (fa, miss, se, speech) = score_recording_sampled(reference, hypothesis, &rec, collar);
        totals.0 += fa;
        totals.1 += miss;
        totals.2 += se;
        totals.3 += speech;
    }
    totals
}

fn score_recording_sampled(
    reference: &SegmentList,
    hypothesis: &SegmentList,
    rec: &str,
    collar: f64,
) -> (f64, f64, f64, f64) {
    let ref_speakers = reference.speakers(rec);
    let hyp_speakers = hypothesis.speakers(rec);
    let ref_iv: Vec<Vec<(f64, f64)>> =
        ref_speakers.iter().map(|s| reference.merged_intervals(rec, s)).collect();
    let hyp_iv: Vec<Vec<(f64, f64)>> =
        hyp_speakers.iter().map(|s| hypothesis.merged_intervals(rec, s)).collect();

    let mut exclusions: Vec<(f64, f64)> = Vec::new();
    if collar > 0.0 {
        for ivs in &ref_iv {
            for &(s, e) in ivs {
                exclusions.push((s - collar, s + collar));
                exclusions.push((e - collar, e + collar));
            }
        }
    }

    let horizon = reference.max_end(rec).max(hypothesis.max_end(rec)) + collar + 0.01;
    let n_samples = (horizon * 1000.0).ceil() as usize;

    // Active speaker sets per 1 ms sample.
    let mut samples: Vec<(Vec<bool>, Vec<bool>)> = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let t = (k as f64 + 0.5) / 1000.0;
        if exclusions.iter().any(|&(s, e)| t >= s && t < e) {
            continue;
        }
        let active = |ivs: &[(f64, f64)]| ivs.iter().any(|&(s, e)| t >= s && t < e);
        samples.push((
            ref_iv.iter().map(|iv| active(iv)).collect(),
            hyp_iv.iter().map(|iv| active(iv)).collect(),
        ));
    }

    // Co-occurrence counts drive an exhaustive assignment search written
    // independently of the production mapping code: assign each hypothesis
    // speaker to an unused reference speaker or to nobody.
    let mut pair = vec![vec![0usize; hyp_speakers.len()]; ref_speakers.len()];
    for (r, h) in &samples {
        for (i, &ra) in r.iter().enumerate() {
            if !ra {
                continue;
            }
            for (j, &ha) in h.iter().enumerate() {
                if ha {
                    pair[i][j] += 1;
                }
            }
        }
    }
    let mut best_map: Vec<Option<usize>> = vec![None; hyp_speakers.len()];
    let mut best_score = -1i64;
    let mut current: Vec<Option<usize>> = vec![None; hyp_speakers.len()];
    let mut used_ref = vec![false; ref_speakers.len()];
    assign_hyp(
        0,
        0,
        &pair,
        &mut used_ref,
        &mut current,
        &mut best_map,
        &mut best_score,
    );

    let (mut fa, mut miss, mut se, mut speech) = (0usize, 0usize, 0usize, 0usize);
    for (r, h) in &samples {
        let nref = r.iter().filter(|&&x| x).count();
        let nhyp = h.iter().filter(|&&x| x).count();
        let ncorrect = h
            .iter()
            .enumerate()
            .filter(|&(j, &ha)| ha && best_map[j].map(|i| r[i]).unwrap_or(false))
            .count();
        speech += nref;
        miss += nref.saturating_sub(nhyp);
        fa += nhyp.saturating_sub(nref);
        se += nref.min(nhyp).saturating_sub(ncorrect);
    }
    (fa as f64 / 1000.0, miss as f64 / 1000.0, se as f64 / 1000.0, speech as f64 / 1000.0)
}

fn assign_hyp(
    j: usize,
    score: i64,
    pair: &[Vec<usize>],
    used_ref: &mut Vec<bool>,
    current: &mut Vec<Option<usize>>,
    best_map: &mut Vec<Option<usize>>,
    best_score: &mut i64,
) {
    let n_hyp = current.len();
    if j == n_hyp {
        if score > *best_score {
            *best_score = score;
            best_map.clone_from(current);
        }
        return;
    }
    current[j] = None;
    assign_hyp(j + 1, score, pair, used_ref, current, best_map, best_score);
    for i in 0..used_ref.len() {
        if !used_ref[i] {
            used_ref[i] = true;
            current[j] = Some(i);
            assign_hyp(
                j + 1,
                score + pair[i][j] as i64,
                pair,
                used_ref,
                current,
                best_map,
                best_score,
            );
            current[j] = None;
            used_ref[i] = false;
        }
    }
}

/// Small simulated dataset for training-oriented tests.
pub fn toy_dataset(
    dir: &std::path::Path,
    count: u64,
    seed: u64,
    max_duration_s: f64,
) -> Vec<DatasetEntry> {
    let mut spec = MixtureSpec::new(seed);
    spec.max_duration_s = max_duration_s;
    spec.utterance_range_s = (1.0, 2.5);
    spec.pause_scale = 0.5;
    simulate_dataset(&spec, count, dir).expect("dataset generation")
}
