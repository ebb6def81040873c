//! Diarization error rate with collar, FA/Miss/SE breakdown, optimal
//! speaker mapping, and posterior decoding into segments.
//!
//! Scoring follows the rich-transcription convention: per-speaker segments
//! are merged, a collar around every reference boundary is excluded from
//! evaluation, the hypothesis-to-reference speaker mapping maximizes
//! correctly attributed time, and each elementary interval contributes
//! `max(Nref, Nhyp) - Ncorrect` error time (so every missed simultaneous
//! speaker counts).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::labels::LabelMatrix;
use crate::model::PosteriorMatrix;
use crate::segments::{merge_intervals, SegmentList};

/// Largest speaker count per side for the exhaustive mapping search.
pub const MAX_MAPPED_SPEAKERS: usize = 6;

#[derive(Debug, Clone, Default)]
pub struct DerBreakdown {
    /// (fa + miss + se) / total_speech.
    pub der: f64,
    /// False-alarm time, seconds (frames for frame-level scoring).
    pub fa: f64,
    /// Missed-speech time.
    pub miss: f64,
    /// Speaker-confusion time.
    pub se: f64,
    /// Scored reference speech time.
    pub total_speech: f64,
    /// Chosen hypothesis -> reference speaker pairs.
    pub mapping: Vec<(String, String)>,
}

impl DerBreakdown {
    fn finalize(mut self) -> Self {
        self.der = if self.total_speech > 0.0 {
            (self.fa + self.miss + self.se) / self.total_speech
        } else if self.fa + self.miss + self.se > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        self
    }
}

#[derive(Debug, Clone)]
pub struct RecordingScore {
    pub recording_id: String,
    pub breakdown: DerBreakdown,
}

#[derive(Debug, Clone)]
pub struct CorpusScore {
    pub per_recording: Vec<RecordingScore>,
    pub totals: DerBreakdown,
}

/// Score a hypothesis against a reference with the given collar (seconds
/// excluded around every reference segment boundary). Component times are
/// summed over recordings; corpus DER is the ratio of the sums.
pub fn score_der(reference: &SegmentList, hypothesis: &SegmentList, collar: f64) -> Result<DerBreakdown> {
    Ok(score_der_detailed(reference, hypothesis, collar)?.totals)
}

pub fn score_der_detailed(
    reference: &SegmentList,
    hypothesis: &SegmentList,
    collar: f64,
) -> Result<CorpusScore> {
    if collar < 0.0 {
        return Err(Error::InvalidArgument("collar must be >= 0".into()));
    }
    let ref_recs = reference.recordings();
    for rec in hypothesis.recordings() {
        if !ref_recs.contains(&rec) {
            return Err(Error::InvalidArgument(format!(
                "hypothesis recording {rec} absent from the reference"
            )));
        }
    }

    let mut per_recording = Vec::new();
    let mut totals = DerBreakdown::default();
    for rec in &ref_recs {
        let breakdown = score_recording(reference, hypothesis, rec, collar)?;
        totals.fa += breakdown.fa;
        totals.miss += breakdown.miss;
        totals.se += breakdown.se;
        totals.total_speech += breakdown.total_speech;
        per_recording.push(RecordingScore { recording_id: rec.clone(), breakdown });
    }
    if totals.total_speech <= 0.0 {
        return Err(Error::InvalidArgument("reference contains no speech".into()));
    }
    // Speaker mappings are per recording; surface the mapping directly when
    // the corpus has just one.
    if per_recording.len() == 1 {
        totals.mapping = per_recording[0].breakdown.mapping.clone();
    }
    Ok(CorpusScore { per_recording, totals: totals.finalize() })
}

fn score_recording(
    reference: &SegmentList,
    hypothesis: &SegmentList,
    rec: &str,
    collar: f64,
) -> Result<DerBreakdown> {
    let ref_speakers = reference.speakers(rec);
    let hyp_speakers = hypothesis.speakers(rec);
    if ref_speakers.len() > MAX_MAPPED_SPEAKERS || hyp_speakers.len() > MAX_MAPPED_SPEAKERS {
        return Err(Error::InvalidArgument(format!(
            "exhaustive speaker mapping is limited to {MAX_MAPPED_SPEAKERS} speakers per side"
        )));
    }

    let ref_iv: Vec<Vec<(f64, f64)>> =
        ref_speakers.iter().map(|s| reference.merged_intervals(rec, s)).collect();
    let hyp_iv: Vec<Vec<(f64, f64)>> =
        hyp_speakers.iter().map(|s| hypothesis.merged_intervals(rec, s)).collect();

    // Collar exclusion zones around merged reference boundaries.
    let mut excluded: Vec<(f64, f64)> = Vec::new();
    if collar > 0.0 {
        for ivs in &ref_iv {
            for &(s, e) in ivs {
                excluded.push(((s - collar).max(0.0), s + collar));
                excluded.push(((e - collar).max(0.0), e + collar));
            }
        }
        merge_intervals(&mut excluded);
    }

    // Elementary timeline boundaries.
    let mut bounds: Vec<f64> = vec![0.0];
    for ivs in ref_iv.iter().chain(hyp_iv.iter()) {
        for &(s, e) in ivs {
            bounds.push(s);
            bounds.push(e);
        }
    }
    for &(s, e) in &excluded {
        bounds.push(s);
        bounds.push(e);
    }
    bounds.sort_by(f64::total_cmp);
    bounds.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let active_at = |ivs: &[(f64, f64)], t: f64| ivs.iter().any(|&(s, e)| t >= s && t < e);

    // Scored co-occurrence time between each (ref, hyp) speaker pair, used
    // to pick the mapping that maximizes correctly attributed time.
    let mut pair_time = vec![vec![0.0f64; hyp_speakers.len()]; ref_speakers.len()];
    let mut elementary: Vec<(f64, Vec<bool>, Vec<bool>)> = Vec::new();
    for w in bounds.windows(2) {
        let (a, b) = (w[0], w[1]);
        let dur = b - a;
        if dur <= 0.0 {
            continue;
        }
        let mid = 0.5 * (a + b);
        if active_at(&excluded, mid) {
            continue;
        }
        let r: Vec<bool> = ref_iv.iter().map(|iv| active_at(iv, mid)).collect();
        let h: Vec<bool> = hyp_iv.iter().map(|iv| active_at(iv, mid)).collect();
        for (i, &ra) in r.iter().enumerate() {
            if ra {
                for (j, &ha) in h.iter().enumerate() {
                    if ha {
                        pair_time[i][j] += dur;
                    }
                }
            }
        }
        elementary.push((dur, r, h));
    }

    let assignment = best_assignment(&pair_time);
    let hyp_to_ref: Vec<Option<usize>> = {
        let mut m = vec![None; hyp_speakers.len()];
        for (i, &j) in assignment.iter().enumerate() {
            if let Some(j) = j {
                m[j] = Some(i);
            }
        }
        m
    };

    let mut out = DerBreakdown::default();
    for (dur, r, h) in &elementary {
        let nref = r.iter().filter(|&&x| x).count();
        let nhyp = h.iter().filter(|&&x| x).count();
        let ncorrect = h
            .iter()
            .enumerate()
            .filter(|&(j, &ha)| ha && hyp_to_ref[j].map(|i| r[i]).unwrap_or(false))
            .count();
        out.total_speech += dur * nref as f64;
        out.miss += dur * nref.saturating_sub(nhyp) as f64;
        out.fa += dur * nhyp.saturating_sub(nref) as f64;
        out.se += dur * (nref.min(nhyp) - ncorrect.min(nref.min(nhyp))) as f64;
    }
    out.mapping = assignment
        .iter()
        .enumerate()
        .filter_map(|(i, &j)| j.map(|j| (hyp_speakers[j].clone(), ref_speakers[i].clone())))
        .collect();
    Ok(out.finalize())
}

/// Max-weight one-to-one assignment ref -> hyp by exhaustive recursion.
/// Returns, per reference speaker, the chosen hypothesis column.
fn best_assignment(pair_time: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n_ref = pair_time.len();
    let n_hyp = pair_time.first().map_or(0, Vec::len);
    let mut best: Vec<Option<usize>> = vec![None; n_ref];
    let mut best_score = f64::NEG_INFINITY;
    let mut current: Vec<Option<usize>> = vec![None; n_ref];
    let mut used = vec![false; n_hyp];

    fn recurse(
        i: usize,
        score: f64,
        pair_time: &[Vec<f64>],
        used: &mut Vec<bool>,
        current: &mut Vec<Option<usize>>,
        best: &mut Vec<Option<usize>>,
        best_score: &mut f64,
    ) {
        if i == pair_time.len() {
            if score > *best_score {
                *best_score = score;
                best.clone_from(current);
            }
            return;
        }
        current[i] = None;
        recurse(i + 1, score, pair_time, used, current, best, best_score);
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                current[i] = Some(j);
                recurse(i + 1, score + pair_time[i][j], pair_time, used, current, best, best_score);
                current[i] = None;
                used[j] = false;
            }
        }
    }

    recurse(0, 0.0, pair_time, &mut used, &mut current, &mut best, &mut best_score);
    best
}

/// Frame-level FA/Miss/SE with the best column permutation and no collar.
/// Component units are frames.
pub fn frame_der(ref_labels: &LabelMatrix, hyp_labels: &LabelMatrix) -> Result<DerBreakdown> {
    if ref_labels.num_frames() != hyp_labels.num_frames() {
        return Err(Error::ShapeMismatch(format!(
            "frame counts differ: {} vs {}",
            ref_labels.num_frames(),
            hyp_labels.num_frames()
        )));
    }
    let n_ref = ref_labels.num_speakers();
    let n_hyp = hyp_labels.num_speakers();
    if n_ref > MAX_MAPPED_SPEAKERS || n_hyp > MAX_MAPPED_SPEAKERS {
        return Err(Error::InvalidArgument(format!(
            "exhaustive speaker mapping is limited to {MAX_MAPPED_SPEAKERS} speakers per side"
        )));
    }

    let mut pair_time = vec![vec![0.0f64; n_hyp]; n_ref];
    for t in 0..ref_labels.num_frames() {
        for (i, row) in pair_time.iter_mut().enumerate() {
            if ref_labels.is_active(t, i) {
                for (j, cell) in row.iter_mut().enumerate() {
                    if hyp_labels.is_active(t, j) {
                        *cell += 1.0;
                    }
                }
            }
        }
    }
    let assignment = best_assignment(&pair_time);
    let hyp_to_ref: Vec<Option<usize>> = {
        let mut m = vec![None; n_hyp];
        for (i, &j) in assignment.iter().enumerate() {
            if let Some(j) = j {
                m[j] = Some(i);
            }
        }
        m
    };

    let mut out = DerBreakdown::default();
    for t in 0..ref_labels.num_frames() {
        let nref = ref_labels.active_count(t);
        let nhyp = hyp_labels.active_count(t);
        let ncorrect = (0..n_hyp)
            .filter(|&j| {
                hyp_labels.is_active(t, j)
                    && hyp_to_ref[j].map(|i| ref_labels.is_active(t, i)).unwrap_or(false)
            })
            .count();
        out.total_speech += nref as f64;
        out.miss += nref.saturating_sub(nhyp) as f64;
        out.fa += nhyp.saturating_sub(nref) as f64;
        out.se += (nref.min(nhyp) - ncorrect.min(nref.min(nhyp))) as f64;
    }
    out.mapping = assignment
        .iter()
        .enumerate()
        .filter_map(|(i, &j)| j.map(|j| (format!("hyp{j}"), format!("ref{i}"))))
        .collect();
    Ok(out.finalize())
}

/// Threshold posteriors per speaker and clean them with a binary median
/// filter (zero-padded at the edges).
pub fn decide_frames(
    posteriors: &PosteriorMatrix,
    threshold: f64,
    median_window: usize,
) -> Result<LabelMatrix> {
    if !(0.0..1.0).contains(&threshold) || threshold == 0.0 {
        return Err(Error::InvalidArgument(format!("threshold must be in (0,1), got {threshold}")));
    }
    if median_window == 0 || median_window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "median window must be odd and positive, got {median_window}"
        )));
    }
    let t_len = posteriors.num_frames();
    let s_len = posteriors.num_speakers();
    let half = median_window / 2;
    let need = half + 1; // majority of an odd window
    let mut labels = LabelMatrix::zeros(t_len, s_len);
    for s in 0..s_len {
        let raw: Vec<bool> =
            (0..t_len).map(|t| posteriors.mat().get(t, s) as f64 > threshold).collect();
        for t in 0..t_len {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(t_len);
            let ones = raw[lo..hi].iter().filter(|&&v| v).count();
            if ones >= need {
                labels.set_active(t, s, true);
            }
        }
    }
    Ok(labels)
}

/// Binarize, median-filter and merge posterior columns into segments on the
/// frame grid.
pub fn posteriors_to_segments(
    posteriors: &PosteriorMatrix,
    recording_id: &str,
    threshold: f64,
    median_window: usize,
    frame_shift: f64,
) -> Result<SegmentList> {
    let labels = decide_frames(posteriors, threshold, median_window)?;
    let names = crate::labels::channel_names(labels.num_speakers());
    crate::labels::labels_to_segments(&labels, recording_id, &names, frame_shift)
}

/// Plain-text score table (per recording plus corpus totals).
pub fn render_score_table(score: &CorpusScore) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<14} {:>8} {:>9} {:>9} {:>9} {:>10}\n",
        "recording", "DER%", "FA(s)", "Miss(s)", "SE(s)", "speech(s)"
    ));
    let mut rows: BTreeMap<&str, &DerBreakdown> = BTreeMap::new();
    for r in &score.per_recording {
        rows.insert(&r.recording_id, &r.breakdown);
    }
    for (rec, b) in rows {
        out.push_str(&format!(
            "{:<14} {:>8.2} {:>9.3} {:>9.3} {:>9.3} {:>10.3}\n",
            rec,
            100.0 * b.der,
            b.fa,
            b.miss,
            b.se,
            b.total_speech
        ));
    }
    let t = &score.totals;
    out.push_str(&format!(
        "{:<14} {:>8.2} {:>9.3} {:>9.3} {:>9.3} {:>10.3}\n",
        "TOTAL",
        100.0 * t.der,
        t.fa,
        t.miss,
        t.se,
        t.total_speech
    ));
    out
}
