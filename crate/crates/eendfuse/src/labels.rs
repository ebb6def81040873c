//! Frame-level speaker activity labels and the segment/frame discretization
//! rule shared by labels, VAD masks and hypothesis decoding.
//!
//! A frame `t` spans `[t*shift, (t+1)*shift)`. It is marked active when at
//! least half of the frame span is covered by speech, or when a single
//! segment has at least half of its own span inside the frame (so short
//! segments survive discretization).

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::segments::{merge_intervals, Segment, SegmentList};

/// T x S binary speaker-activity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    mat: Mat,
}

impl LabelMatrix {
    pub fn new(mat: Mat) -> Result<Self> {
        if mat.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
        Ok(Self { mat })
    }

    pub fn zeros(frames: usize, speakers: usize) -> Self {
        Self { mat: Mat::zeros(frames, speakers) }
    }

    pub fn mat(&self) -> &Mat {
        &self.mat
    }

    pub fn num_frames(&self) -> usize {
        self.mat.rows()
    }

    pub fn num_speakers(&self) -> usize {
        self.mat.cols()
    }

    pub fn is_active(&self, frame: usize, speaker: usize) -> bool {
        self.mat.get(frame, speaker) != 0.0
    }

    pub fn set_active(&mut self, frame: usize, speaker: usize, active: bool) {
        self.mat.set(frame, speaker, if active { 1.0 } else { 0.0 });
    }

    /// Number of active speakers at a frame.
    pub fn active_count(&self, frame: usize) -> usize {
        self.mat.row(frame).iter().filter(|&&v| v != 0.0).count()
    }

    /// Columns with at least one active frame, in column order.
    pub fn active_columns(&self) -> Vec<usize> {
        (0..self.num_speakers())
            .filter(|&s| (0..self.num_frames()).any(|t| self.is_active(t, s)))
            .collect()
    }

    /// Copy of the given columns, preserving their order.
    pub fn select_columns(&self, cols: &[usize]) -> LabelMatrix {
        let mut out = Mat::zeros(self.num_frames(), cols.len());
        for t in 0..self.num_frames() {
            for (j, &c) in cols.iter().enumerate() {
                out.set(t, j, self.mat.get(t, c));
            }
        }
        LabelMatrix { mat: out }
    }

    pub fn slice_frames(&self, start: usize, end: usize) -> LabelMatrix {
        LabelMatrix { mat: self.mat.slice_rows(start, end) }
    }
}

/// Discretize a set of segments onto a frame grid (see module docs).
pub fn discretize(segments: &[Segment], num_frames: usize, frame_shift: f64) -> Vec<bool> {
    let mut mask = vec![false; num_frames];
    let half_frame = 0.5 * frame_shift;

    // Coverage clause: >= 50% of the frame span lies inside merged speech.
    let mut merged: Vec<(f64, f64)> = segments.iter().map(|s| (s.onset, s.end())).collect();
    merge_intervals(&mut merged);
    for (t, slot) in mask.iter_mut().enumerate() {
        let lo = t as f64 * frame_shift;
        let hi = lo + frame_shift;
        let covered: f64 =
            merged.iter().map(|&(s, e)| (hi.min(e) - lo.max(s)).max(0.0)).sum();
        if covered >= half_frame {
            *slot = true;
        }
    }

    // Short-segment clause: a segment with >= 50% of itself in one frame
    // marks that frame.
    for seg in segments {
        let first = (seg.onset / frame_shift).floor().max(0.0) as usize;
        let last = ((seg.end() / frame_shift).ceil() as usize).min(num_frames);
        for (t, slot) in mask.iter_mut().enumerate().take(last).skip(first) {
            let lo = t as f64 * frame_shift;
            let hi = lo + frame_shift;
            let inside = (hi.min(seg.end()) - lo.max(seg.onset)).max(0.0);
            if inside >= 0.5 * seg.duration {
                *slot = true;
            }
        }
    }
    mask
}

/// Frame labels for one recording; speaker column order is given by
/// `speakers` (typically first appearance order).
pub fn segments_to_labels(
    list: &SegmentList,
    recording_id: &str,
    speakers: &[String],
    num_frames: usize,
    frame_shift: f64,
) -> LabelMatrix {
    let mut labels = LabelMatrix::zeros(num_frames, speakers.len());
    for (col, spk) in speakers.iter().enumerate() {
        let segs: Vec<Segment> = list
            .iter()
            .filter(|s| s.recording_id == recording_id && &s.speaker == spk)
            .cloned()
            .collect();
        for (t, active) in discretize(&segs, num_frames, frame_shift).into_iter().enumerate() {
            if active {
                labels.set_active(t, col, true);
            }
        }
    }
    labels
}

/// Merge consecutive active frames of each column back into segments on the
/// frame grid.
pub fn labels_to_segments(
    labels: &LabelMatrix,
    recording_id: &str,
    speakers: &[String],
    frame_shift: f64,
) -> Result<SegmentList> {
    if speakers.len() != labels.num_speakers() {
        return Err(Error::ShapeMismatch(format!(
            "{} speaker names for {} columns",
            speakers.len(),
            labels.num_speakers()
        )));
    }
    let mut out = SegmentList::default();
    for (col, spk) in speakers.iter().enumerate() {
        let mut t = 0;
        while t < labels.num_frames() {
            if labels.is_active(t, col) {
                let start = t;
                while t < labels.num_frames() && labels.is_active(t, col) {
                    t += 1;
                }
                out.push(Segment::new(
                    recording_id,
                    spk.clone(),
                    start as f64 * frame_shift,
                    (t - start) as f64 * frame_shift,
                )?);
            } else {
                t += 1;
            }
        }
    }
    Ok(out)
}

/// Default speaker channel names for decoded hypotheses.
pub fn channel_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("spk{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(spk: &str, onset: f64, dur: f64) -> Segment {
        Segment::new("r", spk, onset, dur).unwrap()
    }

    #[test]
    fn full_second_marks_all_frames() {
        let mask = discretize(&[seg("a", 0.0, 1.0)], 10, 0.1);
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn empty_reference_marks_nothing() {
        let mask = discretize(&[], 10, 0.1);
        assert!(mask.iter().all(|&m| !m));
    }

    #[test]
    fn tiny_segment_marks_its_majority_frame_only() {
        let mask = discretize(&[seg("a", 0.24, 0.02)], 10, 0.1);
        let expected: Vec<bool> = (0..10).map(|t| t == 2).collect();
        assert_eq!(mask, expected);
    }

    #[test]
    fn half_coverage_boundary_is_inclusive() {
        // [0.05, 0.15) covers exactly half of frame 0 and half of frame 1.
        let mask = discretize(&[seg("a", 0.05, 0.10)], 2, 0.1);
        assert_eq!(mask, vec![true, true]);
    }

    #[test]
    fn labels_round_trip_on_grid() {
        let list = SegmentList::new(vec![seg("a", 0.0, 1.0), seg("b", 0.5, 1.5)]);
        let speakers = vec!["a".to_string(), "b".to_string()];
        let labels = segments_to_labels(&list, "r", &speakers, 20, 0.1);
        let back = labels_to_segments(&labels, "r", &speakers, 0.1).unwrap();
        let again = segments_to_labels(&back, "r", &speakers, 20, 0.1);
        assert_eq!(labels, again);
        assert_eq!(back.len(), 2);
    }

    #[test]
    fn active_columns_and_selection() {
        let mut labels = LabelMatrix::zeros(4, 3);
        labels.set_active(1, 0, true);
        labels.set_active(2, 2, true);
        assert_eq!(labels.active_columns(), vec![0, 2]);
        let sel = labels.select_columns(&[0, 2]);
        assert_eq!(sel.num_speakers(), 2);
        assert!(sel.is_active(2, 1));
    }
}
