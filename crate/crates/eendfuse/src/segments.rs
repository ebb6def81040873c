//! Speaker-attributed time intervals and the RTTM exchange format.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// One speaker-attributed interval: `[onset, onset + duration)` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub recording_id: String,
    pub speaker: String,
    pub onset: f64,
    pub duration: f64,
}

impl Segment {
    pub fn new(
        recording_id: impl Into<String>,
        speaker: impl Into<String>,
        onset: f64,
        duration: f64,
    ) -> Result<Self> {
        if !onset.is_finite() || onset < 0.0 {
            return Err(Error::InvalidSegment(format!("onset {onset} must be finite and >= 0")));
        }
        if !duration.is_finite() || duration <= 0.0 {
            return Err(Error::InvalidSegment(format!("duration {duration} must be positive")));
        }
        Ok(Self { recording_id: recording_id.into(), speaker: speaker.into(), onset, duration })
    }

    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }
}

/// Ordered collection of segments, possibly spanning several recordings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentList {
    segments: Vec<Segment>,
}

impl SegmentList {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self { segments }
    }

    pub fn push(&mut self, segment: Segment) {
        self.segments.push(segment);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Recording ids in sorted order.
    pub fn recordings(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.segments.iter().map(|s| s.recording_id.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    /// Speakers of one recording, in order of first appearance.
    pub fn speakers(&self, recording_id: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.segments {
            if s.recording_id == recording_id && !out.contains(&s.speaker) {
                out.push(s.speaker.clone());
            }
        }
        out
    }

    /// Segments of one recording.
    pub fn for_recording(&self, recording_id: &str) -> SegmentList {
        SegmentList::new(
            self.segments.iter().filter(|s| s.recording_id == recording_id).cloned().collect(),
        )
    }

    /// Merged intervals of one speaker of one recording, sorted, with
    /// overlapping or touching segments unioned.
    pub fn merged_intervals(&self, recording_id: &str, speaker: &str) -> Vec<(f64, f64)> {
        let mut ivs: Vec<(f64, f64)> = self
            .segments
            .iter()
            .filter(|s| s.recording_id == recording_id && s.speaker == speaker)
            .map(|s| (s.onset, s.end()))
            .collect();
        merge_intervals(&mut ivs);
        ivs
    }

    /// End of the last segment of a recording (0 when empty).
    pub fn max_end(&self, recording_id: &str) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.recording_id == recording_id)
            .map(Segment::end)
            .fold(0.0, f64::max)
    }

    pub fn extend(&mut self, other: SegmentList) {
        self.segments.extend(other.segments);
    }
}

/// Union overlapping or touching `(start, end)` intervals in place.
pub fn merge_intervals(ivs: &mut Vec<(f64, f64)>) {
    ivs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(ivs.len());
    for &(s, e) in ivs.iter() {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    *ivs = out;
}

/// Total length of the pairwise intersection of two merged interval sets.
pub fn intersection_len(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if hi > lo {
            total += hi - lo;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

// ---------------------------------------------------------------------------
// RTTM
// ---------------------------------------------------------------------------

/// Write `SPEAKER <rec> 1 <onset> <dur> <NA> <NA> <spk> <NA> <NA>` lines,
/// onset and duration with two decimals.
pub fn write_rttm(list: &SegmentList, path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    write_rttm_to(list, &mut w)
}

pub fn write_rttm_to(list: &SegmentList, w: &mut impl Write) -> Result<()> {
    for s in list.iter() {
        writeln!(
            w,
            "SPEAKER {} 1 {:.2} {:.2} <NA> <NA> {} <NA> <NA>",
            s.recording_id, s.onset, s.duration, s.speaker
        )?;
    }
    Ok(())
}

/// Parse an RTTM file. Tolerates extra whitespace; rejects lines that are
/// not 10-field SPEAKER records.
pub fn read_rttm(path: impl AsRef<Path>) -> Result<SegmentList> {
    let path = path.as_ref();
    let show = path.display().to_string();
    let file = std::fs::File::open(path)?;
    let mut list = SegmentList::default();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 10 {
            return Err(Error::parse(
                &show,
                format!("line {}: expected 10 fields, got {}", lineno + 1, fields.len()),
            ));
        }
        if fields[0] != "SPEAKER" {
            return Err(Error::parse(
                &show,
                format!("line {}: unsupported record type {}", lineno + 1, fields[0]),
            ));
        }
        let onset: f64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(&show, format!("line {}: bad onset", lineno + 1)))?;
        let duration: f64 = fields[4]
            .parse()
            .map_err(|_| Error::parse(&show, format!("line {}: bad duration", lineno + 1)))?;
        let seg = Segment::new(fields[1], fields[7], onset, duration)
            .map_err(|e| Error::parse(&show, format!("line {}: {e}", lineno + 1)))?;
        list.push(seg);
    }
    Ok(list)
}
