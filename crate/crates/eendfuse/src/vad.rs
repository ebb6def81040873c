//! Oracle and energy-based voice activity detection, plus VAD gating of
//! hypothesis labels at evaluation time.

use crate::audio::AudioSignal;
use crate::embeddings::{mask_from_segments, VadMask};
use crate::error::{Error, Result};
use crate::features::{FRAME_LEN, FRAME_SHIFT, SUBSAMPLE_FACTOR};
use crate::labels::LabelMatrix;
use crate::segments::SegmentList;

/// Speech/non-speech mask on the 100 ms grid from reference segments: a
/// frame is speech iff any reference speaker is active under the
/// discretization rule.
pub fn oracle_mask(
    reference: &SegmentList,
    recording_id: &str,
    num_frames: usize,
    frame_shift: f64,
) -> Result<VadMask> {
    for seg in reference.iter() {
        if seg.duration <= 0.0 {
            return Err(Error::InvalidSegment(format!(
                "segment with non-positive duration {} in {}",
                seg.duration, seg.recording_id
            )));
        }
    }
    Ok(mask_from_segments(reference, recording_id, num_frames, frame_shift))
}

/// Knobs of the energy detector. Log energies are referenced to int16
/// sample values (normalized samples are scaled by 32768 before squaring)
/// so the default threshold matches common toolkit settings.
#[derive(Debug, Clone)]
pub struct EnergyVadConfig {
    /// Fixed offset added to the mean-scaled utterance energy.
    pub base_threshold: f64,
    /// Weight of the utterance mean log energy in the threshold.
    pub mean_scale: f64,
    /// Neighborhood half-width (10 ms frames) for the vote.
    pub context: usize,
    /// Fraction of neighborhood frames that must pass the threshold.
    pub vote: f64,
}

impl Default for EnergyVadConfig {
    fn default() -> Self {
        Self { base_threshold: 5.0, mean_scale: 0.5, context: 2, vote: 0.6 }
    }
}

/// Energy-based VAD: per-10 ms log energy against a mean-relative threshold,
/// a +/-context majority vote, then downsampling to the 100 ms grid (a
/// 100 ms frame is speech when at least half of its 10 ms frames are).
pub fn energy_vad(audio: &AudioSignal, cfg: &EnergyVadConfig) -> Result<VadMask> {
    if audio.is_empty() {
        return Err(Error::InvalidAudio("empty audio".into()));
    }
    let samples = audio.samples();
    let n_frames = crate::features::num_frames(samples.len()).unwrap_or(0);
    if n_frames == 0 {
        // Shorter than one analysis window: a single decision for the whole
        // signal would be unanchored; call it non-speech.
        return Ok(VadMask::new(vec![false; 1]));
    }

    let log_energy: Vec<f64> = (0..n_frames)
        .map(|t| {
            let start = t * FRAME_SHIFT;
            let e: f64 = samples[start..start + FRAME_LEN]
                .iter()
                .map(|&s| {
                    let v = s as f64 * 32768.0;
                    v * v
                })
                .sum();
            e.max(1e-10).ln()
        })
        .collect();
    let mean = log_energy.iter().sum::<f64>() / n_frames as f64;
    let threshold = cfg.base_threshold + cfg.mean_scale * mean;
    let passes: Vec<bool> = log_energy.iter().map(|&e| e > threshold).collect();

    let voted: Vec<bool> = (0..n_frames)
        .map(|t| {
            let lo = t.saturating_sub(cfg.context);
            let hi = (t + cfg.context + 1).min(n_frames);
            let yes = passes[lo..hi].iter().filter(|&&p| p).count();
            yes as f64 >= cfg.vote * (hi - lo) as f64
        })
        .collect();

    // 100 ms grid: same frame count as the subsampled acoustic features.
    let t_out = n_frames.div_ceil(SUBSAMPLE_FACTOR);
    let mask = (0..t_out)
        .map(|t| {
            let lo = t * SUBSAMPLE_FACTOR;
            let hi = (lo + SUBSAMPLE_FACTOR).min(n_frames);
            let yes = voted[lo..hi].iter().filter(|&&p| p).count();
            2 * yes >= hi - lo
        })
        .collect();
    Ok(VadMask::new(mask))
}

/// Zero all speaker activity where the mask says non-speech. Idempotent and
/// monotone (never adds speech).
pub fn gate_hypothesis(hyp: &LabelMatrix, mask: &VadMask) -> Result<LabelMatrix> {
    if hyp.num_frames() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "hypothesis frames {} vs mask length {}",
            hyp.num_frames(),
            mask.len()
        )));
    }
    let mut out = hyp.clone();
    for t in 0..out.num_frames() {
        if !mask.is_speech(t) {
            for s in 0..out.num_speakers() {
                out.set_active(t, s, false);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE;
    use crate::segments::Segment;

    #[test]
    fn oracle_mask_examples() {
        let list = SegmentList::new(vec![Segment::new("r", "a", 0.0, 1.0).unwrap()]);
        let mask = oracle_mask(&list, "r", 10, 0.1).unwrap();
        assert!(mask.as_slice().iter().all(|&m| m));

        let empty = SegmentList::default();
        let mask = oracle_mask(&empty, "r", 10, 0.1).unwrap();
        assert!(mask.as_slice().iter().all(|&m| !m));

        let tiny = SegmentList::new(vec![Segment::new("r", "a", 0.24, 0.02).unwrap()]);
        let mask = oracle_mask(&tiny, "r", 10, 0.1).unwrap();
        let expected: Vec<bool> = (0..10).map(|t| t == 2).collect();
        assert_eq!(mask.as_slice(), &expected[..]);
    }

    #[test]
    fn silence_is_all_zeros() {
        let audio = AudioSignal::new(vec![0.0; 8000 * 2], SAMPLE_RATE).unwrap();
        let mask = energy_vad(&audio, &EnergyVadConfig::default()).unwrap();
        assert!(mask.as_slice().iter().all(|&m| !m));
    }

    #[test]
    fn loud_tone_is_all_ones() {
        let n = 8000 * 2;
        let samples: Vec<f32> = (0..n)
            .map(|i| 0.5 * (2.0 * std::f32::consts::PI * 440.0 * i as f32 / 8000.0).sin())
            .collect();
        let audio = AudioSignal::new(samples, SAMPLE_RATE).unwrap();
        let mask = energy_vad(&audio, &EnergyVadConfig::default()).unwrap();
        assert!(mask.as_slice().iter().all(|&m| m));
    }

    #[test]
    fn tone_then_silence_boundary_is_near_midpoint() {
        let n = 8000 * 10;
        let samples: Vec<f32> = (0..n)
            .map(|i| {
                if i < n / 2 {
                    0.5 * (2.0 * std::f32::consts::PI * 300.0 * i as f32 / 8000.0).sin()
                } else {
                    0.0
                }
            })
            .collect();
        let audio = AudioSignal::new(samples, SAMPLE_RATE).unwrap();
        let mask = energy_vad(&audio, &EnergyVadConfig::default()).unwrap();
        let first_silence = mask.as_slice().iter().position(|&m| !m).unwrap();
        let midpoint = mask.len() / 2;
        assert!(
            (first_silence as isize - midpoint as isize).unsigned_abs() <= 2,
            "boundary at {first_silence}, midpoint {midpoint}"
        );
        assert!(mask.as_slice()[..first_silence].iter().all(|&m| m));
        assert!(mask.as_slice()[first_silence + 1..].iter().all(|&m| !m));
    }

    #[test]
    fn amplitude_scaling_invariance_with_zero_base() {
        let cfg = EnergyVadConfig { base_threshold: 0.0, mean_scale: 1.0, ..Default::default() };
        let mut rng_state = 123456789u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng_state >> 33) as f32 / (1u64 << 31) as f32) - 0.5
        };
        let n = 8000 * 3;
        let samples: Vec<f32> =
            (0..n).map(|i| if i < n / 3 { next() * 0.6 } else { next() * 0.01 }).collect();
        let loud = AudioSignal::new(samples.clone(), SAMPLE_RATE).unwrap();
        let quiet =
            AudioSignal::new(samples.iter().map(|s| s * 0.05).collect(), SAMPLE_RATE).unwrap();
        let a = energy_vad(&loud, &cfg).unwrap();
        let b = energy_vad(&quiet, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gating_definition_and_idempotence() {
        let mut hyp = LabelMatrix::zeros(3, 2);
        hyp.set_active(0, 0, true);
        hyp.set_active(0, 1, true);
        hyp.set_active(1, 0, true);
        hyp.set_active(2, 1, true);

        let mask = VadMask::new(vec![false, true, true]);
        let gated = gate_hypothesis(&hyp, &mask).unwrap();
        assert!(!gated.is_active(0, 0) && !gated.is_active(0, 1));
        assert!(gated.is_active(1, 0));
        assert!(gated.is_active(2, 1));

        let twice = gate_hypothesis(&gated, &mask).unwrap();
        assert_eq!(twice, gated);

        let all_ones = gate_hypothesis(&hyp, &VadMask::new(vec![true; 3])).unwrap();
        assert_eq!(all_ones, hyp);
        let all_zero = gate_hypothesis(&hyp, &VadMask::new(vec![false; 3])).unwrap();
        assert!((0..3).all(|t| all_zero.active_count(t) == 0));

        assert!(gate_hypothesis(&hyp, &VadMask::new(vec![true; 2])).is_err());
    }
}
