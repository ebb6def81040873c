//! Two-speaker simulated conversations with a controllable overlap ratio,
//! ground-truth segments, and dataset directory output (WAV + RTTM +
//! manifest).
//!
//! Turn taking alternates between the speakers. The gap to the next turn is
//! exponential with mean `pause_scale`; with a calibrated probability the
//! next turn instead starts before the previous one ends (a bounded uniform
//! negative gap), which is what produces overlapped speech. Everything is
//! driven by per-mixture RNG streams derived from `(seed, index)`.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::audio::{AudioSignal, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::labels::LabelMatrix;
use crate::segments::{write_rttm, Segment, SegmentList};

/// Per-speaker material: either seeded synthetic voices or real clips.
#[derive(Debug, Clone)]
pub enum UtterancePool {
    /// One synthetic-voice seed per speaker.
    Synthetic(Vec<u64>),
    /// One clip list per speaker, 8 kHz normalized samples.
    Clips(Vec<Vec<Vec<f32>>>),
}

impl UtterancePool {
    fn num_speakers(&self) -> usize {
        match self {
            UtterancePool::Synthetic(seeds) => seeds.len(),
            UtterancePool::Clips(clips) => clips.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            UtterancePool::Synthetic(seeds) if seeds.is_empty() => {
                Err(Error::InvalidArgument("empty synthetic speaker pool".into()))
            }
            UtterancePool::Clips(clips) if clips.iter().any(Vec::is_empty) || clips.is_empty() => {
                Err(Error::InvalidArgument("empty clip pool for some speaker".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixtureSpec {
    pub n_speakers: usize,
    /// Desired overlapped-speech fraction of total speech.
    pub target_overlap: f64,
    /// Mean of the exponential inter-turn pause, seconds.
    pub pause_scale: f64,
    pub utterance_pool: UtterancePool,
    pub seed: u64,
    /// Hard bound on mixture length, seconds.
    pub max_duration_s: f64,
    /// Uniform range of single-utterance durations, seconds.
    pub utterance_range_s: (f64, f64),
    /// Optional white-noise floor at this SNR (dB) relative to the mix.
    pub noise_snr_db: Option<f64>,
}

impl MixtureSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            n_speakers: 2,
            target_overlap: 0.344,
            pause_scale: 0.4,
            utterance_pool: UtterancePool::Synthetic(vec![
                seed.wrapping_mul(2).wrapping_add(101),
                seed.wrapping_mul(2).wrapping_add(202),
            ]),
            seed,
            max_duration_s: 30.0,
            utterance_range_s: (1.5, 4.0),
            noise_snr_db: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_speakers != 2 {
            return Err(Error::InvalidArgument(format!(
                "only 2-speaker simulation is supported, got {}",
                self.n_speakers
            )));
        }
        if !(0.0..1.0).contains(&self.target_overlap) {
            return Err(Error::InvalidArgument(format!(
                "target_overlap must be in [0, 1), got {}",
                self.target_overlap
            )));
        }
        if self.utterance_pool.num_speakers() < self.n_speakers {
            return Err(Error::InvalidArgument("utterance pool smaller than speaker count".into()));
        }
        self.utterance_pool.validate()?;
        let (lo, hi) = self.utterance_range_s;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::InvalidArgument("bad utterance duration range".into()));
        }
        if self.max_duration_s < hi + 0.5 {
            return Err(Error::InvalidArgument("max_duration_s too small for one utterance".into()));
        }
        Ok(())
    }
}

/// Pseudo-speech generator: noise-like narrowband partials shaped by a
/// speaker-specific multi-band spectral envelope, with syllabic amplitude
/// modulation. Distinct seeds get distinct envelopes.
#[derive(Debug, Clone)]
pub struct SynthSpeaker {
    seed: u64,
    band_centers_hz: Vec<f64>,
    band_amps: Vec<f64>,
    syllable_hz: f64,
}

const SYNTH_BANDS: usize = 8;

impl SynthSpeaker {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0, 0));
        let band_centers_hz: Vec<f64> = (0..SYNTH_BANDS)
            .map(|b| 180.0 * (3400.0f64 / 180.0).powf(b as f64 / (SYNTH_BANDS - 1) as f64))
            .collect();
        let band_amps: Vec<f64> =
            (0..SYNTH_BANDS).map(|_| rng.gen_range(-1.2f64..1.2).exp()).collect();
        let syllable_hz = rng.gen_range(2.5..5.0);
        Self { seed, band_centers_hz, band_amps, syllable_hz }
    }

    /// Deterministic utterance for `(speaker seed, utterance index)`.
    pub fn utterance(&self, utterance_index: u64, n_samples: usize) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, utterance_index, 1));
        let sr = SAMPLE_RATE as f64;

        // A few detuned partials per band stand in for narrowband noise.
        const PARTIALS: usize = 3;
        let mut freqs = Vec::with_capacity(SYNTH_BANDS * PARTIALS);
        let mut phases = Vec::with_capacity(SYNTH_BANDS * PARTIALS);
        let mut amps = Vec::with_capacity(SYNTH_BANDS * PARTIALS);
        for (b, &fc) in self.band_centers_hz.iter().enumerate() {
            for _ in 0..PARTIALS {
                freqs.push(fc * rng.gen_range(0.92..1.08));
                phases.push(rng.gen_range(0.0..std::f64::consts::TAU));
                amps.push(self.band_amps[b] * rng.gen_range(0.6..1.4));
            }
        }
        let syl_phase = rng.gen_range(0.0..std::f64::consts::TAU);

        let mut out = vec![0.0f32; n_samples];
        let mut sum_sq = 0.0f64;
        for (i, o) in out.iter_mut().enumerate() {
            let t = i as f64 / sr;
            let mut v = 0.0;
            for p in 0..freqs.len() {
                v += amps[p] * (std::f64::consts::TAU * freqs[p] * t + phases[p]).sin();
            }
            let am = 0.55 + 0.45 * (std::f64::consts::TAU * self.syllable_hz * t + syl_phase).sin();
            let s = v * am;
            sum_sq += s * s;
            *o = s as f32;
        }
        let rms = (sum_sq / n_samples.max(1) as f64).sqrt();
        let gain = if rms > 0.0 { (0.1 / rms) as f32 } else { 0.0 };
        for o in out.iter_mut() {
            *o = (*o * gain).clamp(-1.0, 1.0);
        }
        out
    }
}

/// Overlapped time over total speech time of a segment list, aggregated
/// over its recordings.
pub fn compute_overlap_ratio(list: &SegmentList) -> Result<f64> {
    let mut any = 0.0;
    let mut multi = 0.0;
    for rec in list.recordings() {
        let mut events: Vec<(f64, i32)> = Vec::new();
        for seg in list.iter().filter(|s| s.recording_id == rec) {
            events.push((seg.onset, 1));
            events.push((seg.end(), -1));
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        let mut active = 0i32;
        let mut prev = 0.0;
        for (t, delta) in events {
            let dur = t - prev;
            if dur > 0.0 {
                if active >= 1 {
                    any += dur;
                }
                if active >= 2 {
                    multi += dur;
                }
            }
            active += delta;
            prev = t;
        }
    }
    if any <= 0.0 {
        return Err(Error::InvalidArgument("no speech in segment list".into()));
    }
    Ok(multi / any)
}

/// Frame-level counterpart of [`compute_overlap_ratio`].
pub fn compute_overlap_ratio_labels(labels: &LabelMatrix) -> Result<f64> {
    let mut any = 0usize;
    let mut multi = 0usize;
    for t in 0..labels.num_frames() {
        let n = labels.active_count(t);
        if n >= 1 {
            any += 1;
        }
        if n >= 2 {
            multi += 1;
        }
    }
    if any == 0 {
        return Err(Error::InvalidArgument("no active frames".into()));
    }
    Ok(multi as f64 / any as f64)
}

fn mix_seed(seed: u64, index: u64, stream: u64) -> u64 {
    // SplitMix64 over the packed inputs.
    let mut z = seed ^ index.wrapping_mul(0x9E3779B97F4A7C15) ^ stream.wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn snap_10ms(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone)]
struct Turn {
    speaker: usize,
    start_s: f64,
    dur_s: f64,
    utt_index: u64,
}

/// Turn timeline only; the cheap core shared by calibration and synthesis.
fn generate_timeline(spec: &MixtureSpec, rng: &mut ChaCha8Rng, p_overlap: f64) -> Vec<Turn> {
    let (utt_lo, utt_hi) = spec.utterance_range_s;
    let pause = Exp::new(1.0 / spec.pause_scale.max(1e-3)).expect("positive rate");
    let mut turns: Vec<Turn> = Vec::new();
    let mut speaker_end = vec![0.0f64; spec.n_speakers];
    let mut speaker = rng.gen_range(0..spec.n_speakers);
    let mut utt_counter = 0u64;
    loop {
        let dur = snap_10ms(rng.gen_range(utt_lo..=utt_hi)).max(0.01);
        let start = match turns.last() {
            None => snap_10ms(pause.sample(rng).min(2.0)),
            Some(prev) => {
                let prev_end = prev.start_s + prev.dur_s;
                let self_cap = prev_end - speaker_end[speaker];
                let cap = (0.8 * prev.dur_s).min(0.8 * dur).min(self_cap);
                if cap > 0.02 && rng.gen_bool(p_overlap) {
                    let o = snap_10ms(rng.gen_range(0.01..cap));
                    snap_10ms((prev_end - o).max(speaker_end[speaker]))
                } else {
                    snap_10ms(prev_end + pause.sample(rng).min(4.0)).max(prev_end)
                }
            }
        };
        if start + dur > spec.max_duration_s {
            break;
        }
        speaker_end[speaker] = start + dur;
        turns.push(Turn { speaker, start_s: start, dur_s: dur, utt_index: utt_counter });
        utt_counter += 1;
        speaker = (speaker + 1) % spec.n_speakers;
    }
    turns
}

fn timeline_overlap_ratio(turns: &[Turn]) -> Option<f64> {
    let list = SegmentList::new(
        turns
            .iter()
            .map(|t| Segment::new("probe", format!("s{}", t.speaker), t.start_s, t.dur_s).unwrap())
            .collect(),
    );
    compute_overlap_ratio(&list).ok()
}

/// Deterministic overlap-probability calibration for a spec: closed-form
/// seed value, then a few probe-and-correct rounds on timelines only.
pub fn calibrate_overlap_prob(spec: &MixtureSpec) -> Result<f64> {
    spec.validate()?;
    if spec.target_overlap <= 0.0 {
        return Ok(0.0);
    }
    let (utt_lo, utt_hi) = spec.utterance_range_s;
    let mean_utt = 0.5 * (utt_lo + utt_hi);
    // E[min(d1, d2)] for iid uniform durations.
    let mean_min = utt_lo + (utt_hi - utt_lo) / 3.0;
    let mean_ov = 0.5 * (0.01 + 0.8 * mean_min);
    let rho = spec.target_overlap;
    let mut p = (rho * mean_utt / (mean_ov * (1.0 + rho))).clamp(0.01, 1.0);

    const PROBES: u64 = 80;
    for round in 0..6 {
        let mut ratios = Vec::new();
        for i in 0..PROBES {
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, i, 0xCA11B + round as u64));
            if let Some(r) = timeline_overlap_ratio(&generate_timeline(spec, &mut rng, p)) {
                ratios.push(r);
            }
        }
        if ratios.is_empty() {
            break;
        }
        let measured = ratios.iter().sum::<f64>() / ratios.len() as f64;
        if (measured - rho).abs() < 0.005 || measured <= 0.0 {
            break;
        }
        // Damped multiplicative correction; rho(p) is monotone but the
        // probe estimate is noisy.
        p = (p * (rho / measured).powf(0.8)).clamp(0.01, 1.0);
    }
    Ok(p)
}

/// One simulated conversation plus its ground truth. Deterministic in
/// `(spec.seed, index)`.
pub fn simulate_conversation(spec: &MixtureSpec, index: u64) -> Result<(AudioSignal, SegmentList)> {
    let p = calibrate_overlap_prob(spec)?;
    simulate_conversation_with_prob(spec, index, p)
}

pub fn simulate_conversation_with_prob(
    spec: &MixtureSpec,
    index: u64,
    p_overlap: f64,
) -> Result<(AudioSignal, SegmentList)> {
    let (mix, _tracks, segments) = simulate_tracks(spec, index, p_overlap)?;
    Ok((mix, segments))
}

/// Like [`simulate_conversation_with_prob`] but also returns the isolated
/// per-speaker tracks, which are zero outside that speaker's segments.
pub fn simulate_tracks(
    spec: &MixtureSpec,
    index: u64,
    p_overlap: f64,
) -> Result<(AudioSignal, Vec<Vec<f32>>, SegmentList)> {
    spec.validate()?;
    let recording_id = recording_name(index);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, index, 2));
    let turns = generate_timeline(spec, &mut rng, p_overlap);
    if turns.is_empty() {
        return Err(Error::InvalidArgument(
            "max_duration_s leaves no room for a single utterance".into(),
        ));
    }

    let end = turns.iter().map(|t| t.start_s + t.dur_s).fold(0.0, f64::max);
    let n_samples = ((end + 0.25) * SAMPLE_RATE as f64).round() as usize;
    let mut tracks = vec![vec![0.0f32; n_samples]; spec.n_speakers];
    let mut segments = SegmentList::default();

    let synth: Vec<SynthSpeaker> = match &spec.utterance_pool {
        UtterancePool::Synthetic(seeds) => seeds.iter().map(|&s| SynthSpeaker::new(s)).collect(),
        UtterancePool::Clips(_) => Vec::new(),
    };

    for turn in &turns {
        let start_sample = (turn.start_s * SAMPLE_RATE as f64).round() as usize;
        let want = (turn.dur_s * SAMPLE_RATE as f64).round() as usize;
        let (samples, dur_s) = match &spec.utterance_pool {
            UtterancePool::Synthetic(_) => {
                (synth[turn.speaker].utterance(mix_seed(spec.seed, index, 3) ^ turn.utt_index, want),
                 turn.dur_s)
            }
            UtterancePool::Clips(clips) => {
                let pool = &clips[turn.speaker];
                let clip = &pool[rng.gen_range(0..pool.len())];
                if clip.len() >= want {
                    let offset = rng.gen_range(0..=clip.len() - want);
                    (clip[offset..offset + want].to_vec(), turn.dur_s)
                } else {
                    let dur = snap_10ms(clip.len() as f64 / SAMPLE_RATE as f64).max(0.01);
                    let keep = ((dur * SAMPLE_RATE as f64).round() as usize).min(clip.len());
                    (clip[..keep].to_vec(), dur)
                }
            }
        };
        let track = &mut tracks[turn.speaker];
        for (i, &s) in samples.iter().enumerate() {
            if start_sample + i < track.len() {
                track[start_sample + i] += s;
            }
        }
        segments.push(Segment::new(
            recording_id.clone(),
            format!("spk{}", turn.speaker),
            turn.start_s,
            dur_s,
        )?);
    }

    let mut mix = vec![0.0f32; n_samples];
    for track in &tracks {
        for (m, &s) in mix.iter_mut().zip(track) {
            *m += s;
        }
    }
    if let Some(snr_db) = spec.noise_snr_db {
        let speech_power =
            mix.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / n_samples.max(1) as f64;
        let noise_std = (speech_power / 10f64.powf(snr_db / 10.0)).sqrt() as f32;
        let mut noise_rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, index, 4));
        for m in mix.iter_mut() {
            let u1: f32 = noise_rng.gen_range(f32::EPSILON..1.0);
            let u2: f32 = noise_rng.gen();
            let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f32::consts::PI * u2).cos();
            *m += noise_std * g;
        }
    }
    for m in mix.iter_mut() {
        *m = m.clamp(-1.0, 1.0);
    }

    Ok((AudioSignal::new(mix, SAMPLE_RATE)?, tracks, segments))
}

pub fn recording_name(index: u64) -> String {
    format!("sim{index:05}")
}

// ---------------------------------------------------------------------------
// Dataset directory: <id>.wav + <id>.rttm per mixture and a manifest.tsv
// with one "id <TAB> wav <TAB> duration_s <TAB> overlap" line per mixture.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub id: String,
    pub wav: PathBuf,
    pub rttm: PathBuf,
    pub duration_s: f64,
    pub overlap: f64,
}

pub fn simulate_dataset(
    spec: &MixtureSpec,
    count: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<DatasetEntry>> {
    if count == 0 {
        return Err(Error::InvalidArgument("mixture count must be >= 1".into()));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let p = calibrate_overlap_prob(spec)?;

    let mut entries = Vec::new();
    for index in 0..count {
        let (audio, segments) = simulate_conversation_with_prob(spec, index, p)?;
        let id = recording_name(index);
        let wav = out_dir.join(format!("{id}.wav"));
        let rttm = out_dir.join(format!("{id}.rttm"));
        audio.write_wav(&wav)?;
        write_rttm(&segments, &rttm)?;
        let overlap = compute_overlap_ratio(&segments).unwrap_or(0.0);
        entries.push(DatasetEntry { id, wav, rttm, duration_s: audio.duration_s(), overlap });
    }

    let mut manifest = std::io::BufWriter::new(
        std::fs::File::create(out_dir.join("manifest.tsv"))?,
    );
    for e in &entries {
        writeln!(
            manifest,
            "{}\t{}\t{:.2}\t{:.4}",
            e.id,
            e.wav.file_name().unwrap().to_string_lossy(),
            e.duration_s,
            e.overlap
        )?;
    }
    manifest.flush()?;
    Ok(entries)
}

/// Read a dataset directory written by [`simulate_dataset`] (or laid out the
/// same way by hand).
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<DatasetEntry>> {
    let dir = dir.as_ref();
    let manifest = dir.join("manifest.tsv");
    let show = manifest.display().to_string();
    let file = std::fs::File::open(&manifest)
        .map_err(|_| Error::parse(&show, "missing manifest.tsv"))?;
    let mut entries = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                &show,
                format!("line {}: expected 4 tab-separated fields", lineno + 1),
            ));
        }
        let id = fields[0].to_string();
        entries.push(DatasetEntry {
            wav: dir.join(fields[1]),
            rttm: dir.join(format!("{id}.rttm")),
            id,
            duration_s: fields[2]
                .parse()
                .map_err(|_| Error::parse(&show, format!("line {}: bad duration", lineno + 1)))?,
            overlap: fields[3]
                .parse()
                .map_err(|_| Error::parse(&show, format!("line {}: bad overlap", lineno + 1)))?,
        });
    }
    if entries.is_empty() {
        return Err(Error::parse(&show, "empty manifest"));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_target_never_overlaps() {
        let mut spec = MixtureSpec::new(9);
        spec.target_overlap = 0.0;
        for index in 0..4 {
            let (_, segments) = simulate_conversation(&spec, index).unwrap();
            let ratio = compute_overlap_ratio(&segments).unwrap();
            assert_eq!(ratio, 0.0, "mixture {index} has overlap");
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let spec = MixtureSpec::new(7);
        let (a_audio, a_segs) = simulate_conversation(&spec, 3).unwrap();
        let (b_audio, b_segs) = simulate_conversation(&spec, 3).unwrap();
        assert_eq!(a_audio, b_audio);
        assert_eq!(a_segs, b_segs);
    }

    #[test]
    fn overlap_ratio_oracle_cases() {
        let disjoint = SegmentList::new(vec![
            Segment::new("r", "a", 0.0, 2.0).unwrap(),
            Segment::new("r", "b", 2.0, 2.0).unwrap(),
        ]);
        assert_eq!(compute_overlap_ratio(&disjoint).unwrap(), 0.0);

        let simultaneous = SegmentList::new(vec![
            Segment::new("r", "a", 0.0, 2.0).unwrap(),
            Segment::new("r", "b", 0.0, 2.0).unwrap(),
        ]);
        assert!((compute_overlap_ratio(&simultaneous).unwrap() - 1.0).abs() < 1e-12);

        // 10 s of speech, 2 s of double talk.
        let mixed = SegmentList::new(vec![
            Segment::new("r", "a", 0.0, 6.0).unwrap(),
            Segment::new("r", "b", 4.0, 6.0).unwrap(),
        ]);
        assert!((compute_overlap_ratio(&mixed).unwrap() - 0.2).abs() < 1e-12);

        assert!(compute_overlap_ratio(&SegmentList::default()).is_err());
    }

    #[test]
    fn synth_speaker_is_deterministic_and_bounded() {
        let spk = SynthSpeaker::new(42);
        let a = spk.utterance(5, 8000);
        let b = spk.utterance(5, 8000);
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| (-1.0..=1.0).contains(&v)));
        let c = spk.utterance(6, 8000);
        assert_ne!(a, c);
    }

    #[test]
    fn tracks_are_zero_outside_segments() {
        let spec = MixtureSpec::new(11);
        let p = calibrate_overlap_prob(&spec).unwrap();
        let (_, tracks, segments) = simulate_tracks(&spec, 0, p).unwrap();
        for (spk_idx, track) in tracks.iter().enumerate() {
            let speaker = format!("spk{spk_idx}");
            let intervals = segments.merged_intervals(&recording_name(0), &speaker);
            for (i, &v) in track.iter().enumerate() {
                let t = i as f64 / SAMPLE_RATE as f64;
                let inside = intervals.iter().any(|&(s, e)| t >= s - 1e-9 && t < e + 1e-9);
                if !inside {
                    assert_eq!(v, 0.0, "speaker {spk_idx} leaks at {t:.3}s");
                }
            }
        }
    }

    #[test]
    fn mixtures_respect_length_bound() {
        let mut spec = MixtureSpec::new(3);
        spec.max_duration_s = 12.0;
        let (audio, segments) = simulate_conversation(&spec, 1).unwrap();
        assert!(audio.duration_s() <= 12.0 + 0.26);
        assert!(segments.max_end(&recording_name(1)) <= 12.0 + 1e-9);
    }

    #[test]
    fn calibration_hits_target_roughly() {
        let spec = MixtureSpec::new(21);
        let p = calibrate_overlap_prob(&spec).unwrap();
        let mut ratios = Vec::new();
        for index in 0..12 {
            let (_, segs) = simulate_conversation_with_prob(&spec, index, p).unwrap();
            ratios.push(compute_overlap_ratio(&segs).unwrap());
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((mean - 0.344).abs() < 0.08, "mean overlap {mean}");
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = MixtureSpec::new(5);
        let entries = simulate_dataset(&spec, 3, dir.path()).unwrap();
        assert_eq!(entries.len(), 3);
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in entries.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert!(a.wav.exists() && a.rttm.exists());
        }
        assert!(simulate_dataset(&spec, 0, dir.path()).is_err());
    }

    #[test]
    fn empty_pool_is_rejected() {
        let mut spec = MixtureSpec::new(1);
        spec.utterance_pool = UtterancePool::Clips(vec![vec![], vec![vec![0.0; 8000]]]);
        assert!(simulate_conversation(&spec, 0).is_err());
    }
}
