//! Acoustic front end: 23-dim log-Mel filterbanks (25 ms window, 10 ms
//! shift), ±7-frame context splicing and 10x subsampling, so the encoder
//! sees one 345-dim vector per 100 ms.

use std::io::{Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::AudioSignal;
use crate::error::{Error, Result};
use crate::mat::Mat;

/// 25 ms at 8 kHz.
pub const FRAME_LEN: usize = 200;
/// 10 ms at 8 kHz.
pub const FRAME_SHIFT: usize = 80;
/// Mel bins of the base filterbank features.
pub const N_MELS: usize = 23;
/// Context frames on each side when splicing.
pub const SPLICE_CONTEXT: usize = 7;
/// Temporal subsampling factor after splicing.
pub const SUBSAMPLE_FACTOR: usize = 10;
/// Spliced, subsampled feature dimension: 23 x 15.
pub const SPLICED_DIM: usize = N_MELS * (2 * SPLICE_CONTEXT + 1);

const N_FFT: usize = 256;
const LOG_FLOOR: f32 = 1e-10;

/// A time-major feature matrix with its frame shift in seconds. Frame `t`
/// has timestamp `t * frame_shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    mat: Mat,
    frame_shift: f64,
}

impl FrameSequence {
    pub fn new(mat: Mat, frame_shift: f64) -> Result<Self> {
        mat.ensure_finite("feature matrix")?;
        if frame_shift <= 0.0 {
            return Err(Error::InvalidArgument("frame_shift must be positive".into()));
        }
        Ok(Self { mat, frame_shift })
    }

    pub fn mat(&self) -> &Mat {
        &self.mat
    }

    pub fn num_frames(&self) -> usize {
        self.mat.rows()
    }

    pub fn dim(&self) -> usize {
        self.mat.cols()
    }

    pub fn frame_shift(&self) -> f64 {
        self.frame_shift
    }

    pub fn truncate(&mut self, frames: usize) {
        self.mat.truncate_rows(frames);
    }

    pub fn slice_frames(&self, start: usize, end: usize) -> FrameSequence {
        FrameSequence { mat: self.mat.slice_rows(start, end), frame_shift: self.frame_shift }
    }
}

/// Number of 10 ms analysis frames for a signal of `n_samples`.
pub fn num_frames(n_samples: usize) -> Option<usize> {
    if n_samples < FRAME_LEN {
        None
    } else {
        Some((n_samples - FRAME_LEN) / FRAME_SHIFT + 1)
    }
}

/// Frame count after the full pipeline (logmel + splice + subsample).
pub fn num_subsampled_frames(n_samples: usize) -> Option<usize> {
    num_frames(n_samples).map(|t| t.div_ceil(SUBSAMPLE_FACTOR))
}

pub struct LogmelConfig {
    pub fmin: f32,
    pub fmax: f32,
    /// Subtract the per-utterance mean from each band when set.
    pub mean_normalize: bool,
}

impl Default for LogmelConfig {
    fn default() -> Self {
        // Narrowband telephony band.
        Self { fmin: 0.0, fmax: 4000.0, mean_normalize: false }
    }
}

/// 23-dim log-Mel filterbank features, 25 ms Hamming window, 10 ms shift.
pub fn compute_logmel(audio: &AudioSignal) -> Result<FrameSequence> {
    compute_logmel_with(audio, &LogmelConfig::default())
}

pub fn compute_logmel_with(audio: &AudioSignal, cfg: &LogmelConfig) -> Result<FrameSequence> {
    let samples = audio.samples();
    let n_frames = num_frames(samples.len()).ok_or_else(|| {
        Error::InvalidAudio(format!(
            "audio too short: {} samples, need at least {FRAME_LEN}",
            samples.len()
        ))
    })?;

    let window = hamming_window(FRAME_LEN);
    let filters = mel_filterbank(N_MELS, N_FFT, audio.sample_rate() as f32, cfg.fmin, cfg.fmax)?;

    let mut planner = FftPlanner::<f32>::new();
    let fft = planner.plan_fft_forward(N_FFT);
    let mut buf = vec![Complex::new(0.0f32, 0.0); N_FFT];

    let n_bins = N_FFT / 2 + 1;
    let mut power = vec![0.0f32; n_bins];
    let mut mat = Mat::zeros(n_frames, N_MELS);
    for t in 0..n_frames {
        let start = t * FRAME_SHIFT;
        for i in 0..N_FFT {
            let s = if i < FRAME_LEN { samples[start + i] * window[i] } else { 0.0 };
            buf[i] = Complex::new(s, 0.0);
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p = buf[k].norm_sqr();
        }
        let row = mat.row_mut(t);
        for (m, filter) in filters.iter().enumerate() {
            let mut e = 0.0f32;
            for &(k, w) in filter {
                e += w * power[k];
            }
            row[m] = e.max(LOG_FLOOR).ln();
        }
    }

    if cfg.mean_normalize {
        for c in 0..N_MELS {
            let mean = (0..n_frames).map(|t| mat.get(t, c)).sum::<f32>() / n_frames as f32;
            for t in 0..n_frames {
                let v = mat.get(t, c);
                mat.set(t, c, v - mean);
            }
        }
    }

    FrameSequence::new(mat, FRAME_SHIFT as f64 / audio.sample_rate() as f64)
}

/// Concatenate `left` previous and `right` subsequent frames onto each frame,
/// repeating the first/last frame at the edges. T is unchanged.
pub fn splice_context(frames: &FrameSequence, left: usize, right: usize) -> Result<FrameSequence> {
    let t_len = frames.num_frames();
    let f = frames.dim();
    if t_len == 0 {
        return Err(Error::InvalidArgument("cannot splice an empty sequence".into()));
    }
    let width = left + right + 1;
    let mut mat = Mat::zeros(t_len, f * width);
    for t in 0..t_len {
        let out = mat.row_mut(t);
        for (slot, offset) in (-(left as isize)..=(right as isize)).enumerate() {
            let src = (t as isize + offset).clamp(0, t_len as isize - 1) as usize;
            out[slot * f..(slot + 1) * f].copy_from_slice(frames.mat().row(src));
        }
    }
    FrameSequence::new(mat, frames.frame_shift())
}

/// Keep rows 0, factor, 2*factor, ...; the frame shift grows by `factor`.
pub fn subsample(frames: &FrameSequence, factor: usize) -> Result<FrameSequence> {
    if factor == 0 {
        return Err(Error::InvalidArgument("subsample factor must be >= 1".into()));
    }
    let t_in = frames.num_frames();
    let t_out = t_in.div_ceil(factor);
    let mut mat = Mat::zeros(t_out, frames.dim());
    for t in 0..t_out {
        mat.row_mut(t).copy_from_slice(frames.mat().row(t * factor));
    }
    FrameSequence::new(mat, frames.frame_shift() * factor as f64)
}

/// Full acoustic front end: logmel, ±7 splice, 10x subsample. One 345-dim
/// frame per 100 ms.
pub fn acoustic_features(audio: &AudioSignal) -> Result<FrameSequence> {
    acoustic_features_with(audio, &LogmelConfig::default())
}

pub fn acoustic_features_with(audio: &AudioSignal, cfg: &LogmelConfig) -> Result<FrameSequence> {
    let logmel = compute_logmel_with(audio, cfg)?;
    let spliced = splice_context(&logmel, SPLICE_CONTEXT, SPLICE_CONTEXT)?;
    subsample(&spliced, SUBSAMPLE_FACTOR)
}

fn hamming_window(len: usize) -> Vec<f32> {
    (0..len)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f32::consts::PI * i as f32 / (len - 1) as f32).cos())
        .collect()
}

/// Sparse triangular filters on the HTK mel scale; one `(bin, weight)` list
/// per mel channel over the one-sided spectrum.
fn mel_filterbank(
    n_mels: usize,
    n_fft: usize,
    sample_rate: f32,
    fmin: f32,
    fmax: f32,
) -> Result<Vec<Vec<(usize, f32)>>> {
    if fmax <= fmin || fmax > sample_rate / 2.0 {
        return Err(Error::InvalidArgument(format!(
            "invalid mel band {fmin}..{fmax} for sample rate {sample_rate}"
        )));
    }
    let to_mel = |f: f32| 2595.0 * (1.0 + f / 700.0).log10();
    let to_hz = |m: f32| 700.0 * (10f32.powf(m / 2595.0) - 1.0);
    let mel_lo = to_mel(fmin);
    let mel_hi = to_mel(fmax);
    let points: Vec<f32> = (0..n_mels + 2)
        .map(|i| to_hz(mel_lo + (mel_hi - mel_lo) * i as f32 / (n_mels + 1) as f32))
        .collect();

    let n_bins = n_fft / 2 + 1;
    let bin_hz = sample_rate / n_fft as f32;
    let mut filters = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
        let mut taps = Vec::new();
        for k in 0..n_bins {
            let f = k as f32 * bin_hz;
            let w = ((f - lo) / (mid - lo)).min((hi - f) / (hi - mid));
            if w > 0.0 {
                taps.push((k, w));
            }
        }
        filters.push(taps);
    }
    Ok(filters)
}

// ---------------------------------------------------------------------------
// Feature dump format (see FORMATS.md): "EFEA" magic, version, T, F,
// frame_shift, then row-major f32 payload, all little-endian.
// ---------------------------------------------------------------------------

const FEATURE_MAGIC: &[u8; 4] = b"EFEA";
const FEATURE_VERSION: u32 = 1;

pub fn save_features(frames: &FrameSequence, path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(frames.num_frames() as u32).to_le_bytes())?;
    w.write_all(&(frames.dim() as u32).to_le_bytes())?;
    w.write_all(&frames.frame_shift().to_le_bytes())?;
    for v in frames.mat().data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FrameSequence> {
    let path = path.as_ref();
    let show = path.display().to_string();
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::parse(&show, "truncated header"))?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::parse(&show, "bad magic, not a feature dump"));
    }
    let version = read_u32(&mut r, &show)?;
    if version != FEATURE_VERSION {
        return Err(Error::parse(&show, format!("unsupported version {version}")));
    }
    let t_len = read_u32(&mut r, &show)? as usize;
    let f_dim = read_u32(&mut r, &show)? as usize;
    let mut shift = [0u8; 8];
    r.read_exact(&mut shift).map_err(|_| Error::parse(&show, "truncated header"))?;
    let frame_shift = f64::from_le_bytes(shift);

    let mut payload = vec![0u8; t_len * f_dim * 4];
    r.read_exact(&mut payload).map_err(|_| Error::parse(&show, "truncated payload"))?;
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(Error::parse(&show, "trailing bytes after payload"));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    FrameSequence::new(Mat::from_vec(t_len, f_dim, data)?, frame_shift)
}

pub(crate) fn read_u32(r: &mut impl Read, path: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::parse(path, "truncated header"))?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE;

    fn tone(seconds: f64, freq: f32, amp: f32) -> AudioSignal {
        let n = (seconds * SAMPLE_RATE as f64) as usize;
        let samples = (0..n)
            .map(|i| amp * (2.0 * std::f32::consts::PI * freq * i as f32 / SAMPLE_RATE as f32).sin())
            .collect();
        AudioSignal::new(samples, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn one_second_gives_98_frames() {
        let fs = compute_logmel(&tone(1.0, 440.0, 0.5)).unwrap();
        assert_eq!(fs.num_frames(), 98);
        assert_eq!(fs.dim(), 23);
        assert!((fs.frame_shift() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn zero_audio_gives_constant_floored_frames() {
        let audio = AudioSignal::new(vec![0.0; 8000], SAMPLE_RATE).unwrap();
        let fs = compute_logmel(&audio).unwrap();
        let first = fs.mat().row(0).to_vec();
        for t in 0..fs.num_frames() {
            assert_eq!(fs.mat().row(t), &first[..]);
        }
        assert!(fs.mat().is_finite());
    }

    #[test]
    fn too_short_audio_errors() {
        let audio = AudioSignal::new(vec![0.0; 160], SAMPLE_RATE).unwrap();
        assert!(compute_logmel(&audio).is_err());
    }

    #[test]
    fn splice_dimensions() {
        let fs = FrameSequence::new(Mat::zeros(100, 23), 0.01).unwrap();
        let spliced = splice_context(&fs, 7, 7).unwrap();
        assert_eq!(spliced.num_frames(), 100);
        assert_eq!(spliced.dim(), 345);
    }

    #[test]
    fn splice_constant_is_constant() {
        let mut m = Mat::zeros(10, 3);
        for t in 0..10 {
            m.row_mut(t).copy_from_slice(&[1.0, 2.0, 3.0]);
        }
        let spliced = splice_context(&FrameSequence::new(m, 0.01).unwrap(), 7, 7).unwrap();
        let expected: Vec<f32> =
            std::iter::repeat_n([1.0, 2.0, 3.0], 15).flatten().collect();
        for t in 0..10 {
            assert_eq!(spliced.mat().row(t), &expected[..]);
        }
    }

    #[test]
    fn splice_single_frame_repeats() {
        let m = Mat::from_vec(1, 2, vec![5.0, 6.0]).unwrap();
        let spliced = splice_context(&FrameSequence::new(m, 0.01).unwrap(), 7, 7).unwrap();
        assert_eq!(spliced.num_frames(), 1);
        let row = spliced.mat().row(0);
        for slot in 0..15 {
            assert_eq!(&row[slot * 2..slot * 2 + 2], &[5.0, 6.0]);
        }
    }

    #[test]
    fn subsample_counts_and_identity() {
        let fs = FrameSequence::new(Mat::zeros(98, 4), 0.01).unwrap();
        let sub = subsample(&fs, 10).unwrap();
        assert_eq!(sub.num_frames(), 10);
        assert!((sub.frame_shift() - 0.1).abs() < 1e-12);

        let same = subsample(&fs, 1).unwrap();
        assert_eq!(same, fs);

        let tiny = FrameSequence::new(Mat::zeros(5, 4), 0.01).unwrap();
        assert_eq!(subsample(&tiny, 10).unwrap().num_frames(), 1);

        assert!(subsample(&fs, 0).is_err());
    }

    #[test]
    fn subsample_keeps_first_row() {
        let mut m = Mat::zeros(5, 1);
        for t in 0..5 {
            m.set(t, 0, t as f32);
        }
        let sub = subsample(&FrameSequence::new(m, 0.01).unwrap(), 10).unwrap();
        assert_eq!(sub.mat().row(0), &[0.0]);
    }

    #[test]
    fn pipeline_dimension_chain() {
        let fs = acoustic_features(&tone(1.0, 300.0, 0.3)).unwrap();
        assert_eq!(fs.dim(), SPLICED_DIM);
        assert_eq!(fs.num_frames(), 10);
        assert!((fs.frame_shift() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn pipeline_is_deterministic() {
        let audio = tone(1.5, 613.0, 0.4);
        let a = acoustic_features(&audio).unwrap();
        let b = acoustic_features(&audio).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn feature_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.feat");
        let fs = acoustic_features(&tone(1.0, 500.0, 0.2)).unwrap();
        save_features(&fs, &path).unwrap();
        let back = load_features(&path).unwrap();
        assert_eq!(back, fs);
    }

    #[test]
    fn truncated_feature_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.feat");
        let fs = acoustic_features(&tone(1.0, 500.0, 0.2)).unwrap();
        save_features(&fs, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        assert!(load_features(&path).is_err());
    }
}
