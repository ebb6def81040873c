//! Per-frame speaker embeddings aligned to the 100 ms acoustic grid:
//! sliding-window extraction through a pluggable provider, silence masking,
//! length alignment and the precomputed-embedding file format.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioSignal;
use crate::error::{Error, Result};
use crate::features::{self, FrameSequence};
use crate::labels::discretize;
use crate::mat::Mat;
use crate::segments::{Segment, SegmentList};

/// Default embedding dimension (ECAPA-TDNN x-vector size).
pub const EMBEDDING_DIM: usize = 512;
/// Window hop in seconds; fixed to the subsampled frame grid.
pub const EMBEDDING_HOP_S: f64 = 0.1;

const ALLOWED_WINDOWS_S: [f64; 3] = [1.0, 2.0, 3.0];

/// T x E speaker-embedding matrix with its extraction geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    mat: Mat,
    window_s: f64,
    hop_s: f64,
}

impl EmbeddingSequence {
    pub fn new(mat: Mat, window_s: f64, hop_s: f64) -> Result<Self> {
        mat.ensure_finite("embedding matrix")?;
        if hop_s <= 0.0 || window_s <= 0.0 {
            return Err(Error::InvalidArgument("window and hop must be positive".into()));
        }
        Ok(Self { mat, window_s, hop_s })
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

    pub fn window_s(&self) -> f64 {
        self.window_s
    }

    pub fn hop_s(&self) -> f64 {
        self.hop_s
    }

    pub fn truncate(&mut self, frames: usize) {
        self.mat.truncate_rows(frames);
    }

    pub fn slice_frames(&self, start: usize, end: usize) -> EmbeddingSequence {
        EmbeddingSequence {
            mat: self.mat.slice_rows(start, end),
            window_s: self.window_s,
            hop_s: self.hop_s,
        }
    }
}

/// Binary speech/non-speech mask on the 100 ms grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VadMask {
    mask: Vec<bool>,
}

impl VadMask {
    pub fn new(mask: Vec<bool>) -> Self {
        Self { mask }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn is_speech(&self, frame: usize) -> bool {
        self.mask[frame]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.mask
    }

    /// Speech frames as an RTTM-style segment list with speaker "speech".
    pub fn to_segments(&self, recording_id: &str, frame_shift: f64) -> Result<SegmentList> {
        let mut out = SegmentList::default();
        let mut t = 0;
        while t < self.mask.len() {
            if self.mask[t] {
                let start = t;
                while t < self.mask.len() && self.mask[t] {
                    t += 1;
                }
                out.push(Segment::new(
                    recording_id,
                    "speech",
                    start as f64 * frame_shift,
                    (t - start) as f64 * frame_shift,
                )?);
            } else {
                t += 1;
            }
        }
        Ok(out)
    }
}

/// Source of fixed-dimension speaker embeddings for audio windows. Must be
/// deterministic for a fixed input and shareable across workers.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, window: &[f32]) -> Vec<f32>;
}

/// Deterministic stand-in for a pretrained extractor: per-band log-energy
/// statistics of the window pushed through a fixed seeded random projection,
/// then length-normalized. A window with no usable signal maps to the fixed
/// unit vector `(1/sqrt(E), ..., 1/sqrt(E))`.
pub struct ToyEmbedder {
    projection: Vec<f32>, // E x (2 * N_MELS), row-major
    dim: usize,
}

impl ToyEmbedder {
    pub fn new(seed: u64) -> Self {
        Self::with_dim(seed, EMBEDDING_DIM)
    }

    pub fn with_dim(seed: u64, dim: usize) -> Self {
        let stats_dim = 2 * features::N_MELS;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (stats_dim as f32).sqrt();
        let projection = (0..dim * stats_dim)
            .map(|_| {
                // Box-Muller, so the projection does not depend on
                // rand_distr internals.
                let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
                let u2: f32 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f32::consts::PI * u2).cos() * scale
            })
            .collect();
        Self { projection, dim }
    }

    fn window_stats(window: &[f32]) -> Option<Vec<f32>> {
        if window.len() < features::FRAME_LEN || window.iter().all(|&s| s == 0.0) {
            return None;
        }
        let audio = AudioSignal::new(window.to_vec(), crate::audio::SAMPLE_RATE).ok()?;
        let logmel = features::compute_logmel(&audio).ok()?;
        let t_len = logmel.num_frames();
        let n = features::N_MELS;
        let mut means = vec![0.0f32; n];
        for t in 0..t_len {
            for (m, v) in logmel.mat().row(t).iter().enumerate() {
                means[m] += v;
            }
        }
        for m in means.iter_mut() {
            *m /= t_len as f32;
        }
        let mut vars = vec![0.0f32; n];
        for t in 0..t_len {
            for (m, v) in logmel.mat().row(t).iter().enumerate() {
                let d = v - means[m];
                vars[m] += d * d;
            }
        }
        // Center the means so overall signal level cancels and only the
        // spectral shape remains.
        let grand = means.iter().sum::<f32>() / n as f32;
        let mut stats = Vec::with_capacity(2 * n);
        stats.extend(means.iter().map(|m| m - grand));
        stats.extend(vars.iter().map(|v| (v / t_len as f32).sqrt()));
        // A flat spectrum leaves only accumulation dust; treat it as no
        // signal rather than normalizing noise into a unit vector.
        if stats.iter().map(|v| v * v).sum::<f32>().sqrt() < 1e-3 {
            return None;
        }
        Some(stats)
    }
}

impl EmbeddingProvider for ToyEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, window: &[f32]) -> Vec<f32> {
        let fallback = || vec![1.0 / (self.dim as f32).sqrt(); self.dim];
        let Some(stats) = Self::window_stats(window) else {
            return fallback();
        };
        let stats_dim = stats.len();
        let mut out = vec![0.0f32; self.dim];
        for (e, o) in out.iter_mut().enumerate() {
            let row = &self.projection[e * stats_dim..(e + 1) * stats_dim];
            *o = row.iter().zip(&stats).map(|(w, s)| w * s).sum();
        }
        let norm = out.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm < 1e-12 {
            return fallback();
        }
        for v in out.iter_mut() {
            *v /= norm;
        }
        out
    }
}

/// One embedding per 100 ms hop, the window centered on the frame timestamp
/// `t * hop` and clamped to the signal bounds. The number of rows equals the
/// acoustic frame count of the same audio.
pub fn extract_embeddings(
    audio: &AudioSignal,
    provider: &dyn EmbeddingProvider,
    window_s: f64,
    hop_s: f64,
) -> Result<EmbeddingSequence> {
    if !ALLOWED_WINDOWS_S.iter().any(|w| (w - window_s).abs() < 1e-9) {
        return Err(Error::InvalidArgument(format!(
            "window must be one of {ALLOWED_WINDOWS_S:?} seconds, got {window_s}"
        )));
    }
    if (hop_s - EMBEDDING_HOP_S).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "hop must be {EMBEDDING_HOP_S} s, got {hop_s}"
        )));
    }
    let sr = audio.sample_rate() as f64;
    let hop_samples = (hop_s * sr).round() as usize;
    if audio.len() < hop_samples {
        return Err(Error::InvalidAudio(format!(
            "audio shorter than one hop: {} samples < {hop_samples}",
            audio.len()
        )));
    }
    let t_len = features::num_subsampled_frames(audio.len()).ok_or_else(|| {
        Error::InvalidAudio("audio too short for the acoustic frame grid".into())
    })?;

    let half = (window_s * sr / 2.0).round() as isize;
    let n = audio.len() as isize;
    let dim = provider.dimension();
    let mut mat = Mat::zeros(t_len, dim);
    for t in 0..t_len {
        let center = (t * hop_samples) as isize;
        let lo = (center - half).clamp(0, n) as usize;
        let hi = (center + half).clamp(0, n) as usize;
        let emb = provider.embed(&audio.samples()[lo..hi]);
        if emb.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "provider returned {} values, declared dimension {dim}",
                emb.len()
            )));
        }
        mat.row_mut(t).copy_from_slice(&emb);
    }
    EmbeddingSequence::new(mat, window_s, hop_s)
}

/// Zero out embedding rows at non-speech frames. Speech rows are preserved
/// bit-exactly; the operation is idempotent.
pub fn apply_silence_mask(emb: &EmbeddingSequence, mask: &VadMask) -> Result<EmbeddingSequence> {
    if emb.num_frames() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "embedding frames {} vs mask length {}",
            emb.num_frames(),
            mask.len()
        )));
    }
    let mut mat = emb.mat.clone();
    for t in 0..mat.rows() {
        if !mask.is_speech(t) {
            mat.row_mut(t).fill(0.0);
        }
    }
    EmbeddingSequence::new(mat, emb.window_s, emb.hop_s)
}

/// Truncate both sequences to the shorter length. The difference must not
/// exceed one embedding window's worth of hops.
pub fn align_lengths(
    frames: &FrameSequence,
    emb: &EmbeddingSequence,
) -> Result<(FrameSequence, EmbeddingSequence)> {
    let t_x = frames.num_frames();
    let t_b = emb.num_frames();
    let tolerance = (emb.window_s / emb.hop_s).round() as usize;
    if t_x.abs_diff(t_b) > tolerance {
        return Err(Error::ShapeMismatch(format!(
            "feature/embedding length mismatch beyond tolerance: {t_x} vs {t_b} (tolerance {tolerance})"
        )));
    }
    let t = t_x.min(t_b);
    let mut f = frames.clone();
    f.truncate(t);
    let mut e = emb.clone();
    e.truncate(t);
    Ok((f, e))
}

/// Mask derived from reference segments (any speaker active), for silence
/// handling of embeddings.
pub fn mask_from_segments(
    list: &SegmentList,
    recording_id: &str,
    num_frames: usize,
    frame_shift: f64,
) -> VadMask {
    let segs: Vec<Segment> =
        list.iter().filter(|s| s.recording_id == recording_id).cloned().collect();
    VadMask::new(discretize(&segs, num_frames, frame_shift))
}

// ---------------------------------------------------------------------------
// Precomputed-embedding file format (see FORMATS.md): "EEMB" magic, version,
// T, E, hop_ms, window_ms, then row-major f32 payload, all little-endian.
// ---------------------------------------------------------------------------

const EMBEDDING_MAGIC: &[u8; 4] = b"EEMB";
const EMBEDDING_VERSION: u32 = 1;

pub fn save_embeddings(emb: &EmbeddingSequence, path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
    w.write_all(&(emb.num_frames() as u32).to_le_bytes())?;
    w.write_all(&(emb.dim() as u32).to_le_bytes())?;
    w.write_all(&((emb.hop_s * 1000.0).round() as u32).to_le_bytes())?;
    w.write_all(&((emb.window_s * 1000.0).round() as u32).to_le_bytes())?;
    for v in emb.mat.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSequence> {
    let path = path.as_ref();
    let show = path.display().to_string();
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::parse(&show, "truncated header"))?;
    if &magic != EMBEDDING_MAGIC {
        return Err(Error::parse(&show, "bad magic, not an embedding dump"));
    }
    let version = features::read_u32(&mut r, &show)?;
    if version != EMBEDDING_VERSION {
        return Err(Error::parse(&show, format!("unsupported version {version}")));
    }
    let t_len = features::read_u32(&mut r, &show)? as usize;
    let e_dim = features::read_u32(&mut r, &show)? as usize;
    let hop_ms = features::read_u32(&mut r, &show)?;
    let window_ms = features::read_u32(&mut r, &show)?;

    let mut payload = vec![0u8; t_len * e_dim * 4];
    r.read_exact(&mut payload)
        .map_err(|_| Error::parse(&show, "payload smaller than header promises"))?;
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(Error::parse(&show, "payload larger than header promises"));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    EmbeddingSequence::new(
        Mat::from_vec(t_len, e_dim, data)?,
        window_ms as f64 / 1000.0,
        hop_ms as f64 / 1000.0,
    )
}
