//! Training, adaptation and inference orchestration: Adam with the
//! inverse-square-root warmup schedule, chunked PIT training over simulated
//! datasets, checkpoint + manifest I/O, and the decode pipeline.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{backprop::GradStore, DType, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioSignal;
use crate::embeddings::{
    align_lengths, apply_silence_mask, extract_embeddings, load_embeddings, mask_from_segments,
    EmbeddingSequence, ToyEmbedder, VadMask, EMBEDDING_DIM, EMBEDDING_HOP_S,
};
use crate::error::{Error, Result};
use crate::features::{acoustic_features_with, FrameSequence, LogmelConfig};
use crate::labels::{channel_names, labels_to_segments, segments_to_labels, LabelMatrix};
use crate::losses::{attractor_existence_loss_t, pit_loss_t, TrainMode};
use crate::metrics::{decide_frames, frame_der};
use crate::model::{EendEda, EncoderConfig, FusionVariant, ModelConfig};
use crate::segments::{read_rttm, SegmentList};
use crate::simulate::DatasetEntry;
use crate::vad::{energy_vad, gate_hypothesis, oracle_mask, EnergyVadConfig};

/// Where per-frame speaker embeddings come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbeddingSource {
    /// Deterministic toy extractor with this seed.
    Toy { seed: u64 },
    /// Precomputed `<id>.emb` files next to the audio.
    Files,
}

impl EmbeddingSource {
    pub fn as_str(&self) -> String {
        match self {
            EmbeddingSource::Toy { .. } => "toy".to_string(),
            EmbeddingSource::Files => "file".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub variant: FusionVariant,
    pub encoder: EncoderConfig,
    pub epochs: usize,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub chunk_frames: usize,
    pub mode: TrainMode,
    pub seed: u64,
    pub use_oracle_vad_on_embeddings: bool,
    pub shuffle_eda: bool,
    pub lr_factor: f64,
    pub embedding_window_s: f64,
    pub embedding_source: EmbeddingSource,
    pub mean_normalize_features: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: FusionVariant::ConcatInput,
            encoder: EncoderConfig::default(),
            epochs: 10,
            warmup_steps: 500,
            batch_size: 8,
            chunk_frames: 500,
            mode: TrainMode::Train,
            seed: 17,
            use_oracle_vad_on_embeddings: true,
            shuffle_eda: true,
            lr_factor: 1.0,
            embedding_window_s: 1.0,
            embedding_source: EmbeddingSource::Toy { seed: 4242 },
            mean_normalize_features: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.warmup_steps < 1 {
            return Err(Error::InvalidArgument("warmup_steps must be >= 1".into()));
        }
        if self.chunk_frames < 16 {
            return Err(Error::InvalidArgument("chunk_frames must be >= 16".into()));
        }
        if self.batch_size < 1 || self.epochs < 1 {
            return Err(Error::InvalidArgument("batch_size and epochs must be >= 1".into()));
        }
        Ok(())
    }

    fn logmel_config(&self) -> LogmelConfig {
        LogmelConfig { mean_normalize: self.mean_normalize_features, ..Default::default() }
    }
}

// ---------------------------------------------------------------------------
// Flat key-value config files (unknown keys rejected; see FORMATS.md).
// ---------------------------------------------------------------------------

pub fn parse_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = path.as_ref();
    let show = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut cfg = TrainConfig::default();
    let mut toy_seed: Option<u64> = None;
    let mut provider: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::parse(&show, format!("line {}: expected key = value", lineno + 1)));
        };
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| Error::parse(&show, format!("line {}: bad {what}", lineno + 1));
        match key {
            "variant" => cfg.variant = FusionVariant::parse(value)?,
            "epochs" => cfg.epochs = value.parse().map_err(|_| bad("epochs"))?,
            "warmup_steps" => cfg.warmup_steps = value.parse().map_err(|_| bad("warmup_steps"))?,
            "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad("batch_size"))?,
            "chunk_frames" => cfg.chunk_frames = value.parse().map_err(|_| bad("chunk_frames"))?,
            "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
            "use_oracle_vad_on_embeddings" => {
                cfg.use_oracle_vad_on_embeddings = parse_bool(value).ok_or_else(|| bad(key))?
            }
            "shuffle_eda" => cfg.shuffle_eda = parse_bool(value).ok_or_else(|| bad(key))?,
            "lr_factor" => cfg.lr_factor = value.parse().map_err(|_| bad("lr_factor"))?,
            "embedding_window_s" => {
                cfg.embedding_window_s = value.parse().map_err(|_| bad("embedding_window_s"))?
            }
            "embedding_provider" => provider = Some(value.to_string()),
            "toy_seed" => toy_seed = Some(value.parse().map_err(|_| bad("toy_seed"))?),
            "n_blocks" => cfg.encoder.n_blocks = value.parse().map_err(|_| bad("n_blocks"))?,
            "d_model" => cfg.encoder.d_model = value.parse().map_err(|_| bad("d_model"))?,
            "n_heads" => cfg.encoder.n_heads = value.parse().map_err(|_| bad("n_heads"))?,
            "ff_dim" => cfg.encoder.ff_dim = value.parse().map_err(|_| bad("ff_dim"))?,
            "dropout" => cfg.encoder.dropout = value.parse().map_err(|_| bad("dropout"))?,
            "mean_normalize_features" => {
                cfg.mean_normalize_features = parse_bool(value).ok_or_else(|| bad(key))?
            }
            other => {
                return Err(Error::parse(
                    &show,
                    format!("line {}: unknown key {other}", lineno + 1),
                ))
            }
        }
    }
    match provider.as_deref() {
        None | Some("toy") => {
            let seed = toy_seed.unwrap_or(4242);
            cfg.embedding_source = EmbeddingSource::Toy { seed };
        }
        Some("file") => cfg.embedding_source = EmbeddingSource::Files,
        Some(other) => {
            return Err(Error::parse(&show, format!("unknown embedding_provider {other}")))
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Learning-rate schedule and optimizer
// ---------------------------------------------------------------------------

/// Inverse-square-root warmup schedule:
/// `factor * d_model^-0.5 * min(k^-0.5, k * warmup^-1.5)`.
#[derive(Debug, Clone)]
pub struct NoamSchedule {
    pub d_model: usize,
    pub warmup_steps: usize,
    pub factor: f64,
}

impl NoamSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        let k = step.max(1) as f64;
        let w = self.warmup_steps as f64;
        self.factor * (self.d_model as f64).powf(-0.5) * (k.powf(-0.5)).min(k * w.powf(-1.5))
    }
}

/// Adam over the model's parameter list; state is kept per parameter in
/// creation order.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_count: usize,
    state: Vec<Option<(Tensor, Tensor)>>,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            step_count: 0,
            state: (0..n_params).map(|_| None).collect(),
        }
    }

    /// Apply one update; returns the global gradient norm.
    pub fn step(&mut self, vars: &[(String, Var)], grads: &GradStore, lr: f64) -> Result<f64> {
        self.step_count += 1;
        let t = self.step_count as f64;
        let bias1 = 1.0 - self.beta1.powf(t);
        let bias2 = 1.0 - self.beta2.powf(t);
        let mut norm_sq = 0.0;
        for (idx, (_, var)) in vars.iter().enumerate() {
            let Some(grad) = grads.get(var) else { continue };
            // Gradients drag the whole batch graph behind them through
            // their op history; detach so the optimizer state never keeps
            // old graphs (or a chain of previous steps) alive.
            let grad = grad.detach();
            norm_sq += grad.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            let (m, v) = match &self.state[idx] {
                Some((m, v)) => (m.clone(), v.clone()),
                None => {
                    let zeros = || Tensor::zeros(grad.shape(), grad.dtype(), grad.device());
                    (zeros()?, zeros()?)
                }
            };
            let m = ((m * self.beta1)? + (&grad * (1.0 - self.beta1))?)?.detach();
            let v = ((v * self.beta2)? + (grad.sqr()? * (1.0 - self.beta2))?)?.detach();
            let m_hat = (&m * (1.0 / bias1))?;
            let v_hat = (&v * (1.0 / bias2))?;
            let update = m_hat.div(&(v_hat.sqrt()? + self.eps)?)?;
            var.set(&var.as_tensor().sub(&(update * lr)?)?.detach())?;
            self.state[idx] = Some((m, v));
        }
        Ok(norm_sq.sqrt())
    }
}

// ---------------------------------------------------------------------------
// Data preparation
// ---------------------------------------------------------------------------

/// One recording with everything the training loop needs, on the aligned
/// 100 ms grid.
pub struct PreparedRecording {
    pub id: String,
    pub features: FrameSequence,
    pub embeddings: Option<EmbeddingSequence>,
    pub labels: LabelMatrix,
    pub speakers: Vec<String>,
    /// Speech mask used for embedding silence handling (when enabled).
    pub silence_mask: Option<VadMask>,
    pub reference: SegmentList,
}

pub struct TrainingSet {
    pub records: Vec<PreparedRecording>,
    chunk_frames: usize,
}

/// A chunk is a frame range of one prepared recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk {
    pub record: usize,
    pub start: usize,
    pub end: usize,
}

const MIN_CHUNK_FRAMES: usize = 16;

impl TrainingSet {
    pub fn prepare(entries: &[DatasetEntry], cfg: &TrainConfig) -> Result<Self> {
        let mut records = Vec::with_capacity(entries.len());
        for entry in entries {
            records.push(prepare_recording(entry, cfg)?);
        }
        if records.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        Ok(Self { records, chunk_frames: cfg.chunk_frames })
    }

    /// Deterministic chunk list (tails shorter than the minimum are
    /// dropped).
    pub fn chunks(&self) -> Vec<Chunk> {
        let mut out = Vec::new();
        for (record, rec) in self.records.iter().enumerate() {
            let t_len = rec.features.num_frames();
            let mut start = 0;
            while start < t_len {
                let end = (start + self.chunk_frames).min(t_len);
                if end - start >= MIN_CHUNK_FRAMES {
                    out.push(Chunk { record, start, end });
                }
                start = end;
            }
        }
        out
    }

    /// Frame slices of one chunk: features, embeddings, labels restricted
    /// to speakers active inside the chunk.
    pub fn chunk_data(
        &self,
        chunk: Chunk,
    ) -> (FrameSequence, Option<EmbeddingSequence>, LabelMatrix) {
        let rec = &self.records[chunk.record];
        let features = rec.features.slice_frames(chunk.start, chunk.end);
        let embeddings = rec.embeddings.as_ref().map(|e| e.slice_frames(chunk.start, chunk.end));
        let labels = rec.labels.slice_frames(chunk.start, chunk.end);
        let active = labels.active_columns();
        (features, embeddings, labels.select_columns(&active))
    }
}

fn prepare_recording(entry: &DatasetEntry, cfg: &TrainConfig) -> Result<PreparedRecording> {
    let audio = AudioSignal::read_wav(&entry.wav)?;
    let reference = read_rttm(&entry.rttm)?;
    let mut features = acoustic_features_with(&audio, &cfg.logmel_config())?;

    let needs_embeddings = cfg.variant.needs_embeddings();
    let mut embeddings = if needs_embeddings {
        let emb = match &cfg.embedding_source {
            EmbeddingSource::Toy { seed } => {
                let provider = ToyEmbedder::new(*seed);
                extract_embeddings(&audio, &provider, cfg.embedding_window_s, EMBEDDING_HOP_S)?
            }
            EmbeddingSource::Files => {
                let path = entry.wav.with_extension("emb");
                load_embeddings(&path)?
            }
        };
        Some(emb)
    } else {
        None
    };

    if let Some(emb) = embeddings.take() {
        let (f, e) = align_lengths(&features, &emb)?;
        features = f;
        embeddings = Some(e);
    }
    let t_len = features.num_frames();

    let silence_mask = if needs_embeddings && cfg.use_oracle_vad_on_embeddings {
        let mask = mask_from_segments(&reference, &entry.id, t_len, features.frame_shift());
        embeddings = Some(apply_silence_mask(embeddings.as_ref().expect("present"), &mask)?);
        Some(mask)
    } else {
        None
    };

    let speakers = reference.speakers(&entry.id);
    let labels =
        segments_to_labels(&reference, &entry.id, &speakers, t_len, features.frame_shift());
    Ok(PreparedRecording {
        id: entry.id.clone(),
        features,
        embeddings,
        labels,
        speakers,
        silence_mask,
        reference,
    })
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const MANIFEST_VERSION: u32 = 1;

/// Plain-text key-value companion of a weight file; this is the
/// compatibility contract between training and inference.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointManifest {
    pub variant: FusionVariant,
    pub encoder: EncoderConfig,
    pub feature_dim: usize,
    pub embedding_dim: usize,
    pub embedding_window_s: f64,
    pub embedding_source: EmbeddingSource,
    pub mean_normalize_features: bool,
    pub alpha: f64,
    pub mode: TrainMode,
    pub seed: u64,
}

impl CheckpointManifest {
    pub fn from_config(cfg: &TrainConfig, model_cfg: &ModelConfig) -> Self {
        Self {
            variant: model_cfg.variant,
            encoder: model_cfg.encoder.clone(),
            feature_dim: model_cfg.feature_dim,
            embedding_dim: model_cfg.embedding_dim,
            embedding_window_s: cfg.embedding_window_s,
            embedding_source: cfg.embedding_source.clone(),
            mean_normalize_features: cfg.mean_normalize_features,
            alpha: cfg.mode.alpha(),
            mode: cfg.mode,
            seed: cfg.seed,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            encoder: self.encoder.clone(),
            feature_dim: self.feature_dim,
            embedding_dim: self.embedding_dim,
        }
    }

    fn render(&self) -> String {
        let toy_seed = match self.embedding_source {
            EmbeddingSource::Toy { seed } => seed,
            EmbeddingSource::Files => 0,
        };
        format!(
            "format_version = {MANIFEST_VERSION}\n\
             variant = {}\n\
             n_blocks = {}\n\
             d_model = {}\n\
             n_heads = {}\n\
             ff_dim = {}\n\
             dropout = {}\n\
             feature_dim = {}\n\
             embedding_dim = {}\n\
             embedding_window_s = {}\n\
             embedding_provider = {}\n\
             toy_seed = {toy_seed}\n\
             mean_normalize_features = {}\n\
             alpha = {}\n\
             mode = {}\n\
             seed = {}\n",
            self.variant.as_str(),
            self.encoder.n_blocks,
            self.encoder.d_model,
            self.encoder.n_heads,
            self.encoder.ff_dim,
            self.encoder.dropout,
            self.feature_dim,
            self.embedding_dim,
            self.embedding_window_s,
            self.embedding_source.as_str(),
            self.mean_normalize_features,
            self.alpha,
            self.mode.as_str(),
            self.seed,
        )
    }

    fn parse(path: &Path) -> Result<Self> {
        let show = path.display().to_string();
        let text = std::fs::read_to_string(path)?;
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(&show, format!("bad manifest line: {line}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            map.get(k).cloned().ok_or_else(|| Error::parse(&show, format!("missing key {k}")))
        };
        let parse_num = |k: &str| -> Result<f64> {
            get(k)?.parse::<f64>().map_err(|_| Error::parse(&show, format!("bad number for {k}")))
        };
        let version: u32 = parse_num("format_version")? as u32;
        if version != MANIFEST_VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "manifest version {version}, this build reads {MANIFEST_VERSION}"
            )));
        }
        let provider = get("embedding_provider")?;
        let toy_seed = parse_num("toy_seed")? as u64;
        let embedding_source = match provider.as_str() {
            "toy" => EmbeddingSource::Toy { seed: toy_seed },
            "file" => EmbeddingSource::Files,
            other => return Err(Error::parse(&show, format!("unknown provider {other}"))),
        };
        Ok(Self {
            variant: FusionVariant::parse(&get("variant")?)?,
            encoder: EncoderConfig {
                n_blocks: parse_num("n_blocks")? as usize,
                d_model: parse_num("d_model")? as usize,
                n_heads: parse_num("n_heads")? as usize,
                ff_dim: parse_num("ff_dim")? as usize,
                dropout: parse_num("dropout")?,
            },
            feature_dim: parse_num("feature_dim")? as usize,
            embedding_dim: parse_num("embedding_dim")? as usize,
            embedding_window_s: parse_num("embedding_window_s")?,
            embedding_source,
            mean_normalize_features: get("mean_normalize_features")? == "true",
            alpha: parse_num("alpha")?,
            mode: TrainMode::parse(&get("mode")?)?,
            seed: parse_num("seed")? as u64,
        })
    }
}

/// A loaded model plus its manifest.
pub struct Checkpoint {
    pub model: EendEda,
    pub manifest: CheckpointManifest,
}

impl Checkpoint {
    pub fn weights_path(stem: &Path) -> PathBuf {
        stem.with_extension("safetensors")
    }

    pub fn manifest_path(stem: &Path) -> PathBuf {
        stem.with_extension("manifest")
    }

    pub fn save(model: &EendEda, manifest: &CheckpointManifest, stem: &Path) -> Result<()> {
        if let Some(parent) = stem.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        model.store().save(Self::weights_path(stem))?;
        std::fs::write(Self::manifest_path(stem), manifest.render())?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let manifest = CheckpointManifest::parse(&Self::manifest_path(stem))?;
        let mut model = EendEda::new(manifest.model_config(), manifest.seed, DType::F64)?;
        model.store_mut().load(Self::weights_path(stem))?;
        Ok(Self { model, manifest })
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    pub mean_l_d: f64,
    pub mean_l_alpha: f64,
    pub lr: f64,
    pub val_der: f64,
}

pub struct TrainOutcome {
    pub final_stem: PathBuf,
    pub best_stem: PathBuf,
    pub log_path: PathBuf,
    pub history: Vec<EpochStats>,
}

/// Train (or adapt, when `init` is given and the config mode says so) and
/// write `final`/`best` checkpoints plus a line-delimited log under
/// `out_dir`.
pub fn train(
    cfg: &TrainConfig,
    train_entries: &[DatasetEntry],
    val_entries: Option<&[DatasetEntry]>,
    init: Option<&Path>,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;

    let data = TrainingSet::prepare(train_entries, cfg)?;
    let val_data = match val_entries {
        Some(entries) => Some(TrainingSet::prepare(entries, cfg)?),
        None => None,
    };

    // Embedding dimension comes from the data when files are supplied.
    let model_cfg = ModelConfig {
        variant: cfg.variant,
        encoder: cfg.encoder.clone(),
        feature_dim: data.records[0].features.dim(),
        embedding_dim: data.records[0]
            .embeddings
            .as_ref()
            .map(EmbeddingSequence::dim)
            .unwrap_or(EMBEDDING_DIM),
    };
    for rec in &data.records {
        if let Some(e) = &rec.embeddings {
            if e.dim() != model_cfg.embedding_dim {
                return Err(Error::ShapeMismatch(format!(
                    "embedding dim {} in {} differs from {}",
                    e.dim(),
                    rec.id,
                    model_cfg.embedding_dim
                )));
            }
        }
    }

    let mut model = EendEda::new(model_cfg.clone(), cfg.seed, DType::F64)?;
    if let Some(stem) = init {
        let init_manifest = CheckpointManifest::parse(&Checkpoint::manifest_path(stem))?;
        if init_manifest.variant != cfg.variant {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint variant {} cannot initialize a {} run",
                init_manifest.variant.as_str(),
                cfg.variant.as_str()
            )));
        }
        if init_manifest.model_config() != model_cfg {
            return Err(Error::CheckpointMismatch(
                "checkpoint dimensions differ from the configured model".into(),
            ));
        }
        model.store_mut().load(Checkpoint::weights_path(stem))?;
    }

    let manifest = CheckpointManifest::from_config(cfg, &model_cfg);
    let schedule = NoamSchedule {
        d_model: cfg.encoder.d_model,
        warmup_steps: cfg.warmup_steps,
        factor: cfg.lr_factor,
    };
    let mut adam = Adam::new(model.store().vars().len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let log_path = out_dir.join("train.log");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);

    let final_stem = out_dir.join("final");
    let best_stem = out_dir.join("best");
    let mut best_der = f64::INFINITY;
    let mut history = Vec::new();
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut order = data.chunks();
        order.shuffle(&mut rng);

        let mut sums = (0.0f64, 0.0f64, 0.0f64, 0usize);
        let mut lr = schedule.lr(step.max(1));
        for batch in order.chunks(cfg.batch_size) {
            lr = schedule.lr(step + 1);
            let mut batch_total: Option<Tensor> = None;
            let mut batch_l_d = 0.0;
            let mut batch_l_alpha = 0.0;
            for &chunk in batch {
                let (l_total, l_d, l_a) = chunk_loss(&model, &data, chunk, cfg, &mut rng)?;
                batch_l_d += l_d;
                batch_l_alpha += l_a;
                batch_total = Some(match batch_total {
                    Some(acc) => acc.add(&l_total)?,
                    None => l_total,
                });
            }
            let Some(batch_total) = batch_total else { continue };
            let scale = 1.0 / batch.len() as f64;
            let batch_loss = (batch_total * scale)?;
            let loss_value = batch_loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            let grads = batch_loss.backward()?;
            let grad_norm = adam.step(model.store().vars(), &grads, lr)?;
            if !loss_value.is_finite() || !grad_norm.is_finite() {
                return Err(Error::NonFiniteLoss { step, lr, grad_norm });
            }
            step += 1;
            sums.0 += loss_value;
            sums.1 += batch_l_d * scale;
            sums.2 += batch_l_alpha * scale;
            sums.3 += 1;
        }

        let n = sums.3.max(1) as f64;
        let val_der = validation_frame_der(&model, val_data.as_ref().unwrap_or(&data))?;
        let stats = EpochStats {
            epoch,
            steps: step,
            mean_loss: sums.0 / n,
            mean_l_d: sums.1 / n,
            mean_l_alpha: sums.2 / n,
            lr,
            val_der,
        };
        writeln!(
            log,
            "epoch={} step={} loss={:.6} l_d={:.6} l_alpha={:.6} lr={:.6e} val_der={:.4}",
            stats.epoch, stats.steps, stats.mean_loss, stats.mean_l_d, stats.mean_l_alpha,
            stats.lr, stats.val_der
        )?;
        log.flush()?;
        if val_der < best_der {
            best_der = val_der;
            Checkpoint::save(&model, &manifest, &best_stem)?;
        }
        history.push(stats);
    }

    Checkpoint::save(&model, &manifest, &final_stem)?;
    if best_der.is_infinite() {
        Checkpoint::save(&model, &manifest, &best_stem)?;
    }
    Ok(TrainOutcome { final_stem, best_stem, log_path, history })
}

/// Loss of one chunk: PIT diarization loss plus weighted attractor
/// existence loss, as a graph-carrying scalar and its f64 components.
fn chunk_loss(
    model: &EendEda,
    data: &TrainingSet,
    chunk: Chunk,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, f64, f64)> {
    use crate::model::nn::RunMode;
    let (features, embeddings, labels) = data.chunk_data(chunk);
    let t_len = features.num_frames();
    let n_speakers = labels.num_speakers();

    let x_t = model.mat_to_tensor(features.mat())?;
    let b_t = embeddings.as_ref().map(|e| model.mat_to_tensor(e.mat())).transpose()?;
    let x_opt = if cfg.variant == FusionVariant::EmbeddingInput { None } else { Some(&x_t) };

    let shuffle: Option<Vec<u32>> = if cfg.shuffle_eda {
        let mut idx: Vec<u32> = (0..t_len as u32).collect();
        idx.shuffle(rng);
        Some(idx)
    } else {
        None
    };

    // A silence-only chunk still trains the attractor stop slot.
    if n_speakers == 0 {
        let pass = model.forward_t(
            x_opt,
            b_t.as_ref(),
            0,
            1,
            &mut RunMode::Train { rng },
            shuffle.as_deref(),
        )?;
        let l_a = attractor_existence_loss_t(&pass.exist_logits, 0)?;
        let l_a_value = l_a.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        return Ok(((l_a * cfg.mode.alpha())?, 0.0, l_a_value));
    }

    let pass = model.forward_t(
        x_opt,
        b_t.as_ref(),
        n_speakers,
        n_speakers + 1,
        &mut RunMode::Train { rng },
        shuffle.as_deref(),
    )?;
    let labels_t = model.mat_to_tensor(labels.mat())?;
    let (l_d, _perm) = pit_loss_t(&labels_t, &pass.posterior_logits)?;
    let l_a = attractor_existence_loss_t(&pass.exist_logits, n_speakers)?;
    let l_d_value = l_d.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    let l_a_value = l_a.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    let total = (l_d + (l_a * cfg.mode.alpha())?)?;
    Ok((total, l_d_value, l_a_value))
}

/// Frame-DER of thresholded posteriors over a set, no median filtering,
/// weighted by reference speech frames.
fn validation_frame_der(model: &EendEda, data: &TrainingSet) -> Result<f64> {
    let mut err = 0.0;
    let mut speech = 0.0;
    for rec in &data.records {
        let n_speakers = rec.labels.num_speakers().max(1);
        let (posteriors, _) = model.forward(
            feature_arg(model, &rec.features),
            rec.embeddings.as_ref(),
            n_speakers,
        )?;
        let hyp = decide_frames(&posteriors, 0.5, 1)?;
        let breakdown = frame_der(&rec.labels, &hyp)?;
        err += breakdown.fa + breakdown.miss + breakdown.se;
        speech += breakdown.total_speech;
    }
    Ok(if speech > 0.0 { err / speech } else { 0.0 })
}

fn feature_arg<'a>(model: &EendEda, features: &'a FrameSequence) -> Option<&'a FrameSequence> {
    if model.config().variant == FusionVariant::EmbeddingInput {
        None
    } else {
        Some(features)
    }
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VadGating {
    None,
    Oracle,
    Energy,
}

impl VadGating {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(VadGating::None),
            "oracle" => Ok(VadGating::Oracle),
            "energy" => Ok(VadGating::Energy),
            other => Err(Error::InvalidArgument(format!("unknown vad mode {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpeakerCount {
    Fixed(usize),
    /// Decode attractors until the existence probability drops below 0.5.
    Auto,
}

#[derive(Debug, Clone)]
pub struct InferOptions {
    pub vad: VadGating,
    pub threshold: f64,
    pub median_window: usize,
    pub speakers: SpeakerCount,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            vad: VadGating::None,
            threshold: 0.5,
            median_window: 11,
            speakers: SpeakerCount::Fixed(2),
        }
    }
}

pub struct InferReport {
    pub segments: SegmentList,
    pub hypothesis_labels: LabelMatrix,
    pub num_speakers: usize,
}

impl Checkpoint {
    /// Full decode pipeline for one recording: features (+ embeddings per
    /// the manifest), forward pass, thresholding + median filter, optional
    /// VAD gating, merge to segments.
    pub fn infer_wav(
        &self,
        wav: &Path,
        recording_id: &str,
        reference_rttm: Option<&Path>,
        opts: &InferOptions,
    ) -> Result<InferReport> {
        let audio = AudioSignal::read_wav(wav)?;
        if audio.is_empty() {
            return Err(Error::InvalidAudio(format!("{} is empty", wav.display())));
        }
        let logmel_cfg = LogmelConfig {
            mean_normalize: self.manifest.mean_normalize_features,
            ..Default::default()
        };
        let mut features = acoustic_features_with(&audio, &logmel_cfg)?;

        let mut embeddings = if self.manifest.variant.needs_embeddings() {
            let emb = match &self.manifest.embedding_source {
                EmbeddingSource::Toy { seed } => {
                    let provider = ToyEmbedder::new(*seed);
                    extract_embeddings(
                        &audio,
                        &provider,
                        self.manifest.embedding_window_s,
                        EMBEDDING_HOP_S,
                    )?
                }
                EmbeddingSource::Files => load_embeddings(wav.with_extension("emb"))?,
            };
            Some(emb)
        } else {
            None
        };
        if let Some(emb) = embeddings.take() {
            if emb.dim() != self.manifest.embedding_dim {
                return Err(Error::CheckpointMismatch(format!(
                    "embedding dim {} does not match manifest {}",
                    emb.dim(),
                    self.manifest.embedding_dim
                )));
            }
            let (f, e) = align_lengths(&features, &emb)?;
            features = f;
            embeddings = Some(e);
        }
        let t_len = features.num_frames();

        let n_speakers = match opts.speakers {
            SpeakerCount::Fixed(n) => {
                if n == 0 {
                    return Err(Error::InvalidArgument("need at least one speaker".into()));
                }
                n
            }
            SpeakerCount::Auto => self
                .model
                .estimate_speakers(
                    feature_arg(&self.model, &features),
                    embeddings.as_ref(),
                    crate::metrics::MAX_MAPPED_SPEAKERS,
                )?
                .max(1),
        };

        let (posteriors, _attractors) =
            self.model.forward(feature_arg(&self.model, &features), embeddings.as_ref(), n_speakers)?;
        let mut hyp = decide_frames(&posteriors, opts.threshold, opts.median_window)?;

        match opts.vad {
            VadGating::None => {}
            VadGating::Oracle => {
                let rttm = reference_rttm.ok_or_else(|| {
                    Error::InvalidArgument("oracle VAD gating requires a reference RTTM".into())
                })?;
                let reference = read_rttm(rttm)?;
                let mask = oracle_mask(&reference, recording_id, t_len, features.frame_shift())?;
                hyp = gate_hypothesis(&hyp, &mask)?;
            }
            VadGating::Energy => {
                let mut mask = energy_vad(&audio, &EnergyVadConfig::default())?;
                // The energy grid can be one frame longer than the aligned
                // feature grid; truncate to match.
                if mask.len() > t_len {
                    mask = VadMask::new(mask.as_slice()[..t_len].to_vec());
                } else if mask.len() < t_len {
                    let mut v = mask.as_slice().to_vec();
                    v.resize(t_len, false);
                    mask = VadMask::new(v);
                }
                hyp = gate_hypothesis(&hyp, &mask)?;
            }
        }

        let names = channel_names(hyp.num_speakers());
        let segments = labels_to_segments(&hyp, recording_id, &names, features.frame_shift())?;
        Ok(InferReport { segments, hypothesis_labels: hyp, num_speakers: n_speakers })
    }

    /// Encoder-output dump for inspection (same binary layout as feature
    /// dumps).
    pub fn dump_encodings(&self, wav: &Path, out: &Path) -> Result<()> {
        let audio = AudioSignal::read_wav(wav)?;
        let logmel_cfg = LogmelConfig {
            mean_normalize: self.manifest.mean_normalize_features,
            ..Default::default()
        };
        let mut features = acoustic_features_with(&audio, &logmel_cfg)?;
        let mut embeddings = if self.manifest.variant.needs_embeddings() {
            let emb = match &self.manifest.embedding_source {
                EmbeddingSource::Toy { seed } => extract_embeddings(
                    &audio,
                    &ToyEmbedder::new(*seed),
                    self.manifest.embedding_window_s,
                    EMBEDDING_HOP_S,
                )?,
                EmbeddingSource::Files => load_embeddings(wav.with_extension("emb"))?,
            };
            Some(emb)
        } else {
            None
        };
        if let Some(emb) = embeddings.take() {
            let (f, e) = align_lengths(&features, &emb)?;
            features = f;
            embeddings = Some(e);
        }
        let encoded = self.model.encoded_sequence(
            feature_arg(&self.model, &features),
            embeddings.as_ref(),
        )?;
        crate::features::save_features(&encoded, out)
    }
}
