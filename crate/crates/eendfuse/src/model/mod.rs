//! SA-EEND transformer encoder with an encoder-decoder attractor head, and
//! the four forward paths: acoustic-only baseline plus three ways of fusing
//! externally provided per-frame speaker embeddings.

pub mod nn;

use candle_core::{DType, Device, Tensor};

use crate::embeddings::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::features::FrameSequence;
use crate::mat::Mat;
use nn::{sigmoid, Linear, Lstm, ParamStore, RunMode, TransformerBlock};

/// Encoder output sequence (T x D at the 100 ms grid).
pub type EncodedSequence = FrameSequence;

/// Which inputs feed the encoder and the attractor head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionVariant {
    /// Acoustic features only.
    Baseline,
    /// Acoustic features drive the encoder; speaker embeddings (through a
    /// one-block embedding encoder) drive the attractor head. Posteriors
    /// are dot products against the acoustic encodings.
    EmbeddingAttractors,
    /// Speaker embeddings are the only encoder input; acoustic features are
    /// unused.
    EmbeddingInput,
    /// Frame-wise concatenation of acoustic features and speaker embeddings
    /// feeds the encoder.
    ConcatInput,
}

impl FusionVariant {
    pub fn needs_embeddings(&self) -> bool {
        !matches!(self, FusionVariant::Baseline)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FusionVariant::Baseline => "baseline",
            FusionVariant::EmbeddingAttractors => "embedding-attractors",
            FusionVariant::EmbeddingInput => "embedding-input",
            FusionVariant::ConcatInput => "concat",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(FusionVariant::Baseline),
            "embedding-attractors" => Ok(FusionVariant::EmbeddingAttractors),
            "embedding-input" => Ok(FusionVariant::EmbeddingInput),
            "concat" => Ok(FusionVariant::ConcatInput),
            other => Err(Error::InvalidArgument(format!("unknown variant {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub n_blocks: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { n_blocks: 4, d_model: 256, n_heads: 4, ff_dim: 2048, dropout: 0.1 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks < 1 {
            return Err(Error::InvalidArgument("n_blocks must be >= 1".into()));
        }
        if self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidArgument(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: FusionVariant,
    pub encoder: EncoderConfig,
    /// Spliced acoustic feature dimension.
    pub feature_dim: usize,
    /// Speaker embedding dimension.
    pub embedding_dim: usize,
}

impl ModelConfig {
    pub fn new(variant: FusionVariant) -> Self {
        Self {
            variant,
            encoder: EncoderConfig::default(),
            feature_dim: crate::features::SPLICED_DIM,
            embedding_dim: crate::embeddings::EMBEDDING_DIM,
        }
    }

    /// Dimension of what the SA-EEND encoder consumes.
    pub fn encoder_input_dim(&self) -> usize {
        match self.variant {
            FusionVariant::Baseline | FusionVariant::EmbeddingAttractors => self.feature_dim,
            FusionVariant::EmbeddingInput => self.embedding_dim,
            FusionVariant::ConcatInput => self.feature_dim + self.embedding_dim,
        }
    }
}

/// T x S matrix of per-frame speaker activity probabilities, entries
/// strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    mat: Mat,
}

impl PosteriorMatrix {
    pub fn new(mat: Mat) -> Result<Self> {
        mat.ensure_finite("posterior matrix")?;
        if mat.data().iter().any(|&v| v <= 0.0 || v >= 1.0) {
            return Err(Error::InvalidArgument(
                "posterior entries must be strictly inside (0, 1)".into(),
            ));
        }
        Ok(Self { mat })
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
}

/// Ordered attractors with their existence probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct AttractorSet {
    /// S' x D attractor vectors, decode order.
    pub attractors: Mat,
    /// Existence probability per attractor, strictly inside (0, 1).
    pub existence_probs: Vec<f64>,
}

impl AttractorSet {
    pub fn len(&self) -> usize {
        self.existence_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.existence_probs.is_empty()
    }
}

/// Attractor existence targets for `n_speakers` active speakers plus the
/// stop slot: ones followed by a single zero.
pub fn attractor_targets(n_speakers: usize) -> Vec<f64> {
    let mut l = vec![1.0; n_speakers];
    l.push(0.0);
    l
}

/// Tensor-level outputs of one forward pass.
pub struct ForwardPass {
    /// Encoder output driving the posterior dot products (T x D).
    pub encoded: Tensor,
    /// All decoded attractors (S' x D).
    pub attractors: Tensor,
    /// Existence logits, one per attractor (S').
    pub exist_logits: Tensor,
    /// Posterior logits over the first `n_speakers` attractors (T x S).
    pub posterior_logits: Tensor,
}

/// LSTM encoder-decoder attractor head.
struct Eda {
    encoder: Lstm,
    decoder: Lstm,
    exist: Linear,
    d_model: usize,
}

impl Eda {
    fn new(store: &mut ParamStore, name: &str, d_model: usize) -> Result<Self> {
        Ok(Self {
            encoder: Lstm::new(store, &format!("{name}.encoder"), d_model, d_model)?,
            decoder: Lstm::new(store, &format!("{name}.decoder"), d_model, d_model)?,
            exist: Linear::new(store, &format!("{name}.exist"), d_model, 1)?,
            d_model,
        })
    }

    /// Run the encoder over `seq` (optionally through a time permutation)
    /// and decode `n_attractors` vectors from constant zero inputs.
    fn generate(
        &self,
        seq: &Tensor,
        n_attractors: usize,
        shuffle: Option<&[u32]>,
    ) -> Result<(Tensor, Tensor)> {
        let (t_len, d) = seq.dims2()?;
        if t_len == 0 {
            return Err(Error::InvalidArgument("empty sequence fed to the attractor head".into()));
        }
        if d != self.d_model {
            return Err(Error::ShapeMismatch(format!(
                "attractor head expects dimension {}, got {d}",
                self.d_model
            )));
        }
        if n_attractors == 0 {
            return Err(Error::InvalidArgument("need at least one attractor".into()));
        }
        let enc_in = match shuffle {
            Some(perm) => {
                if perm.len() != t_len {
                    return Err(Error::ShapeMismatch(format!(
                        "shuffle permutation length {} != sequence length {t_len}",
                        perm.len()
                    )));
                }
                let idx = Tensor::from_vec(perm.to_vec(), (t_len,), seq.device())?;
                seq.index_select(&idx, 0)?
            }
            None => seq.clone(),
        };
        let mut state = self.encoder.run(&enc_in)?;
        let zero_input = Tensor::zeros((1, self.d_model), seq.dtype(), seq.device())?;
        let mut attractors = Vec::with_capacity(n_attractors);
        for _ in 0..n_attractors {
            state = self.decoder.step(&zero_input, &state)?;
            attractors.push(state.h.clone());
        }
        let attractors = Tensor::cat(&attractors.iter().collect::<Vec<_>>(), 0)?;
        let exist_logits = self.exist.forward(&attractors)?.reshape((n_attractors,))?;
        Ok((attractors, exist_logits))
    }
}

/// The full diarization model.
pub struct EendEda {
    cfg: ModelConfig,
    store: ParamStore,
    input_proj: Linear,
    blocks: Vec<TransformerBlock>,
    final_norm: nn::LayerNorm,
    // Embedding encoder, only for the attractor-fusion variant.
    emb_proj: Option<Linear>,
    emb_block: Option<TransformerBlock>,
    emb_norm: Option<nn::LayerNorm>,
    eda: Eda,
}

impl EendEda {
    pub fn new(cfg: ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        cfg.encoder.validate()?;
        let enc = &cfg.encoder;
        let mut store = ParamStore::new(seed, dtype);
        let input_proj =
            Linear::new(&mut store, "encoder.input_proj", cfg.encoder_input_dim(), enc.d_model)?;
        let mut blocks = Vec::with_capacity(enc.n_blocks);
        for i in 0..enc.n_blocks {
            blocks.push(TransformerBlock::new(
                &mut store,
                &format!("encoder.block{i}"),
                enc.d_model,
                enc.n_heads,
                enc.ff_dim,
                enc.dropout,
            )?);
        }
        let final_norm = nn::LayerNorm::new(&mut store, "encoder.final_norm", enc.d_model)?;

        let (emb_proj, emb_block, emb_norm) = if cfg.variant == FusionVariant::EmbeddingAttractors {
            (
                Some(Linear::new(&mut store, "emb_encoder.input_proj", cfg.embedding_dim, enc.d_model)?),
                Some(TransformerBlock::new(
                    &mut store,
                    "emb_encoder.block0",
                    enc.d_model,
                    enc.n_heads,
                    enc.ff_dim,
                    enc.dropout,
                )?),
                Some(nn::LayerNorm::new(&mut store, "emb_encoder.final_norm", enc.d_model)?),
            )
        } else {
            (None, None, None)
        };

        let eda = Eda::new(&mut store, "eda", enc.d_model)?;
        Ok(Self { cfg, store, input_proj, blocks, final_norm, emb_proj, emb_block, emb_norm, eda })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// SA-EEND encoder: projection, transformer blocks, final norm.
    fn encode(&self, x: &Tensor, mode: &mut RunMode) -> Result<Tensor> {
        let mut h = self.input_proj.forward(x)?;
        for block in &self.blocks {
            h = block.forward(&h, mode)?;
        }
        self.final_norm.forward(&h)
    }

    /// One-block embedding encoder (attractor-fusion variant only).
    fn encode_embeddings(&self, b: &Tensor, mode: &mut RunMode) -> Result<Tensor> {
        let proj = self.emb_proj.as_ref().expect("embedding encoder present");
        let block = self.emb_block.as_ref().expect("embedding encoder present");
        let norm = self.emb_norm.as_ref().expect("embedding encoder present");
        norm.forward(&block.forward(&proj.forward(b)?, mode)?)
    }

    fn check_dims(&self, x: Option<&Tensor>, b: Option<&Tensor>) -> Result<usize> {
        let variant = self.cfg.variant;
        if variant.needs_embeddings() && b.is_none() {
            return Err(Error::InvalidArgument(format!(
                "variant {} requires speaker embeddings",
                variant.as_str()
            )));
        }
        if variant == FusionVariant::Baseline && b.is_some() {
            return Err(Error::InvalidArgument(
                "baseline variant does not accept speaker embeddings".into(),
            ));
        }
        let needs_x = !matches!(variant, FusionVariant::EmbeddingInput);
        if needs_x && x.is_none() {
            return Err(Error::InvalidArgument(format!(
                "variant {} requires acoustic features",
                variant.as_str()
            )));
        }
        let mut t_len = None;
        if let Some(x) = x {
            let (t, f) = x.dims2()?;
            if needs_x && f != self.cfg.feature_dim {
                return Err(Error::ShapeMismatch(format!(
                    "acoustic feature dim {f}, model expects {}",
                    self.cfg.feature_dim
                )));
            }
            t_len = Some(t);
        }
        if let Some(b) = b {
            let (t, e) = b.dims2()?;
            if e != self.cfg.embedding_dim {
                return Err(Error::ShapeMismatch(format!(
                    "embedding dim {e}, model expects {}",
                    self.cfg.embedding_dim
                )));
            }
            if needs_x {
                if let Some(tx) = t_len {
                    if tx != t {
                        return Err(Error::ShapeMismatch(format!(
                            "feature frames {tx} != embedding frames {t}"
                        )));
                    }
                }
            }
            if !needs_x {
                t_len = Some(t);
            }
        }
        t_len.ok_or_else(|| Error::InvalidArgument("no model input".into()))
    }

    /// Tensor-level forward pass. `n_speakers` fixes how many attractors
    /// feed the posterior head; `n_attractors` is how many are decoded
    /// (`n_speakers + 1` during training for the existence loss).
    pub fn forward_t(
        &self,
        x: Option<&Tensor>,
        b: Option<&Tensor>,
        n_speakers: usize,
        n_attractors: usize,
        mode: &mut RunMode,
        shuffle: Option<&[u32]>,
    ) -> Result<ForwardPass> {
        if n_speakers > n_attractors {
            return Err(Error::InvalidArgument(format!(
                "n_speakers {n_speakers} exceeds decoded attractors {n_attractors}"
            )));
        }
        self.check_dims(x, b)?;

        let encoded = match self.cfg.variant {
            FusionVariant::Baseline | FusionVariant::EmbeddingAttractors => {
                self.encode(x.expect("checked"), mode)?
            }
            FusionVariant::EmbeddingInput => self.encode(b.expect("checked"), mode)?,
            FusionVariant::ConcatInput => {
                let c = Tensor::cat(&[x.expect("checked"), b.expect("checked")], 1)?;
                self.encode(&c, mode)?
            }
        };

        let eda_input = match self.cfg.variant {
            FusionVariant::EmbeddingAttractors => {
                self.encode_embeddings(b.expect("checked"), mode)?
            }
            _ => encoded.clone(),
        };
        let (attractors, exist_logits) = self.eda.generate(&eda_input, n_attractors, shuffle)?;

        let active = attractors.narrow(0, 0, n_speakers)?;
        let posterior_logits = encoded.matmul(&active.t()?.contiguous()?)?;
        Ok(ForwardPass { encoded, attractors, exist_logits, posterior_logits })
    }

    /// Matrix-level forward pass in eval mode: posteriors over a fixed
    /// speaker count plus the decoded attractor set.
    pub fn forward(
        &self,
        x: Option<&FrameSequence>,
        b: Option<&EmbeddingSequence>,
        n_speakers: usize,
    ) -> Result<(PosteriorMatrix, AttractorSet)> {
        let xt = x.map(|f| self.mat_to_tensor(f.mat())).transpose()?;
        let bt = b.map(|e| self.mat_to_tensor(e.mat())).transpose()?;
        let pass = self.forward_t(
            xt.as_ref(),
            bt.as_ref(),
            n_speakers,
            n_speakers + 1,
            &mut RunMode::Eval,
            None,
        )?;
        let posteriors = posterior_matrix(&pass.posterior_logits)?;
        let attractors = attractor_set(&pass)?;
        Ok((posteriors, attractors))
    }

    /// Encoder output as a frame sequence (for embedding dumps and
    /// inspection); eval mode.
    pub fn encoded_sequence(
        &self,
        x: Option<&FrameSequence>,
        b: Option<&EmbeddingSequence>,
    ) -> Result<EncodedSequence> {
        let xt = x.map(|f| self.mat_to_tensor(f.mat())).transpose()?;
        let bt = b.map(|e| self.mat_to_tensor(e.mat())).transpose()?;
        self.check_dims(xt.as_ref(), bt.as_ref())?;
        let mut mode = RunMode::Eval;
        let encoded = match self.cfg.variant {
            FusionVariant::Baseline | FusionVariant::EmbeddingAttractors => {
                self.encode(xt.as_ref().expect("checked"), &mut mode)?
            }
            FusionVariant::EmbeddingInput => self.encode(bt.as_ref().expect("checked"), &mut mode)?,
            FusionVariant::ConcatInput => {
                let c = Tensor::cat(&[xt.as_ref().expect("checked"), bt.as_ref().expect("checked")], 1)?;
                self.encode(&c, &mut mode)?
            }
        };
        let shift = x.map(|f| f.frame_shift()).unwrap_or(crate::embeddings::EMBEDDING_HOP_S);
        FrameSequence::new(tensor_to_mat(&encoded)?, shift)
    }

    /// Decode attractors until the existence probability drops below 0.5,
    /// up to `max_speakers`; returns the estimated speaker count.
    pub fn estimate_speakers(
        &self,
        x: Option<&FrameSequence>,
        b: Option<&EmbeddingSequence>,
        max_speakers: usize,
    ) -> Result<usize> {
        let xt = x.map(|f| self.mat_to_tensor(f.mat())).transpose()?;
        let bt = b.map(|e| self.mat_to_tensor(e.mat())).transpose()?;
        let pass = self.forward_t(
            xt.as_ref(),
            bt.as_ref(),
            max_speakers,
            max_speakers + 1,
            &mut RunMode::Eval,
            None,
        )?;
        let probs = sigmoid(&pass.exist_logits)?.to_vec1::<f64>()?;
        Ok(probs.iter().take_while(|&&p| p >= 0.5).count().min(max_speakers))
    }

    pub fn mat_to_tensor(&self, mat: &Mat) -> Result<Tensor> {
        let data: Vec<f64> = mat.data().iter().map(|&v| v as f64).collect();
        Ok(Tensor::from_vec(data, (mat.rows(), mat.cols()), self.store.device())?
            .to_dtype(self.store.dtype())?)
    }
}

/// Clamp into the open interval so downstream contracts hold even when a
/// sigmoid saturates in floating point.
fn clamp_unit(p: f64) -> f64 {
    p.clamp(1e-7, 1.0 - 1e-7)
}

fn tensor_to_mat(t: &Tensor) -> Result<Mat> {
    let (rows, cols) = t.dims2()?;
    let values = t.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    let mut mat = Mat::zeros(rows, cols);
    for (r, row) in values.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            mat.set(r, c, v as f32);
        }
    }
    Ok(mat)
}

pub fn posterior_matrix(posterior_logits: &Tensor) -> Result<PosteriorMatrix> {
    let (t_len, s_len) = posterior_logits.dims2()?;
    let probs = sigmoid(&posterior_logits.to_dtype(DType::F64)?)?.to_vec2::<f64>()?;
    let mut mat = Mat::zeros(t_len, s_len);
    for (t, row) in probs.iter().enumerate() {
        for (s, &p) in row.iter().enumerate() {
            mat.set(t, s, clamp_unit(p) as f32);
        }
    }
    PosteriorMatrix::new(mat)
}

pub fn attractor_set(pass: &ForwardPass) -> Result<AttractorSet> {
    let (s_len, d) = pass.attractors.dims2()?;
    let values = pass.attractors.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    let mut attractors = Mat::zeros(s_len, d);
    for (s, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            attractors.set(s, j, v as f32);
        }
    }
    let existence_probs = sigmoid(&pass.exist_logits.to_dtype(DType::F64)?)?
        .to_vec1::<f64>()?
        .into_iter()
        .map(clamp_unit)
        .collect();
    Ok(AttractorSet { attractors, existence_probs })
}
