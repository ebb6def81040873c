//! C ABI for the eendfuse diarization library.
//!
//! Conventions:
//! - Every fallible call returns an [`EfStatus`]; `EF_STATUS_OK` is 0.
//! - `ef_last_error_message` returns a thread-local description of the most
//!   recent failure, valid until the next call on the same thread.
//! - Objects are opaque handles created by `ef_*` constructors and released
//!   with the matching `ef_*_free`. Passing null where a handle is expected
//!   yields `EF_STATUS_NULL_POINTER`.
//! - Strings are NUL-terminated UTF-8. Pointers returned by accessors
//!   borrow from the handle and die with it.
//!
//! The generated header lives at `include/eendfuse.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use eendfuse::audio::AudioSignal;
use eendfuse::embeddings::{
    extract_embeddings, load_embeddings, save_embeddings, EmbeddingSequence, ToyEmbedder,
    EMBEDDING_HOP_S,
};
use eendfuse::features::{acoustic_features, FrameSequence};
use eendfuse::metrics::score_der;
use eendfuse::segments::{read_rttm, write_rttm, SegmentList};
use eendfuse::simulate::{simulate_dataset, MixtureSpec};
use eendfuse::trainer::{Checkpoint, InferOptions, SpeakerCount, VadGating};
use eendfuse::Error;

/// Call outcome; 0 is success, anything else is an error whose text is
/// available from `ef_last_error_message`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EfStatus {
    EfStatusOk = 0,
    EfStatusInvalidArgument = 1,
    EfStatusIo = 2,
    EfStatusParse = 3,
    EfStatusShapeMismatch = 4,
    EfStatusCheckpointMismatch = 5,
    EfStatusNumeric = 6,
    EfStatusNullPointer = 7,
    EfStatusPanic = 8,
}

/// DER components in seconds plus the rate itself.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EfDerBreakdown {
    pub der: f64,
    pub false_alarm_s: f64,
    pub missed_s: f64,
    pub confusion_s: f64,
    pub scored_speech_s: f64,
}

/// VAD gating applied to the decoded hypothesis.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EfVadMode {
    EfVadNone = 0,
    EfVadOracle = 1,
    EfVadEnergy = 2,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> EfStatus {
    match err {
        Error::InvalidAudio(_) | Error::InvalidArgument(_) | Error::InvalidSegment(_) => {
            EfStatus::EfStatusInvalidArgument
        }
        Error::ShapeMismatch(_) => EfStatus::EfStatusShapeMismatch,
        Error::Parse { .. } => EfStatus::EfStatusParse,
        Error::CheckpointMismatch(_) => EfStatus::EfStatusCheckpointMismatch,
        Error::NonFiniteLoss { .. } | Error::Tensor(_) => EfStatus::EfStatusNumeric,
        Error::Io(_) | Error::Wav(_) => EfStatus::EfStatusIo,
    }
}

fn run<T>(out: *mut T, f: impl FnOnce() -> Result<T, (EfStatus, String)>) -> EfStatus {
    if out.is_null() {
        set_error("output pointer is null");
        return EfStatus::EfStatusNullPointer;
    }
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(value)) => {
            unsafe { out.write(value) };
            EfStatus::EfStatusOk
        }
        Ok(Err((status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EfStatus::EfStatusPanic
        }
    }
}

fn lib_err(e: Error) -> (EfStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn cstr_arg(ptr: *const c_char, what: &str) -> Result<String, (EfStatus, String)> {
    if ptr.is_null() {
        return Err((EfStatus::EfStatusNullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| (EfStatus::EfStatusInvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn handle_arg<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, (EfStatus, String)> {
    ptr.as_ref().ok_or((EfStatus::EfStatusNullPointer, format!("{what} is null")))
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn ef_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Description of the most recent error on this thread; valid until the
/// next library call on the same thread. Do not free.
#[no_mangle]
pub extern "C" fn ef_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

/// Opaque spliced/subsampled log-Mel feature matrix.
pub struct EfFeatures {
    inner: FrameSequence,
}

/// Compute 345-dim acoustic features (one frame per 100 ms) from a mono
/// 8 kHz 16-bit WAV file.
///
/// # Safety
/// `wav_path` must be a valid NUL-terminated string and `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn ef_features_from_wav(
    wav_path: *const c_char,
    out: *mut *mut EfFeatures,
) -> EfStatus {
    run(out, || {
        let path = cstr_arg(wav_path, "wav_path")?;
        let audio = AudioSignal::read_wav(&path).map_err(lib_err)?;
        let inner = acoustic_features(&audio).map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(EfFeatures { inner })))
    })
}

/// # Safety
/// `features` must be a live handle (or null).
#[no_mangle]
pub unsafe extern "C" fn ef_features_rows(features: *const EfFeatures) -> usize {
    features.as_ref().map_or(0, |f| f.inner.num_frames())
}

/// # Safety
/// `features` must be a live handle (or null).
#[no_mangle]
pub unsafe extern "C" fn ef_features_cols(features: *const EfFeatures) -> usize {
    features.as_ref().map_or(0, |f| f.inner.dim())
}

/// # Safety
/// `features` must be a live handle (or null).
#[no_mangle]
pub unsafe extern "C" fn ef_features_frame_shift(features: *const EfFeatures) -> f64 {
    features.as_ref().map_or(0.0, |f| f.inner.frame_shift())
}

/// Copy the row-major matrix into `buffer` (`buffer_len` must be at least
/// rows * cols).
///
/// # Safety
/// `buffer` must point to at least `buffer_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn ef_features_copy_data(
    features: *const EfFeatures,
    buffer: *mut f32,
    buffer_len: usize,
) -> EfStatus {
    let mut ok = ();
    run(&mut ok, || {
        let f = handle_arg(features, "features")?;
        if buffer.is_null() {
            return Err((EfStatus::EfStatusNullPointer, "buffer is null".into()));
        }
        let data = f.inner.mat().data();
        if buffer_len < data.len() {
            return Err((
                EfStatus::EfStatusShapeMismatch,
                format!("buffer holds {buffer_len} floats, need {}", data.len()),
            ));
        }
        std::ptr::copy_nonoverlapping(data.as_ptr(), buffer, data.len());
        Ok(())
    })
}

/// # Safety
/// `features` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ef_features_free(features: *mut EfFeatures) {
    if !features.is_null() {
        drop(Box::from_raw(features));
    }
}

// ---------------------------------------------------------------------------
// Speaker embeddings
// ---------------------------------------------------------------------------

/// Opaque per-frame speaker embedding matrix.
pub struct EfEmbeddings {
    inner: EmbeddingSequence,
}

/// Extract per-frame embeddings with the deterministic toy provider.
/// `window_s` must be 1, 2 or 3 seconds.
///
/// # Safety
/// `wav_path` must be a valid NUL-terminated string and `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn ef_embeddings_from_wav(
    wav_path: *const c_char,
    window_s: f64,
    toy_seed: u64,
    out: *mut *mut EfEmbeddings,
) -> EfStatus {
    run(out, || {
        let path = cstr_arg(wav_path, "wav_path")?;
        let audio = AudioSignal::read_wav(&path).map_err(lib_err)?;
        let provider = ToyEmbedder::new(toy_seed);
        let inner =
            extract_embeddings(&audio, &provider, window_s, EMBEDDING_HOP_S).map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(EfEmbeddings { inner })))
    })
}

/// Load a `.emb` dump written by this library.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ef_embeddings_load(
    path: *const c_char,
    out: *mut *mut EfEmbeddings,
) -> EfStatus {
    run(out, || {
        let path = cstr_arg(path, "path")?;
        let inner = load_embeddings(&path).map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(EfEmbeddings { inner })))
    })
}

/// # Safety
/// `embeddings` must be a live handle; `path` a valid string.
#[no_mangle]
pub unsafe extern "C" fn ef_embeddings_save(
    embeddings: *const EfEmbeddings,
    path: *const c_char,
) -> EfStatus {
    let mut ok = ();
    run(&mut ok, || {
        let e = handle_arg(embeddings, "embeddings")?;
        let path = cstr_arg(path, "path")?;
        save_embeddings(&e.inner, &path).map_err(lib_err)
    })
}

/// # Safety
/// `embeddings` must be a live handle (or null).
#[no_mangle]
pub unsafe extern "C" fn ef_embeddings_rows(embeddings: *const EfEmbeddings) -> usize {
    embeddings.as_ref().map_or(0, |e| e.inner.num_frames())
}

/// # Safety
/// `embeddings` must be a live handle (or null).
#[no_mangle]
pub unsafe extern "C" fn ef_embeddings_cols(embeddings: *const EfEmbeddings) -> usize {
    embeddings.as_ref().map_or(0, |e| e.inner.dim())
}

/// # Safety
/// `buffer` must point to at least `buffer_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn ef_embeddings_copy_data(
    embeddings: *const EfEmbeddings,
    buffer: *mut f32,
    buffer_len: usize,
) -> EfStatus {
    let mut ok = ();
    run(&mut ok, || {
        let e = handle_arg(embeddings, "embeddings")?;
        if buffer.is_null() {
            return Err((EfStatus::EfStatusNullPointer, "buffer is null".into()));
        }
        let data = e.inner.mat().data();
        if buffer_len < data.len() {
            return Err((
                EfStatus::EfStatusShapeMismatch,
                format!("buffer holds {buffer_len} floats, need {}", data.len()),
            ));
        }
        std::ptr::copy_nonoverlapping(data.as_ptr(), buffer, data.len());
        Ok(())
    })
}

/// # Safety
/// `embeddings` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ef_embeddings_free(embeddings: *mut EfEmbeddings) {
    if !embeddings.is_null() {
        drop(Box::from_raw(embeddings));
    }
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

/// Score a hypothesis RTTM against a reference RTTM with the given collar.
///
/// # Safety
/// Paths must be valid NUL-terminated strings; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ef_score_rttm(
    reference_rttm: *const c_char,
    hypothesis_rttm: *const c_char,
    collar_s: f64,
    out: *mut EfDerBreakdown,
) -> EfStatus {
    run(out, || {
        let ref_path = cstr_arg(reference_rttm, "reference_rttm")?;
        let hyp_path = cstr_arg(hypothesis_rttm, "hypothesis_rttm")?;
        let reference = read_rttm(&ref_path).map_err(lib_err)?;
        let hypothesis = read_rttm(&hyp_path).map_err(lib_err)?;
        let b = score_der(&reference, &hypothesis, collar_s).map_err(lib_err)?;
        Ok(EfDerBreakdown {
            der: b.der,
            false_alarm_s: b.fa,
            missed_s: b.miss,
            confusion_s: b.se,
            scored_speech_s: b.total_speech,
        })
    })
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

/// Generate a simulated 2-speaker dataset (WAV + RTTM + manifest.tsv).
///
/// # Safety
/// `out_dir` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ef_simulate_dataset(
    out_dir: *const c_char,
    count: u64,
    target_overlap: f64,
    seed: u64,
) -> EfStatus {
    let mut ok = ();
    run(&mut ok, || {
        let dir = cstr_arg(out_dir, "out_dir")?;
        let mut spec = MixtureSpec::new(seed);
        spec.target_overlap = target_overlap;
        simulate_dataset(&spec, count, PathBuf::from(dir)).map(|_| ()).map_err(lib_err)
    })
}

// ---------------------------------------------------------------------------
// Model inference
// ---------------------------------------------------------------------------

/// Opaque loaded model (weights + manifest).
pub struct EfModel {
    inner: Checkpoint,
}

/// Load a checkpoint from its stem path (`<stem>.safetensors` +
/// `<stem>.manifest`).
///
/// # Safety
/// `stem` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ef_model_load(stem: *const c_char, out: *mut *mut EfModel) -> EfStatus {
    run(out, || {
        let stem = cstr_arg(stem, "stem")?;
        let inner = Checkpoint::load(Path::new(&stem)).map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(EfModel { inner })))
    })
}

/// Opaque diarization hypothesis.
pub struct EfSegments {
    records: Vec<(CString, CString, f64, f64)>,
    list: SegmentList,
}

/// Diarize one WAV file. `reference_rttm` may be null unless
/// `vad == EF_VAD_ORACLE`; `num_speakers = 0` selects automatic attractor
/// counting.
///
/// # Safety
/// Pointer arguments must be valid as documented above.
#[no_mangle]
pub unsafe extern "C" fn ef_model_infer_wav(
    model: *const EfModel,
    wav_path: *const c_char,
    recording_id: *const c_char,
    vad: EfVadMode,
    reference_rttm: *const c_char,
    num_speakers: usize,
    out: *mut *mut EfSegments,
) -> EfStatus {
    run(out, || {
        let model = handle_arg(model, "model")?;
        let wav = cstr_arg(wav_path, "wav_path")?;
        let rec_id = cstr_arg(recording_id, "recording_id")?;
        let reference = if reference_rttm.is_null() {
            None
        } else {
            Some(PathBuf::from(cstr_arg(reference_rttm, "reference_rttm")?))
        };
        let opts = InferOptions {
            vad: match vad {
                EfVadMode::EfVadNone => VadGating::None,
                EfVadMode::EfVadOracle => VadGating::Oracle,
                EfVadMode::EfVadEnergy => VadGating::Energy,
            },
            speakers: if num_speakers == 0 {
                SpeakerCount::Auto
            } else {
                SpeakerCount::Fixed(num_speakers)
            },
            ..Default::default()
        };
        let report = model
            .inner
            .infer_wav(Path::new(&wav), &rec_id, reference.as_deref(), &opts)
            .map_err(lib_err)?;
        let records = report
            .segments
            .iter()
            .map(|s| {
                (
                    CString::new(s.recording_id.clone()).unwrap_or_default(),
                    CString::new(s.speaker.clone()).unwrap_or_default(),
                    s.onset,
                    s.duration,
                )
            })
            .collect();
        Ok(Box::into_raw(Box::new(EfSegments { records, list: report.segments })))
    })
}

/// # Safety
/// `model` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ef_model_free(model: *mut EfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `segments` must be a live handle (or null).
#[no_mangle]
pub unsafe extern "C" fn ef_segments_len(segments: *const EfSegments) -> usize {
    segments.as_ref().map_or(0, |s| s.records.len())
}

/// Speaker label of segment `index`; null when out of range. Borrowed from
/// the handle.
///
/// # Safety
/// `segments` must be a live handle (or null).
#[no_mangle]
pub unsafe extern "C" fn ef_segments_speaker(
    segments: *const EfSegments,
    index: usize,
) -> *const c_char {
    segments
        .as_ref()
        .and_then(|s| s.records.get(index))
        .map_or(std::ptr::null(), |r| r.1.as_ptr())
}

/// Recording id of segment `index`; null when out of range.
///
/// # Safety
/// `segments` must be a live handle (or null).
#[no_mangle]
pub unsafe extern "C" fn ef_segments_recording(
    segments: *const EfSegments,
    index: usize,
) -> *const c_char {
    segments
        .as_ref()
        .and_then(|s| s.records.get(index))
        .map_or(std::ptr::null(), |r| r.0.as_ptr())
}

/// # Safety
/// `segments` must be a live handle (or null).
#[no_mangle]
pub unsafe extern "C" fn ef_segments_onset(segments: *const EfSegments, index: usize) -> f64 {
    segments.as_ref().and_then(|s| s.records.get(index)).map_or(f64::NAN, |r| r.2)
}

/// # Safety
/// `segments` must be a live handle (or null).
#[no_mangle]
pub unsafe extern "C" fn ef_segments_duration(segments: *const EfSegments, index: usize) -> f64 {
    segments.as_ref().and_then(|s| s.records.get(index)).map_or(f64::NAN, |r| r.3)
}

/// Write the hypothesis as an RTTM file.
///
/// # Safety
/// `segments` must be a live handle; `path` a valid string.
#[no_mangle]
pub unsafe extern "C" fn ef_segments_write_rttm(
    segments: *const EfSegments,
    path: *const c_char,
) -> EfStatus {
    let mut ok = ();
    run(&mut ok, || {
        let s = handle_arg(segments, "segments")?;
        let path = cstr_arg(path, "path")?;
        write_rttm(&s.list, &path).map_err(lib_err)
    })
}

/// # Safety
/// `segments` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ef_segments_free(segments: *mut EfSegments) {
    if !segments.is_null() {
        drop(Box::from_raw(segments));
    }
}
