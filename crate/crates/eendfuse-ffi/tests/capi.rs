//! Exercise the C ABI from Rust: handle life cycles, status codes and error
//! messages, against real files produced by the core library.

use std::ffi::{CStr, CString};
use std::path::Path;

use eendfuse_ffi::*;

fn c(path: &Path) -> CString {
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(ef_last_error_message()).to_string_lossy().into_owned() }
}

#[test]
fn version_is_a_static_string() {
    let v = unsafe { CStr::from_ptr(ef_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn simulate_features_and_embeddings_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let status =
        unsafe { ef_simulate_dataset(c(&data).as_ptr(), 2, 0.344, 5) };
    assert_eq!(status, EfStatus::EfStatusOk, "{}", last_error());
    let wav = data.join("sim00000.wav");
    assert!(wav.exists());

    // Features.
    let mut features: *mut EfFeatures = std::ptr::null_mut();
    let status = unsafe { ef_features_from_wav(c(&wav).as_ptr(), &mut features) };
    assert_eq!(status, EfStatus::EfStatusOk, "{}", last_error());
    let rows = unsafe { ef_features_rows(features) };
    let cols = unsafe { ef_features_cols(features) };
    assert!(rows > 10);
    assert_eq!(cols, 345);
    assert!((unsafe { ef_features_frame_shift(features) } - 0.1).abs() < 1e-9);

    let mut buffer = vec![0.0f32; rows * cols];
    let status =
        unsafe { ef_features_copy_data(features, buffer.as_mut_ptr(), buffer.len()) };
    assert_eq!(status, EfStatus::EfStatusOk);
    assert!(buffer.iter().any(|&v| v != 0.0));

    // Undersized buffer is rejected.
    let mut small = vec![0.0f32; 3];
    let status = unsafe { ef_features_copy_data(features, small.as_mut_ptr(), small.len()) };
    assert_eq!(status, EfStatus::EfStatusShapeMismatch);
    unsafe { ef_features_free(features) };

    // Embeddings: extract, save, reload.
    let mut emb: *mut EfEmbeddings = std::ptr::null_mut();
    let status = unsafe { ef_embeddings_from_wav(c(&wav).as_ptr(), 1.0, 42, &mut emb) };
    assert_eq!(status, EfStatus::EfStatusOk, "{}", last_error());
    assert_eq!(unsafe { ef_embeddings_rows(emb) }, rows);
    assert_eq!(unsafe { ef_embeddings_cols(emb) }, 512);

    let emb_path = tmp.path().join("x.emb");
    let status = unsafe { ef_embeddings_save(emb, c(&emb_path).as_ptr()) };
    assert_eq!(status, EfStatus::EfStatusOk);
    let mut emb2: *mut EfEmbeddings = std::ptr::null_mut();
    let status = unsafe { ef_embeddings_load(c(&emb_path).as_ptr(), &mut emb2) };
    assert_eq!(status, EfStatus::EfStatusOk);
    assert_eq!(unsafe { ef_embeddings_rows(emb2) }, rows);
    unsafe { ef_embeddings_free(emb) };
    unsafe { ef_embeddings_free(emb2) };

    // A bad window size fails with a message.
    let mut bad: *mut EfEmbeddings = std::ptr::null_mut();
    let status = unsafe { ef_embeddings_from_wav(c(&wav).as_ptr(), 1.5, 42, &mut bad) };
    assert_eq!(status, EfStatus::EfStatusInvalidArgument);
    assert!(last_error().contains("window"), "message: {}", last_error());
}

#[test]
fn scoring_identical_rttms_gives_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let status = unsafe { ef_simulate_dataset(c(&data).as_ptr(), 1, 0.2, 9) };
    assert_eq!(status, EfStatus::EfStatusOk);
    let rttm = data.join("sim00000.rttm");

    let mut breakdown = EfDerBreakdown {
        der: -1.0,
        false_alarm_s: -1.0,
        missed_s: -1.0,
        confusion_s: -1.0,
        scored_speech_s: -1.0,
    };
    let status =
        unsafe { ef_score_rttm(c(&rttm).as_ptr(), c(&rttm).as_ptr(), 0.25, &mut breakdown) };
    assert_eq!(status, EfStatus::EfStatusOk, "{}", last_error());
    assert_eq!(breakdown.der, 0.0);
    assert_eq!(breakdown.false_alarm_s, 0.0);
    assert!(breakdown.scored_speech_s > 0.0);

    // Missing files surface as IO errors with a message.
    let missing = CString::new("/nonexistent/x.rttm").unwrap();
    let status =
        unsafe { ef_score_rttm(missing.as_ptr(), c(&rttm).as_ptr(), 0.25, &mut breakdown) };
    assert_eq!(status, EfStatus::EfStatusIo);
    assert!(!last_error().is_empty());
}

#[test]
fn null_pointers_are_rejected_not_crashed() {
    let mut features: *mut EfFeatures = std::ptr::null_mut();
    let status = unsafe { ef_features_from_wav(std::ptr::null(), &mut features) };
    assert_eq!(status, EfStatus::EfStatusNullPointer);

    let status = unsafe { ef_features_from_wav(std::ptr::null(), std::ptr::null_mut()) };
    assert_eq!(status, EfStatus::EfStatusNullPointer);

    assert_eq!(unsafe { ef_features_rows(std::ptr::null()) }, 0);
    assert_eq!(unsafe { ef_segments_len(std::ptr::null()) }, 0);
    unsafe { ef_features_free(std::ptr::null_mut()) };
    unsafe { ef_segments_free(std::ptr::null_mut()) };
}

#[test]
fn model_load_infer_segments_lifecycle() {
    // Train a miniature checkpoint through the library, then drive
    // inference end to end through the C ABI.
    use eendfuse::model::{EncoderConfig, FusionVariant};
    use eendfuse::simulate::{read_dataset, simulate_dataset, MixtureSpec};
    use eendfuse::trainer::{train, EmbeddingSource, TrainConfig};

    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let mut spec = MixtureSpec::new(77);
    spec.max_duration_s = 8.0;
    spec.utterance_range_s = (1.0, 2.0);
    simulate_dataset(&spec, 2, &data).unwrap();
    let entries = read_dataset(&data).unwrap();

    let cfg = TrainConfig {
        variant: FusionVariant::ConcatInput,
        encoder: EncoderConfig { n_blocks: 1, d_model: 16, n_heads: 4, ff_dim: 32, dropout: 0.0 },
        epochs: 1,
        warmup_steps: 10,
        batch_size: 2,
        chunk_frames: 32,
        seed: 3,
        embedding_source: EmbeddingSource::Toy { seed: 5 },
        ..Default::default()
    };
    let outcome = train(&cfg, &entries, None, None, &tmp.path().join("run")).unwrap();

    let mut model: *mut EfModel = std::ptr::null_mut();
    let status = unsafe { ef_model_load(c(&outcome.final_stem).as_ptr(), &mut model) };
    assert_eq!(status, EfStatus::EfStatusOk, "{}", last_error());

    let wav = c(&entries[0].wav);
    let rec = CString::new(entries[0].id.clone()).unwrap();
    let mut segments: *mut EfSegments = std::ptr::null_mut();
    let status = unsafe {
        ef_model_infer_wav(
            model,
            wav.as_ptr(),
            rec.as_ptr(),
            EfVadMode::EfVadNone,
            std::ptr::null(),
            2,
            &mut segments,
        )
    };
    assert_eq!(status, EfStatus::EfStatusOk, "{}", last_error());

    let n = unsafe { ef_segments_len(segments) };
    for i in 0..n {
        let spk = unsafe { CStr::from_ptr(ef_segments_speaker(segments, i)) };
        assert!(spk.to_str().unwrap().starts_with("spk"));
        let rec_id = unsafe { CStr::from_ptr(ef_segments_recording(segments, i)) };
        assert_eq!(rec_id.to_str().unwrap(), entries[0].id);
        assert!(unsafe { ef_segments_onset(segments, i) } >= 0.0);
        assert!(unsafe { ef_segments_duration(segments, i) } > 0.0);
    }
    assert!(unsafe { ef_segments_speaker(segments, n) }.is_null());

    let out_rttm = tmp.path().join("hyp.rttm");
    let status = unsafe { ef_segments_write_rttm(segments, c(&out_rttm).as_ptr()) };
    assert_eq!(status, EfStatus::EfStatusOk);
    assert!(out_rttm.exists());

    // Oracle gating without a reference is an argument error.
    let mut gated: *mut EfSegments = std::ptr::null_mut();
    let status = unsafe {
        ef_model_infer_wav(
            model,
            wav.as_ptr(),
            rec.as_ptr(),
            EfVadMode::EfVadOracle,
            std::ptr::null(),
            2,
            &mut gated,
        )
    };
    assert_eq!(status, EfStatus::EfStatusInvalidArgument);

    unsafe { ef_segments_free(segments) };
    unsafe { ef_model_free(model) };

    // Loading a checkpoint from a missing stem fails cleanly.
    let mut missing: *mut EfModel = std::ptr::null_mut();
    let stem = CString::new("/nonexistent/ckpt").unwrap();
    let status = unsafe { ef_model_load(stem.as_ptr(), &mut missing) };
    assert_ne!(status, EfStatus::EfStatusOk);
}
