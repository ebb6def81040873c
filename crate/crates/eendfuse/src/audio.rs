//! 8 kHz mono audio: the carrier type and WAV I/O.

use std::path::Path;

use crate::error::{Error, Result};

/// Required sample rate for every signal in the pipeline.
pub const SAMPLE_RATE: u32 = 8000;

/// Mono audio at 8 kHz, samples normalized to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::InvalidAudio(format!(
                "sample rate must be {SAMPLE_RATE} Hz, got {sample_rate}"
            )));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidAudio("samples contain NaN or Inf".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Read a mono 16-bit 8 kHz PCM WAV file.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = hound::WavReader::open(path.as_ref())?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(Error::InvalidAudio(format!(
                "expected mono WAV, got {} channels",
                spec.channels
            )));
        }
        if spec.sample_rate != SAMPLE_RATE {
            return Err(Error::InvalidAudio(format!(
                "expected {SAMPLE_RATE} Hz WAV, got {}",
                spec.sample_rate
            )));
        }
        if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
            return Err(Error::InvalidAudio("expected 16-bit integer PCM".into()));
        }
        let samples = reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        AudioSignal::new(samples, SAMPLE_RATE)
    }

    /// Write as mono 16-bit PCM WAV. Samples are clamped to [-1, 1].
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path.as_ref(), spec)?;
        for &s in &self.samples {
            let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            writer.write_sample(v)?;
        }
        writer.finalize()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_rate() {
        assert!(AudioSignal::new(vec![0.0; 10], 16000).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(AudioSignal::new(vec![f32::NAN], SAMPLE_RATE).is_err());
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let sig: Vec<f32> = (0..800).map(|i| (i as f32 * 0.01).sin() * 0.5).collect();
        let audio = AudioSignal::new(sig, SAMPLE_RATE).unwrap();
        audio.write_wav(&path).unwrap();
        let back = AudioSignal::read_wav(&path).unwrap();
        assert_eq!(back.len(), audio.len());
        for (a, b) in audio.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }
}
