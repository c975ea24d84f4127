//! PCM16 mono WAV reading and writing.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Reads a 16-bit little-endian mono WAV at `sample_rate` into samples in [-1, 1).
///
/// Anything else (stereo, float, 8/24-bit, other rates) is rejected rather than converted.
pub fn read_wav(path: impl AsRef<Path>, sample_rate: u32) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let reader = WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let reject = |reason: String| Error::AudioFormat {
        path: path.to_path_buf(),
        reason,
    };
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(reject(format!(
            "expected 16-bit PCM, got {}-bit {:?}",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    if spec.channels != 1 {
        return Err(reject(format!("expected mono, got {} channels", spec.channels)));
    }
    if spec.sample_rate != sample_rate {
        return Err(reject(format!(
            "expected {sample_rate} Hz, got {} Hz",
            spec.sample_rate
        )));
    }
    reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0).map_err(wav_err))
        .collect()
}

/// Writes samples (clipped to [-1, 1]) as 16-bit PCM mono.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in samples {
        writer.write_sample(quantize(s)).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

pub(crate) fn quantize(s: f64) -> i16 {
    (s * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_on_the_pcm_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f64> = (-4..4).map(|k| k as f64 / 8.0).collect();
        write_wav(&path, &samples, 16000).unwrap();
        assert_eq!(read_wav(&path, 16000).unwrap(), samples);
    }

    #[test]
    fn rejects_wrong_rate_and_channels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        write_wav(&path, &[0.0; 16], 8000).unwrap();
        let err = read_wav(&path, 16000).unwrap_err();
        assert!(matches!(err, Error::AudioFormat { .. }), "{err}");

        let stereo = dir.path().join("b.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&stereo, spec).unwrap();
        for _ in 0..8 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        assert!(read_wav(&stereo, 16000).unwrap_err().to_string().contains("mono"));
    }

    #[test]
    fn clips_out_of_range() {
        assert_eq!(quantize(2.0), i16::MAX);
        assert_eq!(quantize(-2.0), i16::MIN);
    }
}
