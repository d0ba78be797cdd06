//! WAV input/output: PCM 16-bit and 32-bit float, interleaved channels.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::stft::MultichannelWaveform;

fn wav_err(path: &Path, e: hound::Error) -> Error {
    Error::Wav {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Read a WAV file into a channel-major f64 waveform. PCM16 samples are
/// scaled by 1/32768; float samples are taken as-is.
pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelWaveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            message: "zero channels".into(),
        });
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32_768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (fmt, bits) => {
            return Err(Error::Wav {
                path: path.to_path_buf(),
                message: format!("unsupported format {fmt:?}/{bits} bits (need PCM16 or f32)"),
            })
        }
    };

    let frames = interleaved.len() / channels;
    let mut samples = Array2::zeros((channels, frames));
    for (i, &v) in interleaved.iter().enumerate() {
        samples[(i % channels, i / channels)] = v;
    }
    MultichannelWaveform::new(samples, spec.sample_rate)
}

/// Read a WAV file, failing if its sample rate differs from `expected_rate`.
pub fn read_wav_expecting_rate(
    path: impl AsRef<Path>,
    expected_rate: u32,
) -> Result<MultichannelWaveform> {
    let path = path.as_ref();
    let wave = read_wav(path)?;
    if wave.sample_rate_hz != expected_rate {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            message: format!(
                "sample rate {} does not match configured {}",
                wave.sample_rate_hz, expected_rate
            ),
        });
    }
    Ok(wave)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

/// Write a waveform as interleaved WAV. Float32 is lossless for our pipeline
/// outputs; PCM16 clamps to [-1, 1).
pub fn write_wav(
    path: impl AsRef<Path>,
    wave: &MultichannelWaveform,
    format: WavFormat,
) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: wave.num_channels() as u16,
        sample_rate: wave.sample_rate_hz,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => hound::SampleFormat::Int,
            WavFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for i in 0..wave.len_samples() {
        for c in 0..wave.num_channels() {
            let v = wave.samples[(c, i)];
            match format {
                WavFormat::Pcm16 => {
                    let q = (v * 32_768.0).round().clamp(-32_768.0, 32_767.0) as i16;
                    writer.write_sample(q).map_err(|e| wav_err(path, e))?;
                }
                WavFormat::Float32 => {
                    writer
                        .write_sample(v as f32)
                        .map_err(|e| wav_err(path, e))?;
                }
            }
        }
    }
    writer.finalize().map_err(|e| wav_err(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_preserves_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let mut samples = Array2::zeros((2, 100));
        for i in 0..100 {
            samples[(0, i)] = (i as f64 / 50.0).sin();
            samples[(1, i)] = (i as f64 / 30.0).cos();
        }
        let wave = MultichannelWaveform::new(samples, 16_000).unwrap();
        write_wav(&path, &wave, WavFormat::Float32).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.num_channels(), 2);
        for i in 0..100 {
            for c in 0..2 {
                let orig = wave.samples[(c, i)] as f32 as f64;
                assert_eq!(back.samples[(c, i)], orig);
            }
        }
    }

    #[test]
    fn pcm16_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let wave =
            MultichannelWaveform::from_mono((0..64).map(|i| i as f64 / 100.0).collect(), 8_000)
                .unwrap();
        write_wav(&path, &wave, WavFormat::Pcm16).unwrap();
        let back = read_wav(&path).unwrap();
        for i in 0..64 {
            assert!((back.samples[(0, i)] - wave.samples[(0, i)]).abs() < 1.0 / 32_768.0);
        }
    }

    #[test]
    fn rate_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let wave = MultichannelWaveform::from_mono(vec![0.0; 32], 8_000).unwrap();
        write_wav(&path, &wave, WavFormat::Float32).unwrap();
        assert!(read_wav_expecting_rate(&path, 16_000).is_err());
        assert!(read_wav_expecting_rate(&path, 8_000).is_ok());
    }
}
