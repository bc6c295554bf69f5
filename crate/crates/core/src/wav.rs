//! WAV file reading and writing (RIFF, 16-bit PCM or 32-bit float).

use std::path::Path;

use crate::error::{Error, Result};

fn wav_err(e: hound::Error) -> Error {
    Error::Wav(e.to_string())
}

/// Read a mono WAV file as f64 samples in [-1, 1] plus its sample rate.
/// Accepts 16-bit PCM and 32-bit float; anything else is an error.
pub fn read_mono(path: &Path) -> Result<(Vec<f64>, u32)> {
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Wav(format!(
            "{}: expected mono, got {} channels",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (fmt, bits) => {
            return Err(Error::Wav(format!(
                "{}: unsupported format {fmt:?}/{bits} bits (need PCM16 or float32)",
                path.display()
            )))
        }
    };
    if samples.is_empty() {
        return Err(Error::Wav(format!("{}: no samples", path.display())));
    }
    Ok((samples, spec.sample_rate))
}

/// Write a mono signal as 32-bit float WAV.
pub fn write_mono_f32(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in samples {
        writer.write_sample(s as f32).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

/// Write a mono signal as 16-bit PCM WAV (values clipped to [-1, 1]).
pub fn write_mono_pcm16(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip() {
        let dir = std::env::temp_dir().join("sie_wav_test_f32");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.wav");
        let x: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.01).sin() * 0.5).collect();
        write_mono_f32(&path, &x, 16_000).unwrap();
        let (y, fs) = read_mono(&path).unwrap();
        assert_eq!(fs, 16_000);
        assert_eq!(y.len(), x.len());
        for (a, b) in x.iter().zip(y.iter()) {
            assert!((a - b).abs() <= 1e-7, "f32 quantization exceeded");
        }
    }

    #[test]
    fn pcm16_round_trip() {
        let dir = std::env::temp_dir().join("sie_wav_test_pcm");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.wav");
        let x: Vec<f64> = (0..500).map(|i| ((i % 100) as f64 / 100.0) - 0.5).collect();
        write_mono_pcm16(&path, &x, 8_000).unwrap();
        let (y, fs) = read_mono(&path).unwrap();
        assert_eq!(fs, 8_000);
        for (a, b) in x.iter().zip(y.iter()) {
            assert!((a - b).abs() <= 1.0 / 32000.0, "pcm16 quantization exceeded");
        }
    }

    #[test]
    fn missing_file_errors() {
        assert!(read_mono(Path::new("/nonexistent/x.wav")).is_err());
    }
}
