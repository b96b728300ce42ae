use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::DatasetError;

/// PCM audio scaled to `[-1, 1]`, channels interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedAudio {
    pub samples: Vec<f32>,
    pub channels: usize,
    pub sample_rate_hz: u32,
}

impl DecodedAudio {
    /// Channel average per frame.
    pub fn to_mono(&self) -> Vec<f32> {
        if self.channels == 1 {
            return self.samples.clone();
        }
        let inv = 1.0 / self.channels as f32;
        self.samples
            .chunks_exact(self.channels)
            .map(|frame| frame.iter().sum::<f32>() * inv)
            .collect()
    }
}

fn classify(path: &Path, err: hound::Error) -> DatasetError {
    match err {
        hound::Error::Unsupported | hound::Error::InvalidSampleFormat => DatasetError::UnsupportedEncoding {
            path: path.to_path_buf(),
            message: err.to_string(),
        },
        hound::Error::FormatError(msg) if msg.contains("format") || msg.contains("compress") => {
            DatasetError::UnsupportedEncoding {
                path: path.to_path_buf(),
                message: msg.to_string(),
            }
        }
        other => DatasetError::DecodeFailure {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Decodes 8/16/24/32-bit integer or 32-bit float PCM WAV.
pub fn decode_wav(path: &Path) -> Result<DecodedAudio, DatasetError> {
    let reader = WavReader::open(path).map_err(|e| classify(path, e))?;
    let spec = reader.spec();
    let samples: Vec<f32> = match spec.sample_format {
        SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(DatasetError::UnsupportedEncoding {
                    path: path.to_path_buf(),
                    message: format!("{}-bit float PCM", spec.bits_per_sample),
                });
            }
            reader
                .into_samples::<f32>()
                .collect::<Result<_, _>>()
                .map_err(|e| classify(path, e))?
        }
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 * scale) as f32))
                .collect::<Result<_, _>>()
                .map_err(|e| classify(path, e))?
        }
    };
    if spec.channels == 0 {
        return Err(DatasetError::DecodeFailure {
            path: path.to_path_buf(),
            message: "zero channels".into(),
        });
    }
    Ok(DecodedAudio {
        samples,
        channels: spec.channels as usize,
        sample_rate_hz: spec.sample_rate,
    })
}

/// Writes interleaved samples as 16-bit PCM (clipped to `[-1, 1]`).
pub fn write_wav_i16(path: &Path, samples: &[f32], channels: u16, sample_rate_hz: u32) -> Result<(), DatasetError> {
    let spec = WavSpec {
        channels,
        sample_rate: sample_rate_hz,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| classify(path, e))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(|e| classify(path, e))?;
    }
    w.finalize().map_err(|e| classify(path, e))
}

/// Writes interleaved samples as 32-bit float PCM.
pub fn write_wav_f32(path: &Path, samples: &[f32], channels: u16, sample_rate_hz: u32) -> Result<(), DatasetError> {
    let spec = WavSpec {
        channels,
        sample_rate: sample_rate_hz,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| classify(path, e))?;
    for &s in samples {
        w.write_sample(s).map_err(|e| classify(path, e))?;
    }
    w.finalize().map_err(|e| classify(path, e))
}
