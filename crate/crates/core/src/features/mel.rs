use std::sync::Arc;

use echo_nn::Scalar;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftNum, FftPlanner};
use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::dataset::{Waveform, TARGET_SAMPLE_RATE};
use crate::fsutil::sha256_hex;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub window_size: usize,
    pub hop_size: usize,
    pub num_mel_bands: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    /// Power clamp applied before the logarithm.
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            window_size: 1024,
            hop_size: 160,
            num_mel_bands: 128,
            fmin_hz: 0.0,
            fmax_hz: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let nyquist = TARGET_SAMPLE_RATE as f64 / 2.0;
        let bad = |m: String| Err(FeatureError::ConfigInvalid(m));
        if self.hop_size == 0 || self.hop_size > self.window_size {
            return bad(format!(
                "hop_size {} must lie in 1..={}",
                self.hop_size, self.window_size
            ));
        }
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz && self.fmax_hz <= nyquist) {
            return bad(format!(
                "need 0 <= fmin ({}) < fmax ({}) <= {nyquist}",
                self.fmin_hz, self.fmax_hz
            ));
        }
        if self.num_mel_bands == 0 {
            return bad("num_mel_bands must be at least 1".into());
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return bad(format!("log_floor {} must be positive", self.log_floor));
        }
        Ok(())
    }

    /// Short digest of the serialized config.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        sha256_hex(json.as_bytes())[..16].to_string()
    }

    pub fn num_frames(&self, num_samples: usize) -> usize {
        if num_samples < self.window_size {
            0
        } else {
            (num_samples - self.window_size) / self.hop_size + 1
        }
    }

    /// `10 * log10(log_floor)`: the value of silent cells.
    pub fn floor_db(&self) -> f64 {
        10.0 * self.log_floor.log10()
    }
}

/// Slaney-style mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= MIN_LOG_HZ {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        MIN_LOG_HZ * (logstep * (mel - min_log_mel)).exp()
    } else {
        F_SP * mel
    }
}

/// Peak-normalized triangular filters over the `window_size / 2 + 1`
/// one-sided FFT bins.
#[derive(Clone, Debug)]
pub struct MelFilterbank<T> {
    num_bins: usize,
    /// Hz at the `num_mel_bands + 2` triangle corners.
    edges_hz: Vec<f64>,
    /// Per band: first bin with non-zero weight and the weights from there.
    bands: Vec<(usize, Vec<T>)>,
}

impl<T: Scalar> MelFilterbank<T> {
    pub fn new(cfg: &MelConfig) -> Self {
        let num_bins = cfg.window_size / 2 + 1;
        let (lo, hi) = (hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz));
        let steps = cfg.num_mel_bands + 1;
        let edges_hz: Vec<f64> = (0..=steps)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / steps as f64))
            .collect();
        let bin_hz = TARGET_SAMPLE_RATE as f64 / cfg.window_size as f64;
        let bands = (0..cfg.num_mel_bands)
            .map(|m| {
                let (left, center, right) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
                let weights: Vec<(usize, f64)> = (0..num_bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        let rise = (f - left) / (center - left);
                        let fall = (right - f) / (right - center);
                        (k, rise.min(fall).max(0.0))
                    })
                    .filter(|&(_, w)| w > 0.0)
                    .collect();
                match weights.first() {
                    Some(&(start, _)) => (start, weights.iter().map(|&(_, w)| T::lit(w)).collect()),
                    None => (0, Vec::new()),
                }
            })
            .collect();
        Self {
            num_bins,
            edges_hz,
            bands,
        }
    }

    pub fn num_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    /// Frequency at which band `m` peaks.
    pub fn center_hz(&self, m: usize) -> f64 {
        self.edges_hz[m + 1]
    }

    /// Dense `[num_bands × num_bins]` weight matrix.
    pub fn dense(&self) -> Vec<Vec<T>> {
        self.bands
            .iter()
            .map(|(start, w)| {
                let mut row = vec![T::zero(); self.num_bins];
                row[*start..*start + w.len()].copy_from_slice(w);
                row
            })
            .collect()
    }

    pub fn apply(&self, power: &[T], out: &mut [T]) {
        for ((start, w), o) in self.bands.iter().zip(out.iter_mut()) {
            *o = w.iter().zip(&power[*start..]).map(|(&a, &b)| a * b).sum();
        }
    }
}

/// Log-mel power in dB, row-major `[num_bands × num_frames]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMelSpectrogram<T> {
    pub values: Vec<T>,
    pub num_bands: usize,
    pub num_frames: usize,
    pub config_hash: String,
}

impl<T: Scalar> LogMelSpectrogram<T> {
    pub fn get(&self, band: usize, frame: usize) -> T {
        self.values[band * self.num_frames + frame]
    }

    /// Band with the largest value in `frame` (lowest index on ties).
    pub fn argmax_band(&self, frame: usize) -> usize {
        let mut best = 0;
        for m in 1..self.num_bands {
            if self.get(m, frame) > self.get(best, frame) {
                best = m;
            }
        }
        best
    }
}

/// Periodic Hann window.
pub fn hann<T: Scalar>(n: usize) -> Vec<T> {
    (0..n)
        .map(|i| T::lit(0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos()))
        .collect()
}

/// Reusable STFT + filterbank state for one config.
pub struct LogMelExtractor<T: FftNum> {
    cfg: MelConfig,
    fft: Arc<dyn Fft<T>>,
    window: Vec<T>,
    filterbank: MelFilterbank<T>,
    hash: String,
}

impl<T: Scalar + FftNum> LogMelExtractor<T> {
    pub fn new(cfg: &MelConfig) -> Result<Self, FeatureError> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            fft: FftPlanner::new().plan_fft_forward(cfg.window_size),
            window: hann(cfg.window_size),
            filterbank: MelFilterbank::new(cfg),
            hash: cfg.config_hash(),
        })
    }

    pub fn filterbank(&self) -> &MelFilterbank<T> {
        &self.filterbank
    }

    /// Frames start at sample 0 and never extend past the end (no centering).
    pub fn compute(&self, samples: &[T]) -> Result<LogMelSpectrogram<T>, FeatureError> {
        let cfg = &self.cfg;
        let frames = cfg.num_frames(samples.len());
        if frames == 0 {
            return Err(FeatureError::TooShort {
                samples: samples.len(),
                window: cfg.window_size,
            });
        }
        let bands = cfg.num_mel_bands;
        let floor = T::lit(cfg.log_floor);
        let ten = T::lit(10.0);
        let mut values = vec![T::zero(); bands * frames];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); cfg.window_size];
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); self.fft.get_inplace_scratch_len()];
        let mut power = vec![T::zero(); self.filterbank.num_bins()];
        let mut mel = vec![T::zero(); bands];
        for t in 0..frames {
            let frame = &samples[t * cfg.hop_size..t * cfg.hop_size + cfg.window_size];
            for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
                *b = Complex::new(x * w, T::zero());
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            self.filterbank.apply(&power, &mut mel);
            for (m, &e) in mel.iter().enumerate() {
                values[m * frames + t] = ten * e.max(floor).log10();
            }
        }
        Ok(LogMelSpectrogram {
            values,
            num_bands: bands,
            num_frames: frames,
            config_hash: self.hash.clone(),
        })
    }
}

/// One-shot log-mel of a standardized waveform.
pub fn compute_logmel<T: Scalar + FftNum>(
    w: &Waveform,
    cfg: &MelConfig,
) -> Result<LogMelSpectrogram<T>, FeatureError> {
    if w.sample_rate_hz != TARGET_SAMPLE_RATE {
        return Err(FeatureError::ConfigInvalid(format!(
            "waveform is {} Hz, expected {TARGET_SAMPLE_RATE}",
            w.sample_rate_hz
        )));
    }
    let samples: Vec<T> = w.samples.iter().map(|&s| T::lit(s as f64)).collect();
    LogMelExtractor::new(cfg)?.compute(&samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_roundtrips_and_is_linear_below_1k() {
        for hz in [0.0, 250.0, 999.0, 1000.0, 4321.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 15.0).abs() < 1e-12);
        assert!((hz_to_mel(500.0) - 7.5).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(MelConfig::default().validate().is_ok());
        let bad = [
            MelConfig { hop_size: 0, ..Default::default() },
            MelConfig { hop_size: 2048, ..Default::default() },
            MelConfig { fmax_hz: 9000.0, ..Default::default() },
            MelConfig { fmin_hz: 8000.0, ..Default::default() },
            MelConfig { num_mel_bands: 0, ..Default::default() },
            MelConfig { log_floor: 0.0, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(FeatureError::ConfigInvalid(_))), "{c:?}");
        }
    }

    #[test]
    fn frame_count_has_no_padding() {
        let cfg = MelConfig::default();
        assert_eq!(cfg.num_frames(64_000), (64_000 - 1024) / 160 + 1);
        assert_eq!(cfg.num_frames(1024), 1);
        assert_eq!(cfg.num_frames(1023), 0);
    }

    #[test]
    fn filterbank_rows_are_positive_and_peak_at_most_one() {
        let fb = MelFilterbank::<f64>::new(&MelConfig::default());
        for row in fb.dense() {
            let s: f64 = row.iter().sum();
            assert!(s > 0.0);
            assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
    }
}
