use echo_core::dataset::{
    standardize, write_wav_f32, ClipRecord, DatasetKind, Manifest, SincResampler, WaveCache, Waveform,
    TARGET_SAMPLE_RATE,
};
use echo_core::features::{
    compute_logmel, resize_to_square, to_feature_tensor, FeaturePipeline, LogMelSpectrogram, MelConfig,
    MelFilterbank, Normalization,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent reference: direct evaluation of a Blackman-windowed sinc
/// at each output instant, twice as wide as the resampler under test.
fn reference_resample(x: &[f32], from: u32, to: u32, out_len: usize) -> Vec<f64> {
    let ratio = from as f64 / to as f64;
    let fc = 0.5 * 0.95 * (1.0 / ratio).min(1.0);
    let half = 64.0 / (2.0 * fc);
    (0..out_len)
        .map(|n| {
            let t = n as f64 * ratio;
            let lo = ((t - half).ceil().max(0.0)) as usize;
            let hi = ((t + half).floor() as usize).min(x.len().saturating_sub(1));
            let mut acc = 0.0;
            for (k, &xk) in x.iter().enumerate().take(hi + 1).skip(lo) {
                let tau = t - k as f64;
                let arg = 2.0 * fc * tau;
                let sinc = if arg == 0.0 {
                    1.0
                } else {
                    (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg)
                };
                let u = (tau + half) / (2.0 * half);
                let w = 0.42 - 0.5 * (std::f64::consts::TAU * u).cos() + 0.08 * (2.0 * std::f64::consts::TAU * u).cos();
                acc += 2.0 * fc * sinc * w * xk as f64;
            }
            acc
        })
        .collect()
}

/// Sum of sines with raised-cosine fades so both ends are silent.
fn faded_tones(rng: &mut ChaCha8Rng, rate: u32, seconds: f64, max_hz: f64) -> Vec<f32> {
    let n = (rate as f64 * seconds) as usize;
    let tones: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(50.0..max_hz),
                rng.random_range(0.05..0.2),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let fade = (0.05 * rate as f64) as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / rate as f64;
            let mut v: f64 = tones
                .iter()
                .map(|&(f, a, p)| a * (std::f64::consts::TAU * f * t + p).sin())
                .sum();
            let edge = i.min(n - 1 - i);
            if edge < fade {
                v *= 0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / fade as f64).cos();
            }
            v as f32
        })
        .collect()
}

#[test]
fn resampler_matches_independent_reference_on_ten_clips() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rates = [44_100, 44_100, 44_100, 22_050, 48_000, 32_000, 11_025, 8_000, 44_100, 96_000];
    for (i, &rate) in rates.iter().enumerate() {
        let max_hz = 0.9 * 0.95 * 0.5 * rate.min(TARGET_SAMPLE_RATE) as f64;
        let x = faded_tones(&mut rng, rate, 5.0, max_hz);
        let ours = SincResampler::new(rate, TARGET_SAMPLE_RATE).process(&x);
        let theirs = reference_resample(&x, rate, TARGET_SAMPLE_RATE, ours.len());
        let worst = ours
            .iter()
            .zip(&theirs)
            .map(|(&a, &b)| (a as f64 - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-3, "clip {i} at {rate} Hz: max |diff| = {worst:e}");
    }
}

#[test]
fn resampled_tones_match_analytic_values() {
    let rate = 44_100;
    let f = 1234.5;
    let x: Vec<f32> = (0..rate)
        .map(|i| (0.5 * (std::f64::consts::TAU * f * i as f64 / rate as f64).sin()) as f32)
        .collect();
    let y = SincResampler::new(rate, TARGET_SAMPLE_RATE).process(&x);
    // Interior only: the abrupt start and end ring for the kernel length.
    for (n, &v) in y.iter().enumerate().skip(400).take(15_000) {
        let want = 0.5 * (std::f64::consts::TAU * f * n as f64 / TARGET_SAMPLE_RATE as f64).sin();
        assert!((v as f64 - want).abs() < 1e-3, "n={n}");
    }
}

fn esc_manifest(records: Vec<ClipRecord>) -> Manifest {
    Manifest::new(DatasetKind::Esc50, records).unwrap()
}

#[test]
fn esc_clip_at_44k1_standardizes_to_80000_samples_and_caches_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = faded_tones(&mut rng, 44_100, 5.0, 6000.0);
    let stereo: Vec<f32> = x.iter().flat_map(|&v| [v, v]).collect();
    let path = dir.path().join("1-1-A-0.wav");
    write_wav_f32(&path, &stereo, 2, 44_100).unwrap();
    let record = ClipRecord {
        clip_id: "1-1-A-0".into(),
        file_path: path,
        fine_label: "dog".into(),
        fold_index: 1,
        duration_s: 5.0,
    };
    let m = esc_manifest(vec![record.clone()]);
    let direct = standardize(&record, &m).unwrap();
    assert_eq!(direct.samples.len(), 80_000);
    let cache = WaveCache::new(dir.path().join("cache"));
    let miss = cache.standardize(&record, &m).unwrap();
    let hit = cache.standardize(&record, &m).unwrap();
    let bits = |w: &Waveform| w.samples.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&direct), bits(&miss));
    assert_eq!(bits(&miss), bits(&hit));
}

/// Oracle filterbank built from the written-out formulas, bin by bin.
fn oracle_filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let to_mel = |f: f64| {
        if f < 1000.0 {
            3.0 * f / 200.0
        } else {
            15.0 + 27.0 * (f / 1000.0).ln() / 6.4f64.ln()
        }
    };
    let to_hz = |m: f64| {
        if m < 15.0 {
            200.0 * m / 3.0
        } else {
            1000.0 * 6.4f64.powf((m - 15.0) / 27.0)
        }
    };
    let n_bins = cfg.window_size / 2 + 1;
    let m_lo = to_mel(cfg.fmin_hz);
    let m_hi = to_mel(cfg.fmax_hz);
    let pts: Vec<f64> = (0..cfg.num_mel_bands + 2)
        .map(|i| to_hz(m_lo + i as f64 * (m_hi - m_lo) / (cfg.num_mel_bands + 1) as f64))
        .collect();
    (0..cfg.num_mel_bands)
        .map(|m| {
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * 16_000.0 / cfg.window_size as f64;
                    if f <= pts[m] || f >= pts[m + 2] {
                        0.0
                    } else if f <= pts[m + 1] {
                        (f - pts[m]) / (pts[m + 1] - pts[m])
                    } else {
                        (pts[m + 2] - f) / (pts[m + 2] - pts[m + 1])
                    }
                })
                .collect()
        })
        .collect()
}

/// Naive DFT power spectrum with a periodic Hann window, then the oracle
/// filterbank and dB conversion.
fn oracle_logmel(x: &[f64], cfg: &MelConfig) -> Vec<Vec<f64>> {
    let fb = oracle_filterbank(cfg);
    let n = cfg.window_size;
    let frames = (x.len() - n) / cfg.hop_size + 1;
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect();
    let table: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let a = -2.0 * std::f64::consts::PI * j as f64 / n as f64;
            (a.cos(), a.sin())
        })
        .collect();
    let mut out = vec![vec![0.0; frames]; cfg.num_mel_bands];
    for t in 0..frames {
        let seg: Vec<f64> = (0..n).map(|i| x[t * cfg.hop_size + i] * window[i]).collect();
        let power: Vec<f64> = (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &s) in seg.iter().enumerate() {
                    let (c, sn) = table[(k * i) % n];
                    re += s * c;
                    im += s * sn;
                }
                re * re + im * im
            })
            .collect();
        for (m, row) in fb.iter().enumerate() {
            let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
            out[m][t] = 10.0 * e.max(cfg.log_floor).log10();
        }
    }
    out
}

fn waveform(samples: Vec<f32>) -> Waveform {
    Waveform {
        samples,
        sample_rate_hz: TARGET_SAMPLE_RATE,
        source_clip_id: "w".into(),
    }
}

#[test]
fn white_noise_logmel_matches_naive_dft_oracle() {
    let cfg = MelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f32> = (0..8_000).map(|_| rng.random_range(-0.5f32..0.5)).collect();
    let ours: LogMelSpectrogram<f64> = compute_logmel(&waveform(x.clone()), &cfg).unwrap();
    let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let want = oracle_logmel(&xf, &cfg);
    assert_eq!(ours.num_frames, want[0].len());
    let mut worst = 0.0f64;
    for (m, row) in want.iter().enumerate() {
        for (t, &w) in row.iter().enumerate() {
            worst = worst.max((ours.get(m, t) - w).abs());
        }
    }
    assert!(worst <= 1e-3, "max |diff| = {worst:e} dB");
}

#[test]
fn filterbank_matches_oracle_weights() {
    let cfg = MelConfig::default();
    let ours = MelFilterbank::<f64>::new(&cfg).dense();
    let want = oracle_filterbank(&cfg);
    for (a, b) in ours.iter().zip(&want) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn every_interior_fft_bin_feeds_some_band() {
    let cfg = MelConfig::default();
    let fb = MelFilterbank::<f64>::new(&cfg).dense();
    let bin_hz = 16_000.0 / cfg.window_size as f64;
    for k in 0..=cfg.window_size / 2 {
        let f = k as f64 * bin_hz;
        if f > cfg.fmin_hz && f < cfg.fmax_hz {
            assert!(fb.iter().any(|row| row[k] > 0.0), "bin {k} ({f} Hz) unused");
        }
    }
}

#[test]
fn one_khz_sine_peaks_in_the_band_centered_nearest_1k() {
    let cfg = MelConfig::default();
    let x: Vec<f32> = (0..64_000)
        .map(|i| (0.5 * (std::f64::consts::TAU * 1000.0 * i as f64 / 16_000.0).sin()) as f32)
        .collect();
    let spec: LogMelSpectrogram<f32> = compute_logmel(&waveform(x), &cfg).unwrap();
    let fb = MelFilterbank::<f64>::new(&cfg);
    let expected = (0..fb.num_bands())
        .min_by(|&a, &b| {
            (fb.center_hz(a) - 1000.0)
                .abs()
                .partial_cmp(&(fb.center_hz(b) - 1000.0).abs())
                .unwrap()
        })
        .unwrap();
    for t in 0..spec.num_frames {
        assert_eq!(spec.argmax_band(t), expected, "frame {t}");
    }
}

#[test]
fn silence_is_the_constant_floor() {
    let cfg = MelConfig::default();
    let spec: LogMelSpectrogram<f32> = compute_logmel(&waveform(vec![0.0; 64_000]), &cfg).unwrap();
    assert_eq!(spec.num_bands, 128);
    assert_eq!(spec.num_frames, 394);
    assert!(spec.values.iter().all(|&v| v == -100.0));
}

#[test]
fn ramp_corners_survive_resize() {
    let (rows, cols) = (64, 401);
    let src: Vec<f64> = (0..rows * cols)
        .map(|i| (i / cols) as f64 * 3.0 - (i % cols) as f64 * 0.25)
        .collect();
    let out = resize_to_square(&src, rows, cols, 224);
    assert_eq!(out[0], src[0]);
    assert_eq!(out[223], src[cols - 1]);
    assert_eq!(out[223 * 224], src[(rows - 1) * cols]);
    assert_eq!(out[224 * 224 - 1], src[rows * cols - 1]);
}

#[test]
fn pipeline_output_is_deterministic() {
    let p = FeaturePipeline::new(&MelConfig::default(), Normalization::Minmax, 224).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = waveform((0..64_000).map(|_| rng.random_range(-1.0f32..1.0)).collect());
    let a = p.from_waveform(&w).unwrap();
    let b = p.from_waveform(&w).unwrap();
    assert_eq!(a.values.shape(), &[3, 224, 224]);
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resize_output_stays_in_input_range(
        rows in 1usize..12,
        cols in 1usize..12,
        out_r in 1usize..20,
        out_c in 1usize..20,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src: Vec<f32> = (0..rows * cols).map(|_| rng.random_range(-90.0f32..10.0)).collect();
        let lo = src.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = src.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let out = echo_core::features::resize_bilinear(&src, rows, cols, out_r, out_c);
        prop_assert!(out.iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn feature_channels_are_identical_and_in_range(
        seed in any::<u64>(),
        zscore in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m: Vec<f64> = (0..64).map(|_| rng.random_range(-80.0..0.0)).collect();
        let scheme = if zscore { Normalization::Zscore } else { Normalization::Minmax };
        let t = to_feature_tensor(&m, 8, scheme, "x");
        prop_assert_eq!(t.values.outer(0), t.values.outer(1));
        prop_assert_eq!(t.values.outer(1), t.values.outer(2));
        if !zscore {
            prop_assert!(t.values.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
