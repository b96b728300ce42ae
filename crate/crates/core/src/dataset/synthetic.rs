//! Generated spectrogram-like images with a two-level class structure:
//! the frequency band (low / high) splits the classes into two super
//! clusters, the temporal envelope (steady / pulsed) splits each cluster.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClipRecord, DatasetError, DatasetKind, Manifest};

pub const SYNTHETIC_LABELS: [&str; 4] = ["low_steady", "low_pulsed", "high_steady", "high_pulsed"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub samples_per_class: usize,
    /// Side length of the square images.
    pub image_size: usize,
    /// Standard deviation of the additive background noise, in dB.
    pub noise_db: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            samples_per_class: 200,
            image_size: 32,
            noise_db: 6.0,
            seed: 0,
        }
    }
}

const FLOOR_DB: f64 = -60.0;
const BAND_DB: f64 = 30.0;

/// Clip ids look like `syn-high_pulsed-0042`; folds cycle 1..=5 within
/// each class so every fold is balanced.
pub fn synthetic_manifest(spec: &SyntheticSpec) -> Result<Manifest, DatasetError> {
    let folds = DatasetKind::Synthetic.num_folds();
    let mut records = Vec::with_capacity(SYNTHETIC_LABELS.len() * spec.samples_per_class);
    for label in SYNTHETIC_LABELS {
        for j in 0..spec.samples_per_class {
            records.push(ClipRecord {
                clip_id: format!("syn-{label}-{j:04}"),
                file_path: Default::default(),
                fine_label: label.to_string(),
                fold_index: j % folds + 1,
                duration_s: 0.0,
            });
        }
    }
    Manifest::new(DatasetKind::Synthetic, records)
}

fn parse_clip_id(clip_id: &str) -> Option<(usize, u64)> {
    let rest = clip_id.strip_prefix("syn-")?;
    let (label, idx) = rest.rsplit_once('-')?;
    let class = SYNTHETIC_LABELS.iter().position(|l| *l == label)?;
    Some((class, idx.parse().ok()?))
}

/// Row-major `[image_size × image_size]` log-power image; row 0 is the
/// lowest frequency. Deterministic in `(spec.seed, clip_id)`.
pub fn synthetic_image(spec: &SyntheticSpec, clip_id: &str) -> Option<Vec<f32>> {
    let (class, index) = parse_clip_id(clip_id)?;
    let s = spec.image_size;
    let seed = spec
        .seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((class as u64) << 40)
        .wrapping_add(index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let high = class >= 2;
    let pulsed = class % 2 == 1;

    let center = if high {
        rng.random_range(0.65..0.85)
    } else {
        rng.random_range(0.15..0.35)
    } * s as f64;
    let half_width = rng.random_range(0.04..0.08) * s as f64 + 0.5;
    let period = rng.random_range(5.0..9.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let level = BAND_DB * rng.random_range(0.8..1.2);
    let noise = Normal::new(0.0, spec.noise_db.max(0.0)).expect("finite noise");

    let mut img = vec![0.0f32; s * s];
    for t in 0..s {
        let envelope = if pulsed {
            let on = (std::f64::consts::TAU * t as f64 / period + phase).sin() > 0.0;
            if on {
                1.0
            } else {
                0.1
            }
        } else {
            1.0
        };
        for f in 0..s {
            let d = (f as f64 - center) / half_width;
            let band = (-0.5 * d * d).exp();
            let v = FLOOR_DB + level * band * envelope + noise.sample(&mut rng);
            img[f * s + t] = v as f32;
        }
    }
    Some(img)
}
