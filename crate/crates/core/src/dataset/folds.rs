use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Manifest;

/// Seeded, label-stratified hold-out drawn from the training folds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationSelector {
    pub seed: u64,
    pub fraction: f64,
}

impl Default for ValidationSelector {
    fn default() -> Self {
        Self {
            seed: 0,
            fraction: 0.1,
        }
    }
}

/// Leave-one-fold-out split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub test_fold: usize,
    pub train_folds: BTreeSet<usize>,
    pub validation: ValidationSelector,
}

/// Record indices (into `Manifest::records`) of the three disjoint parts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn resolve_folds(manifest: &Manifest) -> Vec<FoldSplit> {
    resolve_folds_with(manifest, ValidationSelector::default())
}

pub fn resolve_folds_with(manifest: &Manifest, validation: ValidationSelector) -> Vec<FoldSplit> {
    (1..=manifest.num_folds)
        .map(|k| FoldSplit {
            test_fold: k,
            train_folds: (1..=manifest.num_folds).filter(|&f| f != k).collect(),
            validation,
        })
        .collect()
}

impl FoldSplit {
    /// Partitions the manifest. Within every label, `round(fraction * count)`
    /// training-fold records (at least one when the label has two or more)
    /// move to validation; the shuffle depends only on the selector seed,
    /// the test fold, and the label.
    pub fn partition(&self, manifest: &Manifest) -> SplitIndices {
        let labels = manifest.label_indices();
        let mut out = SplitIndices::default();
        let mut per_label: Vec<Vec<usize>> = vec![Vec::new(); manifest.label_set.len()];
        for (i, r) in manifest.records.iter().enumerate() {
            if r.fold_index == self.test_fold {
                out.test.push(i);
            } else if self.train_folds.contains(&r.fold_index) {
                per_label[labels[i]].push(i);
            }
        }
        for (label, mut members) in per_label.into_iter().enumerate() {
            let n = members.len();
            let mut take = (self.validation.fraction * n as f64).round() as usize;
            if take == 0 && n >= 2 && self.validation.fraction > 0.0 {
                take = 1;
            }
            take = take.min(n.saturating_sub(1));
            let seed = self
                .validation
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add((self.test_fold as u64) << 32)
                .wrapping_add(label as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            members.shuffle(&mut rng);
            out.validation.extend_from_slice(&members[..take]);
            out.train.extend_from_slice(&members[take..]);
        }
        out.train.sort_unstable();
        out.validation.sort_unstable();
        out
    }
}
