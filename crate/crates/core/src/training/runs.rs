use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use echo_nn::Scalar;
use serde::{Deserialize, Serialize};

use super::{evaluate_split, train_stage, Example, Hyperparams, SampleSource, StageOptions, TrainError, TrainHistory};
use crate::dataset::{FoldSplit, Manifest};
use crate::fsutil::atomic_write;
use crate::model::{
    build_model, load_checkpoint, save_checkpoint, swap_head, BackboneSpec, CheckpointMeta, HeadSpec, LoadOptions, Model,
    Stage, CHECKPOINT_FORMAT_VERSION,
};
use crate::ontology::{relabel, Ontology};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RunMode {
    Baseline,
    Echo,
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunMode::Baseline => "BASELINE",
            RunMode::Echo => "ECHO",
        })
    }
}

/// What one fold run needs beyond the data.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub backbone: BackboneSpec,
    pub hyperparams: Hyperparams,
    /// Early stopping for the coarse stage only.
    pub coarse_patience: Option<usize>,
    /// Recorded in checkpoint metadata.
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    pub seed: u64,
    pub mode: RunMode,
    pub test_accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Keyed by stage: `baseline`, or `coarse` and `fine`.
    pub histories: BTreeMap<String, TrainHistory>,
    /// Checkpoint file names inside the run directory, keyed by stage.
    pub checkpoint_refs: BTreeMap<String, String>,
    /// Coarse checkpoint backbone equals the fine model's at epoch 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handoff_bit_exact: Option<bool>,
}

/// Records at `indices` with their fine-label targets.
pub fn fine_examples(manifest: &Manifest, indices: &[usize]) -> Result<Vec<Example>, TrainError> {
    indices
        .iter()
        .map(|&i| {
            let record = manifest.records[i].clone();
            let target = manifest
                .label_index(&record.fine_label)
                .ok_or(TrainError::LabelOutOfRange {
                    index: usize::MAX,
                    classes: manifest.label_set.len(),
                })?;
            Ok(Example { record, target })
        })
        .collect()
}

fn meta(stage: Stage, s: &RunSettings, classes: usize, ontology_hash: Option<String>, h: &TrainHistory) -> CheckpointMeta {
    CheckpointMeta {
        format_version: CHECKPOINT_FORMAT_VERSION,
        stage,
        backbone: s.backbone.clone(),
        num_classes: classes,
        ontology_hash,
        config_hash: s.config_hash.clone(),
        best_epoch: h.best_epoch,
        best_val_loss: h.best().map_or(f64::NAN, |e| e.val_loss),
        dtype: String::new(),
    }
}

fn test_result<T: Scalar>(
    model: &mut Model<T>,
    test: &[Example],
    source: &dyn SampleSource,
    hp: &Hyperparams,
) -> Result<(usize, usize), TrainError> {
    let eval = evaluate_split(model, test, source, hp.batch_size)?;
    let correct = eval.predictions.iter().zip(test).filter(|(p, e)| **p == e.target).count();
    Ok((correct, test.len()))
}

fn write_outputs(dir: &Path, result: &FoldResult) -> Result<(), TrainError> {
    atomic_write(&dir.join("history.json"), &serde_json::to_vec_pretty(&result.histories)?)?;
    atomic_write(&dir.join("result.json"), &serde_json::to_vec_pretty(result)?)?;
    Ok(())
}

fn audit_log(dir: &Path) -> Result<BufWriter<File>, TrainError> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join("batches.log"))?))
}

/// Fine labels only: build, train, test on the held-out fold.
pub fn run_baseline<T: Scalar>(
    manifest: &Manifest,
    split: &FoldSplit,
    source: &dyn SampleSource,
    settings: &RunSettings,
    out_dir: &Path,
) -> Result<FoldResult, TrainError> {
    let parts = split.partition(manifest);
    let train = fine_examples(manifest, &parts.train)?;
    let val = fine_examples(manifest, &parts.validation)?;
    let test = fine_examples(manifest, &parts.test)?;
    let hp = &settings.hyperparams;
    let n = manifest.label_set.len();

    let mut audit = audit_log(out_dir)?;
    let model = build_model::<T>(&settings.backbone, &HeadSpec::new(n), hp.seed)?;
    let opts = StageOptions {
        audit: Some(&mut audit),
        ..StageOptions::new(Stage::Baseline)
    };
    let (mut model, history) = train_stage(model, &train, &val, source, hp, opts)?;
    save_checkpoint(&model, &meta(Stage::Baseline, settings, n, None, &history), &out_dir.join("baseline.ckpt"))?;
    let (correct, total) = test_result(&mut model, &test, source, hp)?;

    let result = FoldResult {
        fold_index: split.test_fold,
        seed: hp.seed,
        mode: RunMode::Baseline,
        test_accuracy: correct as f64 / total as f64,
        correct,
        total,
        histories: BTreeMap::from([("baseline".to_string(), history)]),
        checkpoint_refs: BTreeMap::from([("baseline".to_string(), "baseline.ckpt".to_string())]),
        handoff_bit_exact: None,
    };
    write_outputs(out_dir, &result)?;
    Ok(result)
}

/// Coarse pretext stage on ontology parents, head swap, then fine-tuning on
/// the original labels. The test fold is used only for the final score.
pub fn run_echo<T: Scalar>(
    manifest: &Manifest,
    split: &FoldSplit,
    ontology: &Ontology,
    source: &dyn SampleSource,
    settings: &RunSettings,
    out_dir: &Path,
) -> Result<FoldResult, TrainError> {
    let coarse_manifest = relabel(manifest, ontology)?;
    let parts = split.partition(manifest);
    let hp = &settings.hyperparams;
    let n = manifest.label_set.len();
    let p = coarse_manifest.label_set.len();
    let ontology_hash = ontology.hash();
    let mut audit = audit_log(out_dir)?;

    // Stage 1.
    let coarse_train = fine_examples(&coarse_manifest, &parts.train)?;
    let coarse_val = fine_examples(&coarse_manifest, &parts.validation)?;
    let model = build_model::<T>(&settings.backbone, &HeadSpec::new(p), hp.seed)?;
    let opts = StageOptions {
        patience: settings.coarse_patience,
        audit: Some(&mut audit),
        ..StageOptions::new(Stage::Coarse)
    };
    let (coarse, coarse_history) = train_stage(model, &coarse_train, &coarse_val, source, hp, opts)?;
    let coarse_path = out_dir.join("coarse.ckpt");
    save_checkpoint(
        &coarse,
        &meta(Stage::Coarse, settings, p, Some(ontology_hash.clone()), &coarse_history),
        &coarse_path,
    )?;

    // Stage 2.
    let fine = swap_head(&coarse, n, hp.seed)?;
    let (saved, _) = load_checkpoint::<T>(&coarse_path, &LoadOptions::default())?;
    let handoff = backbone_bits_equal(&saved, &fine);
    if !handoff {
        return Err(TrainError::HandoffMismatch(coarse_path.display().to_string()));
    }
    drop(coarse);
    let train = fine_examples(manifest, &parts.train)?;
    let val = fine_examples(manifest, &parts.validation)?;
    let test = fine_examples(manifest, &parts.test)?;
    let opts = StageOptions {
        audit: Some(&mut audit),
        ..StageOptions::new(Stage::Fine)
    };
    let (mut fine, fine_history) = train_stage(fine, &train, &val, source, hp, opts)?;
    save_checkpoint(
        &fine,
        &meta(Stage::Fine, settings, n, Some(ontology_hash), &fine_history),
        &out_dir.join("fine.ckpt"),
    )?;
    let (correct, total) = test_result(&mut fine, &test, source, hp)?;

    let result = FoldResult {
        fold_index: split.test_fold,
        seed: hp.seed,
        mode: RunMode::Echo,
        test_accuracy: correct as f64 / total as f64,
        correct,
        total,
        histories: BTreeMap::from([
            ("coarse".to_string(), coarse_history),
            ("fine".to_string(), fine_history),
        ]),
        checkpoint_refs: BTreeMap::from([
            ("coarse".to_string(), "coarse.ckpt".to_string()),
            ("fine".to_string(), "fine.ckpt".to_string()),
        ]),
        handoff_bit_exact: Some(handoff),
    };
    write_outputs(out_dir, &result)?;
    Ok(result)
}

/// Byte equality of every `backbone.*` tensor.
pub fn backbone_bits_equal<T: Scalar>(a: &Model<T>, b: &Model<T>) -> bool {
    let sa = a.state_dict();
    let sb = b.state_dict();
    let bytes = |t: &echo_nn::Tensor<T>| {
        let mut v = Vec::with_capacity(t.len() * T::BYTES);
        for &x in t.data() {
            x.write_le(&mut v);
        }
        v
    };
    let keys_a: Vec<_> = sa.keys().filter(|k| k.starts_with("backbone.")).collect();
    let keys_b: Vec<_> = sb.keys().filter(|k| k.starts_with("backbone.")).collect();
    keys_a == keys_b
        && keys_a
            .iter()
            .all(|k| sa[*k].shape() == sb[*k].shape() && bytes(&sa[*k]) == bytes(&sb[*k]))
}
