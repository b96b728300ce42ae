use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;

use super::config::check_p;
use super::ledger::{cell_key, update_ledger, CellStatus, RunLedger};
use super::{ExperimentConfig, ExperimentError};
use crate::dataset::synthetic::{synthetic_manifest, SyntheticSpec};
use crate::dataset::{load_manifest, ClipRecord, DatasetKind, FoldSplit, Manifest};
use crate::evaluation::{aggregate, export_embeddings, AblationCell, AblationGrid, EmbeddingSet, MetricsReport, Tap};
use crate::features::FeaturePipeline;
use crate::fsutil::atomic_write;
use crate::model::{load_checkpoint, LoadOptions, Model, Stage};
use crate::ontology::{fixture_ontology, generate_ontology, ChatProvider, HttpChatProvider, Ontology, OntologyError, OntologySource};
use crate::training::{
    evaluate_split, fine_examples, run_baseline, run_echo, FoldResult, PipelineSource, RunMode, RunSettings, SampleSource, SyntheticSource,
};

/// Knobs that change how, not what, an experiment runs.
#[derive(Clone, Default)]
pub struct RunOptions {
    /// Concurrent (fold, seed) cells; `0` or `1` runs them in order.
    pub jobs: usize,
    /// Never contact a chat provider; use shipped fixtures.
    pub fixture_only: bool,
    /// Hash mismatches on loaded checkpoints are errors.
    pub strict: bool,
    /// Stop after this many cells finish in this invocation.
    pub stop_after: Option<usize>,
    /// Overrides the HTTP provider built from the config.
    pub provider: Option<Arc<dyn ChatProvider>>,
}

/// Manifest and input pipeline for one config.
pub struct PreparedData {
    pub manifest: Manifest,
    pub pipeline: FeaturePipeline,
    pub synthetic: Option<SyntheticSpec>,
}

impl PreparedData {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, ExperimentError> {
        let pipeline = FeaturePipeline::new(&cfg.mel, cfg.normalization, cfg.image_size)?;
        if cfg.dataset == DatasetKind::Synthetic {
            let spec = cfg.synthetic.clone().unwrap_or_default();
            return Ok(Self {
                manifest: synthetic_manifest(&spec)?,
                pipeline,
                synthetic: Some(spec),
            });
        }
        let data = cfg.data.as_ref().ok_or_else(|| ExperimentError::SchemaViolation {
            keys: vec!["data".into()],
            message: format!("{} needs `data.metadata`", cfg.dataset),
        })?;
        Ok(Self {
            manifest: load_manifest(&data.metadata, cfg.dataset)?,
            pipeline: pipeline.with_cache(cfg.cache_root()),
            synthetic: None,
        })
    }

    pub fn source(&self) -> Box<dyn SampleSource + '_> {
        match &self.synthetic {
            Some(spec) => Box::new(SyntheticSource {
                spec,
                pipeline: &self.pipeline,
            }),
            None => Box::new(PipelineSource {
                pipeline: &self.pipeline,
                manifest: &self.manifest,
            }),
        }
    }

    pub fn split(&self, cfg: &ExperimentConfig, fold: usize) -> FoldSplit {
        FoldSplit {
            test_fold: fold,
            train_folds: (1..=self.manifest.num_folds).filter(|&f| f != fold).collect(),
            validation: cfg.validation,
        }
    }
}

/// The ontology for an ECHO config. Once resolved it is stored in the
/// experiment directory and reused, so resumed runs never regenerate it.
pub fn resolve_ontology(
    cfg: &ExperimentConfig,
    labels: &[String],
    exp_dir: &Path,
    opts: &RunOptions,
) -> Result<Option<Ontology>, ExperimentError> {
    let Some(p) = cfg.p else {
        return Ok(None);
    };
    let saved = exp_dir.join("ontology.json");
    let o = if saved.exists() {
        Ontology::load(&saved)?
    } else if let Some(path) = &cfg.ontology_path {
        Ontology::load(path)?
    } else if opts.fixture_only || cfg.ontology_source != OntologySource::Llm {
        fixture_ontology(cfg.dataset, p)?
    } else {
        let llm = cfg.llm.as_ref().ok_or_else(|| ExperimentError::SchemaViolation {
            keys: vec!["llm".into()],
            message: "LLM ontology source needs an `llm` section".into(),
        })?;
        let mut o = match &opts.provider {
            Some(provider) => generate_ontology(provider.as_ref(), labels, p, llm.max_retries)?,
            None => {
                let provider = HttpChatProvider::from_env(&llm.url, &llm.model)?.with_log_dir(exp_dir.join("llm"));
                generate_ontology(&provider, labels, p, llm.max_retries)?
            }
        };
        o.dataset = cfg.dataset.as_str().to_string();
        o
    };
    if o.p != p {
        return Err(OntologyError::OntologyMismatch(format!("ontology has p={}, config asks for p={p}", o.p)).into());
    }
    let report = o.validate(labels);
    if !report.passed() {
        return Err(OntologyError::Invalid(report).into());
    }
    if !saved.exists() {
        o.save(&saved)?;
    }
    Ok(Some(o))
}

fn settings(cfg: &ExperimentConfig, seed: u64) -> RunSettings {
    let mut hyperparams = cfg.hyperparams.clone();
    hyperparams.seed = seed;
    RunSettings {
        backbone: cfg.backbone.clone(),
        hyperparams,
        coarse_patience: cfg.coarse_patience,
        config_hash: cfg.config_hash(),
    }
}

fn run_cell(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    ontology: Option<&Ontology>,
    fold: usize,
    seed: u64,
    dir: &Path,
) -> Result<FoldResult, ExperimentError> {
    let source = data.source();
    let split = data.split(cfg, fold);
    let s = settings(cfg, seed);
    let result = match (cfg.mode, ontology) {
        (RunMode::Echo, Some(o)) => run_echo::<f32>(&data.manifest, &split, o, source.as_ref(), &s, dir)?,
        (RunMode::Echo, None) => {
            return Err(ExperimentError::SchemaViolation {
                keys: vec!["p".into()],
                message: "ECHO mode without an ontology".into(),
            })
        }
        (RunMode::Baseline, _) => run_baseline::<f32>(&data.manifest, &split, source.as_ref(), &s, dir)?,
    };
    Ok(result)
}

fn read_result(path: &Path) -> Result<FoldResult, ExperimentError> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

/// Runs every requested (fold, seed) cell that is not already DONE, then
/// aggregates all DONE cells into a report.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<MetricsReport, ExperimentError> {
    let exp_dir = cfg.experiment_dir();
    std::fs::create_dir_all(&exp_dir)?;
    atomic_write(&exp_dir.join("config.json"), &serde_json::to_vec_pretty(cfg)?)?;
    let data = PreparedData::load(cfg)?;
    let ontology = resolve_ontology(cfg, &data.manifest.label_set, &exp_dir, opts)?;
    let ledger = RunLedger::open(&exp_dir, &cfg.experiment_id(), &cfg.config_hash(), &cfg.folds, &cfg.seeds)?;

    let mut todo = Vec::new();
    for &seed in &cfg.seeds {
        for &fold in &cfg.folds {
            if ledger.status(fold, seed) != Some(CellStatus::Done) {
                todo.push((fold, seed));
            }
        }
    }
    log::info!("{}: {} of {} cells to run", cfg.experiment_id(), todo.len(), cfg.folds.len() * cfg.seeds.len());

    let finished = AtomicUsize::new(0);
    let skipped = AtomicUsize::new(0);
    let work = |&(fold, seed): &(usize, u64)| -> Result<(), ExperimentError> {
        if opts.stop_after.is_some_and(|n| finished.load(Ordering::SeqCst) >= n) {
            skipped.fetch_add(1, Ordering::SeqCst);
            return Ok(());
        }
        update_ledger(&exp_dir, |l| l.transition(fold, seed, CellStatus::Running, None))?;
        let dir = exp_dir.join(cell_key(fold, seed));
        match run_cell(cfg, &data, ontology.as_ref(), fold, seed, &dir) {
            Ok(_) => {
                update_ledger(&exp_dir, |l| l.transition(fold, seed, CellStatus::Done, None))?;
                finished.fetch_add(1, Ordering::SeqCst);
                Ok(())
            }
            Err(e) => {
                log::error!("{} failed: {e}", cell_key(fold, seed));
                update_ledger(&exp_dir, |l| l.transition(fold, seed, CellStatus::Failed, Some(e.to_string())))?;
                Err(e)
            }
        }
    };
    let outcomes: Vec<Result<(), ExperimentError>> = if opts.jobs > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| ExperimentError::Io(std::io::Error::other(e)))?
            .install(|| todo.par_iter().map(work).collect())
    } else {
        todo.iter().map(work).collect()
    };
    if let Some(e) = outcomes.into_iter().find_map(Result::err) {
        return Err(e);
    }
    if skipped.load(Ordering::SeqCst) > 0 {
        return Err(ExperimentError::Interrupted {
            completed: finished.load(Ordering::SeqCst),
            remaining: skipped.load(Ordering::SeqCst),
        });
    }

    let mut results = Vec::new();
    for &seed in &cfg.seeds {
        for &fold in &cfg.folds {
            results.push(read_result(&exp_dir.join(cell_key(fold, seed)).join("result.json"))?);
        }
    }
    let folds: BTreeSet<usize> = cfg.folds.iter().copied().collect();
    let report = aggregate(cfg.dataset, cfg.mode, cfg.backbone.name, cfg.p, &results, &folds)?;
    write_report(&exp_dir, &report)?;
    Ok(report)
}

pub fn write_report(dir: &Path, report: &MetricsReport) -> Result<(), ExperimentError> {
    atomic_write(&dir.join("report.json"), &serde_json::to_vec_pretty(report)?)?;
    atomic_write(&dir.join("report.md"), report.to_markdown().as_bytes())?;
    Ok(())
}

/// Runs the config once per pretext size and renders the grid. Every `p`
/// is checked before any training starts; failed cells are marked in the
/// grid.
pub fn run_ablation(base: &ExperimentConfig, p_values: &[usize], opts: &RunOptions) -> Result<AblationGrid, ExperimentError> {
    if p_values.is_empty() {
        return Err(ExperimentError::SchemaViolation {
            keys: vec!["p".into()],
            message: "no p values given".into(),
        });
    }
    let configs = p_values
        .iter()
        .map(|&p| {
            check_p(base.dataset, p)?;
            base.with_p(p)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut cells = Vec::new();
    for (cfg, &p) in configs.iter().zip(p_values) {
        let (mean, error) = match run_experiment(cfg, opts) {
            Ok(r) => (Some(r.mean_accuracy_pct), None),
            Err(e) => {
                log::error!("p={p}: {e}");
                (None, Some(e.to_string()))
            }
        };
        cells.push(AblationCell {
            backbone: base.backbone.name,
            dataset: base.dataset,
            p,
            mean_accuracy_pct: mean,
            error,
        });
    }
    let grid = AblationGrid::new(cells);
    let dir = ablation_dir(base);
    atomic_write(&dir.join("ablation.json"), &serde_json::to_vec_pretty(&grid)?)?;
    atomic_write(&dir.join("ablation.md"), grid.to_markdown().as_bytes())?;
    Ok(grid)
}

pub fn ablation_dir(base: &ExperimentConfig) -> PathBuf {
    base.run_dir.join(format!("{}-ablation", base.experiment_id()))
}

/// Loads a finished cell's checkpoint for a stage.
pub fn load_cell_model(
    cfg: &ExperimentConfig,
    fold: usize,
    seed: u64,
    stage: Stage,
    strict: bool,
) -> Result<Model<f32>, ExperimentError> {
    let path = cfg
        .experiment_dir()
        .join(cell_key(fold, seed))
        .join(format!("{}.ckpt", stage.as_str()));
    let opts = LoadOptions {
        expected_config_hash: Some(cfg.config_hash()),
        expected_ontology_hash: None,
        strict,
    };
    Ok(load_checkpoint::<f32>(&path, &opts)?.0)
}

/// The checkpoint whose head predicts fine labels.
pub fn final_stage(cfg: &ExperimentConfig) -> Stage {
    match cfg.mode {
        RunMode::Echo => Stage::Fine,
        RunMode::Baseline => Stage::Baseline,
    }
}

/// Re-scores a finished cell's final checkpoint on its test fold.
pub fn evaluate_cell(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    fold: usize,
    seed: u64,
    strict: bool,
) -> Result<FoldResult, ExperimentError> {
    let dir = cfg.experiment_dir().join(cell_key(fold, seed));
    let mut result = read_result(&dir.join("result.json"))?;
    let mut model = load_cell_model(cfg, fold, seed, final_stage(cfg), strict)?;
    let parts = data.split(cfg, fold).partition(&data.manifest);
    let test = fine_examples(&data.manifest, &parts.test)?;
    let source = data.source();
    let eval = evaluate_split(&mut model, &test, source.as_ref(), cfg.hyperparams.batch_size)?;
    let correct = eval.predictions.iter().zip(&test).filter(|(p, e)| **p == e.target).count();
    result.correct = correct;
    result.total = test.len();
    result.test_accuracy = correct as f64 / test.len() as f64;
    Ok(result)
}

/// Embeddings of a cell's test fold (or every record) from its final
/// checkpoint.
pub fn cell_embeddings(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    fold: usize,
    seed: u64,
    tap: Tap,
    all_records: bool,
    strict: bool,
) -> Result<EmbeddingSet, ExperimentError> {
    let mut model = load_cell_model(cfg, fold, seed, final_stage(cfg), strict)?;
    let records: Vec<ClipRecord> = if all_records {
        data.manifest.records.clone()
    } else {
        let parts = data.split(cfg, fold).partition(&data.manifest);
        parts.test.iter().map(|&i| data.manifest.records[i].clone()).collect()
    };
    let source = data.source();
    Ok(export_embeddings(&mut model, &records, source.as_ref(), tap, cfg.hyperparams.batch_size)?)
}
