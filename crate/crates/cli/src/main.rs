use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use echo_core::dataset::{load_manifest, DatasetKind, WaveCache};
use echo_core::evaluation::{
    aggregate, compare, tsne_embeddings, write_tsne_csv, EmbeddingSet, MetricsReport, Tap, TsneParams,
};
use echo_core::experiment::{
    cell_embeddings, evaluate_cell, run_ablation, run_experiment, write_report, CellStatus, ExperimentConfig,
    ExperimentError, PreparedData, RunLedger, RunOptions,
};
use echo_core::ontology::{
    fixture_ontology, generate_ontology, sqrt_heuristic, HttpChatProvider, Ontology, OntologyError,
};

#[derive(Parser)]
#[command(name = "echo", version, about = "Ontology-guided coarse-to-fine training for sound classification")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Number of (fold, seed) cells or clips processed concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Use shipped ontology fixtures; never call a chat endpoint.
    #[arg(long, global = true)]
    fixture_only: bool,
    /// Treat checkpoint hash mismatches as errors.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Standardize every clip of a dataset into the waveform cache.
    Ingest {
        #[arg(long)]
        dataset: Option<DatasetKind>,
        /// Dataset root (contains `metadata/UrbanSound8K.csv` or `meta/esc50.csv`).
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Generate or validate a label ontology.
    Ontology {
        #[command(subcommand)]
        action: OntologyCommand,
    },
    /// Train every requested fold × seed cell; finished cells are skipped.
    Train {
        /// Stop after this many cells finish (the rest stay pending).
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Re-score finished cells from their checkpoints.
    Evaluate,
    /// Train the config once per parent-class count.
    Ablate {
        /// Comma-separated counts; `sqrt` is accepted.
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<String>,
    },
    /// Write embeddings of one cell's final checkpoint as CSV.
    ExportEmbeddings {
        #[arg(long)]
        fold: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = TapArg::Head256)]
        tap: TapArg,
        /// Embed every record instead of the test fold only.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project an embedding CSV to 2-D.
    Tsne {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a report, or the signed difference of two.
    Report {
        /// Baseline and ECHO report files.
        #[arg(long, num_args = 2, value_names = ["BASELINE", "ECHO"])]
        compare: Option<Vec<PathBuf>>,
    },
}

#[derive(Subcommand)]
enum OntologyCommand {
    Generate {
        #[arg(long)]
        dataset: DatasetKind,
        /// Parent count or `sqrt`.
        #[arg(long)]
        p: String,
        /// Chat-completion endpoint (overrides the config's `llm.url`).
        #[arg(long)]
        url: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Validate {
        file: PathBuf,
        /// Defaults to the dataset named in the file.
        #[arg(long)]
        dataset: Option<DatasetKind>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TapArg {
    #[value(name = "head256")]
    Head256,
    Backbone,
}

fn config_error(message: impl Into<String>) -> ExperimentError {
    ExperimentError::SchemaViolation {
        keys: Vec::new(),
        message: message.into(),
    }
}

fn load_config(g: &Global) -> Result<ExperimentConfig, ExperimentError> {
    let path = g.config.as_deref().ok_or_else(|| config_error("--config is required"))?;
    ExperimentConfig::load(path)
}

fn options(g: &Global) -> RunOptions {
    RunOptions {
        jobs: g.jobs,
        fixture_only: g.fixture_only,
        strict: g.strict,
        ..RunOptions::default()
    }
}

fn resolve_p(dataset: DatasetKind, p: &str) -> Result<usize, ExperimentError> {
    if p.eq_ignore_ascii_case("sqrt") {
        return Ok(sqrt_heuristic(dataset.num_classes())?);
    }
    p.parse().map_err(|_| config_error(format!("p must be an integer or `sqrt`, got `{p}`")))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), ExperimentError> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn metadata_path(root: &Path, kind: DatasetKind) -> PathBuf {
    match kind {
        DatasetKind::Us8k => root.join("metadata").join("UrbanSound8K.csv"),
        _ => root.join("meta").join("esc50.csv"),
    }
}

fn ingest(g: &Global, dataset: Option<DatasetKind>, root: Option<PathBuf>, cache: Option<PathBuf>) -> Result<(), ExperimentError> {
    let cfg = g.config.as_ref().map(|_| load_config(g)).transpose()?;
    let kind = dataset
        .or(cfg.as_ref().map(|c| c.dataset))
        .ok_or_else(|| config_error("--dataset is required"))?;
    if kind == DatasetKind::Synthetic {
        println!("synthetic data is generated in memory; nothing to ingest");
        return Ok(());
    }
    let metadata = match (&root, cfg.as_ref().and_then(|c| c.data.as_ref())) {
        (Some(r), _) => metadata_path(r, kind),
        (None, Some(d)) => d.metadata.clone(),
        (None, None) => return Err(config_error("--root is required")),
    };
    let cache_root = cache
        .or(cfg.as_ref().map(ExperimentConfig::cache_root))
        .ok_or_else(|| config_error("--cache is required"))?;
    let manifest = load_manifest(&metadata, kind)?;
    let waves = WaveCache::new(&cache_root);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(g.jobs.max(1))
        .build()
        .map_err(|e| ExperimentError::Io(std::io::Error::other(e)))?;
    pool.install(|| {
        manifest
            .records
            .par_iter()
            .try_for_each(|r| waves.standardize(r, &manifest).map(|_| ()))
    })?;
    println!(
        "{}: {} clips in {} folds cached under {}",
        kind,
        manifest.records.len(),
        manifest.num_folds,
        waves.dir().display()
    );
    Ok(())
}

fn ontology(g: &Global, action: OntologyCommand) -> Result<(), ExperimentError> {
    match action {
        OntologyCommand::Generate {
            dataset,
            p,
            url,
            model,
            out,
        } => {
            let p = resolve_p(dataset, &p)?;
            let o = if g.fixture_only {
                fixture_ontology(dataset, p)?
            } else {
                let cfg = g.config.as_ref().map(|_| load_config(g)).transpose()?;
                let llm = cfg.as_ref().and_then(|c| c.llm.clone());
                let url = url
                    .or(llm.as_ref().map(|l| l.url.clone()))
                    .ok_or_else(|| config_error("--url or a config with an `llm` section is required"))?;
                let model = model
                    .or(llm.as_ref().map(|l| l.model.clone()))
                    .ok_or_else(|| config_error("--model is required"))?;
                let retries = llm.map_or(echo_core::experiment::DEFAULT_MAX_RETRIES, |l| l.max_retries);
                let provider = HttpChatProvider::from_env(url, model)?;
                let mut o = generate_ontology(&provider, &dataset.labels(), p, retries)?;
                o.dataset = dataset.as_str().to_string();
                o
            };
            write_or_print(out.as_deref(), &o.to_json())
        }
        OntologyCommand::Validate { file, dataset } => {
            let o = Ontology::load(&file)?;
            let kind = match dataset {
                Some(k) => k,
                None => o
                    .dataset
                    .parse()
                    .map_err(|e: String| ExperimentError::Ontology(OntologyError::OntologyMismatch(e)))?,
            };
            let report = o.validate(&kind.labels());
            if report.passed() {
                println!("{}: valid ontology for {kind} (p={})", file.display(), o.p);
                Ok(())
            } else {
                Err(OntologyError::Invalid(report).into())
            }
        }
    }
}

fn train(g: &Global, stop_after: Option<usize>) -> Result<(), ExperimentError> {
    let cfg = load_config(g)?;
    let opts = RunOptions {
        stop_after,
        ..options(g)
    };
    let report = run_experiment(&cfg, &opts)?;
    print!("{}", report.to_markdown());
    println!("report: {}", cfg.experiment_dir().join("report.json").display());
    Ok(())
}

fn evaluate(g: &Global) -> Result<(), ExperimentError> {
    let cfg = load_config(g)?;
    let dir = cfg.experiment_dir();
    let ledger = RunLedger::load(&dir)?.ok_or_else(|| config_error(format!("no runs under {}", dir.display())))?;
    let data = PreparedData::load(&cfg)?;
    let mut results = Vec::new();
    for &seed in &cfg.seeds {
        for &fold in &cfg.folds {
            if ledger.status(fold, seed) == Some(CellStatus::Done) {
                let r = evaluate_cell(&cfg, &data, fold, seed, g.strict)?;
                println!("fold {fold} seed {seed}: {}/{} correct", r.correct, r.total);
                results.push(r);
            }
        }
    }
    let folds = results.iter().map(|r| r.fold_index).collect();
    let report = aggregate(cfg.dataset, cfg.mode, cfg.backbone.name, cfg.p, &results, &folds)?;
    write_report(&dir, &report)?;
    print!("{}", report.to_markdown());
    Ok(())
}

fn ablate(g: &Global, p: Vec<String>) -> Result<(), ExperimentError> {
    let cfg = load_config(g)?;
    let ps = p.iter().map(|v| resolve_p(cfg.dataset, v.trim())).collect::<Result<Vec<_>, _>>()?;
    let grid = run_ablation(&cfg, &ps, &options(g))?;
    print!("{}", grid.to_markdown());
    if let Some(failed) = grid.cells.iter().find(|c| c.error.is_some()) {
        let reason = failed.error.as_deref().unwrap_or_default();
        return Err(ExperimentError::Io(std::io::Error::other(format!("p={} failed: {reason}", failed.p))));
    }
    Ok(())
}

fn export(g: &Global, fold: usize, seed: Option<u64>, tap: TapArg, all: bool, out: &Path) -> Result<(), ExperimentError> {
    let cfg = load_config(g)?;
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let data = PreparedData::load(&cfg)?;
    let tap = match tap {
        TapArg::Head256 => Tap::Head256,
        TapArg::Backbone => Tap::Backbone,
    };
    let set = cell_embeddings(&cfg, &data, fold, seed, tap, all, g.strict)?;
    set.write_csv(out)?;
    println!("{} embeddings of dimension {} written to {}", set.len(), set.dim(), out.display());
    Ok(())
}

fn tsne(input: &Path, out: &Path, perplexity: f64, iterations: usize, seed: u64) -> Result<(), ExperimentError> {
    let set = EmbeddingSet::read_csv(input, Tap::Head256)?;
    let params = TsneParams {
        perplexity,
        iterations,
        seed,
        ..TsneParams::default()
    };
    let (result, labels) = tsne_embeddings(&set, &params)?;
    write_tsne_csv(out, &labels, &result)?;
    println!(
        "{} points; KL {:.4} at end of exaggeration, {:.4} final",
        labels.len(),
        result.kl_at_exaggeration_end(),
        result.final_kl()
    );
    Ok(())
}

fn read_report(path: &Path) -> Result<MetricsReport, ExperimentError> {
    let bytes = std::fs::read(path)
        .map_err(|e| ExperimentError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn report(g: &Global, pair: Option<Vec<PathBuf>>) -> Result<(), ExperimentError> {
    match pair.as_deref() {
        Some([a, b]) => {
            let c = compare(&read_report(a)?, &read_report(b)?)?;
            println!("{c}");
            if c.regression {
                log::warn!("ECHO is below the baseline");
            }
            Ok(())
        }
        _ => {
            let cfg = load_config(g)?;
            let r = read_report(&cfg.experiment_dir().join("report.json"))?;
            print!("{}", r.to_markdown());
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    let g = &cli.global;
    match cli.command {
        Command::Ingest { dataset, root, cache } => ingest(g, dataset, root, cache),
        Command::Ontology { action } => ontology(g, action),
        Command::Train { stop_after } => train(g, stop_after),
        Command::Evaluate => evaluate(g),
        Command::Ablate { p } => ablate(g, p),
        Command::ExportEmbeddings {
            fold,
            seed,
            tap,
            all,
            out,
        } => export(g, fold, seed, tap, all, &out),
        Command::Tsne {
            input,
            out,
            perplexity,
            iterations,
            seed,
        } => tsne(&input, &out, perplexity, iterations, seed),
        Command::Report { compare } => report(g, compare),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let ExperimentError::SchemaViolation { keys, .. } = &e {
                for k in keys {
                    eprintln!("  offending key: {k}");
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
