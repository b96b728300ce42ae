use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ExperimentError;
use crate::dataset::synthetic::SyntheticSpec;
use crate::dataset::{DatasetKind, ValidationSelector};
use crate::features::{MelConfig, Normalization};
use crate::fsutil::sha256_hex;
use crate::model::{BackboneName, BackboneSpec, PretrainedRef};
use crate::ontology::{sqrt_heuristic, OntologySource};
use crate::training::{Hyperparams, RunMode, COARSE_PATIENCE};

pub const DEFAULT_IMAGE_SIZE: usize = 224;
pub const DEFAULT_MAX_RETRIES: usize = 3;

/// Chat-completion endpoint for live ontology generation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    pub url: String,
    pub model: String,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
}

fn default_retries() -> usize {
    DEFAULT_MAX_RETRIES
}

/// Location of an official metadata CSV.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub metadata: PathBuf,
}

/// A fully resolved experiment: defaults filled, `p` an integer, folds
/// explicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub backbone: BackboneSpec,
    pub mode: RunMode,
    pub p: Option<usize>,
    pub mel: MelConfig,
    pub normalization: Normalization,
    pub image_size: usize,
    pub hyperparams: Hyperparams,
    pub coarse_patience: Option<usize>,
    pub validation: ValidationSelector,
    pub ontology_source: OntologySource,
    pub ontology_path: Option<PathBuf>,
    pub llm: Option<LlmConfig>,
    pub seeds: Vec<u64>,
    pub folds: Vec<usize>,
    pub data: Option<DataConfig>,
    pub synthetic: Option<SyntheticSpec>,
    pub experiment_id: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub run_dir: PathBuf,
}

/// Keys that locate outputs rather than define the experiment.
const UNHASHED: [&str; 3] = ["run_dir", "cache_dir", "experiment_id"];

#[derive(Deserialize)]
#[serde(untagged)]
enum BackboneInput {
    Name(String),
    Spec {
        name: String,
        #[serde(default)]
        pretrained: bool,
        embedding_dim: Option<usize>,
        weights: Option<PretrainedRef>,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PInput {
    Int(usize),
    Word(String),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FoldsInput {
    Word(String),
    List(Vec<usize>),
}

#[derive(Deserialize)]
struct RawConfig {
    dataset: DatasetKind,
    backbone: BackboneInput,
    mode: Option<RunMode>,
    p: Option<PInput>,
    #[serde(default)]
    mel: MelConfig,
    #[serde(default)]
    normalization: Normalization,
    image_size: Option<usize>,
    hyperparams: Option<Hyperparams>,
    #[serde(default = "default_patience")]
    coarse_patience: Option<usize>,
    #[serde(default)]
    validation: ValidationSelector,
    ontology_source: Option<OntologySource>,
    ontology_path: Option<PathBuf>,
    llm: Option<LlmConfig>,
    seeds: Option<Vec<u64>>,
    folds: Option<FoldsInput>,
    data: Option<DataConfig>,
    synthetic: Option<SyntheticSpec>,
    experiment_id: Option<String>,
    cache_dir: Option<PathBuf>,
    run_dir: Option<PathBuf>,
}

fn default_patience() -> Option<usize> {
    Some(COARSE_PATIENCE)
}

/// Known keys per section, derived from the serialized defaults.
fn template() -> Value {
    let mut t = serde_json::Map::new();
    for k in [
        "dataset",
        "mode",
        "p",
        "normalization",
        "image_size",
        "coarse_patience",
        "ontology_source",
        "ontology_path",
        "seeds",
        "folds",
        "experiment_id",
        "cache_dir",
        "run_dir",
    ] {
        t.insert(k.into(), Value::Null);
    }
    t.insert(
        "backbone".into(),
        serde_json::json!({"name": null, "pretrained": null, "embedding_dim": null, "weights": {"uri": null, "sha256": null}}),
    );
    t.insert("mel".into(), serde_json::to_value(MelConfig::default()).expect("serializable"));
    t.insert("hyperparams".into(), serde_json::to_value(Hyperparams::default()).expect("serializable"));
    t.insert("validation".into(), serde_json::to_value(ValidationSelector::default()).expect("serializable"));
    t.insert("llm".into(), serde_json::json!({"url": null, "model": null, "max_retries": null}));
    t.insert("data".into(), serde_json::json!({"metadata": null}));
    t.insert("synthetic".into(), serde_json::to_value(SyntheticSpec::default()).expect("serializable"));
    Value::Object(t)
}

fn unknown_keys(value: &Value, template: &Value, path: &str, out: &mut Vec<String>) {
    let (Value::Object(v), Value::Object(t)) = (value, template) else {
        return;
    };
    for (k, child) in v {
        let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        match t.get(k) {
            None => out.push(here),
            Some(sub) => unknown_keys(child, sub, &here, out),
        }
    }
}

fn config_error(message: impl Into<String>) -> ExperimentError {
    ExperimentError::SchemaViolation {
        keys: Vec::new(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ExperimentError> {
        let value: Value = serde_json::from_str(text).map_err(|e| config_error(format!("not valid JSON: {e}")))?;
        if !value.is_object() {
            return Err(config_error("config must be a JSON object"));
        }
        let mut unknown = Vec::new();
        unknown_keys(&value, &template(), "", &mut unknown);
        if !unknown.is_empty() {
            return Err(ExperimentError::SchemaViolation {
                message: format!("unknown keys: {}", unknown.join(", ")),
                keys: unknown,
            });
        }
        let raw: RawConfig = serde_json::from_value(value).map_err(|e| config_error(e.to_string()))?;
        raw.resolve()
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// Sorted-key JSON of every field that defines the experiment.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            for k in UNHASHED {
                m.remove(k);
            }
        }
        serde_json::to_string(&sorted(v)).expect("value serializes")
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }

    pub fn experiment_id(&self) -> String {
        self.experiment_id
            .clone()
            .unwrap_or_else(|| format!("{}-{:?}-{}", self.dataset, self.mode, &self.config_hash()[..12]).to_lowercase())
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.run_dir.join(self.experiment_id())
    }

    /// Cache root: `ECHO_CACHE_DIR`, then `cache_dir`, then `<run_dir>/cache`.
    pub fn cache_root(&self) -> PathBuf {
        std::env::var_os("ECHO_CACHE_DIR")
            .map(PathBuf::from)
            .or_else(|| self.cache_dir.clone())
            .unwrap_or_else(|| self.run_dir.join("cache"))
    }

    /// Same experiment with another pretext size.
    pub fn with_p(&self, p: usize) -> Result<Self, ExperimentError> {
        check_p(self.dataset, p)?;
        let mut c = self.clone();
        c.mode = RunMode::Echo;
        c.p = Some(p);
        c.experiment_id = self.experiment_id.as_ref().map(|id| format!("{id}-p{p}"));
        Ok(c)
    }
}

fn sorted(v: Value) -> Value {
    match v {
        Value::Object(m) => {
            let b: BTreeMap<String, Value> = m.into_iter().map(|(k, v)| (k, sorted(v))).collect();
            Value::Object(b.into_iter().collect())
        }
        Value::Array(a) => Value::Array(a.into_iter().map(sorted).collect()),
        other => other,
    }
}

pub(crate) fn check_p(dataset: DatasetKind, p: usize) -> Result<(), ExperimentError> {
    let n = dataset.num_classes();
    if p < 2 || p >= n {
        return Err(config_error(format!("p={p} must satisfy 2 <= p < {n} for {dataset}")));
    }
    Ok(())
}

impl RawConfig {
    fn resolve(self) -> Result<ExperimentConfig, ExperimentError> {
        let name_of = |s: &str| s.parse::<BackboneName>().map_err(|e| config_error(e.to_string()));
        let backbone = match self.backbone {
            BackboneInput::Name(s) => BackboneSpec::new(name_of(&s)?),
            BackboneInput::Spec {
                name,
                pretrained,
                embedding_dim,
                weights,
            } => {
                let name = name_of(&name)?;
                BackboneSpec {
                    name,
                    pretrained,
                    embedding_dim: embedding_dim.unwrap_or(name.embedding_dim()),
                    weights,
                }
            }
        };
        backbone.validate().map_err(|e| config_error(e.to_string()))?;

        let mode = self.mode.unwrap_or(if self.p.is_some() { RunMode::Echo } else { RunMode::Baseline });
        let n = self.dataset.num_classes();
        let p = match (mode, self.p) {
            (RunMode::Baseline, Some(_)) => {
                return Err(ExperimentError::SchemaViolation {
                    keys: vec!["p".into()],
                    message: "p must be absent in BASELINE mode".into(),
                })
            }
            (RunMode::Baseline, None) => None,
            (RunMode::Echo, None) => return Err(config_error("ECHO mode needs p (an integer or \"sqrt\")")),
            (RunMode::Echo, Some(PInput::Int(p))) => Some(p),
            (RunMode::Echo, Some(PInput::Word(w))) if w.eq_ignore_ascii_case("sqrt") => {
                Some(sqrt_heuristic(n).map_err(|e| config_error(e.to_string()))?)
            }
            (RunMode::Echo, Some(PInput::Word(w))) => {
                return Err(config_error(format!("p must be an integer or \"sqrt\", got \"{w}\"")))
            }
        };
        if let Some(p) = p {
            check_p(self.dataset, p)?;
        }

        let mut hyperparams = self.hyperparams.unwrap_or_default();
        hyperparams.validate().map_err(|e| config_error(e.to_string()))?;
        let seeds = self.seeds.unwrap_or_else(|| vec![hyperparams.seed]);
        if seeds.is_empty() {
            return Err(config_error("seeds must not be empty"));
        }
        hyperparams.seed = seeds[0];
        let mut unique = seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != seeds.len() {
            return Err(config_error("seeds must be distinct"));
        }

        let num_folds = self.dataset.num_folds();
        let folds = match self.folds {
            None => (1..=num_folds).collect(),
            Some(FoldsInput::Word(w)) if w.eq_ignore_ascii_case("all") => (1..=num_folds).collect(),
            Some(FoldsInput::Word(w)) => return Err(config_error(format!("folds must be \"all\" or a list, got \"{w}\""))),
            Some(FoldsInput::List(mut l)) => {
                l.sort_unstable();
                l.dedup();
                if l.is_empty() || l.iter().any(|&f| f == 0 || f > num_folds) {
                    return Err(config_error(format!("folds must lie in 1..={num_folds}")));
                }
                l
            }
        };

        self.mel.validate().map_err(|e| config_error(e.to_string()))?;
        let image_size = self.image_size.unwrap_or(DEFAULT_IMAGE_SIZE);
        if image_size < 8 {
            return Err(config_error("image_size must be at least 8"));
        }
        if !(self.validation.fraction > 0.0 && self.validation.fraction < 1.0) {
            return Err(config_error("validation.fraction must lie in (0, 1)"));
        }

        let (synthetic, data) = match self.dataset {
            DatasetKind::Synthetic => {
                if self.data.is_some() {
                    return Err(config_error("SYNTHETIC data is generated; remove `data`"));
                }
                (Some(self.synthetic.unwrap_or_default()), None)
            }
            _ => {
                if self.synthetic.is_some() {
                    return Err(config_error("`synthetic` only applies to the SYNTHETIC dataset"));
                }
                (None, self.data)
            }
        };

        let ontology_source = match (self.ontology_source, &self.ontology_path) {
            (_, Some(_)) => OntologySource::Manual,
            (Some(s), None) => s,
            (None, None) => OntologySource::Fixture,
        };
        if ontology_source == OntologySource::Llm && self.llm.is_none() && mode == RunMode::Echo {
            return Err(config_error("ontology_source LLM needs an `llm` section"));
        }

        Ok(ExperimentConfig {
            dataset: self.dataset,
            backbone,
            mode,
            p,
            mel: self.mel,
            normalization: self.normalization,
            image_size,
            hyperparams,
            coarse_patience: self.coarse_patience,
            validation: self.validation,
            ontology_source,
            ontology_path: self.ontology_path,
            llm: self.llm,
            seeds,
            folds,
            data,
            synthetic,
            experiment_id: self.experiment_id,
            cache_dir: self.cache_dir,
            run_dir: self.run_dir.unwrap_or_else(|| PathBuf::from("runs")),
        })
    }
}
