//! Coarse-label ontologies: prompt construction, reply parsing,
//! validation, fixtures, and relabeling.

mod fixtures;
mod parse;
mod prompt;
mod provider;

pub use fixtures::{all_fixtures, fixture_ontology};
pub use parse::{normalize_label, parse_reply};
pub use prompt::{build_prompt, PromptText};
pub use provider::{
    generate_ontology, generate_ontology_traced, ChatProvider, HttpChatProvider, ProviderReply, API_KEY_ENV,
};

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClipRecord, Manifest};
use crate::fsutil::{atomic_write, sha256_hex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum OntologySource {
    Llm,
    Fixture,
    Manual,
}

/// Partition of `n` fine labels into `p` named parents. Parent order
/// defines the coarse class indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ontology {
    pub dataset: String,
    pub p: usize,
    #[serde(default)]
    pub n: usize,
    pub source: OntologySource,
    pub parents: IndexMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("need at least 4 fine classes, got {n}")]
    ClassCountTooSmall { n: usize },
    #[error("parent count {p} must satisfy 2 <= p < {n}")]
    InvalidParentCount { p: usize, n: usize },
    #[error("unparseable reply: {reason}")]
    UnparseableReply { reason: String, violations: Vec<Violation> },
    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("environment variable {API_KEY_ENV} is not set")]
    MissingApiKey,
    #[error("no valid ontology after {attempts} attempt(s); last error: {last_error}")]
    OntologyGenerationFailed { attempts: usize, last_error: String },
    #[error("no fixture for {dataset} with p={p}")]
    FixtureNotFound { dataset: String, p: usize },
    #[error("ontology failed validation: {0}")]
    Invalid(ValidationReport),
    #[error("fine label `{0}` has no parent")]
    UnassignedLabel(String),
    #[error("ontology does not match the dataset: {0}")]
    OntologyMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Largest `p` with `p * p <= n`.
pub fn sqrt_heuristic(n: usize) -> Result<usize, OntologyError> {
    if n < 4 {
        return Err(OntologyError::ClassCountTooSmall { n });
    }
    let mut r = (n as f64).sqrt() as usize;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    Ok(r)
}

/// Which validation rule a violation breaks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationCode {
    /// (a) every fine label under exactly one parent, nothing unknown.
    Partition,
    /// (b) number of parents equals `p`.
    ParentCount,
    /// (c) no parent without children.
    EmptyParent,
    /// (d) `2 <= p < n`.
    ParentBounds,
    /// (e) `n >= 4`.
    ClassCount,
}

impl ViolationCode {
    pub fn letter(self) -> char {
        match self {
            ViolationCode::Partition => 'a',
            ViolationCode::ParentCount => 'b',
            ViolationCode::EmptyParent => 'c',
            ViolationCode::ParentBounds => 'd',
            ViolationCode::ClassCount => 'e',
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    MissingLabel(String),
    DuplicateLabel { label: String, parents: Vec<String> },
    UnknownLabel { label: String, parent: String },
    ParentCount { expected: usize, found: usize },
    EmptyParent(String),
    ParentBounds { p: usize, n: usize },
    ClassCount { n: usize },
}

impl Violation {
    pub fn code(&self) -> ViolationCode {
        match self {
            Violation::MissingLabel(_) | Violation::DuplicateLabel { .. } | Violation::UnknownLabel { .. } => {
                ViolationCode::Partition
            }
            Violation::ParentCount { .. } => ViolationCode::ParentCount,
            Violation::EmptyParent(_) => ViolationCode::EmptyParent,
            Violation::ParentBounds { .. } => ViolationCode::ParentBounds,
            Violation::ClassCount { .. } => ViolationCode::ClassCount,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.code().letter();
        match self {
            Violation::MissingLabel(l) => write!(f, "({c}) class `{l}` is not assigned to any parent"),
            Violation::DuplicateLabel { label, parents } => {
                write!(f, "({c}) class `{label}` is assigned to several parents: {}", parents.join(", "))
            }
            Violation::UnknownLabel { label, parent } => {
                write!(f, "({c}) `{label}` under `{parent}` is not a dataset class")
            }
            Violation::ParentCount { expected, found } => {
                write!(f, "({c}) expected {expected} parent classes, found {found}")
            }
            Violation::EmptyParent(p) => write!(f, "({c}) parent `{p}` has no classes"),
            Violation::ParentBounds { p, n } => write!(f, "({c}) p = {p} must satisfy 2 <= p < {n}"),
            Violation::ClassCount { n } => write!(f, "({c}) {n} classes is below the minimum of 4"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code() == code)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return f.write_str("pass");
        }
        let lines: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&lines.join("; "))
    }
}

/// Checks partition, parent count, non-empty parents, `2 <= p < n` and
/// `n >= 4` against the dataset's label set. Children must use the
/// dataset's exact spelling.
pub fn validate_ontology(o: &Ontology, labels: &[String]) -> ValidationReport {
    let n = labels.len();
    let mut violations = Vec::new();
    if n < 4 {
        violations.push(Violation::ClassCount { n });
    }
    if o.p < 2 || o.p >= n {
        violations.push(Violation::ParentBounds { p: o.p, n });
    }
    if o.parents.len() != o.p {
        violations.push(Violation::ParentCount {
            expected: o.p,
            found: o.parents.len(),
        });
    }
    let known: HashSet<&str> = labels.iter().map(String::as_str).collect();
    let mut owners: HashMap<&str, Vec<String>> = HashMap::new();
    for (parent, children) in &o.parents {
        if children.is_empty() {
            violations.push(Violation::EmptyParent(parent.clone()));
        }
        for c in children {
            if known.contains(c.as_str()) {
                owners.entry(c.as_str()).or_default().push(parent.clone());
            } else {
                violations.push(Violation::UnknownLabel {
                    label: c.clone(),
                    parent: parent.clone(),
                });
            }
        }
    }
    for l in labels {
        match owners.get(l.as_str()) {
            None => violations.push(Violation::MissingLabel(l.clone())),
            Some(ps) if ps.len() > 1 => violations.push(Violation::DuplicateLabel {
                label: l.clone(),
                parents: ps.clone(),
            }),
            Some(_) => {}
        }
    }
    ValidationReport { violations }
}

impl Ontology {
    pub fn parent_labels(&self) -> Vec<String> {
        self.parents.keys().cloned().collect()
    }

    /// Fine label → parent label.
    pub fn assignment(&self) -> IndexMap<String, String> {
        let mut out = IndexMap::new();
        for (parent, children) in &self.parents {
            for c in children {
                out.entry(c.clone()).or_insert_with(|| parent.clone());
            }
        }
        out
    }

    pub fn validate(&self, labels: &[String]) -> ValidationReport {
        validate_ontology(self, labels)
    }

    /// Digest of the parent names, their order, and their children.
    pub fn hash(&self) -> String {
        let canonical: Vec<(&String, Vec<&String>)> = self
            .parents
            .iter()
            .map(|(p, cs)| {
                let mut cs: Vec<&String> = cs.iter().collect();
                cs.sort();
                (p, cs)
            })
            .collect();
        let json = serde_json::to_string(&canonical).expect("serializable");
        sha256_hex(json.as_bytes())
    }

    /// Coarse class index for each fine class index of `labels`.
    pub fn coarse_index_map(&self, labels: &[String]) -> Result<Vec<usize>, OntologyError> {
        let mut parent_of: HashMap<&str, usize> = HashMap::new();
        for (i, children) in self.parents.values().enumerate() {
            for c in children {
                parent_of.entry(c.as_str()).or_insert(i);
            }
        }
        labels
            .iter()
            .map(|l| {
                parent_of
                    .get(l.as_str())
                    .copied()
                    .ok_or_else(|| OntologyError::UnassignedLabel(l.clone()))
            })
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self, OntologyError> {
        let mut o: Ontology = serde_json::from_str(text)?;
        if o.n == 0 {
            o.n = o.parents.values().flatten().collect::<HashSet<_>>().len();
        }
        Ok(o)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }

    pub fn load(path: &Path) -> Result<Self, OntologyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), OntologyError> {
        atomic_write(path, self.to_json().as_bytes())?;
        Ok(())
    }
}

/// Coarse manifest: same records and folds, labels replaced by parents.
pub fn relabel(manifest: &Manifest, o: &Ontology) -> Result<Manifest, OntologyError> {
    let report = validate_ontology(o, &manifest.label_set);
    let missing = report.violations.iter().find_map(|v| match v {
        Violation::MissingLabel(l) => Some(l),
        _ => None,
    });
    if let Some(l) = missing {
        return Err(OntologyError::UnassignedLabel(l.clone()));
    }
    if !report.passed() {
        return Err(OntologyError::OntologyMismatch(report.to_string()));
    }
    let assignment = o.assignment();
    let records = manifest
        .records
        .iter()
        .map(|r| ClipRecord {
            fine_label: assignment[&r.fine_label].clone(),
            ..r.clone()
        })
        .collect();
    Ok(Manifest {
        dataset_kind: manifest.dataset_kind,
        records,
        label_set: o.parent_labels(),
        num_folds: manifest.num_folds,
        clip_length_s: manifest.clip_length_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<String>, Ontology) {
        let labels: Vec<String> = ["tv", "fan", "traffic", "car_horn"].iter().map(|s| s.to_string()).collect();
        let mut parents = IndexMap::new();
        parents.insert("indoor sounds".to_string(), vec!["tv".to_string(), "fan".to_string()]);
        parents.insert(
            "outdoor sounds".to_string(),
            vec!["traffic".to_string(), "car_horn".to_string()],
        );
        let o = Ontology {
            dataset: "toy".into(),
            p: 2,
            n: 4,
            source: OntologySource::Manual,
            parents,
            provenance: None,
        };
        (labels, o)
    }

    #[test]
    fn sqrt_values() {
        assert_eq!(sqrt_heuristic(50).unwrap(), 7);
        assert_eq!(sqrt_heuristic(10).unwrap(), 3);
        assert_eq!(sqrt_heuristic(4).unwrap(), 2);
        assert_eq!(sqrt_heuristic(49).unwrap(), 7);
        assert_eq!(sqrt_heuristic(48).unwrap(), 6);
        assert!(matches!(sqrt_heuristic(3), Err(OntologyError::ClassCountTooSmall { n: 3 })));
    }

    #[test]
    fn toy_passes_and_maps() {
        let (labels, o) = toy();
        assert!(validate_ontology(&o, &labels).passed());
        assert_eq!(o.coarse_index_map(&labels).unwrap(), vec![0, 0, 1, 1]);
        assert_eq!(o.assignment()["car_horn"], "outdoor sounds");
    }

    #[test]
    fn violations_carry_codes() {
        let (labels, mut o) = toy();
        o.p = 1;
        let r = validate_ontology(&o, &labels);
        assert!(r.has(ViolationCode::ParentBounds));
        assert!(r.has(ViolationCode::ParentCount));
        assert!(!r.has(ViolationCode::Partition));

        let (labels, mut o) = toy();
        o.parents[0].retain(|c| c != "tv");
        o.parents[1].push("fan".into());
        let r = validate_ontology(&o, &labels);
        assert_eq!(r.violations.len(), 2);
        assert!(r.violations.iter().all(|v| v.code() == ViolationCode::Partition));

        let r = validate_ontology(&toy().1, &labels[..3]);
        assert!(r.has(ViolationCode::ClassCount));
    }

    #[test]
    fn json_roundtrip_keeps_parent_order() {
        let (_, o) = toy();
        let back = Ontology::from_json(&o.to_json()).unwrap();
        assert_eq!(back, o);
        assert_eq!(back.parent_labels(), vec!["indoor sounds", "outdoor sounds"]);
        assert_eq!(back.hash(), o.hash());
    }
}
