use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::labels::{ESC10_LABELS, ESC50_LABELS, US8K_LABELS};
use super::DatasetError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DatasetKind {
    #[serde(rename = "US8K")]
    Us8k,
    #[serde(rename = "ESC10")]
    Esc10,
    #[serde(rename = "ESC50")]
    Esc50,
    /// Generated spectrogram-like images for desk-scale runs.
    #[serde(rename = "SYNTHETIC")]
    Synthetic,
}

impl DatasetKind {
    pub fn num_folds(self) -> usize {
        match self {
            DatasetKind::Us8k => 10,
            DatasetKind::Esc10 | DatasetKind::Esc50 | DatasetKind::Synthetic => 5,
        }
    }

    /// Standardized clip length in seconds (zero for synthetic data, which
    /// has no audio).
    pub fn clip_length_s(self) -> f64 {
        match self {
            DatasetKind::Us8k => 4.0,
            DatasetKind::Esc10 | DatasetKind::Esc50 => 5.0,
            DatasetKind::Synthetic => 0.0,
        }
    }

    /// Official label set in class-id order.
    pub fn labels(self) -> Vec<String> {
        let src: &[&str] = match self {
            DatasetKind::Us8k => &US8K_LABELS,
            DatasetKind::Esc10 => &ESC10_LABELS,
            DatasetKind::Esc50 => &ESC50_LABELS,
            DatasetKind::Synthetic => &super::synthetic::SYNTHETIC_LABELS,
        };
        src.iter().map(|s| s.to_string()).collect()
    }

    pub fn num_classes(self) -> usize {
        self.labels().len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Us8k => "US8K",
            DatasetKind::Esc10 => "ESC10",
            DatasetKind::Esc50 => "ESC50",
            DatasetKind::Synthetic => "SYNTHETIC",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_uppercase();
        match norm.as_str() {
            "US8K" | "URBANSOUND8K" => Ok(DatasetKind::Us8k),
            "ESC10" => Ok(DatasetKind::Esc10),
            "ESC50" => Ok(DatasetKind::Esc50),
            "SYNTHETIC" => Ok(DatasetKind::Synthetic),
            _ => Err(format!("unknown dataset `{s}` (expected US8K, ESC10, ESC50 or SYNTHETIC)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub file_path: PathBuf,
    pub fine_label: String,
    /// 1-based official fold.
    pub fold_index: usize,
    pub duration_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset_kind: DatasetKind,
    pub records: Vec<ClipRecord>,
    pub label_set: Vec<String>,
    pub num_folds: usize,
    pub clip_length_s: f64,
}

impl Manifest {
    /// Builds and validates a manifest using the kind's official label set
    /// and fold count.
    pub fn new(kind: DatasetKind, records: Vec<ClipRecord>) -> Result<Self, DatasetError> {
        let m = Self {
            dataset_kind: kind,
            records,
            label_set: kind.labels(),
            num_folds: kind.num_folds(),
            clip_length_s: kind.clip_length_s(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.records.is_empty() {
            return Err(DatasetError::EmptyManifest);
        }
        let mut seen = HashSet::new();
        for l in &self.label_set {
            if !seen.insert(l.as_str()) {
                return Err(DatasetError::InvalidRow {
                    row: 0,
                    message: format!("duplicate label `{l}` in label set"),
                });
            }
        }
        for r in &self.records {
            if !seen.contains(r.fine_label.as_str()) {
                return Err(DatasetError::UnknownLabel {
                    label: r.fine_label.clone(),
                    kind: self.dataset_kind,
                });
            }
            if r.fold_index == 0 || r.fold_index > self.num_folds {
                return Err(DatasetError::InvalidFold {
                    fold: r.fold_index,
                    num_folds: self.num_folds,
                });
            }
        }
        Ok(())
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.label_set.iter().position(|l| l == label)
    }

    /// Class index of every record, in record order.
    pub fn label_indices(&self) -> Vec<usize> {
        self.records
            .iter()
            .map(|r| self.label_index(&r.fine_label).expect("validated manifest"))
            .collect()
    }

    pub fn fold_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.fold_index).or_insert(0) += 1;
        }
        counts
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize, DatasetError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
}

fn parse_field<T: FromStr>(rec: &csv::StringRecord, idx: usize, row: usize, name: &str) -> Result<T, DatasetError> {
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse().map_err(|_| DatasetError::InvalidRow {
        row,
        message: format!("`{name}` value `{raw}` is not valid"),
    })
}

fn stem(file: &str) -> String {
    Path::new(file)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| file.to_string())
}

/// Reads an official metadata CSV (`UrbanSound8K.csv` or `esc50.csv`).
///
/// Audio paths resolve relative to the dataset root, which is taken to be
/// the parent of the CSV's directory (`<root>/metadata/UrbanSound8K.csv`,
/// `<root>/meta/esc50.csv`).
pub fn load_manifest(path: &Path, kind: DatasetKind) -> Result<Manifest, DatasetError> {
    let root = path
        .parent()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let mut reader = csv::Reader::from_path(path).map_err(|source| DatasetError::MetadataUnreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let headers = reader.headers()?.clone();
    let labels: HashSet<String> = kind.labels().into_iter().collect();
    let mut records = Vec::new();

    match kind {
        DatasetKind::Us8k => {
            let file_col = column(&headers, "slice_file_name")?;
            let fold_col = column(&headers, "fold")?;
            let class_col = column(&headers, "class")?;
            let start_col = column(&headers, "start").ok();
            let end_col = column(&headers, "end").ok();
            for (i, rec) in reader.records().enumerate() {
                let rec = rec?;
                let row = i + 2;
                let file = rec.get(file_col).unwrap_or("").trim().to_string();
                let fold: usize = parse_field(&rec, fold_col, row, "fold")?;
                let label = rec.get(class_col).unwrap_or("").trim().to_string();
                let duration_s = match (start_col, end_col) {
                    (Some(s), Some(e)) => {
                        let start: f64 = parse_field(&rec, s, row, "start")?;
                        let end: f64 = parse_field(&rec, e, row, "end")?;
                        (end - start).max(0.0)
                    }
                    _ => kind.clip_length_s(),
                };
                if !labels.contains(&label) {
                    return Err(DatasetError::UnknownLabel { label, kind });
                }
                records.push(ClipRecord {
                    clip_id: stem(&file),
                    file_path: root.join("audio").join(format!("fold{fold}")).join(&file),
                    fine_label: label,
                    fold_index: fold,
                    duration_s,
                });
            }
        }
        DatasetKind::Esc10 | DatasetKind::Esc50 => {
            let file_col = column(&headers, "filename")?;
            let fold_col = column(&headers, "fold")?;
            let cat_col = column(&headers, "category")?;
            let esc10_col = if kind == DatasetKind::Esc10 {
                Some(column(&headers, "esc10")?)
            } else {
                None
            };
            let all_esc50: HashSet<&str> = ESC50_LABELS.iter().copied().collect();
            for (i, rec) in reader.records().enumerate() {
                let rec = rec?;
                let row = i + 2;
                if let Some(c) = esc10_col {
                    let flag = rec.get(c).unwrap_or("").trim().to_ascii_lowercase();
                    if !matches!(flag.as_str(), "true" | "1" | "yes") {
                        continue;
                    }
                }
                let file = rec.get(file_col).unwrap_or("").trim().to_string();
                let fold: usize = parse_field(&rec, fold_col, row, "fold")?;
                let label = rec.get(cat_col).unwrap_or("").trim().to_string();
                if !labels.contains(&label) {
                    // A flagged row outside ESC-10, or a name outside ESC-50.
                    let kind = if all_esc50.contains(label.as_str()) { kind } else { DatasetKind::Esc50 };
                    return Err(DatasetError::UnknownLabel { label, kind });
                }
                records.push(ClipRecord {
                    clip_id: stem(&file),
                    file_path: root.join("audio").join(&file),
                    fine_label: label,
                    fold_index: fold,
                    duration_s: kind.clip_length_s(),
                });
            }
        }
        DatasetKind::Synthetic => {
            return Err(DatasetError::InvalidRow {
                row: 0,
                message: "synthetic datasets have no metadata file".into(),
            })
        }
    }

    Manifest::new(kind, records)
}
