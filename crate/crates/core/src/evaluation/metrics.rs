use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dataset::DatasetKind;
use crate::model::BackboneName;
use crate::ontology::sqrt_heuristic;
use crate::training::{FoldResult, RunMode};

/// Fraction of positions where `predictions` equals `targets`.
pub fn accuracy(predictions: &[usize], targets: &[usize]) -> Result<f64, EvalError> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            targets: targets.len(),
        });
    }
    let hits = predictions.iter().zip(targets).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / targets.len() as f64)
}

/// Percent in integer hundredths, rounded half-up. The tiny offset keeps
/// values such as 84.205 that land just under the tie from rounding down.
pub fn percent_hundredths(fraction: f64) -> i64 {
    (fraction * 10_000.0 + 0.5 + 1e-7).floor() as i64
}

/// Renders hundredths as `96.00`; with `signed`, as `+7.85` / `-1.20`.
pub fn format_hundredths(h: i64, signed: bool) -> String {
    let sign = if h < 0 {
        "-"
    } else if signed && h > 0 {
        "+"
    } else {
        ""
    };
    let a = h.unsigned_abs();
    format!("{sign}{}.{:02}", a / 100, a % 100)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub mean_accuracy_pct: f64,
}

/// Cross-validated accuracy of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: DatasetKind,
    pub mode: RunMode,
    pub backbone: BackboneName,
    #[serde(default)]
    pub p: Option<usize>,
    pub folds: Vec<FoldResult>,
    /// Mean over seeds of the per-seed fold mean, in percent (2 decimals).
    pub mean_accuracy_pct: f64,
    #[serde(default)]
    pub seeds: Vec<SeedSummary>,
}

impl MetricsReport {
    pub fn mean_hundredths(&self) -> i64 {
        (self.mean_accuracy_pct * 100.0).round() as i64
    }

    pub fn mean_display(&self) -> String {
        format_hundredths(self.mean_hundredths(), false)
    }

    /// `(min, max)` of the per-seed means, when more than one seed ran.
    pub fn spread(&self) -> Option<(f64, f64)> {
        if self.seeds.len() < 2 {
            return None;
        }
        let v = self.seeds.iter().map(|s| s.mean_accuracy_pct);
        Some((v.clone().fold(f64::INFINITY, f64::min), v.fold(f64::NEG_INFINITY, f64::max)))
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "| dataset | mode | backbone | p | accuracy (%) |\n|---|---|---|---|---|\n| {} | {} | {} | {} | {} |\n",
            self.dataset,
            self.mode,
            self.backbone,
            self.p.map_or("-".to_string(), |p| p.to_string()),
            self.mean_display()
        );
        if let Some((lo, hi)) = self.spread() {
            out.push_str(&format!("\nseed spread: {lo:.2} to {hi:.2} over {} seeds\n", self.seeds.len()));
        }
        out.push_str("\n| seed | fold | accuracy |\n|---|---|---|\n");
        for f in &self.folds {
            out.push_str(&format!(
                "| {} | {} | {} |\n",
                f.seed,
                f.fold_index,
                format_hundredths(percent_hundredths(f.test_accuracy), false)
            ));
        }
        out
    }
}

/// Averages fold accuracies per seed, then across seeds. Every seed must
/// cover exactly `expected_folds`.
pub fn aggregate(
    dataset: DatasetKind,
    mode: RunMode,
    backbone: BackboneName,
    p: Option<usize>,
    results: &[FoldResult],
    expected_folds: &BTreeSet<usize>,
) -> Result<MetricsReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::MissingFold {
            fold: expected_folds.iter().next().copied().unwrap_or(1),
            seed: 0,
        });
    }
    let mut by_seed: BTreeMap<u64, BTreeMap<usize, f64>> = BTreeMap::new();
    for r in results {
        let folds = by_seed.entry(r.seed).or_default();
        if folds.insert(r.fold_index, r.test_accuracy).is_some() {
            return Err(EvalError::DuplicateFold {
                fold: r.fold_index,
                seed: r.seed,
            });
        }
    }
    let mut seeds = Vec::new();
    for (&seed, folds) in &by_seed {
        if let Some(&fold) = expected_folds.iter().find(|f| !folds.contains_key(f)) {
            return Err(EvalError::MissingFold { fold, seed });
        }
        if let Some(&fold) = folds.keys().find(|f| !expected_folds.contains(f)) {
            return Err(EvalError::UnexpectedFold { fold, seed });
        }
        let mean = folds.values().sum::<f64>() / folds.len() as f64;
        seeds.push((seed, mean));
    }
    let overall = seeds.iter().map(|(_, m)| m).sum::<f64>() / seeds.len() as f64;
    let mut folds = results.to_vec();
    folds.sort_by_key(|f| (f.seed, f.fold_index));
    Ok(MetricsReport {
        dataset,
        mode,
        backbone,
        p,
        folds,
        mean_accuracy_pct: percent_hundredths(overall) as f64 / 100.0,
        seeds: seeds
            .into_iter()
            .map(|(seed, m)| SeedSummary {
                seed,
                mean_accuracy_pct: percent_hundredths(m) as f64 / 100.0,
            })
            .collect(),
    })
}

/// Baseline against coarse-to-fine for one dataset and backbone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dataset: DatasetKind,
    pub backbone: BackboneName,
    pub baseline_pct: f64,
    pub echo_pct: f64,
    /// Percentage points, exactly `echo - baseline` at 2 decimals.
    pub delta_pct: f64,
    pub delta_display: String,
    pub regression: bool,
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "| {} | {} | {:.2} | {:.2} | {}{} |",
            self.dataset,
            self.backbone,
            self.baseline_pct,
            self.echo_pct,
            self.delta_display,
            if self.regression { " (!)" } else { "" }
        )
    }
}

pub fn compare(baseline: &MetricsReport, echo: &MetricsReport) -> Result<Comparison, EvalError> {
    if baseline.dataset != echo.dataset || baseline.backbone != echo.backbone {
        return Err(EvalError::IncomparableReports(format!(
            "{}/{} vs {}/{}",
            baseline.dataset, baseline.backbone, echo.dataset, echo.backbone
        )));
    }
    let delta = echo.mean_hundredths() - baseline.mean_hundredths();
    Ok(Comparison {
        dataset: echo.dataset,
        backbone: echo.backbone,
        baseline_pct: baseline.mean_accuracy_pct,
        echo_pct: echo.mean_accuracy_pct,
        delta_pct: delta as f64 / 100.0,
        delta_display: format_hundredths(delta, true),
        regression: delta < 0,
    })
}

/// One cell of a pretext-size sweep; `mean_accuracy_pct` is `None` when
/// the cell failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub backbone: BackboneName,
    pub dataset: DatasetKind,
    pub p: usize,
    pub mean_accuracy_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub cells: Vec<AblationCell>,
}

impl AblationGrid {
    pub fn new(mut cells: Vec<AblationCell>) -> Self {
        cells.sort_by_key(|c| (c.backbone.as_str(), c.dataset, c.p));
        Self { cells }
    }

    fn datasets(&self) -> Vec<(DatasetKind, Vec<usize>)> {
        let mut m: BTreeMap<DatasetKind, BTreeSet<usize>> = BTreeMap::new();
        for c in &self.cells {
            m.entry(c.dataset).or_default().insert(c.p);
        }
        m.into_iter().map(|(d, ps)| (d, ps.into_iter().collect())).collect()
    }

    fn backbones(&self) -> Vec<BackboneName> {
        let mut v: Vec<BackboneName> = Vec::new();
        for c in &self.cells {
            if !v.contains(&c.backbone) {
                v.push(c.backbone);
            }
        }
        v
    }

    pub fn cell(&self, backbone: BackboneName, dataset: DatasetKind, p: usize) -> Option<&AblationCell> {
        self.cells
            .iter()
            .find(|c| c.backbone == backbone && c.dataset == dataset && c.p == p)
    }

    /// The best `p` for a backbone on a dataset (lowest `p` on ties).
    pub fn row_max(&self, backbone: BackboneName, dataset: DatasetKind) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for c in self.cells.iter().filter(|c| c.backbone == backbone && c.dataset == dataset) {
            if let Some(v) = c.mean_accuracy_pct {
                if best.map_or(true, |(_, b)| v > b) {
                    best = Some((c.p, v));
                }
            }
        }
        best.map(|(p, _)| p)
    }

    /// Rows are backbones, columns the `p` values per dataset; the best
    /// cell per row and dataset is bold and the √n column is marked.
    pub fn to_markdown(&self) -> String {
        let datasets = self.datasets();
        let mut header = String::from("| backbone |");
        let mut rule = String::from("|---|");
        for (d, ps) in &datasets {
            let root = sqrt_heuristic(d.num_classes()).ok();
            for &p in ps {
                let mark = if Some(p) == root { "(√n)" } else { "" };
                header.push_str(&format!(" {d} p={p}{mark} |"));
                rule.push_str("---|");
            }
        }
        let mut out = format!("{header}\n{rule}\n");
        for b in self.backbones() {
            out.push_str(&format!("| {b} |"));
            for (d, ps) in &datasets {
                let best = self.row_max(b, *d);
                for &p in ps {
                    let text = match self.cell(b, *d, p) {
                        None => "-".to_string(),
                        Some(AblationCell {
                            mean_accuracy_pct: Some(v),
                            ..
                        }) => {
                            let s = format_hundredths((v * 100.0).round() as i64, false);
                            if best == Some(p) {
                                format!("**{s}**")
                            } else {
                                s
                            }
                        }
                        Some(_) => "FAILED".to_string(),
                    };
                    out.push_str(&format!(" {text} |"));
                }
            }
            out.push('\n');
        }
        out
    }
}
