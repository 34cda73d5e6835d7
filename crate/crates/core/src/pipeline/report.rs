//! Grid records, the experiment report and the run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::gbdt::ExperimentResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    Tabular,
    Gnn,
}

impl Section {
    pub fn as_str(self) -> &'static str {
        match self {
            Section::Tabular => "tabular",
            Section::Gnn => "gnn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantStatus {
    Ok,
    Failed,
}

/// Outcome of one grid variant, as stored under `results/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRecord {
    pub section: Section,
    pub variant: String,
    /// Position within its section.
    pub order: usize,
    pub n_features: usize,
    pub status: VariantStatus,
    pub error: Option<String>,
    pub result: Option<ExperimentResult>,
}

impl VariantRecord {
    pub fn file_name(&self) -> String {
        format!("{}_{}.json", self.section.as_str(), self.variant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub seed: u64,
    pub tabular: Vec<VariantRecord>,
    pub gnn: Vec<VariantRecord>,
}

pub const REPORT_CSV_HEADER: &str = "section,variant,status,n_features,runs,auc_mean,auc_std,cost_mean,\
savings_mean,savings_std,min_cost_savings_mean,error";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl ExperimentReport {
    pub fn rows(&self) -> impl Iterator<Item = &VariantRecord> {
        self.tabular.iter().chain(&self.gnn)
    }

    pub fn n_failed(&self) -> usize {
        self.rows().filter(|r| r.status == VariantStatus::Failed).count()
    }

    pub fn variant(&self, section: Section, name: &str) -> Option<&VariantRecord> {
        self.rows().find(|r| r.section == section && r.variant == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for r in self.rows() {
            let status = match r.status {
                VariantStatus::Ok => "ok",
                VariantStatus::Failed => "failed",
            };
            let _ = write!(out, "{},{},{status},{},", r.section.as_str(), r.variant, r.n_features);
            match &r.result {
                Some(res) => {
                    let _ = write!(
                        out,
                        "{},{:.6},{:.6},{:.2},{:.6},{:.6},{:.6},",
                        res.runs.len(),
                        res.auc.mean,
                        res.auc.std,
                        res.cost.mean,
                        res.savings.mean,
                        res.savings.std,
                        res.min_cost_savings.mean
                    );
                }
                None => out.push_str("0,,,,,,,"),
            }
            out.push_str(&csv_field(r.error.as_deref().unwrap_or("")));
            out.push('\n');
        }
        out
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        let json_path = dir.join("report.json");
        let json = serde_json::to_string_pretty(self).map_err(PipelineError::json(&json_path))?;
        fs::write(&json_path, json + "\n").map_err(PipelineError::io(&json_path))?;
        let csv_path = dir.join("report.csv");
        fs::write(&csv_path, self.to_csv()).map_err(PipelineError::io(&csv_path))
    }
}

/// Seeds, config hash and a SHA-256 of every artifact of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub deterministic: bool,
    pub seeds: BTreeMap<String, u64>,
    /// Relative path to hex digest, excluding the manifest itself.
    pub files: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(PipelineError::io(&path))?;
        serde_json::from_str(&text).map_err(PipelineError::json(&path))
    }
}

/// Rebuilds the report from the variant records under `dir/results` and the
/// run manifest, and rewrites the report files.
pub fn render_report(dir: &Path) -> Result<ExperimentReport, PipelineError> {
    let manifest = RunManifest::read(dir)?;
    let results = dir.join("results");
    let mut entries: Vec<_> = fs::read_dir(&results)
        .map_err(PipelineError::io(&results))?
        .collect::<Result<Vec<_>, _>>()
        .map_err(PipelineError::io(&results))?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();
    let mut records = Vec::new();
    for path in entries {
        let text = fs::read_to_string(&path).map_err(PipelineError::io(&path))?;
        let rec: VariantRecord = serde_json::from_str(&text).map_err(PipelineError::json(&path))?;
        records.push(rec);
    }
    records.sort_by_key(|r| (r.section, r.order));
    let (tabular, gnn) = records.into_iter().partition(|r| r.section == Section::Tabular);
    let report = ExperimentReport { config_hash: manifest.config_hash, seed: manifest.seed, tabular, gnn };
    report.write(dir)?;
    Ok(report)
}
