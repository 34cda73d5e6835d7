//! On-disk dataset layout: `users.csv`, one `edges_<kind>.csv` per relation
//! and a `manifest.json` carrying seeds, column order and the generator echo.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, GenConfig, RelationKind, RelationSpec};
use crate::graph::{self, Edge};
use crate::table::{FeatureMatrix, UserTable};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationManifest {
    /// Kept as a string so that unknown kinds surface as a named error.
    pub kind: String,
    pub file: String,
    pub seed: u64,
    pub mean_degree: f64,
    pub entities: Option<usize>,
    pub homophily: f64,
    pub directed: bool,
}

impl RelationManifest {
    pub fn new(spec: &RelationSpec, seed: u64) -> Self {
        Self {
            kind: spec.kind.as_str().to_string(),
            file: format!("edges_{}.csv", spec.kind),
            seed,
            mean_degree: spec.mean_degree,
            entities: spec.entities,
            homophily: spec.homophily,
            directed: spec.directed,
        }
    }

    pub fn spec(&self) -> Result<RelationSpec, DataError> {
        let spec = RelationSpec {
            kind: self.kind.parse::<RelationKind>()?,
            mean_degree: self.mean_degree,
            entities: self.entities,
            homophily: self.homophily,
            directed: self.directed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub root_seed: u64,
    pub users_seed: u64,
    pub generator: Option<GenConfig>,
    pub columns: Vec<String>,
    pub relations: Vec<RelationManifest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub users: UserTable,
    pub relations: Vec<(RelationSpec, Vec<Edge>)>,
}

impl Dataset {
    pub fn edges(&self, kind: RelationKind) -> Option<(&RelationSpec, &[Edge])> {
        self.relations.iter().find(|(s, _)| s.kind == kind).map(|(s, e)| (s, e.as_slice()))
    }
}

fn malformed(file: &str, e: impl std::fmt::Display) -> DataError {
    DataError::MalformedCsv { file: file.to_string(), msg: e.to_string() }
}

pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;
    let users = &data.users;
    let file = "users.csv";
    let mut w = csv::Writer::from_path(dir.join(file)).map_err(|e| malformed(file, e))?;
    let mut header = vec!["user".to_string(), "y".into(), "cl".into(), "r".into()];
    header.extend(users.features.names().iter().cloned());
    w.write_record(&header).map_err(|e| malformed(file, e))?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..users.len() {
        row.clear();
        row.push(users.keys[i].clone());
        row.push(users.label(i).map_or(String::new(), |y| y.to_string()));
        row.push(users.credit_line[i].to_string());
        row.push(users.profit[i].to_string());
        for col in users.features.columns() {
            row.push(col[i].to_string());
        }
        w.write_record(&row).map_err(|e| malformed(file, e))?;
    }
    w.flush()?;

    for (spec, edges) in &data.relations {
        graph::write_edge_csv(&dir.join(format!("edges_{}.csv", spec.kind)), edges)?;
    }
    let manifest = serde_json::to_string_pretty(&data.manifest).expect("manifest serializes");
    fs::write(dir.join("manifest.json"), manifest)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(DataError::MissingManifest(manifest_path.display().to_string()));
    }
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)
        .map_err(|e| DataError::BadManifest(e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(DataError::FormatVersion(manifest.format_version));
    }
    let specs = manifest.relations.iter().map(RelationManifest::spec).collect::<Result<Vec<_>, _>>()?;

    let users = read_users(&dir.join("users.csv"), &manifest.columns)?;
    let mut relations = Vec::with_capacity(specs.len());
    for (spec, rel) in specs.into_iter().zip(&manifest.relations) {
        let edges = graph::read_edge_csv(&dir.join(&rel.file))?;
        relations.push((spec, edges));
    }
    Ok(Dataset { manifest, users, relations })
}

fn read_users(path: &Path, columns: &[String]) -> Result<UserTable, DataError> {
    let file = "users.csv";
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path).map_err(|e| malformed(file, e))?;
    let header = rdr.headers().map_err(|e| malformed(file, e))?.clone();
    let expected = 4 + columns.len();
    let fixed = ["user", "y", "cl", "r"];
    let header_ok = header.len() == expected
        && header.iter().take(4).eq(fixed.iter().copied())
        && header.iter().skip(4).eq(columns.iter().map(String::as_str));
    if !header_ok {
        if header.len() != expected {
            return Err(DataError::ColumnCount { file: file.into(), line: 1, expected, found: header.len() });
        }
        return Err(DataError::HeaderMismatch { file: file.into() });
    }

    let mut keys = Vec::new();
    let mut y = Vec::new();
    let mut labeled = Vec::new();
    let mut credit_line = Vec::new();
    let mut profit = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); columns.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| malformed(file, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != expected {
            return Err(DataError::ColumnCount { file: file.into(), line, expected, found: rec.len() });
        }
        let num = |s: &str| -> Result<f64, DataError> {
            s.trim().parse::<f64>().map_err(|_| malformed(file, format!("line {line}: bad number `{s}`")))
        };
        keys.push(rec[0].to_string());
        match rec[1].trim() {
            "" => {
                y.push(0);
                labeled.push(false);
            }
            "0" | "1" => {
                y.push(u8::from(&rec[1] == "1"));
                labeled.push(true);
            }
            other => return Err(malformed(file, format!("line {line}: bad label `{other}`"))),
        }
        credit_line.push(num(&rec[2])?);
        profit.push(num(&rec[3])?);
        for (c, v) in cols.iter_mut().zip(rec.iter().skip(4)) {
            c.push(num(v)?);
        }
    }
    let features = FeatureMatrix::from_columns(columns.to_vec(), cols).map_err(|e| malformed(file, e))?;
    let features = if features.n_cols() == 0 { FeatureMatrix::new(keys.len()) } else { features };
    Ok(UserTable { keys, y, labeled, credit_line, profit, features })
}
