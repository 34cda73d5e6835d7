//! Column-major feature tables and the per-user record table.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TableError {
    #[error("column `{name}` has {got} rows, expected {expected}")]
    RowCount { name: String, got: usize, expected: usize },
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("row keys do not align at row {0}")]
    Misaligned(usize),
}

/// Named numeric columns of equal length. `NaN` encodes a missing value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    n_rows: usize,
}

impl FeatureMatrix {
    pub fn new(n_rows: usize) -> Self {
        Self { names: Vec::new(), columns: Vec::new(), n_rows }
    }

    pub fn from_columns(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self, TableError> {
        let n_rows = columns.first().map_or(0, Vec::len);
        let mut m = Self::new(n_rows);
        for (name, col) in names.into_iter().zip(columns) {
            m.push_column(name, col)?;
        }
        Ok(m)
    }

    pub fn push_column(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<(), TableError> {
        let name = name.into();
        if values.len() != self.n_rows {
            return Err(TableError::RowCount { name, got: values.len(), expected: self.n_rows });
        }
        if self.names.contains(&name) {
            return Err(TableError::DuplicateColumn(name));
        }
        self.names.push(name);
        self.columns.push(values);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn column_mut(&mut self, j: usize) -> &mut Vec<f64> {
        &mut self.columns[j]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column_by_name(&self, name: &str) -> Result<&[f64], TableError> {
        self.position(name).map(|j| self.column(j)).ok_or_else(|| TableError::UnknownColumn(name.to_string()))
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }

    /// Rows `idx` in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| idx.iter().map(|&i| c[i]).collect()).collect(),
            n_rows: idx.len(),
        }
    }

    /// Columns named `names`, in that order.
    pub fn select_columns(&self, names: &[String]) -> Result<Self, TableError> {
        let mut out = Self::new(self.n_rows);
        for n in names {
            out.push_column(n.clone(), self.column_by_name(n)?.to_vec())?;
        }
        Ok(out)
    }

    /// Appends every column of `other`; row counts must match.
    pub fn extend(&mut self, other: &FeatureMatrix) -> Result<(), TableError> {
        for (n, c) in other.names.iter().zip(&other.columns) {
            self.push_column(n.clone(), c.clone())?;
        }
        Ok(())
    }
}

/// Per-user records: keys, labels, cost fields and base feature columns.
///
/// Labels are known only for the labeled subset; `y` of an unlabeled user is
/// whatever the producer had (the generator keeps its latent truth, a loaded
/// table stores 0) and must be read through [`UserTable::label`].
#[derive(Debug, Clone, PartialEq)]
pub struct UserTable {
    pub keys: Vec<String>,
    pub y: Vec<u8>,
    pub labeled: Vec<bool>,
    pub credit_line: Vec<f64>,
    pub profit: Vec<f64>,
    pub features: FeatureMatrix,
}

impl UserTable {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn label(&self, i: usize) -> Option<u8> {
        self.labeled[i].then_some(self.y[i])
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labeled[i]).collect()
    }

    /// Label-free view used by graph feature extraction.
    pub fn features_view(&self) -> UserFeatures<'_> {
        UserFeatures { keys: &self.keys, features: &self.features }
    }
}

/// Keys and base features only. Graph features are computed from this view,
/// which has no access to labels.
#[derive(Debug, Clone, Copy)]
pub struct UserFeatures<'a> {
    pub keys: &'a [String],
    pub features: &'a FeatureMatrix,
}
