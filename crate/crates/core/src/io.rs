//! Plain-text (JSON) files for models and collected datasets.
//!
//! Matrices are row-major nested arrays. Values are written in shortest
//! round-trip form, so reading a file back reproduces every `f64` bit for bit.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{dim_err, Error, Result};
use crate::linsys::{StateSpace, TrajectoryDataset};
use crate::scalar::Scalar;

/// Hex SHA-256 of `bytes`.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn rows_of<T: Scalar>(m: &DMatrix<T>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().map(|v| v.to_f64_lossy()).collect()).collect()
}

fn matrix_from_rows<T: Scalar>(name: &'static str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<T>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(dim_err(name, format!("{nrows}x{ncols}"), format!("{} rows", rows.len())));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| T::of(rows[i][j])))
}

fn vectors_of<T: Scalar>(vs: &[DVector<T>]) -> Vec<Vec<f64>> {
    vs.iter().map(|v| v.iter().map(|x| x.to_f64_lossy()).collect()).collect()
}

fn format_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

/// Serialized state-space model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct ModelFile {
    pub n: usize,
    pub m: usize,
    pub q: usize,
    pub dt: f64,
    pub A: Vec<Vec<f64>>,
    pub B: Vec<Vec<f64>>,
    pub C: Vec<Vec<f64>>,
    pub D: Vec<Vec<f64>>,
}

impl ModelFile {
    pub fn from_model<T: Scalar>(model: &StateSpace<T>) -> Self {
        Self {
            n: model.n(),
            m: model.m(),
            q: model.q(),
            dt: model.dt().to_f64_lossy(),
            A: rows_of(model.a()),
            B: rows_of(model.b()),
            C: rows_of(model.c()),
            D: rows_of(model.d()),
        }
    }

    pub fn to_model<T: Scalar>(&self) -> Result<StateSpace<T>> {
        StateSpace::new(
            matrix_from_rows("model A", &self.A, self.n, self.n)?,
            matrix_from_rows("model B", &self.B, self.n, self.m)?,
            matrix_from_rows("model C", &self.C, self.q, self.n)?,
            matrix_from_rows("model D", &self.D, self.q, self.m)?,
            T::of(self.dt),
        )
    }
}

pub fn read_model<T: Scalar>(path: &Path) -> Result<StateSpace<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| format_err(path, e))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| format_err(path, e))?;
    file.to_model()
}

pub fn write_model<T: Scalar>(path: &Path, model: &StateSpace<T>) -> Result<()> {
    let text = serde_json::to_string_pretty(&ModelFile::from_model(model)).map_err(|e| format_err(path, e))?;
    std::fs::write(path, text).map_err(|e| format_err(path, e))
}

/// Serialized collection run. `source` is free-form provenance (scenario hash, seed, agent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub m: usize,
    pub q: usize,
    pub dt: f64,
    pub t_num: usize,
    pub u_d: Vec<Vec<f64>>,
    pub y_d: Vec<Vec<f64>>,
    #[serde(default)]
    pub source: serde_json::Map<String, serde_json::Value>,
}

impl DatasetFile {
    pub fn from_dataset<T: Scalar>(data: &TrajectoryDataset<T>) -> Self {
        Self {
            m: data.m(),
            q: data.q(),
            dt: data.dt.to_f64_lossy(),
            t_num: data.len(),
            u_d: vectors_of(&data.u_d),
            y_d: vectors_of(&data.y_d),
            source: serde_json::Map::new(),
        }
    }

    pub fn to_dataset<T: Scalar>(&self) -> Result<TrajectoryDataset<T>> {
        if self.u_d.len() != self.t_num || self.y_d.len() != self.t_num {
            return Err(dim_err("dataset rows", self.t_num, format!("{}/{}", self.u_d.len(), self.y_d.len())));
        }
        if self.u_d.iter().any(|r| r.len() != self.m) || self.y_d.iter().any(|r| r.len() != self.q) {
            return Err(dim_err("dataset sample width", format!("m={} q={}", self.m, self.q), "ragged rows"));
        }
        let conv = |rows: &[Vec<f64>]| rows.iter().map(|r| DVector::from_iterator(r.len(), r.iter().map(|&x| T::of(x)))).collect();
        TrajectoryDataset::new(conv(&self.u_d), conv(&self.y_d), T::of(self.dt))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Writes the dataset and returns the digest of the written bytes.
pub fn write_dataset(path: &Path, file: &DatasetFile) -> Result<String> {
    let text = file.to_json()?;
    std::fs::write(path, &text).map_err(|e| format_err(path, e))?;
    Ok(digest(text.as_bytes()))
}

/// Reads a dataset together with the digest of the file contents.
pub fn read_dataset(path: &Path) -> Result<(DatasetFile, String)> {
    let bytes = std::fs::read(path).map_err(|e| format_err(path, e))?;
    let file: DatasetFile = serde_json::from_slice(&bytes).map_err(|e| format_err(path, e))?;
    Ok((file, digest(&bytes)))
}
