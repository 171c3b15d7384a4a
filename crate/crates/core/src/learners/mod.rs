//! Regressors behind one fit/predict contract: a CART regression tree, a
//! bagged random forest with out-of-bag machinery, least-squares gradient
//! boosting and ordinary least squares.

mod forest;
mod gb;
mod io;
mod ols;
mod tree;

pub use forest::{fit_forest, Forest, ForestParams, Importance, OobPrediction};
pub use gb::{fit_gb, GbModel, GbParams};
pub use ols::{fit_ols, OlsModel};
pub use tree::{fit_tree, Node, Tree, TreeParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// A dense, complete design matrix stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    n_rows: usize,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Design {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Misaligned(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let n_rows = columns.first().map_or(0, Vec::len);
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != n_rows {
                return Err(Error::Misaligned(format!(
                    "column '{name}' has {} rows, expected {n_rows}",
                    col.len()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "column '{name}' has missing or non-finite values"
                )));
            }
        }
        Ok(Design {
            n_rows,
            names,
            columns,
        })
    }

    /// Rows of `matrix` at `rows`, every column. Missing values are an error.
    pub fn from_matrix(matrix: &FeatureMatrix, rows: &[usize]) -> Result<Self> {
        let columns = (0..matrix.n_cols())
            .map(|j| {
                let col = matrix.column(j);
                rows.iter().map(|&i| col[i]).collect()
            })
            .collect();
        Design::new(matrix.names().to_vec(), columns)
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

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// The named columns, in the given order.
    pub fn select_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<Design> {
        let mut out_names = Vec::with_capacity(names.len());
        let mut columns = Vec::with_capacity(names.len());
        for n in names {
            let n = n.as_ref();
            let j = self
                .names
                .iter()
                .position(|m| m == n)
                .ok_or_else(|| Error::UnknownPredictor(n.to_string()))?;
            out_names.push(n.to_string());
            columns.push(self.columns[j].clone());
        }
        Ok(Design {
            n_rows: self.n_rows,
            names: out_names,
            columns,
        })
    }

    pub fn subset_rows(&self, rows: &[usize]) -> Design {
        Design {
            n_rows: rows.len(),
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
        }
    }

    pub(crate) fn check_target(&self, y: &[f64]) -> Result<()> {
        if self.n_rows == 0 || self.columns.is_empty() {
            return Err(Error::InsufficientData("empty design matrix".into()));
        }
        if y.len() != self.n_rows {
            return Err(Error::Misaligned(format!(
                "target has {} values for {} rows",
                y.len(),
                self.n_rows
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("target has non-finite values".into()));
        }
        Ok(())
    }

    fn check_names(&self, names: &[String]) -> Result<()> {
        if self.names != names {
            return Err(Error::Misaligned(format!(
                "model expects columns {:?}, got {:?}",
                names, self.names
            )));
        }
        Ok(())
    }
}

/// Common prediction contract.
pub trait Regressor {
    fn feature_names(&self) -> &[String];

    /// Prediction for one row given a column accessor.
    fn predict_with(&self, x: &dyn Fn(usize) -> f64) -> f64;

    fn predict(&self, design: &Design) -> Result<Vec<f64>> {
        design.check_names(self.feature_names())?;
        Ok((0..design.n_rows())
            .map(|i| self.predict_with(&|j| design.get(i, j)))
            .collect())
    }
}

/// Constant predictor: the training-target mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanModel {
    pub names: Vec<String>,
    pub value: f64,
}

impl Regressor for MeanModel {
    fn feature_names(&self) -> &[String] {
        &self.names
    }

    fn predict_with(&self, _x: &dyn Fn(usize) -> f64) -> f64 {
        self.value
    }
}

/// Any fitted model, for serialization and dispatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Forest(Forest),
    Gb(GbModel),
    Ols(OlsModel),
    Mean(MeanModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Forest(_) => "random_forest",
            Model::Gb(_) => "gradient_boosting",
            Model::Ols(_) => "multi_linear",
            Model::Mean(_) => "mean",
        }
    }

    fn inner(&self) -> &dyn Regressor {
        match self {
            Model::Forest(m) => m,
            Model::Gb(m) => m,
            Model::Ols(m) => m,
            Model::Mean(m) => m,
        }
    }

    /// Human-readable JSON dump.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("models serialize to JSON")
    }

    pub fn from_json(text: &str) -> Result<Model> {
        serde_json::from_str(text).map_err(|e| Error::InvalidParameter(format!("model JSON: {e}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        io::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        io::decode(bytes).map_err(|message| Error::InvalidParameter(format!("model binary: {message}")))
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &std::path::Path) -> Result<Model> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Model::from_bytes(&bytes).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

impl Regressor for Model {
    fn feature_names(&self) -> &[String] {
        self.inner().feature_names()
    }

    fn predict_with(&self, x: &dyn Fn(usize) -> f64) -> f64 {
        self.inner().predict_with(x)
    }

    fn predict(&self, design: &Design) -> Result<Vec<f64>> {
        match self {
            Model::Forest(m) => m.predict(design),
            other => {
                design.check_names(other.feature_names())?;
                let inner = other.inner();
                Ok((0..design.n_rows())
                    .map(|i| inner.predict_with(&|j| design.get(i, j)))
                    .collect())
            }
        }
    }
}
