//! Ordinary least squares with an intercept, solved by QR decomposition.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Design, Regressor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsModel {
    pub names: Vec<String>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

/// Relative size below which a column counts as a combination of earlier ones.
const RANK_TOLERANCE: f64 = 1e-10;

pub fn fit_ols(design: &Design, y: &[f64]) -> Result<OlsModel> {
    design.check_target(y)?;
    let (n, p) = (design.n_rows(), design.n_cols());
    if n <= p {
        return Err(Error::InsufficientData(format!(
            "least squares needs more than {p} rows, got {n}"
        )));
    }
    // Columns are scaled to unit norm so the rank test is scale-free.
    let mut scale = vec![1.0 / (n as f64).sqrt()];
    for j in 0..p {
        let norm = design.column(j).iter().map(|v| v * v).sum::<f64>().sqrt();
        scale.push(if norm > 0.0 { 1.0 / norm } else { 0.0 });
    }
    let a = DMatrix::from_fn(n, p + 1, |i, j| {
        let v = if j == 0 { 1.0 } else { design.get(i, j - 1) };
        v * scale[j]
    });
    let qr = a.qr();
    let r = qr.r();
    let dependent: Vec<String> = (0..=p)
        .filter(|&j| r[(j, j)].abs() < RANK_TOLERANCE || scale[j] == 0.0)
        .map(|j| if j == 0 { "(intercept)".to_string() } else { design.names()[j - 1].clone() })
        .collect();
    if !dependent.is_empty() {
        return Err(Error::RankDeficient(dependent));
    }
    let qty = qr.q().transpose() * DVector::from_column_slice(y);
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient(vec!["(design)".into()]))?;
    Ok(OlsModel {
        names: design.names().to_vec(),
        intercept: beta[0] * scale[0],
        coefficients: (1..=p).map(|j| beta[j] * scale[j]).collect(),
    })
}

impl Regressor for OlsModel {
    fn feature_names(&self) -> &[String] {
        &self.names
    }

    fn predict_with(&self, x: &dyn Fn(usize) -> f64) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .enumerate()
                .map(|(j, b)| b * x(j))
                .sum::<f64>()
    }
}
