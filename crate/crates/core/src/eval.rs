//! Metrics, the k-fold harness, per-sample evaluation and the per-cell
//! diagnostic fields (predictions, step improvements, residuals).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::stats::{mean, sample_sd};
use crate::features::FeatureMatrix;
use crate::gridstore::fmt_f64;
use crate::learners::{
    fit_forest, fit_gb, fit_ols, Design, ForestParams, GbParams, MeanModel, Model, Regressor,
};
use crate::rng::job_rng;
use crate::target::{Sample, TargetVector};

/// Stream tag for fold shuffles, keeping them apart from model streams.
const FOLD_STREAM: u64 = 0x666f_6c64;

pub fn mae(pred: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(pred, y)?;
    Ok(pred.iter().zip(y).map(|(p, t)| (p - t).abs()).sum::<f64>() / y.len() as f64)
}

/// Mean absolute error divided by the sample SD (n - 1) of `reference`.
pub fn nmae(pred: &[f64], y: &[f64], reference: &[f64]) -> Result<f64> {
    let sd = sample_sd(reference);
    if !(sd > 0.0) {
        return Err(Error::ZeroVariance(
            "normalizing target has zero standard deviation".into(),
        ));
    }
    Ok(mae(pred, y)? / sd)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ZeroVariance("correlation of a constant series".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Misaligned(format!("{} vs {} values", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InsufficientData("no values to compare".into()));
    }
    Ok(())
}

/// Which SD divides the MAE of a tercile sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// SD of the evaluated sample's own target.
    #[default]
    PerSample,
    /// SD of the full included target.
    Global,
}

impl Normalization {
    pub fn code(self) -> &'static str {
        match self {
            Normalization::PerSample => "per_sample",
            Normalization::Global => "global",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSpec {
    Rf(ForestParams),
    Gb(GbParams),
    Ols,
    Mean,
}

impl ModelSpec {
    pub fn id(&self) -> &'static str {
        match self {
            ModelSpec::Rf(_) => "RF",
            ModelSpec::Gb(_) => "GB",
            ModelSpec::Ols => "ML",
            ModelSpec::Mean => "MEAN",
        }
    }

    pub fn fit(&self, design: &Design, y: &[f64]) -> Result<Model> {
        Ok(match self {
            ModelSpec::Rf(p) => Model::Forest(fit_forest(design, y, p)?),
            ModelSpec::Gb(p) => Model::Gb(fit_gb(design, y, p)?),
            ModelSpec::Ols => Model::Ols(fit_ols(design, y)?),
            ModelSpec::Mean => {
                design.check_target(y)?;
                Model::Mean(MeanModel {
                    names: design.names().to_vec(),
                    value: mean(y),
                })
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Oob,
    Kfold,
}

impl Mode {
    pub fn code(self) -> &'static str {
        match self {
            Mode::Oob => "oob",
            Mode::Kfold => "kfold",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oob" => Ok(Mode::Oob),
            "kfold" | "k-fold" => Ok(Mode::Kfold),
            other => Err(Error::InvalidParameter(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sample: Sample,
    pub model: String,
    pub mode: Mode,
    /// Short description of the predictor set, e.g. `all` or `top10`.
    pub feature_set: String,
    pub n_features: usize,
    pub nmae: f64,
    pub corr: f64,
    pub n_cells: usize,
    pub seed: u64,
    pub normalization: Normalization,
}

/// A report plus the held-out prediction for every evaluated cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub cell_ids: Vec<i64>,
    pub observed: Vec<f64>,
    pub prediction: Vec<f64>,
}

impl Evaluation {
    pub fn prediction_field(&self) -> DiagnosticField {
        DiagnosticField::from_sorted(FieldKind::Prediction, self.cell_ids.clone(), self.prediction.clone())
    }

    pub fn observed_field(&self) -> DiagnosticField {
        DiagnosticField::from_sorted(FieldKind::Observed, self.cell_ids.clone(), self.observed.clone())
    }
}

/// Fold index per row: a seeded shuffle of row positions dealt round-robin,
/// so fold sizes differ by at most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("k must be >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::InsufficientData(format!("{n} rows for {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut job_rng(seed, &[FOLD_STREAM]));
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % k;
    }
    Ok(fold)
}

/// Out-of-fold predictions: every row is predicted by the model trained on
/// the other folds. Folds train in parallel.
pub fn kfold_predict(spec: &ModelSpec, design: &Design, y: &[f64], folds: &[usize]) -> Result<Vec<f64>> {
    design.check_target(y)?;
    let k = folds.iter().max().map_or(0, |m| m + 1);
    let per_fold: Vec<(Vec<usize>, Vec<f64>)> = (0..k)
        .into_par_iter()
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| folds[i] == f);
            let train_y: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let model = spec.fit(&design.subset_rows(&train), &train_y)?;
            let pred = model.predict(&design.subset_rows(&test))?;
            Ok((test, pred))
        })
        .collect::<Result<_>>()?;
    let mut out = vec![f64::NAN; y.len()];
    for (rows, pred) in per_fold {
        for (i, p) in rows.into_iter().zip(pred) {
            out[i] = p;
        }
    }
    Ok(out)
}

/// Rows of one evaluation sample, in ascending `cell_id` order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleData {
    pub sample: Sample,
    pub cell_ids: Vec<i64>,
    pub design: Design,
    pub y: Vec<f64>,
    /// Target values whose SD normalizes the MAE.
    pub reference: Vec<f64>,
    pub normalization: Normalization,
}

/// Joins features and target on `cell_id` for the cells of `sample`, keeping
/// only rows complete on the selected predictors.
pub fn sample_data<S: AsRef<str>>(
    features: &FeatureMatrix,
    target: &TargetVector,
    sample: Sample,
    names: &[S],
    normalization: Normalization,
) -> Result<SampleData> {
    let selected = features.select(names)?;
    let wanted = target.sample_values(sample)?;
    let row_of: BTreeMap<i64, usize> = selected
        .cell_ids()
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut cell_ids = Vec::new();
    let mut dropped = 0usize;
    for (&id, &v) in &wanted {
        match row_of.get(&id) {
            Some(&r) if selected.row_is_complete(r) => {
                rows.push(r);
                y.push(v);
                cell_ids.push(id);
            }
            _ => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("{sample}: {dropped} target cells lack complete predictor rows and are skipped");
    }
    if y.is_empty() {
        return Err(Error::InsufficientData(format!("{sample}: no cells with complete predictors")));
    }
    let reference = match normalization {
        Normalization::PerSample => y.clone(),
        Normalization::Global => target.included_values(),
    };
    Ok(SampleData {
        sample,
        cell_ids,
        design: Design::from_matrix(&selected, &rows)?,
        y,
        reference,
        normalization,
    })
}

fn finish(
    data: &SampleData,
    spec_id: &str,
    mode: Mode,
    feature_set: &str,
    seed: u64,
    keep: Vec<usize>,
    prediction: Vec<f64>,
) -> Result<Evaluation> {
    let observed: Vec<f64> = keep.iter().map(|&i| data.y[i]).collect();
    let prediction: Vec<f64> = keep.iter().map(|&i| prediction[i]).collect();
    let report = EvalReport {
        sample: data.sample,
        model: spec_id.to_string(),
        mode,
        feature_set: feature_set.to_string(),
        n_features: data.design.n_cols(),
        nmae: nmae(&prediction, &observed, &data.reference)?,
        corr: pearson(&prediction, &observed)?,
        n_cells: observed.len(),
        seed,
        normalization: data.normalization,
    };
    Ok(Evaluation {
        report,
        cell_ids: keep.iter().map(|&i| data.cell_ids[i]).collect(),
        observed,
        prediction,
    })
}

pub fn kfold_eval(spec: &ModelSpec, data: &SampleData, k: usize, seed: u64, feature_set: &str) -> Result<Evaluation> {
    let folds = fold_assignment(data.y.len(), k, seed)?;
    let pred = kfold_predict(spec, &data.design, &data.y, &folds)?;
    finish(data, spec.id(), Mode::Kfold, feature_set, seed, (0..data.y.len()).collect(), pred)
}

/// Out-of-bag evaluation of a forest; rows no tree left out are skipped.
pub fn oob_eval(params: &ForestParams, data: &SampleData, feature_set: &str) -> Result<Evaluation> {
    let forest = fit_forest(&data.design, &data.y, params)?;
    let oob = forest.oob_predict(&data.design)?;
    let keep: Vec<usize> = (0..data.y.len()).filter(|&i| oob.coverage[i] > 0).collect();
    if keep.len() < data.y.len() {
        log::warn!("{} rows received no out-of-bag prediction", data.y.len() - keep.len());
    }
    finish(data, "RF", Mode::Oob, feature_set, params.seed, keep, oob.prediction)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Observed,
    Prediction,
    /// `|prev - y| - |next - y|`: positive where the later model improved.
    Delta,
    /// `prediction - y`.
    Residual,
}

impl FieldKind {
    pub fn code(self) -> &'static str {
        match self {
            FieldKind::Observed => "observed",
            FieldKind::Prediction => "prediction",
            FieldKind::Delta => "delta",
            FieldKind::Residual => "residual",
        }
    }
}

/// Per-cell values sorted by `cell_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticField {
    pub kind: FieldKind,
    pub cell_ids: Vec<i64>,
    pub values: Vec<f64>,
}

impl DiagnosticField {
    pub fn new(kind: FieldKind, cell_ids: Vec<i64>, values: Vec<f64>) -> Result<Self> {
        if cell_ids.len() != values.len() {
            return Err(Error::Misaligned(format!(
                "{} cells for {} values",
                cell_ids.len(),
                values.len()
            )));
        }
        let mut pairs: Vec<(i64, f64)> = cell_ids.into_iter().zip(values).collect();
        pairs.sort_by_key(|p| p.0);
        if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateCell(w[0].0));
        }
        let (cell_ids, values) = pairs.into_iter().unzip();
        Ok(DiagnosticField {
            kind,
            cell_ids,
            values,
        })
    }

    fn from_sorted(kind: FieldKind, cell_ids: Vec<i64>, values: Vec<f64>) -> Self {
        DiagnosticField {
            kind,
            cell_ids,
            values,
        }
    }

    pub fn get(&self, cell_id: i64) -> Option<f64> {
        self.cell_ids.binary_search(&cell_id).ok().map(|i| self.values[i])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean over the cells of `ids` present in the field.
    pub fn mean_over(&self, ids: &[i64]) -> Option<f64> {
        let v: Vec<f64> = ids.iter().filter_map(|&id| self.get(id)).collect();
        (!v.is_empty()).then(|| mean(&v))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = format!("cell_id,{}\n", self.kind.code());
        for (id, v) in self.cell_ids.iter().zip(&self.values) {
            out.push_str(&format!("{id},{}\n", fmt_f64(*v)));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let kind = match header.split(',').nth(1) {
            Some("observed") => FieldKind::Observed,
            Some("prediction") => FieldKind::Prediction,
            Some("delta") => FieldKind::Delta,
            Some("residual") => FieldKind::Residual,
            _ => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    message: format!("unrecognised field header '{header}'"),
                })
            }
        };
        let (mut ids, mut values) = (Vec::new(), Vec::new());
        for (n, line) in lines.enumerate() {
            let bad = |column: &str| Error::Parse {
                path: path.to_path_buf(),
                line: n as u64 + 2,
                column: column.into(),
                message: "cannot parse".into(),
            };
            let (id, v) = line.split_once(',').ok_or_else(|| bad("cell_id"))?;
            ids.push(id.trim().parse().map_err(|_| bad("cell_id"))?);
            values.push(match v.trim() {
                "NA" => f64::NAN,
                s => s.parse().map_err(|_| bad(kind.code()))?,
            });
        }
        DiagnosticField::new(kind, ids, values)
    }
}

fn check_same_cells(a: &DiagnosticField, b: &DiagnosticField) -> Result<()> {
    if a.cell_ids != b.cell_ids {
        return Err(Error::Misaligned(format!(
            "{} field and {} field cover different cells",
            a.kind.code(),
            b.kind.code()
        )));
    }
    Ok(())
}

/// `|prev - y| - |next - y|` per cell.
pub fn delta_field(prev: &DiagnosticField, next: &DiagnosticField, observed: &DiagnosticField) -> Result<DiagnosticField> {
    check_same_cells(prev, observed)?;
    check_same_cells(next, observed)?;
    let values = prev
        .values
        .iter()
        .zip(&next.values)
        .zip(&observed.values)
        .map(|((p, n), y)| (p - y).abs() - (n - y).abs())
        .collect();
    Ok(DiagnosticField::from_sorted(FieldKind::Delta, observed.cell_ids.clone(), values))
}

/// `prediction - y` per cell.
pub fn residual_field(prediction: &DiagnosticField, observed: &DiagnosticField) -> Result<DiagnosticField> {
    check_same_cells(prediction, observed)?;
    let values = prediction.values.iter().zip(&observed.values).map(|(p, y)| p - y).collect();
    Ok(DiagnosticField::from_sorted(FieldKind::Residual, observed.cell_ids.clone(), values))
}

/// One predictor's linear correlation with the target; `None` if undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorCorrelation {
    pub name: String,
    pub corr: Option<f64>,
}

pub fn predictor_correlations<S: AsRef<str>>(design: &Design, y: &[f64], names: &[S]) -> Result<Vec<PredictorCorrelation>> {
    names
        .iter()
        .map(|name| {
            let name = name.as_ref();
            let j = column_of(design, name)?;
            Ok(PredictorCorrelation {
                name: name.to_string(),
                corr: pearson(design.column(j), y).ok(),
            })
        })
        .collect()
}

/// Symmetric matrix of pairwise correlations among `names`.
pub fn pairwise_correlations<S: AsRef<str>>(design: &Design, names: &[S]) -> Result<Vec<Vec<Option<f64>>>> {
    let cols = names.iter().map(|n| column_of(design, n.as_ref())).collect::<Result<Vec<_>>>()?;
    Ok(cols
        .iter()
        .map(|&a| cols.iter().map(|&b| pearson(design.column(a), design.column(b)).ok()).collect())
        .collect())
}

fn column_of(design: &Design, name: &str) -> Result<usize> {
    design
        .names()
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::UnknownPredictor(name.to_string()))
}

pub const UNDEFINED: &str = "undefined";

/// Rank, predictor, correlation — one row per predictor in the given order.
pub fn write_correlations(path: &Path, rows: &[PredictorCorrelation]) -> Result<()> {
    let mut out = String::from("rank,predictor,corr\n");
    for (i, r) in rows.iter().enumerate() {
        let corr = r.corr.map_or(UNDEFINED.to_string(), |c| format!("{c:.6}"));
        out.push_str(&format!("{},{},{}\n", i + 1, csv_field(&r.name), corr));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_reports(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut out = String::from("sample,model,mode,feature_set,n_features,nmae,corr,n_cells,seed,normalization\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{},{},{}\n",
            r.sample,
            r.model,
            r.mode.code(),
            csv_field(&r.feature_set),
            r.n_features,
            r.nmae,
            r.corr,
            r.n_cells,
            r.seed,
            r.normalization.code()
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Comparison table: one row per (model, predictor set, mode), one
/// nMAE/CORR column pair per sample.
pub struct ReportTable<'a>(pub &'a [EvalReport]);

impl fmt::Display for ReportTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let samples: Vec<Sample> = Sample::ALL
            .into_iter()
            .filter(|s| self.0.iter().any(|r| r.sample == *s))
            .collect();
        let mut keys: Vec<(String, String, Mode)> = Vec::new();
        for r in self.0 {
            let key = (r.model.clone(), r.feature_set.clone(), r.mode);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        write!(f, "{:<6} {:<12} {:<6}", "model", "predictors", "mode")?;
        for s in &samples {
            write!(f, " | {:^17}", s.code())?;
        }
        writeln!(f)?;
        write!(f, "{:<6} {:<12} {:<6}", "", "", "")?;
        for _ in &samples {
            write!(f, " | {:>8} {:>8}", "nMAE", "CORR")?;
        }
        writeln!(f)?;
        for (model, set, mode) in keys {
            write!(f, "{model:<6} {set:<12} {:<6}", mode.code())?;
            for s in &samples {
                match self
                    .0
                    .iter()
                    .find(|r| r.model == model && r.feature_set == set && r.mode == mode && r.sample == *s)
                {
                    Some(r) => write!(f, " | {:>8.3} {:>8.3}", r.nmae, r.corr)?,
                    None => write!(f, " | {:>8} {:>8}", "-", "-")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
