//! Climate statistics, gradient-exceedance frequencies and geography
//! attributes assembled into a named per-cell predictor matrix.
//!
//! Predictor names follow a fixed grammar:
//!
//! * `<VAR> <STAT>` with `STAT` one of `Mean`, `bottom Q`, `Median`, `top Q`,
//!   `SD`, `SD S` (sd of the 12 climatological monthly means);
//! * `<VAR> +ve (<s>)` / `<VAR> -ve (<s>)` for the frequency of step-`s`
//!   increases/decreases beyond the variable's escalated threshold;
//! * one of the ten geography names (`Latitude`, `Dist. M. River`, ...).
//!
//! `VAR` is a variable code: `MSLP`, `UV10`, `T2`, `DT`, `D2`, `TP`, `RH`,
//! `SR`, `SUND` (also `TMIN`/`TMAX` for the non-gradient statistics).

pub mod stats;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geof::{Frame, FrameKind};
use crate::gridstore::{fmt_f64, Cadence, CellTable, GeoAttr, TableFormat, VariableId, VariableSeries};

pub use stats::{
    daily_excursion, gradient_exceedance, seasonal_sd, summary_stats, DailyExcursion, Sign,
    SummaryStats,
};

/// Climate variables that contribute predictors, in canonical order.
pub const FEATURE_VARIABLES: [VariableId; 9] = [
    VariableId::Mslp,
    VariableId::Uv10,
    VariableId::T2,
    VariableId::Dt,
    VariableId::D2,
    VariableId::Tp,
    VariableId::Rh,
    VariableId::Sr,
    VariableId::Sund,
];

pub const MAX_GRADIENT_STEP: u8 = 5;

/// Gradient base threshold in the variable's storage units (MSLP in hPa).
pub fn gradient_base(variable: VariableId) -> Option<f64> {
    match variable {
        VariableId::Mslp => Some(7.5),
        VariableId::Uv10 => Some(2.5),
        VariableId::T2 => Some(5.0),
        VariableId::Dt => Some(2.5),
        VariableId::D2 => Some(7.0),
        VariableId::Tp => Some(5.0),
        VariableId::Rh => Some(20.0),
        VariableId::Sr => Some(100.0),
        VariableId::Sund => Some(3.0),
        VariableId::Tmin | VariableId::Tmax => None,
    }
}

/// Native cadence of each variable.
pub fn native_cadence(variable: VariableId) -> Cadence {
    match variable {
        VariableId::Mslp | VariableId::Uv10 | VariableId::Tmin | VariableId::Tmax => {
            Cadence::SixHourly
        }
        _ => Cadence::Daily,
    }
}

/// Per-step threshold growth: 10% for 6-hourly, 15% for daily steps.
pub fn escalation(cadence: Cadence) -> f64 {
    match cadence {
        Cadence::SixHourly => 0.10,
        Cadence::Daily => 0.15,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscalationMode {
    /// `base * (1 + e)^(s - 1)`
    #[default]
    Compound,
    /// `base * (1 + e (s - 1))`
    Additive,
}

pub fn gradient_threshold(variable: VariableId, step: u8, mode: EscalationMode) -> Option<f64> {
    let base = gradient_base(variable)?;
    let e = escalation(native_cadence(variable));
    let k = f64::from(step) - 1.0;
    Some(match mode {
        EscalationMode::Compound => base * (1.0 + e).powf(k),
        EscalationMode::Additive => base * (1.0 + e * k),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Statistic {
    Mean,
    BottomQ,
    Median,
    TopQ,
    Sd,
    SdS,
}

impl Statistic {
    pub const ALL: [Statistic; 6] = [
        Statistic::Mean,
        Statistic::BottomQ,
        Statistic::Median,
        Statistic::TopQ,
        Statistic::Sd,
        Statistic::SdS,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Statistic::Mean => "Mean",
            Statistic::BottomQ => "bottom Q",
            Statistic::Median => "Median",
            Statistic::TopQ => "top Q",
            Statistic::Sd => "SD",
            Statistic::SdS => "SD S",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureSpec {
    Stat { variable: VariableId, stat: Statistic },
    Gradient { variable: VariableId, sign: Sign, step: u8 },
    Geography(GeoAttr),
}

impl FeatureSpec {
    pub fn variable(&self) -> Option<VariableId> {
        match *self {
            FeatureSpec::Stat { variable, .. } | FeatureSpec::Gradient { variable, .. } => {
                Some(variable)
            }
            FeatureSpec::Geography(_) => None,
        }
    }

    fn validate(&self) -> Result<()> {
        if let FeatureSpec::Gradient { variable, step, .. } = *self {
            if !(1..=MAX_GRADIENT_STEP).contains(&step) || gradient_base(variable).is_none() {
                return Err(Error::UnknownPredictor(self.to_string()));
            }
        }
        Ok(())
    }
}

impl fmt::Display for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureSpec::Stat { variable, stat } => write!(f, "{} {}", variable, stat.label()),
            FeatureSpec::Gradient { variable, sign, step } => {
                let s = match sign {
                    Sign::Pos => '+',
                    Sign::Neg => '-',
                };
                write!(f, "{variable} {s}ve ({step})")
            }
            FeatureSpec::Geography(a) => f.write_str(a.predictor_name()),
        }
    }
}

impl FromStr for FeatureSpec {
    type Err = Error;

    fn from_str(name: &str) -> Result<Self> {
        let unknown = || Error::UnknownPredictor(name.to_string());
        if let Some(attr) = GeoAttr::from_predictor_name(name) {
            return Ok(FeatureSpec::Geography(attr));
        }
        let (code, rest) = name.split_once(' ').ok_or_else(unknown)?;
        let variable: VariableId = code.parse().map_err(|_| unknown())?;
        if let Some(stat) = Statistic::ALL.into_iter().find(|s| s.label() == rest) {
            return Ok(FeatureSpec::Stat { variable, stat });
        }
        let sign = match rest.get(..5) {
            Some("+ve (") => Sign::Pos,
            Some("-ve (") => Sign::Neg,
            _ => return Err(unknown()),
        };
        let step: u8 = rest[5..]
            .strip_suffix(')')
            .and_then(|s| s.parse().ok())
            .ok_or_else(unknown)?;
        let spec = FeatureSpec::Gradient { variable, sign, step };
        spec.validate().map_err(|_| unknown())?;
        Ok(spec)
    }
}

/// The full default census: 9 variables x 6 statistics, 9 x 10 signed step
/// frequencies and the 10 geography attributes (154 columns).
pub fn default_specs() -> Vec<FeatureSpec> {
    let mut specs = Vec::with_capacity(154);
    for variable in FEATURE_VARIABLES {
        for stat in Statistic::ALL {
            specs.push(FeatureSpec::Stat { variable, stat });
        }
        for sign in [Sign::Pos, Sign::Neg] {
            for step in 1..=MAX_GRADIENT_STEP {
                specs.push(FeatureSpec::Gradient { variable, sign, step });
            }
        }
    }
    specs.extend(GeoAttr::ALL.into_iter().map(FeatureSpec::Geography));
    specs
}

pub fn parse_specs<S: AsRef<str>>(names: &[S]) -> Result<Vec<FeatureSpec>> {
    names.iter().map(|n| n.as_ref().parse()).collect()
}

#[derive(Debug, Clone)]
pub struct FeatureConfig {
    pub specs: Vec<FeatureSpec>,
    pub escalation: EscalationMode,
    /// Cells whose series miss more than this fraction of samples get every
    /// feature of that variable marked missing.
    pub max_missing_fraction: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            specs: default_specs(),
            escalation: EscalationMode::Compound,
            max_missing_fraction: 0.05,
        }
    }
}

/// Climate series keyed by variable.
pub type SeriesSet = BTreeMap<VariableId, VariableSeries>;

/// Cells x named predictors. Values are column-major; a missing value is NaN
/// and always has its mask bit set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    cell_ids: Vec<i64>,
    names: Vec<String>,
    values: Vec<f64>,
    missing: Vec<bool>,
}

impl FeatureMatrix {
    /// `columns[j]` holds predictor `names[j]` for every cell; `None` is missing.
    pub fn from_columns(cell_ids: Vec<i64>, names: Vec<String>, columns: Vec<Vec<Option<f64>>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Misaligned(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::InvalidParameter(format!("duplicate predictor '{dup}'")));
        }
        let n = cell_ids.len();
        let mut values = Vec::with_capacity(n * names.len());
        let mut missing = Vec::with_capacity(n * names.len());
        for (col, name) in columns.iter().zip(&names) {
            if col.len() != n {
                return Err(Error::Misaligned(format!(
                    "column '{name}' has {} rows, expected {n}",
                    col.len()
                )));
            }
            for v in col {
                match v {
                    Some(x) if x.is_finite() => {
                        values.push(*x);
                        missing.push(false);
                    }
                    Some(x) => {
                        return Err(Error::InvalidParameter(format!(
                            "non-finite value {x} in '{name}'"
                        )))
                    }
                    None => {
                        values.push(f64::NAN);
                        missing.push(true);
                    }
                }
            }
        }
        Ok(FeatureMatrix {
            cell_ids,
            names,
            values,
            missing,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.cell_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn cell_ids(&self) -> &[i64] {
        &self.cell_ids
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Raw column; missing entries are NaN.
    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.n_rows();
        &self.values[j * n..(j + 1) * n]
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let k = col * self.n_rows() + row;
        (!self.missing[k]).then(|| self.values[k])
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.missing[col * self.n_rows() + row]
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|m| **m).count()
    }

    pub fn row_is_complete(&self, row: usize) -> bool {
        (0..self.n_cols()).all(|c| !self.is_missing(row, c))
    }

    /// Columns in the given order.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<FeatureMatrix> {
        let idx = names
            .iter()
            .map(|n| {
                self.column_index(n.as_ref())
                    .ok_or_else(|| Error::UnknownPredictor(n.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let columns = idx.iter().map(|&j| self.column_opt(j)).collect();
        FeatureMatrix::from_columns(
            self.cell_ids.clone(),
            names.iter().map(|n| n.as_ref().to_string()).collect(),
            columns,
        )
    }

    fn column_opt(&self, j: usize) -> Vec<Option<f64>> {
        (0..self.n_rows()).map(|i| self.get(i, j)).collect()
    }

    /// Appends a copy of an existing column under a new name.
    pub fn with_duplicate(&self, source: &str, new_name: &str) -> Result<FeatureMatrix> {
        let j = self
            .column_index(source)
            .ok_or_else(|| Error::UnknownPredictor(source.to_string()))?;
        let mut names = self.names.clone();
        let mut columns: Vec<_> = (0..self.n_cols()).map(|c| self.column_opt(c)).collect();
        names.push(new_name.to_string());
        columns.push(self.column_opt(j));
        FeatureMatrix::from_columns(self.cell_ids.clone(), names, columns)
    }

    pub fn write(&self, path: &Path, format: TableFormat) -> Result<()> {
        match format {
            TableFormat::Binary => Frame {
                kind: FrameKind::Features,
                meta: Vec::new(),
                row_keys: self.cell_ids.clone(),
                col_labels: self.names.clone(),
                values: self.values.clone(),
            }
            .write(path),
            TableFormat::Csv => {
                let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
                let mut w = csv::Writer::from_writer(file);
                let header = std::iter::once("cell_id".to_string()).chain(self.names.iter().cloned());
                w.write_record(header).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                for (i, id) in self.cell_ids.iter().enumerate() {
                    let row = std::iter::once(id.to_string())
                        .chain((0..self.n_cols()).map(|j| fmt_f64(self.column(j)[i])));
                    w.write_record(row).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                }
                w.flush().map_err(|e| Error::io(path, e))
            }
        }
    }

    pub fn load(path: &Path) -> Result<FeatureMatrix> {
        match TableFormat::from_path(path) {
            TableFormat::Binary => {
                let frame = Frame::read(path)?;
                if frame.kind != FrameKind::Features {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        message: format!("expected feature frame, found {:?}", frame.kind),
                    });
                }
                let n = frame.n_rows();
                let columns = (0..frame.n_cols())
                    .map(|j| {
                        frame.values[j * n..(j + 1) * n]
                            .iter()
                            .map(|v| (!v.is_nan()).then_some(*v))
                            .collect()
                    })
                    .collect();
                FeatureMatrix::from_columns(frame.row_keys, frame.col_labels, columns)
            }
            TableFormat::Csv => {
                let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
                let mut rdr = csv::Reader::from_reader(file);
                let headers = rdr
                    .headers()
                    .map_err(|e| Error::InvalidParameter(e.to_string()))?
                    .clone();
                if headers.get(0) != Some("cell_id") {
                    return Err(Error::MissingColumn {
                        path: path.to_path_buf(),
                        column: "cell_id".into(),
                    });
                }
                let names: Vec<String> = headers.iter().skip(1).map(String::from).collect();
                let mut ids = Vec::new();
                let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
                for rec in rdr.records() {
                    let rec = rec.map_err(|e| Error::InvalidParameter(e.to_string()))?;
                    let line = rec.position().map(|p| p.line()).unwrap_or(0);
                    let bad = |col: &str, raw: &str| Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        column: col.to_string(),
                        message: format!("cannot parse '{raw}'"),
                    };
                    ids.push(rec[0].parse::<i64>().map_err(|_| bad("cell_id", &rec[0]))?);
                    for (j, raw) in rec.iter().skip(1).enumerate() {
                        let v = if raw == "NA" || raw.is_empty() {
                            None
                        } else {
                            Some(raw.parse::<f64>().map_err(|_| bad(&names[j], raw))?)
                        };
                        columns[j].push(v);
                    }
                }
                FeatureMatrix::from_columns(ids, names, columns)
            }
        }
    }
}

/// Derives the configured predictors for every cell of `cells`.
///
/// `DT` is derived from `TMIN`/`TMAX` when it is not supplied directly.
pub fn build_feature_matrix(cells: &CellTable, series: &SeriesSet, config: &FeatureConfig) -> Result<FeatureMatrix> {
    if config.specs.is_empty() {
        return Err(Error::InvalidParameter("empty predictor list".into()));
    }
    for spec in &config.specs {
        spec.validate()?;
    }

    let ids = cells.ids();
    let mut by_variable: BTreeMap<VariableId, Vec<usize>> = BTreeMap::new();
    for (j, spec) in config.specs.iter().enumerate() {
        if let Some(v) = spec.variable() {
            by_variable.entry(v).or_default().push(j);
        }
    }

    let mut derived_dt = None;
    if by_variable.contains_key(&VariableId::Dt) && !series.contains_key(&VariableId::Dt) {
        let tmin = series.get(&VariableId::Tmin);
        let tmax = series.get(&VariableId::Tmax);
        match (tmin, tmax) {
            (Some(lo), Some(hi)) => derived_dt = Some(daily_excursion(lo, hi)?),
            _ => return Err(Error::UnknownPredictor("DT (needs TMIN and TMAX series)".into())),
        }
    }

    let n = cells.len();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); config.specs.len()];

    for (&variable, spec_idx) in &by_variable {
        let (s, extra_missing): (&VariableSeries, Option<&[f64]>) = match (variable, &derived_dt) {
            (VariableId::Dt, Some(dt)) => (&dt.series, Some(&dt.input_missing_fraction)),
            _ => (
                series
                    .get(&variable)
                    .ok_or_else(|| Error::UnknownPredictor(format!("{variable} (no series loaded)")))?,
                None,
            ),
        };
        if s.cell_ids() != ids.as_slice() {
            return Err(Error::Misaligned(format!(
                "{variable} series cells do not match the cell table"
            )));
        }
        let specs: Vec<FeatureSpec> = spec_idx.iter().map(|&j| config.specs[j]).collect();
        if specs.iter().any(|f| matches!(f, FeatureSpec::Gradient { .. }))
            && s.cadence != native_cadence(variable)
        {
            return Err(Error::Misaligned(format!(
                "{variable} gradients need {} data, series is {}",
                native_cadence(variable).name(),
                s.cadence.name()
            )));
        }

        let per_cell: Vec<Vec<Option<f64>>> = (0..n)
            .into_par_iter()
            .map(|c| {
                let miss = s
                    .missing_fraction(c)
                    .max(extra_missing.map_or(0.0, |m| m[c]));
                if miss > config.max_missing_fraction {
                    return vec![None; specs.len()];
                }
                cell_features(s, c, &specs, config.escalation)
            })
            .collect();

        for (k, &j) in spec_idx.iter().enumerate() {
            columns[j] = per_cell.iter().map(|row| row[k]).collect();
        }
    }

    for (j, spec) in config.specs.iter().enumerate() {
        if let FeatureSpec::Geography(attr) = spec {
            columns[j] = cells.cells().iter().map(|c| Some(c.attr(*attr))).collect();
        }
    }

    let names = config.specs.iter().map(|s| s.to_string()).collect();
    FeatureMatrix::from_columns(ids, names, columns)
}

fn cell_features(s: &VariableSeries, cell: usize, specs: &[FeatureSpec], mode: EscalationMode) -> Vec<Option<f64>> {
    let values = s.cell_values(cell);
    let needs_summary = specs
        .iter()
        .any(|f| matches!(f, FeatureSpec::Stat { stat, .. } if *stat != Statistic::SdS));
    let summary = if needs_summary {
        summary_stats(values).ok()
    } else {
        None
    };
    let mut sd_s: Option<Option<f64>> = None;
    specs
        .iter()
        .map(|spec| match *spec {
            FeatureSpec::Stat { stat, .. } => match stat {
                Statistic::SdS => {
                    *sd_s.get_or_insert_with(|| seasonal_sd(values, s.months()).ok())
                }
                Statistic::Mean => summary.map(|x| x.mean),
                Statistic::BottomQ => summary.map(|x| x.q1),
                Statistic::Median => summary.map(|x| x.median),
                Statistic::TopQ => summary.map(|x| x.q3),
                Statistic::Sd => summary.map(|x| x.sd),
            },
            FeatureSpec::Gradient { variable, sign, step } => {
                let threshold = gradient_threshold(variable, step, mode)?;
                gradient_exceedance(values, step as usize, sign, threshold).ok()
            }
            FeatureSpec::Geography(_) => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridstore::Cell;
    use chrono::{Duration, NaiveDate};

    #[test]
    fn default_census_has_154_unique_names() {
        let specs = default_specs();
        assert_eq!(specs.len(), 9 * 6 + 9 * 10 + 10);
        let names: HashSet<String> = specs.iter().map(|s| s.to_string()).collect();
        assert_eq!(names.len(), 154);
    }

    #[test]
    fn names_round_trip() {
        for spec in default_specs() {
            let name = spec.to_string();
            assert_eq!(name.parse::<FeatureSpec>().unwrap(), spec, "{name}");
        }
        assert_eq!(
            "SR -ve (1)".parse::<FeatureSpec>().unwrap(),
            FeatureSpec::Gradient {
                variable: VariableId::Sr,
                sign: Sign::Neg,
                step: 1
            }
        );
        assert!("SR -ve (6)".parse::<FeatureSpec>().is_err());
        assert!("XYZ Mean".parse::<FeatureSpec>().is_err());
        assert!("TMIN +ve (1)".parse::<FeatureSpec>().is_err());
    }

    #[test]
    fn threshold_schedule() {
        let t = gradient_threshold(VariableId::T2, 3, EscalationMode::Compound).unwrap();
        assert!((t - 6.6125).abs() < 1e-12);
        let m = gradient_threshold(VariableId::Mslp, 2, EscalationMode::Compound).unwrap();
        assert!((m - 8.25).abs() < 1e-12);
        let a = gradient_threshold(VariableId::T2, 3, EscalationMode::Additive).unwrap();
        assert!((a - 6.5).abs() < 1e-12);
    }

    fn cells(n: usize) -> CellTable {
        CellTable::new(
            (0..n)
                .map(|i| Cell {
                    cell_id: i as i64 + 1,
                    lat: 10.5 + i as f64,
                    lon: 0.5,
                    geography: [10.5 + i as f64, 5.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 1.0, 2.0],
                })
                .collect(),
        )
        .unwrap()
    }

    fn series(variable: VariableId, cadence: Cadence, n_cells: usize, f: impl Fn(usize, usize) -> f64) -> VariableSeries {
        let start = NaiveDate::from_ymd_opt(2001, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let n_steps = match cadence {
            Cadence::Daily => 365,
            Cadence::SixHourly => 365 * 4,
        };
        let ts: Vec<_> = (0..n_steps)
            .map(|i| start + Duration::seconds(cadence.seconds() * i as i64))
            .collect();
        let mut values = Vec::new();
        for c in 0..n_cells {
            for s in 0..n_steps {
                values.push(f(c, s));
            }
        }
        VariableSeries::new(variable, cadence, (1..=n_cells as i64).collect(), ts, values).unwrap()
    }

    fn full_set(n_cells: usize) -> SeriesSet {
        let mut set = SeriesSet::new();
        for v in VariableId::ALL {
            let cad = native_cadence(v);
            set.insert(v, series(v, cad, n_cells, |c, s| (c * 7 + s % 13) as f64 + if v == VariableId::Tmax { 5.0 } else { 0.0 }));
        }
        set
    }

    #[test]
    fn default_matrix_shape() {
        let m = build_feature_matrix(&cells(3), &full_set(3), &FeatureConfig::default()).unwrap();
        assert_eq!((m.n_rows(), m.n_cols()), (3, 154));
        assert_eq!(m.missing_count(), 0);
        assert_eq!(m.names()[0], "MSLP Mean");
        assert!(m.column_index("SR -ve (1)").is_some());
        assert_eq!(m.names()[153], "Soil");
    }

    #[test]
    fn latitude_only() {
        let config = FeatureConfig {
            specs: parse_specs(&["Latitude"]).unwrap(),
            ..FeatureConfig::default()
        };
        let m = build_feature_matrix(&cells(4), &SeriesSet::new(), &config).unwrap();
        assert_eq!(m.n_cols(), 1);
        assert_eq!(m.column(0), &[10.5, 11.5, 12.5, 13.5]);
    }

    #[test]
    fn reference_top_ten_in_order() {
        let names = [
            "Latitude",
            "MSLP SD S",
            "Dist. M. River",
            "D2 SD S",
            "Dist. River",
            "Dist. Ocean",
            "Dist. Lake",
            "MSLP SD",
            "MSLP bottom Q",
            "TP SD",
        ];
        let config = FeatureConfig {
            specs: parse_specs(&names).unwrap(),
            ..FeatureConfig::default()
        };
        let m = build_feature_matrix(&cells(3), &full_set(3), &config).unwrap();
        assert_eq!(m.names(), names.map(String::from).as_slice());
    }

    #[test]
    fn unknown_or_absent_variable_is_an_error() {
        let config = FeatureConfig {
            specs: parse_specs(&["TP Mean"]).unwrap(),
            ..FeatureConfig::default()
        };
        assert!(matches!(
            build_feature_matrix(&cells(2), &SeriesSet::new(), &config),
            Err(Error::UnknownPredictor(_))
        ));
        assert!(build_feature_matrix(
            &cells(2),
            &SeriesSet::new(),
            &FeatureConfig {
                specs: vec![],
                ..FeatureConfig::default()
            }
        )
        .is_err());
    }

    #[test]
    fn heavily_missing_cell_is_masked() {
        let mut set = SeriesSet::new();
        set.insert(
            VariableId::T2,
            series(VariableId::T2, Cadence::Daily, 2, |c, s| {
                if c == 1 && s % 10 == 0 {
                    f64::NAN
                } else {
                    s as f64
                }
            }),
        );
        let config = FeatureConfig {
            specs: parse_specs(&["T2 Mean", "T2 +ve (1)"]).unwrap(),
            ..FeatureConfig::default()
        };
        let m = build_feature_matrix(&cells(2), &set, &config).unwrap();
        assert!(m.get(0, 0).is_some());
        assert!(m.is_missing(1, 0) && m.is_missing(1, 1));
        assert!(m.column(0)[1].is_nan());
        assert!(!m.row_is_complete(1));
    }

    #[test]
    fn matrix_round_trips_through_both_formats() {
        let m = build_feature_matrix(&cells(3), &full_set(3), &FeatureConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for name in ["f.geof", "f.csv"] {
            let p = dir.path().join(name);
            m.write(&p, TableFormat::from_path(&p)).unwrap();
            let back = FeatureMatrix::load(&p).unwrap();
            assert_eq!(back.names(), m.names());
            for j in 0..m.n_cols() {
                let a: Vec<u64> = m.column(j).iter().map(|v| v.to_bits()).collect();
                let b: Vec<u64> = back.column(j).iter().map(|v| v.to_bits()).collect();
                assert_eq!(a, b, "{name} column {j}");
            }
        }
    }
}
