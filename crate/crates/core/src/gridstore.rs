//! Grid cells, geography attributes, economy records and climate series.
//!
//! Tables are validated on load and kept sorted by `cell_id`, so any
//! permutation of the input rows produces the same in-memory table.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geof::{Frame, FrameKind};

/// On-disk table encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Binary,
}

impl TableFormat {
    /// `.geof` means binary, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("geof") => TableFormat::Binary,
            _ => TableFormat::Csv,
        }
    }
}

/// The ten geography predictors carried by every cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GeoAttr {
    Latitude,
    Elevation,
    DistCoast1,
    DistCoast2,
    DistLake,
    DistMajorRiver,
    DistRiver,
    DistOcean,
    Vegetation,
    Soil,
}

impl GeoAttr {
    pub const ALL: [GeoAttr; 10] = [
        GeoAttr::Latitude,
        GeoAttr::Elevation,
        GeoAttr::DistCoast1,
        GeoAttr::DistCoast2,
        GeoAttr::DistLake,
        GeoAttr::DistMajorRiver,
        GeoAttr::DistRiver,
        GeoAttr::DistOcean,
        GeoAttr::Vegetation,
        GeoAttr::Soil,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn csv_column(self) -> &'static str {
        match self {
            GeoAttr::Latitude => "latitude",
            GeoAttr::Elevation => "elevation_m",
            GeoAttr::DistCoast1 => "dist_coast1_km",
            GeoAttr::DistCoast2 => "dist_coast2_km",
            GeoAttr::DistLake => "dist_lake_km",
            GeoAttr::DistMajorRiver => "dist_major_river_km",
            GeoAttr::DistRiver => "dist_river_km",
            GeoAttr::DistOcean => "dist_ocean_km",
            GeoAttr::Vegetation => "vegetation",
            GeoAttr::Soil => "soil",
        }
    }

    /// Canonical predictor name.
    pub fn predictor_name(self) -> &'static str {
        match self {
            GeoAttr::Latitude => "Latitude",
            GeoAttr::Elevation => "Elevation",
            GeoAttr::DistCoast1 => "Dist. Coast 1",
            GeoAttr::DistCoast2 => "Dist. Coast 2",
            GeoAttr::DistLake => "Dist. Lake",
            GeoAttr::DistMajorRiver => "Dist. M. River",
            GeoAttr::DistRiver => "Dist. River",
            GeoAttr::DistOcean => "Dist. Ocean",
            GeoAttr::Vegetation => "Vegetation",
            GeoAttr::Soil => "Soil",
        }
    }

    pub fn from_predictor_name(name: &str) -> Option<GeoAttr> {
        GeoAttr::ALL
            .into_iter()
            .find(|a| a.predictor_name() == name)
    }

    /// Inclusive bounds and whether the value must be an integer category.
    fn bounds(self) -> (f64, f64, bool) {
        match self {
            GeoAttr::Latitude => (-90.0, 90.0, false),
            GeoAttr::Elevation => (f64::NEG_INFINITY, f64::INFINITY, false),
            GeoAttr::Vegetation => (0.0, 31.0, true),
            GeoAttr::Soil => (0.0, 250.0, true),
            _ => (0.0, f64::INFINITY, false),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub cell_id: i64,
    pub lat: f64,
    pub lon: f64,
    /// Indexed by [`GeoAttr::index`].
    pub geography: [f64; 10],
}

impl Cell {
    pub fn attr(&self, attr: GeoAttr) -> f64 {
        self.geography[attr.index()]
    }

    /// Raster position on the global 1° grid: row 0 is the 89.5° N band,
    /// column 0 the -179.5° band.
    pub fn lattice_index(&self) -> Option<(usize, usize)> {
        let row = 90.0 - self.lat - 0.5;
        let col = self.lon + 180.0 - 0.5;
        let on_lattice = |v: f64| v.fract() == 0.0 && v >= 0.0;
        if on_lattice(row) && on_lattice(col) && row < 180.0 && col < 360.0 {
            Some((row as usize, col as usize))
        } else {
            None
        }
    }
}

/// Validated set of grid cells, sorted by `cell_id`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CellTable {
    cells: Vec<Cell>,
    index: HashMap<i64, usize>,
}

impl CellTable {
    pub fn new(mut cells: Vec<Cell>) -> Result<Self> {
        cells.sort_by_key(|c| c.cell_id);
        let mut index = HashMap::with_capacity(cells.len());
        let mut coords = HashSet::with_capacity(cells.len());
        for (i, cell) in cells.iter().enumerate() {
            if index.insert(cell.cell_id, i).is_some() {
                return Err(Error::DuplicateCell(cell.cell_id));
            }
            validate_cell(cell)?;
            if !coords.insert((cell.lat.to_bits(), cell.lon.to_bits())) {
                return Err(Error::InvalidParameter(format!(
                    "cell {} duplicates coordinates ({}, {})",
                    cell.cell_id, cell.lat, cell.lon
                )));
            }
        }
        Ok(CellTable { cells, index })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn ids(&self) -> Vec<i64> {
        self.cells.iter().map(|c| c.cell_id).collect()
    }

    pub fn get(&self, cell_id: i64) -> Option<&Cell> {
        self.index.get(&cell_id).map(|&i| &self.cells[i])
    }

    pub fn position(&self, cell_id: i64) -> Option<usize> {
        self.index.get(&cell_id).copied()
    }
}

fn validate_cell(cell: &Cell) -> Result<()> {
    let range = |field: &str, value: f64, min: f64, max: f64| {
        if !(value >= min && value <= max) || !value.is_finite() {
            Err(Error::OutOfRange {
                cell_id: cell.cell_id,
                field: field.to_string(),
                value,
                min,
                max,
            })
        } else {
            Ok(())
        }
    };
    range("lat", cell.lat, -90.0, 90.0)?;
    range("lon", cell.lon, -180.0, 180.0)?;
    if cell.lon >= 180.0 {
        return Err(Error::OutOfRange {
            cell_id: cell.cell_id,
            field: "lon".into(),
            value: cell.lon,
            min: -180.0,
            max: 180.0,
        });
    }
    if cell.lattice_index().is_none() {
        return Err(Error::InvalidParameter(format!(
            "cell {} at ({}, {}) is not a 1-degree cell center",
            cell.cell_id, cell.lat, cell.lon
        )));
    }
    for attr in GeoAttr::ALL {
        let (min, max, integer) = attr.bounds();
        let v = cell.attr(attr);
        if v.is_nan() || v < min || v > max || (integer && v.fract() != 0.0) {
            return Err(Error::OutOfRange {
                cell_id: cell.cell_id,
                field: attr.csv_column().to_string(),
                value: v,
                min,
                max,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EconomyRecord {
    pub cell_id: i64,
    pub year: i32,
    pub gcp: f64,
    pub population: f64,
}

/// Economy records sorted by `(cell_id, year)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EconomyTable {
    records: Vec<EconomyRecord>,
    years: Vec<i32>,
}

impl EconomyTable {
    /// Keeps only records whose year is configured; rejects negative values
    /// and duplicate `(cell_id, year)` pairs.
    pub fn new(records: Vec<EconomyRecord>, years: &[i32]) -> Result<Self> {
        let wanted: HashSet<i32> = years.iter().copied().collect();
        let mut kept: Vec<EconomyRecord> = records
            .into_iter()
            .filter(|r| wanted.contains(&r.year))
            .collect();
        for r in &kept {
            for (field, value) in [("gcp_usd", r.gcp), ("population", r.population)] {
                if !(value >= 0.0) || !value.is_finite() {
                    return Err(Error::OutOfRange {
                        cell_id: r.cell_id,
                        field: field.into(),
                        value,
                        min: 0.0,
                        max: f64::INFINITY,
                    });
                }
            }
        }
        kept.sort_by_key(|r| (r.cell_id, r.year));
        if let Some(w) = kept
            .windows(2)
            .find(|w| (w[0].cell_id, w[0].year) == (w[1].cell_id, w[1].year))
        {
            return Err(Error::DuplicateRecord {
                cell_id: w[0].cell_id,
                year: w[0].year,
            });
        }
        let mut years = years.to_vec();
        years.sort_unstable();
        years.dedup();
        Ok(EconomyTable {
            records: kept,
            years,
        })
    }

    pub fn records(&self) -> &[EconomyRecord] {
        &self.records
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn distinct_cells(&self) -> usize {
        self.by_cell().len()
    }

    /// Records grouped per cell, in `cell_id` order.
    pub fn by_cell(&self) -> BTreeMap<i64, Vec<EconomyRecord>> {
        let mut out: BTreeMap<i64, Vec<EconomyRecord>> = BTreeMap::new();
        for r in &self.records {
            out.entry(r.cell_id).or_default().push(*r);
        }
        out
    }

    /// Cells with economy rows but no grid cell; logged as warnings.
    pub fn unknown_cells(&self, cells: &CellTable) -> Vec<i64> {
        let unknown: Vec<i64> = self
            .by_cell()
            .into_keys()
            .filter(|id| cells.get(*id).is_none())
            .collect();
        for id in &unknown {
            log::warn!("economy table references unknown cell {id}");
        }
        unknown
    }
}

/// Climate variables accepted by the ingest path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariableId {
    Mslp,
    Uv10,
    T2,
    Tmin,
    Tmax,
    D2,
    Tp,
    Rh,
    Sr,
    Sund,
    /// Daily temperature excursion, derived from `Tmin`/`Tmax`.
    Dt,
}

impl VariableId {
    /// Variables read from files (everything except the derived `Dt`).
    pub const ALL: [VariableId; 10] = [
        VariableId::Mslp,
        VariableId::Uv10,
        VariableId::T2,
        VariableId::Tmin,
        VariableId::Tmax,
        VariableId::D2,
        VariableId::Tp,
        VariableId::Rh,
        VariableId::Sr,
        VariableId::Sund,
    ];

    pub fn code(self) -> &'static str {
        match self {
            VariableId::Mslp => "MSLP",
            VariableId::Uv10 => "UV10",
            VariableId::T2 => "T2",
            VariableId::Tmin => "TMIN",
            VariableId::Tmax => "TMAX",
            VariableId::D2 => "D2",
            VariableId::Tp => "TP",
            VariableId::Rh => "RH",
            VariableId::Sr => "SR",
            VariableId::Sund => "SUND",
            VariableId::Dt => "DT",
        }
    }
}

impl fmt::Display for VariableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for VariableId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariableId::ALL
            .into_iter()
            .chain([VariableId::Dt])
            .find(|v| v.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownPredictor(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cadence {
    SixHourly,
    Daily,
}

impl Cadence {
    pub fn seconds(self) -> i64 {
        match self {
            Cadence::SixHourly => 6 * 3600,
            Cadence::Daily => 24 * 3600,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Cadence::SixHourly => "six_hourly",
            Cadence::Daily => "daily",
        }
    }
}

impl FromStr for Cadence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "six_hourly" | "6h" | "6-hr" => Ok(Cadence::SixHourly),
            "daily" | "1d" => Ok(Cadence::Daily),
            other => Err(Error::InvalidParameter(format!("unknown cadence '{other}'"))),
        }
    }
}

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M"))
        .ok()
        .or_else(|| {
            NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

/// One variable's samples for every cell. Missing samples are NaN; use
/// [`is_missing`] rather than comparing values.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableSeries {
    pub variable: VariableId,
    pub cadence: Cadence,
    cell_ids: Vec<i64>,
    timestamps: Vec<NaiveDateTime>,
    months: Vec<u8>,
    /// Row-major: `values[cell * n_steps + step]`.
    values: Vec<f64>,
}

/// Sentinel test for climate samples.
#[inline]
pub fn is_missing(v: f64) -> bool {
    v.is_nan()
}

pub const MISSING: f64 = f64::NAN;

impl VariableSeries {
    pub fn new(
        variable: VariableId,
        cadence: Cadence,
        cell_ids: Vec<i64>,
        timestamps: Vec<NaiveDateTime>,
        values: Vec<f64>,
    ) -> Result<Self> {
        check_cadence(&timestamps, cadence)?;
        if values.len() != cell_ids.len() * timestamps.len() {
            return Err(Error::Misaligned(format!(
                "{} values for {} cells x {} steps",
                values.len(),
                cell_ids.len(),
                timestamps.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| v.is_infinite()) {
            return Err(Error::InvalidParameter(format!("non-finite sample {v}")));
        }
        let months = timestamps.iter().map(|t| t.month() as u8).collect();
        Ok(VariableSeries {
            variable,
            cadence,
            cell_ids,
            timestamps,
            months,
            values,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.cell_ids.len()
    }

    pub fn n_steps(&self) -> usize {
        self.timestamps.len()
    }

    pub fn cell_ids(&self) -> &[i64] {
        &self.cell_ids
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    /// Calendar month (1..=12) of each step.
    pub fn months(&self) -> &[u8] {
        &self.months
    }

    pub fn cell_values(&self, cell: usize) -> &[f64] {
        let n = self.n_steps();
        &self.values[cell * n..(cell + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn missing_fraction(&self, cell: usize) -> f64 {
        let v = self.cell_values(cell);
        if v.is_empty() {
            return 0.0;
        }
        v.iter().filter(|x| is_missing(**x)).count() as f64 / v.len() as f64
    }
}

fn check_cadence(timestamps: &[NaiveDateTime], cadence: Cadence) -> Result<()> {
    let expected = cadence.seconds();
    for (i, w) in timestamps.windows(2).enumerate() {
        let found = (w[1] - w[0]).num_seconds();
        if found != expected {
            return Err(Error::NonUniformCadence {
                index: i + 1,
                expected_secs: expected,
                found_secs: found,
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Loaders
// ---------------------------------------------------------------------------

fn parse_error(path: &Path, line: u64, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column: column.to_string(),
        message: message.into(),
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => parse_error(path, line, "", format!("{other:?}")),
    }
}

fn header_index(path: &Path, headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
}

fn field<T: FromStr>(path: &Path, rec: &csv::StringRecord, idx: usize, name: &str) -> Result<T> {
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    let raw = rec
        .get(idx)
        .ok_or_else(|| parse_error(path, line, name, "missing field"))?;
    raw.parse::<T>()
        .map_err(|_| parse_error(path, line, name, format!("cannot parse '{raw}'")))
}

fn finite(path: &Path, rec: &csv::StringRecord, idx: usize, name: &str) -> Result<f64> {
    let v: f64 = field(path, rec, idx, name)?;
    if v.is_finite() {
        Ok(v)
    } else {
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        Err(parse_error(path, line, name, format!("non-finite value {v}")))
    }
}

const CELL_ID: &str = "cell_id";

pub fn load_cells(path: &Path, format: TableFormat) -> Result<CellTable> {
    match format {
        TableFormat::Csv => load_cells_csv(path),
        TableFormat::Binary => cells_from_frame(path, &Frame::read(path)?),
    }
}

fn load_cells_csv(path: &Path) -> Result<CellTable> {
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let id_col = header_index(path, &headers, CELL_ID)?;
    let lat_col = header_index(path, &headers, "lat")?;
    let lon_col = header_index(path, &headers, "lon")?;
    let geo_cols = GeoAttr::ALL
        .iter()
        .map(|a| header_index(path, &headers, a.csv_column()))
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let mut geography = [0.0; 10];
        for (slot, (&col, attr)) in geography.iter_mut().zip(geo_cols.iter().zip(GeoAttr::ALL)) {
            *slot = finite(path, &rec, col, attr.csv_column())?;
        }
        cells.push(Cell {
            cell_id: field(path, &rec, id_col, CELL_ID)?,
            lat: finite(path, &rec, lat_col, "lat")?,
            lon: finite(path, &rec, lon_col, "lon")?,
            geography,
        });
    }
    CellTable::new(cells)
}

fn expect_kind(path: &Path, frame: &Frame, kind: FrameKind) -> Result<()> {
    if frame.kind != kind {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("expected {kind:?} frame, found {:?}", frame.kind),
        });
    }
    Ok(())
}

fn frame_column<'a>(path: &Path, frame: &'a Frame, name: &str) -> Result<&'a [f64]> {
    let idx = frame
        .col_labels
        .iter()
        .position(|l| l == name)
        .ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })?;
    Ok(frame.column(idx))
}

fn cells_from_frame(path: &Path, frame: &Frame) -> Result<CellTable> {
    expect_kind(path, frame, FrameKind::Cells)?;
    let lat = frame_column(path, frame, "lat")?;
    let lon = frame_column(path, frame, "lon")?;
    let geo = GeoAttr::ALL
        .iter()
        .map(|a| frame_column(path, frame, a.csv_column()))
        .collect::<Result<Vec<_>>>()?;
    let cells = frame
        .row_keys
        .iter()
        .enumerate()
        .map(|(r, &cell_id)| {
            let mut geography = [0.0; 10];
            for (slot, col) in geography.iter_mut().zip(&geo) {
                *slot = col[r];
            }
            Cell {
                cell_id,
                lat: lat[r],
                lon: lon[r],
                geography,
            }
        })
        .collect();
    CellTable::new(cells)
}

/// Loads economy rows, keeping only the configured years.
pub fn load_economy(path: &Path, years: &[i32]) -> Result<EconomyTable> {
    let records = match TableFormat::from_path(path) {
        TableFormat::Csv => load_economy_csv(path)?,
        TableFormat::Binary => {
            let frame = Frame::read(path)?;
            expect_kind(path, &frame, FrameKind::Economy)?;
            let year = frame_column(path, &frame, "year")?;
            let gcp = frame_column(path, &frame, "gcp_usd")?;
            let pop = frame_column(path, &frame, "population")?;
            frame
                .row_keys
                .iter()
                .enumerate()
                .map(|(r, &cell_id)| EconomyRecord {
                    cell_id,
                    year: year[r] as i32,
                    gcp: gcp[r],
                    population: pop[r],
                })
                .collect()
        }
    };
    let total = records.len();
    let table = EconomyTable::new(records, years)?;
    log::info!(
        "{}: kept {} of {} economy rows ({} cells)",
        path.display(),
        table.len(),
        total,
        table.distinct_cells()
    );
    Ok(table)
}

fn load_economy_csv(path: &Path) -> Result<Vec<EconomyRecord>> {
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let id_col = header_index(path, &headers, CELL_ID)?;
    let year_col = header_index(path, &headers, "year")?;
    let gcp_col = header_index(path, &headers, "gcp_usd")?;
    let pop_col = header_index(path, &headers, "population")?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let record = EconomyRecord {
            cell_id: field(path, &rec, id_col, CELL_ID)?,
            year: field(path, &rec, year_col, "year")?,
            gcp: finite(path, &rec, gcp_col, "gcp_usd")?,
            population: finite(path, &rec, pop_col, "population")?,
        };
        if record.gcp < 0.0 {
            return Err(parse_error(path, line, "gcp_usd", "negative gcp"));
        }
        if record.population < 0.0 {
            return Err(parse_error(path, line, "population", "negative population"));
        }
        out.push(record);
    }
    Ok(out)
}

/// Loads one variable and aligns its columns to `cells` order. Input rows may
/// come in any order; they are sorted by timestamp before the cadence check.
pub fn load_series(
    path: &Path,
    variable: VariableId,
    cadence: Cadence,
    cells: &CellTable,
) -> Result<VariableSeries> {
    let (file_cells, mut rows) = match TableFormat::from_path(path) {
        TableFormat::Csv => series_rows_csv(path)?,
        TableFormat::Binary => series_rows_frame(path, variable, cadence)?,
    };
    rows.sort_by_key(|(t, _)| *t);

    let position: HashMap<i64, usize> = file_cells
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();
    let missing: Vec<i64> = cells
        .ids()
        .into_iter()
        .filter(|id| !position.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCells(missing));
    }
    let extra = file_cells.len() - cells.len().min(file_cells.len());
    if extra > 0 {
        log::warn!("{}: ignoring {extra} columns for unknown cells", path.display());
    }

    let n_steps = rows.len();
    let mut values = vec![MISSING; cells.len() * n_steps];
    for (ci, cell) in cells.cells().iter().enumerate() {
        let src = position[&cell.cell_id];
        let dst = &mut values[ci * n_steps..(ci + 1) * n_steps];
        for (slot, (_, row)) in dst.iter_mut().zip(&rows) {
            *slot = row[src];
        }
    }
    let timestamps = rows.into_iter().map(|(t, _)| t).collect();
    VariableSeries::new(variable, cadence, cells.ids(), timestamps, values)
}

type SeriesRows = (Vec<i64>, Vec<(NaiveDateTime, Vec<f64>)>);

fn series_rows_csv(path: &Path) -> Result<SeriesRows> {
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.get(0) != Some("timestamp") {
        return Err(Error::MissingColumn {
            path: path.to_path_buf(),
            column: "timestamp".into(),
        });
    }
    let cell_ids = headers
        .iter()
        .skip(1)
        .map(|h| {
            h.parse::<i64>()
                .map_err(|_| parse_error(path, 1, h, "column header is not a cell id"))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut seen = HashSet::new();
    if let Some(dup) = cell_ids.iter().find(|id| !seen.insert(**id)) {
        return Err(Error::DuplicateCell(*dup));
    }

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let t = parse_timestamp(&rec[0])
            .ok_or_else(|| parse_error(path, line, "timestamp", format!("bad timestamp '{}'", &rec[0])))?;
        if rec.len() != cell_ids.len() + 1 {
            return Err(parse_error(path, line, "", "wrong number of fields"));
        }
        let vals = rec
            .iter()
            .skip(1)
            .zip(headers.iter().skip(1))
            .map(|(raw, col)| {
                if raw.is_empty() || raw == "NA" {
                    Ok(MISSING)
                } else {
                    match raw.parse::<f64>() {
                        Ok(v) if v.is_finite() => Ok(v),
                        _ => Err(parse_error(path, line, col, format!("cannot parse '{raw}'"))),
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((t, vals));
    }
    Ok((cell_ids, rows))
}

fn series_rows_frame(path: &Path, variable: VariableId, cadence: Cadence) -> Result<SeriesRows> {
    let frame = Frame::read(path)?;
    expect_kind(path, &frame, FrameKind::Series)?;
    if let Some(v) = frame.meta_value("variable") {
        if v != variable.code() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("file holds {v}, expected {variable}"),
            });
        }
    }
    if let Some(c) = frame.meta_value("cadence") {
        if c != cadence.name() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("file cadence {c}, expected {}", cadence.name()),
            });
        }
    }
    let n_rows = frame.n_rows();
    let rows = frame
        .col_labels
        .iter()
        .enumerate()
        .map(|(c, label)| {
            let t = parse_timestamp(label).ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                message: format!("bad timestamp label '{label}'"),
            })?;
            Ok((t, frame.values[c * n_rows..(c + 1) * n_rows].to_vec()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((frame.row_keys.clone(), rows))
}

// ---------------------------------------------------------------------------
// Writers
// ---------------------------------------------------------------------------

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_record<W: std::io::Write, I, T>(path: &Path, w: &mut csv::Writer<W>, rec: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(rec).map_err(|e| csv_error(path, e))
}

/// Shortest decimal representation that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    if is_missing(v) {
        "NA".to_string()
    } else {
        format!("{v:?}")
    }
}

impl CellTable {
    pub fn write(&self, path: &Path, format: TableFormat) -> Result<()> {
        match format {
            TableFormat::Csv => {
                let mut w = csv_writer(path)?;
                let header = [CELL_ID, "lat", "lon"]
                    .into_iter()
                    .chain(GeoAttr::ALL.iter().map(|a| a.csv_column()));
                write_record(path, &mut w, header)?;
                for c in &self.cells {
                    let row = [c.cell_id.to_string(), fmt_f64(c.lat), fmt_f64(c.lon)]
                        .into_iter()
                        .chain(c.geography.iter().map(|v| fmt_f64(*v)));
                    write_record(path, &mut w, row)?;
                }
                w.flush().map_err(|e| Error::io(path, e))
            }
            TableFormat::Binary => {
                let mut col_labels = vec!["lat".to_string(), "lon".to_string()];
                col_labels.extend(GeoAttr::ALL.iter().map(|a| a.csv_column().to_string()));
                let mut values = Vec::with_capacity(self.len() * col_labels.len());
                values.extend(self.cells.iter().map(|c| c.lat));
                values.extend(self.cells.iter().map(|c| c.lon));
                for attr in GeoAttr::ALL {
                    values.extend(self.cells.iter().map(|c| c.attr(attr)));
                }
                Frame {
                    kind: FrameKind::Cells,
                    meta: Vec::new(),
                    row_keys: self.ids(),
                    col_labels,
                    values,
                }
                .write(path)
            }
        }
    }
}

impl EconomyTable {
    pub fn write(&self, path: &Path, format: TableFormat) -> Result<()> {
        match format {
            TableFormat::Csv => {
                let mut w = csv_writer(path)?;
                write_record(path, &mut w, [CELL_ID, "year", "gcp_usd", "population"])?;
                for r in &self.records {
                    write_record(
                        path,
                        &mut w,
                        [
                            r.cell_id.to_string(),
                            r.year.to_string(),
                            fmt_f64(r.gcp),
                            fmt_f64(r.population),
                        ],
                    )?;
                }
                w.flush().map_err(|e| Error::io(path, e))
            }
            TableFormat::Binary => {
                let mut values = Vec::with_capacity(self.len() * 3);
                values.extend(self.records.iter().map(|r| r.year as f64));
                values.extend(self.records.iter().map(|r| r.gcp));
                values.extend(self.records.iter().map(|r| r.population));
                Frame {
                    kind: FrameKind::Economy,
                    meta: Vec::new(),
                    row_keys: self.records.iter().map(|r| r.cell_id).collect(),
                    col_labels: vec!["year".into(), "gcp_usd".into(), "population".into()],
                    values,
                }
                .write(path)
            }
        }
    }
}

impl VariableSeries {
    pub fn write(&self, path: &Path, format: TableFormat) -> Result<()> {
        let n_steps = self.n_steps();
        match format {
            TableFormat::Csv => {
                let mut w = csv_writer(path)?;
                let header = std::iter::once("timestamp".to_string())
                    .chain(self.cell_ids.iter().map(|id| id.to_string()));
                write_record(path, &mut w, header)?;
                for (s, t) in self.timestamps.iter().enumerate() {
                    let row = std::iter::once(format_timestamp(t)).chain(
                        (0..self.n_cells()).map(|c| fmt_f64(self.values[c * n_steps + s])),
                    );
                    write_record(path, &mut w, row)?;
                }
                w.flush().map_err(|e| Error::io(path, e))
            }
            TableFormat::Binary => {
                let n_cells = self.n_cells();
                let mut values = vec![0.0; self.values.len()];
                for c in 0..n_cells {
                    for s in 0..n_steps {
                        values[s * n_cells + c] = self.values[c * n_steps + s];
                    }
                }
                Frame {
                    kind: FrameKind::Series,
                    meta: vec![
                        ("variable".into(), self.variable.code().into()),
                        ("cadence".into(), self.cadence.name().into()),
                    ],
                    row_keys: self.cell_ids.clone(),
                    col_labels: self.timestamps.iter().map(format_timestamp).collect(),
                    values,
                }
                .write(path)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const HEADER: &str = "cell_id,lat,lon,latitude,elevation_m,dist_coast1_km,dist_coast2_km,dist_lake_km,dist_major_river_km,dist_river_km,dist_ocean_km,vegetation,soil";

    fn write_tmp(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    fn cell_row(id: i64, lat: f64, lon: f64, soil: f64) -> String {
        format!("{id},{lat},{lon},{lat},120,10,20,30,40,50,60,3,{soil}\n")
    }

    #[test]
    fn loads_three_cells() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{HEADER}\n{}{}{}",
            cell_row(3, 10.5, 20.5, 7.0),
            cell_row(1, -10.5, 20.5, 7.0),
            cell_row(2, 10.5, -179.5, 250.0)
        );
        let p = write_tmp(&dir, "cells.csv", &body);
        let t = load_cells(&p, TableFormat::Csv).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.ids(), vec![1, 2, 3]);
        assert_eq!(t.get(2).unwrap().attr(GeoAttr::Soil), 250.0);
    }

    #[test]
    fn duplicate_cell_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}\n{}{}", cell_row(42, 0.5, 0.5, 1.0), cell_row(42, 1.5, 0.5, 1.0));
        let p = write_tmp(&dir, "cells.csv", &body);
        let err = load_cells(&p, TableFormat::Csv).unwrap_err();
        assert_eq!(err.to_string(), "duplicate cell 42");
    }

    #[test]
    fn soil_category_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}\n{}", cell_row(5, 0.5, 0.5, 251.0));
        let p = write_tmp(&dir, "cells.csv", &body);
        let err = load_cells(&p, TableFormat::Csv).unwrap_err();
        assert!(matches!(err, Error::OutOfRange { ref field, .. } if field == "soil"), "{err}");
    }

    #[test]
    fn malformed_row_names_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}\n{}4,1.5,xx,1.5,0,0,0,0,0,0,0,0,0\n", cell_row(1, 0.5, 0.5, 1.0));
        let p = write_tmp(&dir, "cells.csv", &body);
        match load_cells(&p, TableFormat::Csv).unwrap_err() {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 3);
                assert_eq!(column, "lon");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn off_lattice_cell_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}\n{}", cell_row(1, 0.25, 0.5, 1.0));
        let p = write_tmp(&dir, "cells.csv", &body);
        assert!(load_cells(&p, TableFormat::Csv).is_err());
    }

    #[test]
    fn economy_years_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("cell_id,year,gcp_usd,population\n");
        for cell in [7, 9] {
            for year in [1990, 1995, 2000, 2005] {
                body.push_str(&format!("{cell},{year},1000,10\n"));
            }
        }
        body.push_str("7,2010,1000,10\n");
        let p = write_tmp(&dir, "econ.csv", &body);
        let t = load_economy(&p, &[1990, 1995, 2000, 2005]).unwrap();
        assert_eq!(t.len(), 8);
        assert_eq!(t.distinct_cells(), 2);
    }

    #[test]
    fn economy_single_cell_four_years() {
        let dir = tempfile::tempdir().unwrap();
        let body = "cell_id,year,gcp_usd,population\n1,2005,4,1\n1,1990,1,1\n1,1995,2,1\n1,2000,3,1\n";
        let p = write_tmp(&dir, "econ.csv", body);
        let t = load_economy(&p, &[1990, 1995, 2000, 2005]).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t.records()[0].year, 1990);
    }

    #[test]
    fn negative_population_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = "cell_id,year,gcp_usd,population\n1,1990,100,-5\n";
        let p = write_tmp(&dir, "econ.csv", body);
        assert!(load_economy(&p, &[1990]).is_err());
    }

    fn three_cells() -> CellTable {
        let mk = |id, lat| Cell {
            cell_id: id,
            lat,
            lon: 0.5,
            geography: [lat, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0],
        };
        CellTable::new(vec![mk(1, 0.5), mk(2, 1.5), mk(3, 2.5)]).unwrap()
    }

    fn daily_csv(days: &[u32]) -> String {
        let mut s = String::from("timestamp,3,1,2\n");
        for d in days {
            s.push_str(&format!("2001-01-{d:02},{d},{},NA\n", d * 10));
        }
        s
    }

    #[test]
    fn daily_series_ten_steps() {
        let dir = tempfile::tempdir().unwrap();
        let days: Vec<u32> = (1..=10).collect();
        let p = write_tmp(&dir, "t2.csv", &daily_csv(&days));
        let s = load_series(&p, VariableId::T2, Cadence::Daily, &three_cells()).unwrap();
        assert_eq!(s.n_steps(), 10);
        assert_eq!(s.cell_values(0)[2], 30.0);
        assert_eq!(s.cell_values(2)[2], 3.0);
        assert!(is_missing(s.cell_values(1)[0]));
        assert_eq!(s.months()[0], 1);
    }

    #[test]
    fn gap_in_series_is_non_uniform() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "t2.csv", &daily_csv(&[1, 2, 4, 5]));
        let err = load_series(&p, VariableId::T2, Cadence::Daily, &three_cells()).unwrap_err();
        assert!(matches!(err, Error::NonUniformCadence { .. }));
        assert!(err.to_string().contains("non-uniform cadence"));
    }

    #[test]
    fn six_hourly_spacing_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = String::from("timestamp,1,2,3\n");
        for h in 0..12 {
            let t = NaiveDate::from_ymd_opt(2001, 3, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
                + chrono::Duration::hours(6 * h);
            s.push_str(&format!("{},1,2,3\n", format_timestamp(&t)));
        }
        let p = write_tmp(&dir, "mslp.csv", &s);
        let series = load_series(&p, VariableId::Mslp, Cadence::SixHourly, &three_cells()).unwrap();
        assert_eq!(series.n_steps(), 12);
        assert!(load_series(&p, VariableId::Mslp, Cadence::Daily, &three_cells()).is_err());
    }

    #[test]
    fn missing_cell_column_is_listed() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "t2.csv", "timestamp,1\n2001-01-01,4\n");
        match load_series(&p, VariableId::T2, Cadence::Daily, &three_cells()).unwrap_err() {
            Error::MissingCells(ids) => assert_eq!(ids, vec![2, 3]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let days: Vec<u32> = (1..=10).collect();
        let p = write_tmp(&dir, "t2.csv", &daily_csv(&days));
        let cells = three_cells();
        let s = load_series(&p, VariableId::T2, Cadence::Daily, &cells).unwrap();
        let b = dir.path().join("t2.geof");
        s.write(&b, TableFormat::Binary).unwrap();
        let s2 = load_series(&b, VariableId::T2, Cadence::Daily, &cells).unwrap();
        assert_eq!(s.timestamps(), s2.timestamps());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(s.values()), bits(s2.values()));

        let cb = dir.path().join("cells.geof");
        cells.write(&cb, TableFormat::Binary).unwrap();
        assert_eq!(load_cells(&cb, TableFormat::Binary).unwrap(), cells);
    }
}
