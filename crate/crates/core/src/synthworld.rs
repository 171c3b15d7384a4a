//! Deterministic synthetic world with a known response surface.
//!
//! Cells sit on random points of the global 1° lattice. Each climate series
//! is a level plus an annual sine, unit-width up-pulses and Gaussian noise:
//!
//! * the sine amplitude is solved so the 12 climatological monthly means have
//!   exactly the programmed seasonal SD (noise is re-centred within each
//!   calendar month, so it never leaks into the monthly means);
//! * pulses are spread over every (year, month) segment, never adjacent and
//!   never on a segment edge, so the one-step exceedance frequency of both
//!   signs equals the programmed pulse rate;
//! * the noise SD is 0.28 × the variable's base gradient threshold, which
//!   keeps accidental exceedances rare but non-zero, so `+ve` and `-ve`
//!   columns are never exactly collinear.
//!
//! The log10 per-capita product is `base + Σ weight·transform(z) + noise
//! (+ regional offset)`, where `z` is a driver's programmed value
//! standardized over cells. Economy records are back-solved from it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, NaiveDateTime, TimeDelta};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::stats::{mean, sample_sd};
use crate::features::{gradient_base, native_cadence, FeatureMatrix, FeatureSpec, SeriesSet, Statistic};
use crate::features::stats::Sign;
use crate::gridstore::{
    Cadence, Cell, CellTable, EconomyRecord, EconomyTable, GeoAttr, TableFormat, VariableId, VariableSeries, MISSING,
};
use crate::rng::job_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Linear,
    /// `z^2 - 1`.
    Quadratic,
    /// `+0.5` above the cell mean, `-0.5` at or below.
    Step,
    /// `z * z_partner`.
    Interaction { partner: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Driver {
    pub predictor: String,
    pub weight: f64,
    pub transform: Transform,
}

impl Driver {
    pub fn new(predictor: &str, weight: f64, transform: Transform) -> Self {
        Driver {
            predictor: predictor.to_string(),
            weight,
            transform,
        }
    }
}

/// Additive offset on cells inside a lat/lon box, standing in for an
/// unmodelled regional effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub delta: f64,
}

impl Region {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.lat_min..=self.lat_max).contains(&lat) && (self.lon_min..=self.lon_max).contains(&lon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub n_cells: usize,
    /// Economy years.
    pub years: Vec<i32>,
    pub series_start_year: i32,
    pub series_years: u32,
    pub drivers: Vec<Driver>,
    /// SD of the unexplained log10 noise.
    pub noise_sd: f64,
    pub base_level: f64,
    /// Typical relative spread of per-capita product across years.
    pub yearly_sd: f64,
    pub region: Option<Region>,
    /// Fraction of climate samples blanked at random.
    pub missing_fraction: f64,
    /// Flat climate: no seasonality, pulses or noise.
    pub constant_climate: bool,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_cells: 2000,
            years: vec![1990, 1995, 2000, 2005],
            series_start_year: 2001,
            series_years: 4,
            drivers: default_drivers(),
            noise_sd: 0.15,
            base_level: 3.7,
            yearly_sd: 0.1,
            region: None,
            missing_fraction: 0.0,
            constant_climate: false,
        }
    }
}

/// Latitude (quadratic), MSLP seasonality (step) and distance to a major
/// river (step).
pub fn default_drivers() -> Vec<Driver> {
    vec![
        Driver::new("Latitude", 0.45, Transform::Quadratic),
        Driver::new("MSLP SD S", 0.9, Transform::Step),
        Driver::new("Dist. M. River", -0.7, Transform::Step),
    ]
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_cells < 3 || self.n_cells > LAT_ROWS * 360 {
            return bad(format!("n_cells must be in 3..={}", LAT_ROWS * 360));
        }
        if self.years.is_empty() {
            return bad("at least one economy year required".into());
        }
        if self.series_years == 0 {
            return bad("series_years must be >= 1".into());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be finite and >= 0".into());
        }
        if !(0.0..=0.3).contains(&self.yearly_sd) {
            return bad("yearly_sd must be in [0, 0.3]".into());
        }
        if !(0.0..0.5).contains(&self.missing_fraction) {
            return bad("missing_fraction must be in [0, 0.5)".into());
        }
        for d in &self.drivers {
            if !d.weight.is_finite() {
                return bad(format!("driver '{}' has a non-finite weight", d.predictor));
            }
            source_of(&d.predictor)?;
            if let Transform::Interaction { partner } = &d.transform {
                source_of(partner)?;
            }
        }
        if let Some(r) = &self.region {
            if !r.delta.is_finite() {
                return bad("regional delta must be finite".into());
            }
        }
        Ok(())
    }
}

/// Latitude rows used for cells: centres 74.5° N down to 59.5° S.
const LAT_ROWS: usize = 135;
const FIRST_ROW: usize = 15;

/// Noise SD as a fraction of the base gradient threshold.
const NOISE_FRACTION: f64 = 0.28;
/// Pulse height as a multiple of the base gradient threshold.
const PULSE_HEIGHT: f64 = 2.5;
const MAX_PULSE_RATE: f64 = 0.12;

/// Variables generated directly (DT follows from TMIN/TMAX).
const GENERATED: [VariableId; 8] = [
    VariableId::Mslp,
    VariableId::Uv10,
    VariableId::T2,
    VariableId::D2,
    VariableId::Tp,
    VariableId::Rh,
    VariableId::Sr,
    VariableId::Sund,
];

/// (level range, seasonal SD range) per generated variable.
fn climate_ranges(v: VariableId) -> ((f64, f64), (f64, f64)) {
    match v {
        VariableId::Mslp => ((1005.0, 1020.0), (1.0, 8.0)),
        VariableId::Uv10 => ((2.0, 8.0), (0.3, 2.5)),
        VariableId::T2 => ((-10.0, 28.0), (1.0, 12.0)),
        VariableId::D2 => ((-15.0, 20.0), (1.0, 10.0)),
        VariableId::Tp => ((0.5, 8.0), (0.3, 4.0)),
        VariableId::Rh => ((40.0, 90.0), (2.0, 15.0)),
        VariableId::Sr => ((80.0, 300.0), (10.0, 80.0)),
        VariableId::Sund => ((3.0, 11.0), (0.3, 3.0)),
        _ => unreachable!("not generated directly"),
    }
}

/// Programmed climate of one variable in one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClimateTruth {
    pub level: f64,
    pub sd_s: f64,
    /// Realised one-step exceedance frequency from pulses.
    pub pulse_rate: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTruth {
    pub cell_id: i64,
    pub lat: f64,
    pub lon: f64,
    /// Noise-free response `Σ weight·transform(z)`.
    pub signal: f64,
    pub noise: f64,
    pub offset: f64,
    pub log_gcp_pc: f64,
    /// Keyed by variable code.
    pub climate: BTreeMap<String, ClimateTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub config: WorldConfig,
    pub cells: Vec<CellTruth>,
}

impl GroundTruth {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<GroundTruth> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Cells inside the configured region.
    pub fn region_cells(&self) -> Vec<i64> {
        self.cells.iter().filter(|c| c.offset != 0.0).map(|c| c.cell_id).collect()
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub cells: CellTable,
    pub series: SeriesSet,
    pub economy: EconomyTable,
    pub truth: GroundTruth,
}

/// Where a driver's programmed value comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Source {
    Geo(GeoAttr),
    SdS(VariableId),
    Pulse(VariableId),
}

fn source_of(name: &str) -> Result<Source> {
    let underivable = || {
        Error::InvalidParameter(format!(
            "driver '{name}' cannot be programmed: use a geography attribute, '<VAR> SD S' or '<VAR> +ve/-ve (1)' of a generated variable"
        ))
    };
    let spec: FeatureSpec = name.parse().map_err(|_| underivable())?;
    match spec {
        FeatureSpec::Geography(a) => Ok(Source::Geo(a)),
        FeatureSpec::Stat { variable, stat: Statistic::SdS } if GENERATED.contains(&variable) => Ok(Source::SdS(variable)),
        FeatureSpec::Gradient { variable, step: 1, .. } if GENERATED.contains(&variable) => Ok(Source::Pulse(variable)),
        _ => Err(underivable()),
    }
}

/// Shared time axis.
struct Axis {
    timestamps: Vec<NaiveDateTime>,
    /// Calendar month index 0..12 per step.
    month: Vec<usize>,
    sin: Vec<f64>,
    cos: Vec<f64>,
    /// (start, len) of each (year, month) run.
    segments: Vec<(usize, usize)>,
    /// Steps per calendar month.
    month_len: [usize; 12],
    /// Mean of sin / cos over each calendar month.
    month_sin: [f64; 12],
    month_cos: [f64; 12],
}

impl Axis {
    fn new(start_year: i32, years: u32, cadence: Cadence) -> Result<Axis> {
        let start = NaiveDate::from_ymd_opt(start_year, 1, 1)
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .ok_or_else(|| Error::InvalidParameter(format!("bad start year {start_year}")))?;
        let end = NaiveDate::from_ymd_opt(start_year + years as i32, 1, 1)
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .ok_or_else(|| Error::InvalidParameter("bad series length".into()))?;
        let dt = TimeDelta::seconds(cadence.seconds());
        let n = ((end - start).num_seconds() / cadence.seconds()) as usize;
        let timestamps: Vec<NaiveDateTime> = (0..n).map(|i| start + dt * i as i32).collect();
        let omega = 2.0 * std::f64::consts::PI / 365.25;
        let days: Vec<f64> = timestamps
            .iter()
            .map(|t| (*t - start).num_seconds() as f64 / 86_400.0)
            .collect();
        let sin: Vec<f64> = days.iter().map(|d| (omega * d).sin()).collect();
        let cos: Vec<f64> = days.iter().map(|d| (omega * d).cos()).collect();
        let month: Vec<usize> = timestamps.iter().map(|t| t.month0() as usize).collect();
        let mut segments = Vec::new();
        let mut seg_start = 0;
        for i in 1..=n {
            let boundary = i == n
                || timestamps[i].month() != timestamps[i - 1].month()
                || timestamps[i].year() != timestamps[i - 1].year();
            if boundary {
                segments.push((seg_start, i - seg_start));
                seg_start = i;
            }
        }
        let mut month_len = [0usize; 12];
        let mut month_sin = [0.0; 12];
        let mut month_cos = [0.0; 12];
        for i in 0..n {
            month_len[month[i]] += 1;
            month_sin[month[i]] += sin[i];
            month_cos[month[i]] += cos[i];
        }
        if month_len.contains(&0) {
            return Err(Error::InvalidParameter("series must cover all 12 months".into()));
        }
        for m in 0..12 {
            month_sin[m] /= month_len[m] as f64;
            month_cos[m] /= month_len[m] as f64;
        }
        Ok(Axis {
            timestamps,
            month,
            sin,
            cos,
            segments,
            month_len,
            month_sin,
            month_cos,
        })
    }

    fn len(&self) -> usize {
        self.timestamps.len()
    }
}

/// Amplitude `A >= 0` with `sd(A * s + p) = target` over the 12 months.
fn solve_amplitude(s: &[f64; 12], p: &[f64; 12], target: f64) -> f64 {
    let (ms, mp) = (mean(s), mean(p));
    let (mut vs, mut c, mut vp) = (0.0, 0.0, 0.0);
    for m in 0..12 {
        vs += (s[m] - ms).powi(2);
        c += (s[m] - ms) * (p[m] - mp);
        vp += (p[m] - mp).powi(2);
    }
    let (vs, c, vp) = (vs / 11.0, c / 11.0, vp / 11.0);
    let disc = c * c - vs * (vp - target * target);
    if vs <= 0.0 || disc < 0.0 {
        return 0.0;
    }
    ((-c + disc.sqrt()) / vs).max(0.0)
}

/// Pulse positions: `k` per segment, non-adjacent and away from segment edges.
fn place_pulses<R: Rng + ?Sized>(axis: &Axis, rate: f64, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::new();
    let mut before = 0usize;
    for &(start, len) in &axis.segments {
        let target_total = (rate * (before + len) as f64).round() as usize;
        let placed_total = (rate * before as f64).round() as usize;
        before += len;
        let inner = len.saturating_sub(2);
        let k = target_total.saturating_sub(placed_total).min(inner.div_ceil(2));
        if k == 0 {
            continue;
        }
        // Choose k of (inner - k + 1) slots; slot c_i maps to 1 + c_i + i.
        let mut slots = sample(rng, inner - k + 1, k).into_vec();
        slots.sort_unstable();
        out.extend(slots.iter().enumerate().map(|(i, c)| start + 1 + c + i));
    }
    out
}

struct CellClimate {
    truth: ClimateTruth,
    phase: f64,
    pulses: Vec<usize>,
}

fn draw_climate(axis: &Axis, v: VariableId, constant: bool, seed: u64, cell: usize) -> CellClimate {
    let mut rng = job_rng(seed, &[0x636c, cell as u64, v as u64]);
    let ((lo, hi), (s_lo, s_hi)) = climate_ranges(v);
    let level = rng.random_range(lo..hi);
    if constant {
        return CellClimate {
            truth: ClimateTruth {
                level,
                sd_s: 0.0,
                pulse_rate: 0.0,
                amplitude: 0.0,
            },
            phase: 0.0,
            pulses: Vec::new(),
        };
    }
    let sd_s = rng.random_range(s_lo..s_hi);
    let rate = rng.random_range(0.0..MAX_PULSE_RATE);
    let phase = rng.random_range(0.0..2.0 * std::f64::consts::PI);
    let pulses = place_pulses(axis, rate, &mut rng);
    let jump = PULSE_HEIGHT * gradient_base(v).expect("generated variables have thresholds");
    let mut pulse_month = [0.0; 12];
    for &i in &pulses {
        pulse_month[axis.month[i]] += jump;
    }
    let mut s = [0.0; 12];
    for m in 0..12 {
        pulse_month[m] /= axis.month_len[m] as f64;
        s[m] = axis.month_sin[m] * phase.cos() + axis.month_cos[m] * phase.sin();
    }
    let amplitude = solve_amplitude(&s, &pulse_month, sd_s);
    CellClimate {
        truth: ClimateTruth {
            level,
            sd_s,
            pulse_rate: pulses.len() as f64 / (axis.len() - 1) as f64,
            amplitude,
        },
        phase,
        pulses,
    }
}

/// Gaussian noise with zero mean inside every calendar month.
fn month_centred_noise<R: Rng + ?Sized>(axis: &Axis, sd: f64, rng: &mut R, out: &mut [f64]) {
    if sd == 0.0 {
        out.fill(0.0);
        return;
    }
    let normal = Normal::new(0.0, sd).expect("finite sd");
    let mut sums = [0.0; 12];
    for (i, o) in out.iter_mut().enumerate() {
        *o = normal.sample(rng);
        sums[axis.month[i]] += *o;
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o -= sums[axis.month[i]] / axis.month_len[axis.month[i]] as f64;
    }
}

fn blank_missing<R: Rng + ?Sized>(fraction: f64, rng: &mut R, out: &mut [f64]) {
    if fraction > 0.0 {
        for o in out.iter_mut() {
            if rng.random::<f64>() < fraction {
                *o = MISSING;
            }
        }
    }
}

fn generate_cells(config: &WorldConfig, seed: u64) -> Result<CellTable> {
    let mut rng = job_rng(seed, &[0x6765_6f]);
    let mut picks = sample(&mut rng, LAT_ROWS * 360, config.n_cells).into_vec();
    picks.sort_unstable();
    let exp = |rng: &mut crate::rng::JobRng, scale: f64| -scale * (1.0 - rng.random::<f64>()).ln();
    let cells = picks
        .into_iter()
        .map(|k| {
            let (row, col) = (FIRST_ROW + k / 360, k % 360);
            let lat = 89.5 - row as f64;
            let lon = col as f64 - 179.5;
            let coast1 = exp(&mut rng, 300.0);
            let mut g = [0.0; 10];
            g[GeoAttr::Latitude.index()] = lat;
            g[GeoAttr::Elevation.index()] = 3000.0 * rng.random::<f64>().powi(2);
            g[GeoAttr::DistCoast1.index()] = coast1;
            g[GeoAttr::DistCoast2.index()] = coast1 + exp(&mut rng, 200.0);
            g[GeoAttr::DistLake.index()] = exp(&mut rng, 400.0);
            g[GeoAttr::DistMajorRiver.index()] = exp(&mut rng, 500.0);
            g[GeoAttr::DistRiver.index()] = exp(&mut rng, 150.0);
            g[GeoAttr::DistOcean.index()] = coast1 + exp(&mut rng, 100.0);
            g[GeoAttr::Vegetation.index()] = f64::from(rng.random_range(0..=31u8));
            g[GeoAttr::Soil.index()] = f64::from(rng.random_range(0..=250u8));
            Cell {
                cell_id: (row * 360 + col) as i64,
                lat,
                lon,
                geography: g,
            }
        })
        .collect();
    CellTable::new(cells)
}

/// Series of one generated variable for every cell, plus per-cell truth.
fn generate_variable(
    axis: &Axis,
    v: VariableId,
    cells: &CellTable,
    config: &WorldConfig,
    seed: u64,
) -> Result<(VariableSeries, Vec<ClimateTruth>)> {
    let n = axis.len();
    let climates: Vec<CellClimate> = (0..cells.len())
        .into_par_iter()
        .map(|c| draw_climate(axis, v, config.constant_climate, seed, c))
        .collect();
    let base = gradient_base(v).expect("generated variables have thresholds");
    let noise_sd = if config.constant_climate { 0.0 } else { NOISE_FRACTION * base };
    let mut values = vec![0.0; cells.len() * n];
    values.par_chunks_mut(n).enumerate().for_each(|(c, out)| {
        let cl = &climates[c];
        let mut rng = job_rng(seed, &[0x6e6f, c as u64, v as u64]);
        month_centred_noise(axis, noise_sd, &mut rng, out);
        let (a_sin, a_cos) = (cl.truth.amplitude * cl.phase.cos(), cl.truth.amplitude * cl.phase.sin());
        for i in 0..n {
            out[i] += cl.truth.level + a_sin * axis.sin[i] + a_cos * axis.cos[i];
        }
        for &i in &cl.pulses {
            out[i] += PULSE_HEIGHT * base;
        }
        blank_missing(config.missing_fraction, &mut rng, out);
    });
    let series = VariableSeries::new(v, native_cadence(v), cells.ids(), axis.timestamps.clone(), values)?;
    Ok((series, climates.into_iter().map(|c| c.truth).collect()))
}

/// TMIN/TMAX: a shared seasonal temperature with a per-cell diurnal range.
fn generate_minmax(axis: &Axis, cells: &CellTable, config: &WorldConfig, seed: u64) -> Result<[VariableSeries; 2]> {
    let n = axis.len();
    let mut lo = vec![0.0; cells.len() * n];
    let mut hi = vec![0.0; cells.len() * n];
    let noise_sd = if config.constant_climate { 0.0 } else { NOISE_FRACTION * 2.5 };
    lo.par_chunks_mut(n)
        .zip(hi.par_chunks_mut(n))
        .enumerate()
        .for_each(|(c, (lo, hi))| {
            let mut rng = job_rng(seed, &[0x746d, c as u64]);
            let level = rng.random_range(-10.0..25.0);
            let range = rng.random_range(4.0..16.0);
            let amp = if config.constant_climate { 0.0 } else { rng.random_range(1.0..15.0) };
            let phase = rng.random_range(0.0..2.0 * std::f64::consts::PI);
            month_centred_noise(axis, noise_sd, &mut rng, lo);
            month_centred_noise(axis, noise_sd, &mut rng, hi);
            for i in 0..n {
                let t = level + amp * (axis.sin[i] * phase.cos() + axis.cos[i] * phase.sin());
                lo[i] += t - range / 2.0;
                hi[i] += t + range / 2.0;
            }
            blank_missing(config.missing_fraction, &mut rng, lo);
            blank_missing(config.missing_fraction, &mut rng, hi);
        });
    let ids = cells.ids();
    Ok([
        VariableSeries::new(VariableId::Tmin, Cadence::SixHourly, ids.clone(), axis.timestamps.clone(), lo)?,
        VariableSeries::new(VariableId::Tmax, Cadence::SixHourly, ids, axis.timestamps.clone(), hi)?,
    ])
}

fn standardize(values: &[f64]) -> Vec<f64> {
    let (m, sd) = (mean(values), sample_sd(values));
    values
        .iter()
        .map(|v| if sd > 0.0 { (v - m) / sd } else { 0.0 })
        .collect()
}

pub fn generate(config: &WorldConfig, seed: u64) -> Result<World> {
    config.validate()?;
    let cells = generate_cells(config, seed)?;
    let daily = Axis::new(config.series_start_year, config.series_years, Cadence::Daily)?;
    let six = Axis::new(config.series_start_year, config.series_years, Cadence::SixHourly)?;

    let mut series = SeriesSet::new();
    let mut climate: BTreeMap<VariableId, Vec<ClimateTruth>> = BTreeMap::new();
    for v in GENERATED {
        let axis = if native_cadence(v) == Cadence::Daily { &daily } else { &six };
        let (s, truth) = generate_variable(axis, v, &cells, config, seed)?;
        series.insert(v, s);
        climate.insert(v, truth);
    }
    let [tmin, tmax] = generate_minmax(&six, &cells, config, seed)?;
    series.insert(VariableId::Tmin, tmin);
    series.insert(VariableId::Tmax, tmax);

    let programmed = |name: &str| -> Result<Vec<f64>> {
        Ok(match source_of(name)? {
            Source::Geo(a) => cells.cells().iter().map(|c| c.attr(a)).collect(),
            Source::SdS(v) => climate[&v].iter().map(|t| t.sd_s).collect(),
            Source::Pulse(v) => climate[&v].iter().map(|t| t.pulse_rate).collect(),
        })
    };
    let mut signal = vec![0.0; cells.len()];
    for d in &config.drivers {
        let z = standardize(&programmed(&d.predictor)?);
        let partner = match &d.transform {
            Transform::Interaction { partner } => Some(standardize(&programmed(partner)?)),
            _ => None,
        };
        for (i, s) in signal.iter_mut().enumerate() {
            let t = match d.transform {
                Transform::Linear => z[i],
                Transform::Quadratic => z[i] * z[i] - 1.0,
                Transform::Step => {
                    if z[i] > 0.0 {
                        0.5
                    } else {
                        -0.5
                    }
                }
                Transform::Interaction { .. } => z[i] * partner.as_ref().expect("partner present")[i],
            };
            *s += d.weight * t;
        }
    }

    let n_years = config.years.len();
    let mut records = Vec::with_capacity(cells.len() * n_years);
    let mut truths = Vec::with_capacity(cells.len());
    for (i, cell) in cells.cells().iter().enumerate() {
        let mut rng = job_rng(seed, &[0x6563, i as u64]);
        let z: f64 = StandardNormal.sample(&mut rng);
        let noise = config.noise_sd * z;
        let offset = config
            .region
            .as_ref()
            .filter(|r| r.contains(cell.lat, cell.lon))
            .map_or(0.0, |r| r.delta);
        let log_gcp_pc = config.base_level + signal[i] + noise + offset;

        // Per-year multipliers with mean exactly 1 so the average of the
        // yearly per-capita values is 10^log_gcp_pc.
        let spread = config.yearly_sd * rng.random_range(0.2..1.8);
        let shocks: Vec<f64> = (0..n_years).map(|_| StandardNormal.sample(&mut rng)).collect();
        let m = mean(&shocks);
        let mut mult: Vec<f64> = shocks.iter().map(|e| (1.0 + spread * (e - m)).max(0.05)).collect();
        let mm = mean(&mult);
        mult.iter_mut().for_each(|x| *x /= mm);
        let population = 10f64.powf(rng.random_range(2.0..6.0));
        let pc = 10f64.powf(log_gcp_pc);
        for (y, (&year, &k)) in config.years.iter().zip(&mult).enumerate() {
            let pop = (population * (1.0 + 0.03 * y as f64)).round();
            records.push(EconomyRecord {
                cell_id: cell.cell_id,
                year,
                gcp: pop * pc * k,
                population: pop,
            });
        }
        truths.push(CellTruth {
            cell_id: cell.cell_id,
            lat: cell.lat,
            lon: cell.lon,
            signal: signal[i],
            noise,
            offset,
            log_gcp_pc,
            climate: climate.iter().map(|(v, t)| (v.code().to_string(), t[i])).collect(),
        });
    }
    let economy = EconomyTable::new(records, &config.years)?;
    Ok(World {
        cells,
        series,
        economy,
        truth: GroundTruth {
            seed,
            config: config.clone(),
            cells: truths,
        },
    })
}

/// Paths of a world written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldFiles {
    pub cells: PathBuf,
    pub economy: PathBuf,
    pub series: BTreeMap<VariableId, PathBuf>,
    pub truth: PathBuf,
}

impl WorldFiles {
    /// Conventional file names under `dir`.
    pub fn in_dir(dir: &Path, format: TableFormat) -> WorldFiles {
        let ext = match format {
            TableFormat::Csv => "csv",
            TableFormat::Binary => "geof",
        };
        let mut series = BTreeMap::new();
        for v in VariableId::ALL {
            series.insert(v, dir.join(format!("series_{}.{ext}", v.code().to_lowercase())));
        }
        WorldFiles {
            cells: dir.join(format!("cells.{ext}")),
            economy: dir.join(format!("economy.{ext}")),
            series,
            truth: dir.join("truth.json"),
        }
    }
}

impl World {
    pub fn write(&self, dir: &Path, format: TableFormat) -> Result<WorldFiles> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = WorldFiles::in_dir(dir, format);
        self.cells.write(&files.cells, format)?;
        self.economy.write(&files.economy, format)?;
        for (v, s) in &self.series {
            s.write(&files.series[v], format)?;
        }
        self.truth.write_json(&files.truth)?;
        Ok(files)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub cell_id: i64,
    pub feature: String,
    pub expected: f64,
    pub derived: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OracleReport {
    pub checked: usize,
    pub mismatches: Vec<Mismatch>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Seasonal SDs within 2% relative (exactly 0 when programmed flat), pulse
/// frequencies within 0.02 absolute, latitude exact. Features absent from
/// the matrix are skipped.
pub fn oracle_check(truth: &GroundTruth, features: &FeatureMatrix) -> OracleReport {
    const SD_REL: f64 = 0.02;
    const RATE_ABS: f64 = 0.02;
    let mut report = OracleReport::default();
    let rows: BTreeMap<i64, usize> = features.cell_ids().iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut check = |cell_id: i64, row: usize, name: String, expected: f64, ok: &dyn Fn(f64) -> bool| {
        let Some(col) = features.column_index(&name) else { return };
        report.checked += 1;
        let derived = features.get(row, col);
        if !derived.is_some_and(ok) {
            report.mismatches.push(Mismatch {
                cell_id,
                feature: name,
                expected,
                derived,
            });
        }
    };
    let cells_by_id: BTreeMap<i64, &CellTruth> = truth.cells.iter().map(|c| (c.cell_id, c)).collect();
    for (&id, &row) in &rows {
        let Some(cell) = cells_by_id.get(&id) else { continue };
        for (code, t) in &cell.climate {
            let Ok(v) = code.parse::<VariableId>() else { continue };
            let sd = t.sd_s;
            let sd_ok = move |d: f64| if sd == 0.0 { d.abs() < 1e-9 } else { (d - sd).abs() <= SD_REL * sd };
            check(id, row, FeatureSpec::Stat { variable: v, stat: Statistic::SdS }.to_string(), sd, &sd_ok);
            let rate = t.pulse_rate;
            let rate_ok = move |d: f64| if rate == 0.0 && truth.config.constant_climate { d == 0.0 } else { (d - rate).abs() <= RATE_ABS };
            for sign in [Sign::Pos, Sign::Neg] {
                let name = FeatureSpec::Gradient { variable: v, sign, step: 1 }.to_string();
                check(id, row, name, rate, &rate_ok);
            }
        }
        let lat = cell.lat;
        check(id, row, GeoAttr::Latitude.predictor_name().to_string(), lat, &move |d: f64| d == lat);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_feature_matrix, parse_specs, FeatureConfig};

    fn small(n_cells: usize) -> WorldConfig {
        WorldConfig {
            n_cells,
            series_years: 2,
            ..Default::default()
        }
    }

    fn oracle_features(world: &World) -> FeatureMatrix {
        let mut names = vec!["Latitude".to_string()];
        for v in GENERATED {
            names.push(format!("{} SD S", v.code()));
            names.push(format!("{} +ve (1)", v.code()));
            names.push(format!("{} -ve (1)", v.code()));
        }
        let config = FeatureConfig { specs: parse_specs(&names).unwrap(), ..Default::default() };
        build_feature_matrix(&world.cells, &world.series, &config).unwrap()
    }

    #[test]
    fn programmed_statistics_are_recovered() {
        let world = generate(&small(30), 4).unwrap();
        let report = oracle_check(&world.truth, &oracle_features(&world));
        assert_eq!(report.checked, 30 * (1 + 3 * 8));
        assert!(report.passed(), "{:?}", &report.mismatches[..report.mismatches.len().min(5)]);
    }

    #[test]
    fn constant_climate_has_zero_variability() {
        let world = generate(&WorldConfig { constant_climate: true, ..small(5) }, 1).unwrap();
        let f = oracle_features(&world);
        for j in 1..f.n_cols() {
            assert!(f.column(j).iter().all(|&v| v == 0.0), "{}", f.names()[j]);
        }
        assert!(oracle_check(&world.truth, &f).passed());
    }

    #[test]
    fn mismatch_names_feature_and_cell() {
        let world = generate(&small(4), 2).unwrap();
        let mut truth = world.truth.clone();
        truth.cells[1].climate.get_mut("MSLP").unwrap().sd_s *= 1.5;
        let report = oracle_check(&truth, &oracle_features(&world));
        assert_eq!(report.mismatches.len(), 1);
        assert_eq!(report.mismatches[0].feature, "MSLP SD S");
        assert_eq!(report.mismatches[0].cell_id, truth.cells[1].cell_id);
    }

    #[test]
    fn amplitude_solver_hits_target() {
        let axis = Axis::new(2001, 4, Cadence::Daily).unwrap();
        let mut s = [0.0; 12];
        for m in 0..12 {
            s[m] = axis.month_sin[m];
        }
        let p = [0.0, 0.1, 0.0, 0.05, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.1, 0.0];
        let a = solve_amplitude(&s, &p, 3.0);
        let m: Vec<f64> = (0..12).map(|i| a * s[i] + p[i]).collect();
        assert!((sample_sd(&m) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn pulses_are_isolated() {
        let axis = Axis::new(2001, 2, Cadence::Daily).unwrap();
        let mut rng = job_rng(3, &[]);
        let p = place_pulses(&axis, 0.25, &mut rng);
        assert_eq!(p.len(), (0.25 * axis.len() as f64).round() as usize);
        assert!(p.windows(2).all(|w| w[1] > w[0] + 1));
        for &(start, len) in &axis.segments {
            assert!(!p.contains(&start) && !p.contains(&(start + len - 1)));
        }
    }

    #[test]
    fn economy_reproduces_target() {
        let world = generate(&small(50), 5).unwrap();
        let t = crate::target::build_target(&world.economy, &world.truth.config.years);
        for (e, c) in t.entries().iter().zip(&world.truth.cells) {
            assert_eq!(e.cell_id, c.cell_id);
            assert!((e.log_gcp_pc - c.log_gcp_pc).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small(10), 9).unwrap();
        let b = generate(&small(10), 9).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.series, b.series);
        let c = generate(&small(10), 10).unwrap();
        assert_ne!(a.truth, c.truth);
    }

    #[test]
    fn underivable_driver_is_rejected() {
        for bad in ["MSLP Mean", "DT SD S", "T2 +ve (3)", "Nope"] {
            let config = WorldConfig { drivers: vec![Driver::new(bad, 1.0, Transform::Linear)], ..small(5) };
            assert!(generate(&config, 0).is_err(), "{bad}");
        }
    }

    #[test]
    fn region_offset_applied() {
        let region = Region { lat_min: -60.0, lat_max: 0.0, lon_min: -180.0, lon_max: 180.0, delta: 0.5 };
        let world = generate(&WorldConfig { region: Some(region), ..small(40) }, 6).unwrap();
        let inside = world.truth.region_cells();
        assert!(!inside.is_empty());
        for c in &world.truth.cells {
            assert_eq!(c.offset != 0.0, c.lat <= 0.0);
        }
    }
}
