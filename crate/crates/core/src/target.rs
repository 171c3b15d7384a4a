//! The modelled quantity: log10 of per-capita gross cell product, averaged
//! over the configured years, with exclusion bookkeeping and tercile labels.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::stats::{mean, quantile_sorted, sample_sd};
use crate::gridstore::{fmt_f64, EconomyRecord, EconomyTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    GcpBelow1Usd,
    ZeroPopulation,
    MissingYears,
    /// Only for the mean-minus-sigma stationarity variant.
    NonPositiveMinusSigma,
}

impl Exclusion {
    pub fn code(self) -> &'static str {
        match self {
            Exclusion::GcpBelow1Usd => "gcp_below_1_usd",
            Exclusion::ZeroPopulation => "zero_population",
            Exclusion::MissingYears => "missing_years",
            Exclusion::NonPositiveMinusSigma => "non_positive_minus_sigma",
        }
    }

    fn from_code(s: &str) -> Option<Self> {
        [
            Exclusion::GcpBelow1Usd,
            Exclusion::ZeroPopulation,
            Exclusion::MissingYears,
            Exclusion::NonPositiveMinusSigma,
        ]
        .into_iter()
        .find(|e| e.code() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tercile {
    Bottom,
    Middle,
    Top,
}

impl Tercile {
    pub fn code(self) -> &'static str {
        match self {
            Tercile::Bottom => "bottom",
            Tercile::Middle => "middle",
            Tercile::Top => "top",
        }
    }
}

/// The four evaluation samples: every included cell, or one tercile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sample {
    #[default]
    All,
    Top,
    Middle,
    Bottom,
}

impl Sample {
    pub const ALL: [Sample; 4] = [Sample::All, Sample::Top, Sample::Middle, Sample::Bottom];

    pub fn code(self) -> &'static str {
        match self {
            Sample::All => "all",
            Sample::Top => "top_tercile",
            Sample::Middle => "middle_tercile",
            Sample::Bottom => "bottom_tercile",
        }
    }

    fn tercile(self) -> Option<Tercile> {
        match self {
            Sample::All => None,
            Sample::Top => Some(Tercile::Top),
            Sample::Middle => Some(Tercile::Middle),
            Sample::Bottom => Some(Tercile::Bottom),
        }
    }
}

impl fmt::Display for Sample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Sample {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Sample::All),
            "top" | "top-tercile" | "top_tercile" => Ok(Sample::Top),
            "middle" | "middle-tercile" | "middle_tercile" => Ok(Sample::Middle),
            "bottom" | "bottom-tercile" | "bottom_tercile" => Ok(Sample::Bottom),
            other => Err(Error::InvalidParameter(format!("unknown sample '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEntry {
    pub cell_id: i64,
    /// NaN when excluded.
    pub log_gcp_pc: f64,
    pub exclusion: Option<Exclusion>,
    pub tercile: Option<Tercile>,
}

impl TargetEntry {
    pub fn is_included(&self) -> bool {
        self.exclusion.is_none()
    }
}

/// Per-cell target sorted by `cell_id`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TargetVector {
    entries: Vec<TargetEntry>,
    thresholds: Option<[f64; 2]>,
}

impl TargetVector {
    pub fn from_entries(mut entries: Vec<TargetEntry>) -> Self {
        entries.sort_by_key(|e| e.cell_id);
        TargetVector {
            entries,
            thresholds: None,
        }
    }

    pub fn entries(&self) -> &[TargetEntry] {
        &self.entries
    }

    pub fn thresholds(&self) -> Option<[f64; 2]> {
        self.thresholds
    }

    pub fn included(&self) -> impl Iterator<Item = &TargetEntry> {
        self.entries.iter().filter(|e| e.is_included())
    }

    pub fn n_included(&self) -> usize {
        self.included().count()
    }

    pub fn included_values(&self) -> Vec<f64> {
        self.included().map(|e| e.log_gcp_pc).collect()
    }

    /// `cell_id -> value` for included cells in `sample`.
    pub fn sample_values(&self, sample: Sample) -> Result<BTreeMap<i64, f64>> {
        let want = sample.tercile();
        if want.is_some() && self.thresholds.is_none() {
            return Err(Error::InvalidParameter(
                "tercile sample requested before tercile_split".into(),
            ));
        }
        Ok(self
            .included()
            .filter(|e| want.is_none() || e.tercile == want)
            .map(|e| (e.cell_id, e.log_gcp_pc))
            .collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let wr = |w: &mut csv::Writer<_>, rec: [String; 5]| {
            w.write_record(rec)
                .map_err(|e| Error::InvalidParameter(e.to_string()))
        };
        wr(&mut w, ["cell_id", "log_gcp_pc", "mask", "reason", "tercile"].map(String::from))?;
        for e in &self.entries {
            wr(
                &mut w,
                [
                    e.cell_id.to_string(),
                    fmt_f64(e.log_gcp_pc),
                    if e.is_included() { "included" } else { "excluded" }.to_string(),
                    e.exclusion.map(|x| x.code()).unwrap_or("").to_string(),
                    e.tercile.map(|t| t.code()).unwrap_or("").to_string(),
                ],
            )?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a target CSV; tercile thresholds are recomputed from the values.
    pub fn load_csv(path: &Path) -> Result<TargetVector> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let mut entries = Vec::new();
        let mut labelled = false;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let bad = |col: &str| Error::Parse {
                path: path.to_path_buf(),
                line,
                column: col.to_string(),
                message: "cannot parse".into(),
            };
            let cell_id = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("cell_id"))?;
            let value = match rec.get(1) {
                Some("NA") => f64::NAN,
                Some(s) => s.parse().map_err(|_| bad("log_gcp_pc"))?,
                None => return Err(bad("log_gcp_pc")),
            };
            let exclusion = match rec.get(3) {
                Some("") | None => None,
                Some(code) => Some(Exclusion::from_code(code).ok_or_else(|| bad("reason"))?),
            };
            labelled |= rec.get(4).is_some_and(|t| !t.is_empty());
            entries.push(TargetEntry {
                cell_id,
                log_gcp_pc: value,
                exclusion,
                tercile: None,
            });
        }
        let t = TargetVector::from_entries(entries);
        if labelled {
            tercile_split(&t)
        } else {
            Ok(t)
        }
    }
}

enum CellCheck<'a> {
    Excluded(Exclusion),
    Ok(Vec<&'a EconomyRecord>),
}

fn check_cell<'a>(records: &'a [EconomyRecord], years: &[i32]) -> CellCheck<'a> {
    let picked: Vec<&EconomyRecord> = years
        .iter()
        .filter_map(|y| records.iter().find(|r| r.year == *y))
        .collect();
    if picked.len() != years.len() {
        return CellCheck::Excluded(Exclusion::MissingYears);
    }
    if picked.iter().any(|r| r.gcp < 1.0) {
        return CellCheck::Excluded(Exclusion::GcpBelow1Usd);
    }
    if picked.iter().any(|r| r.population == 0.0) {
        return CellCheck::Excluded(Exclusion::ZeroPopulation);
    }
    CellCheck::Ok(picked)
}

fn excluded(cell_id: i64, reason: Exclusion) -> TargetEntry {
    TargetEntry {
        cell_id,
        log_gcp_pc: f64::NAN,
        exclusion: Some(reason),
        tercile: None,
    }
}

fn included(cell_id: i64, value: f64) -> TargetEntry {
    TargetEntry {
        cell_id,
        log_gcp_pc: value,
        exclusion: None,
        tercile: None,
    }
}

fn normalized_years(years: &[i32]) -> Vec<i32> {
    let mut y = years.to_vec();
    y.sort_unstable();
    y.dedup();
    y
}

/// `log10(mean over years of gcp / population)` per cell.
///
/// A cell is excluded when it lacks any configured year, when its GCP is below
/// 1 USD in any year, or when its population is zero in any year.
pub fn build_target(econ: &EconomyTable, years: &[i32]) -> TargetVector {
    let years = normalized_years(years);
    let entries = econ
        .by_cell()
        .into_iter()
        .map(|(cell_id, records)| match check_cell(&records, &years) {
            CellCheck::Excluded(reason) => excluded(cell_id, reason),
            CellCheck::Ok(picked) => {
                let per_capita: Vec<f64> = picked.iter().map(|r| r.gcp / r.population).collect();
                included(cell_id, mean(&per_capita).log10())
            }
        })
        .collect();
    TargetVector::from_entries(entries)
}

/// Labels included cells by the empirical 1/3 and 2/3 quantiles (linear
/// interpolation). A value equal to a threshold goes to the lower tercile.
pub fn tercile_split(target: &TargetVector) -> Result<TargetVector> {
    let mut values = target.included_values();
    if values.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "tercile split needs 3 included cells, got {}",
            values.len()
        )));
    }
    values.sort_unstable_by(f64::total_cmp);
    let t1 = quantile_sorted(&values, 1.0 / 3.0);
    let t2 = quantile_sorted(&values, 2.0 / 3.0);
    let entries = target
        .entries
        .iter()
        .map(|e| {
            let mut e = e.clone();
            e.tercile = e.is_included().then(|| {
                if e.log_gcp_pc <= t1 {
                    Tercile::Bottom
                } else if e.log_gcp_pc <= t2 {
                    Tercile::Middle
                } else {
                    Tercile::Top
                }
            });
            e
        })
        .collect();
    Ok(TargetVector {
        entries,
        thresholds: Some([t1, t2]),
    })
}

/// Mean, mean + 1 sd and mean - 1 sd targets for the stationarity check.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarityTargets {
    pub mean: TargetVector,
    pub plus: TargetVector,
    pub minus: TargetVector,
}

/// The sd is the per-cell sample sd of the yearly per-capita values, applied
/// before the log. Cells where `mean - sd <= 0` are excluded from `minus`.
pub fn stationarity_probe(econ: &EconomyTable, years: &[i32]) -> Result<StationarityTargets> {
    let years = normalized_years(years);
    if years.len() < 2 {
        return Err(Error::InsufficientData(
            "stationarity probe: >=2 years required".into(),
        ));
    }
    let mut mean_e = Vec::new();
    let mut plus_e = Vec::new();
    let mut minus_e = Vec::new();
    for (cell_id, records) in econ.by_cell() {
        match check_cell(&records, &years) {
            CellCheck::Excluded(reason) => {
                for v in [&mut mean_e, &mut plus_e, &mut minus_e] {
                    v.push(excluded(cell_id, reason));
                }
            }
            CellCheck::Ok(picked) => {
                let pc: Vec<f64> = picked.iter().map(|r| r.gcp / r.population).collect();
                let m = mean(&pc);
                let sd = sample_sd(&pc);
                mean_e.push(included(cell_id, m.log10()));
                plus_e.push(included(cell_id, (m + sd).log10()));
                minus_e.push(if m - sd > 0.0 {
                    included(cell_id, (m - sd).log10())
                } else {
                    excluded(cell_id, Exclusion::NonPositiveMinusSigma)
                });
            }
        }
    }
    Ok(StationarityTargets {
        mean: TargetVector::from_entries(mean_e),
        plus: TargetVector::from_entries(plus_e),
        minus: TargetVector::from_entries(minus_e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const YEARS: [i32; 4] = [1990, 1995, 2000, 2005];

    fn econ(rows: &[(i64, [f64; 4], f64)]) -> EconomyTable {
        let records = rows
            .iter()
            .flat_map(|(id, gcp_pc, pop)| {
                YEARS.iter().zip(gcp_pc).map(move |(y, pc)| EconomyRecord {
                    cell_id: *id,
                    year: *y,
                    gcp: pc * pop,
                    population: *pop,
                })
            })
            .collect();
        EconomyTable::new(records, &YEARS).unwrap()
    }

    #[test]
    fn reference_mean_level() {
        let t = build_target(&econ(&[(1, [5350.0; 4], 1000.0)]), &YEARS);
        let v = t.entries()[0].log_gcp_pc;
        assert!((v - 3.728).abs() < 5e-4, "{v}");
    }

    #[test]
    fn exact_thousand() {
        let t = build_target(&econ(&[(1, [1000.0; 4], 10.0)]), &YEARS);
        assert_eq!(t.entries()[0].log_gcp_pc, 3.0);
    }

    #[test]
    fn sub_dollar_gcp_is_excluded() {
        let mut e = econ(&[(1, [100.0; 4], 10.0)]).records().to_vec();
        e[1].gcp = 0.5;
        let t = build_target(&EconomyTable::new(e, &YEARS).unwrap(), &YEARS);
        assert_eq!(t.entries()[0].exclusion, Some(Exclusion::GcpBelow1Usd));
        assert_eq!(t.n_included(), 0);
    }

    #[test]
    fn zero_population_and_missing_years() {
        let mut e = econ(&[(1, [100.0; 4], 10.0), (2, [100.0; 4], 10.0)]).records().to_vec();
        e[2].population = 0.0;
        e[2].gcp = 5.0;
        e.pop();
        let t = build_target(&EconomyTable::new(e, &YEARS).unwrap(), &YEARS);
        assert_eq!(t.entries()[0].exclusion, Some(Exclusion::ZeroPopulation));
        assert_eq!(t.entries()[1].exclusion, Some(Exclusion::MissingYears));
    }

    fn from_values(values: &[f64]) -> TargetVector {
        TargetVector::from_entries(
            values
                .iter()
                .enumerate()
                .map(|(i, v)| included(i as i64, *v))
                .collect(),
        )
    }

    #[test]
    fn nine_value_terciles() {
        let t = tercile_split(&from_values(&[5.0, 1.0, 9.0, 2.0, 8.0, 3.0, 7.0, 4.0, 6.0])).unwrap();
        let [t1, t2] = t.thresholds().unwrap();
        // (n-1)p = 8/3 -> 3 + 2/3, 16/3 -> 6 + 1/3
        assert!((t1 - (3.0 + 2.0 / 3.0)).abs() < 1e-12);
        assert!((t2 - (6.0 + 1.0 / 3.0)).abs() < 1e-12);
        for e in t.entries() {
            let want = match e.log_gcp_pc as i32 {
                1..=3 => Tercile::Bottom,
                4..=6 => Tercile::Middle,
                _ => Tercile::Top,
            };
            assert_eq!(e.tercile, Some(want));
        }
    }

    #[test]
    fn identical_values_fall_to_bottom() {
        let t = tercile_split(&from_values(&[2.0; 6])).unwrap();
        let [t1, t2] = t.thresholds().unwrap();
        assert_eq!(t1, t2);
        assert!(t.entries().iter().all(|e| e.tercile == Some(Tercile::Bottom)));
    }

    #[test]
    fn tercile_split_needs_three_cells() {
        assert!(tercile_split(&from_values(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn stationarity_constant_years() {
        let p = stationarity_probe(&econ(&[(1, [100.0; 4], 3.0)]), &YEARS).unwrap();
        for t in [&p.mean, &p.plus, &p.minus] {
            assert!((t.entries()[0].log_gcp_pc - 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn stationarity_alternating_years() {
        let p = stationarity_probe(&econ(&[(1, [90.0, 110.0, 90.0, 110.0], 1.0)]), &YEARS).unwrap();
        // sd = sqrt(4 * 100 / 3)
        let sd = (400.0f64 / 3.0).sqrt();
        assert!((sd - 11.547).abs() < 1e-3);
        assert!((p.plus.entries()[0].log_gcp_pc - (100.0 + sd).log10()).abs() < 1e-12);
        assert!((p.minus.entries()[0].log_gcp_pc - (100.0 - sd).log10()).abs() < 1e-12);
        assert!((p.mean.entries()[0].log_gcp_pc - 2.0).abs() < 1e-12);
    }

    #[test]
    fn stationarity_single_year_is_an_error() {
        let e = econ(&[(1, [100.0; 4], 1.0)]);
        let err = stationarity_probe(&e, &[1990]).unwrap_err();
        assert!(err.to_string().contains(">=2 years required"));
    }

    #[test]
    fn minus_variant_excludes_non_positive() {
        let p = stationarity_probe(&econ(&[(1, [1.0, 1.0, 1.0, 400.0], 1.0)]), &YEARS).unwrap();
        assert_eq!(p.minus.entries()[0].exclusion, Some(Exclusion::NonPositiveMinusSigma));
        assert!(p.plus.entries()[0].is_included());
    }

    #[test]
    fn csv_round_trip() {
        let t = tercile_split(&build_target(
            &econ(&[(1, [10.0; 4], 1.0), (2, [100.0; 4], 1.0), (3, [1000.0; 4], 1.0), (4, [0.1; 4], 1.0)]),
            &YEARS,
        ))
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("target.csv");
        t.write_csv(&p).unwrap();
        let back = TargetVector::load_csv(&p).unwrap();
        assert_eq!(back.thresholds(), t.thresholds());
        assert_eq!(back.entries().len(), 4);
        assert_eq!(back.entries()[3].exclusion, Some(Exclusion::GcpBelow1Usd));
        assert_eq!(back.entries()[2].tercile, Some(Tercile::Top));
    }

    proptest! {
        #[test]
        fn scaling_gcp_shifts_log_by_one(pcs in prop::collection::vec(1.0f64..1e5, 3..30)) {
            let rows: Vec<_> = pcs.iter().enumerate().map(|(i, pc)| (i as i64, [*pc, pc * 1.1, pc * 0.9, *pc], 50.0)).collect();
            let base = tercile_split(&build_target(&econ(&rows), &YEARS)).unwrap();
            let scaled_rows: Vec<_> = rows.iter().map(|(id, pc, pop)| (*id, pc.map(|v| v * 10.0), *pop)).collect();
            let scaled = tercile_split(&build_target(&econ(&scaled_rows), &YEARS)).unwrap();
            for (a, b) in base.entries().iter().zip(scaled.entries()) {
                prop_assert!((b.log_gcp_pc - a.log_gcp_pc - 1.0).abs() < 1e-12);
                prop_assert_eq!(a.tercile, b.tercile);
            }
        }

        #[test]
        fn tercile_split_is_permutation_invariant_and_idempotent(
            mut values in prop::collection::hash_set(-1000i32..1000, 3..60).prop_map(|s| s.into_iter().map(|v| v as f64 / 7.0).collect::<Vec<_>>()),
            seed in any::<u64>(),
        ) {
            let a = tercile_split(&from_values(&values)).unwrap();
            let again = tercile_split(&a).unwrap();
            prop_assert_eq!(&a, &again);

            use rand::{seq::SliceRandom, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let labels: BTreeMap<u64, Tercile> = a.entries().iter().map(|e| (e.log_gcp_pc.to_bits(), e.tercile.unwrap())).collect();
            values.shuffle(&mut rng);
            let b = tercile_split(&from_values(&values)).unwrap();
            prop_assert_eq!(a.thresholds(), b.thresholds());
            for e in b.entries() {
                prop_assert_eq!(Some(labels[&e.log_gcp_pc.to_bits()]), e.tercile);
            }
            let count = |t| b.entries().iter().filter(|e| e.tercile == Some(t)).count() as i64;
            let counts = [count(Tercile::Bottom), count(Tercile::Middle), count(Tercile::Top)];
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1, "{:?}", counts);
        }
    }
}
