//! Per-cell time-series statistics.
//!
//! All accumulations use Neumaier compensated summation in sample order, so a
//! cell's statistics never depend on how cells are scheduled across threads.
//! Missing samples (NaN) are skipped everywhere.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::gridstore::{is_missing, Cadence, VariableId, VariableSeries, MISSING};

/// Compensated sum.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

pub fn mean(values: &[f64]) -> f64 {
    neumaier_sum(values.iter().copied()) / values.len() as f64
}

/// Sample standard deviation (divisor n - 1), two-pass on values shifted by
/// the first sample, so constant data give exactly 0.
pub fn sample_sd(values: &[f64]) -> f64 {
    let x0 = values.first().copied().unwrap_or(0.0);
    let m = neumaier_sum(values.iter().map(|v| v - x0)) / values.len() as f64;
    let ss = neumaier_sum(values.iter().map(|v| (v - x0 - m) * (v - x0 - m)));
    (ss / (values.len() as f64 - 1.0)).sqrt()
}

/// Linear-interpolation quantile at position `(n - 1) p` of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= sorted.len() || frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats {
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub sd: f64,
}

pub fn summary_stats(values: &[f64]) -> Result<SummaryStats> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !is_missing(*x)).collect();
    if v.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "summary statistics need 2 samples, got {}",
            v.len()
        )));
    }
    let m = mean(&v);
    let sd = sample_sd(&v);
    v.sort_unstable_by(f64::total_cmp);
    Ok(SummaryStats {
        mean: m,
        q1: quantile_sorted(&v, 0.25),
        median: quantile_sorted(&v, 0.5),
        q3: quantile_sorted(&v, 0.75),
        sd,
    })
}

/// Standard deviation of the 12 climatological monthly means.
pub fn seasonal_sd(values: &[f64], months: &[u8]) -> Result<f64> {
    if values.len() != months.len() {
        return Err(Error::Misaligned(format!(
            "{} values vs {} month labels",
            values.len(),
            months.len()
        )));
    }
    let mut sums = [0.0f64; 12];
    let mut comp = [0.0f64; 12];
    let mut counts = [0usize; 12];
    // Accumulating deviations from one sample keeps a flat series exactly flat.
    let x0 = values.iter().copied().find(|v| !is_missing(*v)).unwrap_or(0.0);
    for (&v, &m) in values.iter().zip(months) {
        if is_missing(v) {
            continue;
        }
        let v = v - x0;
        let k = (m as usize)
            .checked_sub(1)
            .filter(|k| *k < 12)
            .ok_or_else(|| Error::InvalidParameter(format!("month label {m}")))?;
        let t = sums[k] + v;
        if sums[k].abs() >= v.abs() {
            comp[k] += (sums[k] - t) + v;
        } else {
            comp[k] += (v - t) + sums[k];
        }
        sums[k] = t;
        counts[k] += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InsufficientData(format!(
            "calendar month {} has no samples",
            k + 1
        )));
    }
    let monthly: Vec<f64> = (0..12)
        .map(|k| (sums[k] + comp[k]) / counts[k] as f64)
        .collect();
    Ok(sample_sd(&monthly))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Sign {
    Pos,
    Neg,
}

/// Fraction of valid offsets `t` where the `step`-ahead difference exceeds
/// `threshold` in the given direction.
pub fn gradient_exceedance(values: &[f64], step: usize, sign: Sign, threshold: f64) -> Result<f64> {
    if step == 0 || values.len() < step + 1 {
        return Err(Error::InsufficientData(format!(
            "step {step} needs at least {} samples, got {}",
            step + 1,
            values.len()
        )));
    }
    let mut valid = 0usize;
    let mut hits = 0usize;
    for (a, b) in values.iter().zip(&values[step..]) {
        if is_missing(*a) || is_missing(*b) {
            continue;
        }
        valid += 1;
        let d = b - a;
        let exceeded = match sign {
            Sign::Pos => d >= threshold,
            Sign::Neg => d <= -threshold,
        };
        if exceeded {
            hits += 1;
        }
    }
    if valid == 0 {
        return Err(Error::InsufficientData("no valid sample pairs".into()));
    }
    Ok(hits as f64 / valid as f64)
}

/// Daily temperature excursion plus, per cell, the fraction of input samples
/// that were missing.
#[derive(Debug, Clone)]
pub struct DailyExcursion {
    pub series: VariableSeries,
    pub input_missing_fraction: Vec<f64>,
}

/// Per day: max of the day's `tmax` samples minus min of its `tmin` samples.
pub fn daily_excursion(tmin: &VariableSeries, tmax: &VariableSeries) -> Result<DailyExcursion> {
    if tmin.cadence != Cadence::SixHourly || tmax.cadence != Cadence::SixHourly {
        return Err(Error::Misaligned("daily excursion needs 6-hourly inputs".into()));
    }
    if tmin.cell_ids() != tmax.cell_ids() || tmin.timestamps() != tmax.timestamps() {
        return Err(Error::Misaligned(
            "TMIN and TMAX differ in cells or timestamps".into(),
        ));
    }

    // Steps grouped into calendar days, in order.
    let mut days: BTreeMap<NaiveDate, Vec<usize>> = BTreeMap::new();
    for (i, t) in tmin.timestamps().iter().enumerate() {
        days.entry(t.date()).or_default().push(i);
    }
    let n_days = days.len();
    let n_cells = tmin.n_cells();
    let mut values = vec![MISSING; n_cells * n_days];
    let mut input_missing_fraction = Vec::with_capacity(n_cells);
    for c in 0..n_cells {
        let lo = tmin.cell_values(c);
        let hi = tmax.cell_values(c);
        let mut missing = 0usize;
        for (d, steps) in days.values().enumerate() {
            let mut max_hi = f64::NEG_INFINITY;
            let mut min_lo = f64::INFINITY;
            for &s in steps {
                if is_missing(hi[s]) {
                    missing += 1;
                } else {
                    max_hi = max_hi.max(hi[s]);
                }
                if is_missing(lo[s]) {
                    missing += 1;
                } else {
                    min_lo = min_lo.min(lo[s]);
                }
            }
            if max_hi.is_finite() && min_lo.is_finite() {
                values[c * n_days + d] = (max_hi - min_lo).max(0.0);
            }
        }
        let total = 2 * tmin.n_steps();
        input_missing_fraction.push(if total == 0 { 0.0 } else { missing as f64 / total as f64 });
    }
    let timestamps = days
        .keys()
        .map(|d| d.and_hms_opt(0, 0, 0).unwrap())
        .collect();
    let series = VariableSeries::new(
        VariableId::Dt,
        Cadence::Daily,
        tmin.cell_ids().to_vec(),
        timestamps,
        values,
    )?;
    Ok(DailyExcursion {
        series,
        input_missing_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, NaiveDateTime};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn five_point_summary() {
        let s = summary_stats(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((s.mean, s.q1, s.median, s.q3), (3.0, 2.0, 3.0, 4.0));
        assert!(close(s.sd, 2.5f64.sqrt()));
        assert!(close(s.sd, 1.5811388300841898));
    }

    #[test]
    fn constant_summary() {
        let s = summary_stats(&[7.0; 4]).unwrap();
        assert_eq!((s.mean, s.q1, s.median, s.q3, s.sd), (7.0, 7.0, 7.0, 7.0, 0.0));
    }

    #[test]
    fn two_point_interpolation() {
        let s = summary_stats(&[0.0, 10.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (2.5, 5.0, 7.5));
    }

    #[test]
    fn summary_needs_two_samples() {
        assert!(summary_stats(&[1.0]).is_err());
        assert!(summary_stats(&[1.0, f64::NAN]).is_err());
    }

    fn months_of_days(n_years: i32) -> (Vec<NaiveDateTime>, Vec<u8>) {
        use chrono::Datelike;
        let start = NaiveDate::from_ymd_opt(2001, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let end = NaiveDate::from_ymd_opt(2001 + n_years, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let n = (end - start).num_days();
        let ts: Vec<_> = (0..n).map(|d| start + Duration::days(d)).collect();
        let months = ts.iter().map(|t| t.month() as u8).collect();
        (ts, months)
    }

    #[test]
    fn seasonal_sd_of_constant_is_zero() {
        let (_, months) = months_of_days(2);
        let v = vec![10.0; months.len()];
        assert_eq!(seasonal_sd(&v, &months).unwrap(), 0.0);
    }

    #[test]
    fn seasonal_sd_of_month_index() {
        let (_, months) = months_of_days(3);
        let v: Vec<f64> = months.iter().map(|&m| m as f64).collect();
        // sd of 1..12 with divisor 11 = sqrt(13)
        let got = seasonal_sd(&v, &months).unwrap();
        assert!(close(got, 13f64.sqrt()), "{got}");
        assert!((got - 3.6056).abs() < 1e-4);
    }

    #[test]
    fn seasonal_sd_of_dense_sine() {
        // Analytic limit: a sine of amplitude A has monthly means whose sd is
        // A/sqrt(2) * sqrt(12/11), attenuated by month averaging (~1%).
        let (ts, months) = months_of_days(4);
        let amp = 3.0;
        let t0 = ts[0];
        let v: Vec<f64> = ts
            .iter()
            .map(|t| {
                let days = (*t - t0).num_seconds() as f64 / 86400.0;
                amp * (2.0 * std::f64::consts::PI * days / 365.25).sin()
            })
            .collect();
        let got = seasonal_sd(&v, &months).unwrap();
        let analytic = amp / 2f64.sqrt() * (12.0f64 / 11.0).sqrt();
        assert!((got / analytic - 1.0).abs() < 0.02, "{got} vs {analytic}");
    }

    #[test]
    fn seasonal_sd_requires_all_months() {
        let v = vec![1.0; 31];
        let months = vec![1u8; 31];
        assert!(seasonal_sd(&v, &months).is_err());
    }

    #[test]
    fn alternating_series_exceeds_half_the_time() {
        let v: Vec<f64> = (0..101).map(|i| if i % 2 == 0 { 0.0 } else { 10.0 }).collect();
        let f = gradient_exceedance(&v, 1, Sign::Pos, 5.0).unwrap();
        assert_eq!(f, 0.5);
        // brute force count of even offsets
        let evens = (0..100).filter(|t| t % 2 == 0).count();
        assert_eq!(f, evens as f64 / 100.0);
    }

    #[test]
    fn constant_series_never_exceeds() {
        let v = vec![3.0; 50];
        for s in 1..=5 {
            assert_eq!(gradient_exceedance(&v, s, Sign::Pos, 0.1).unwrap(), 0.0);
            assert_eq!(gradient_exceedance(&v, s, Sign::Neg, 0.1).unwrap(), 0.0);
        }
    }

    #[test]
    fn gradient_needs_step_plus_one_samples() {
        assert!(gradient_exceedance(&[1.0, 2.0, 3.0], 3, Sign::Pos, 1.0).is_err());
        assert!(gradient_exceedance(&[1.0, 2.0, 3.0, 4.0], 3, Sign::Pos, 1.0).is_ok());
    }

    #[test]
    fn gradient_skips_missing_pairs() {
        let v = [0.0, 10.0, f64::NAN, 0.0, 10.0];
        // valid pairs: (0,1) +10, (3,4) +10
        assert_eq!(gradient_exceedance(&v, 1, Sign::Pos, 5.0).unwrap(), 1.0);
    }

    fn six_hourly(cells: usize, days: i64, f: impl Fn(usize, usize) -> f64) -> VariableSeries {
        let start = NaiveDate::from_ymd_opt(2001, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let ts: Vec<_> = (0..days * 4).map(|i| start + Duration::hours(6 * i)).collect();
        let n = ts.len();
        let mut values = Vec::with_capacity(cells * n);
        for c in 0..cells {
            for s in 0..n {
                values.push(f(c, s));
            }
        }
        VariableSeries::new(
            VariableId::Tmin,
            Cadence::SixHourly,
            (0..cells as i64).collect(),
            ts,
            values,
        )
        .unwrap()
    }

    #[test]
    fn excursion_of_one_day() {
        let tmax_vals = [10.0, 12.0, 11.0, 9.0];
        let tmin_vals = [3.0, 2.0, 4.0, 5.0];
        let tmin = six_hourly(1, 1, |_, s| tmin_vals[s]);
        let tmax = six_hourly(1, 1, |_, s| tmax_vals[s]);
        let dt = daily_excursion(&tmin, &tmax).unwrap();
        assert_eq!(dt.series.n_steps(), 1);
        assert_eq!(dt.series.cell_values(0)[0], 10.0);
    }

    #[test]
    fn excursion_of_constant_is_zero() {
        let tmin = six_hourly(2, 3, |_, _| 4.0);
        let tmax = six_hourly(2, 3, |_, _| 4.0);
        let dt = daily_excursion(&tmin, &tmax).unwrap();
        assert!(dt.series.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn excursion_with_missing_sample() {
        let tmin = six_hourly(1, 2, |_, s| if s == 1 { f64::NAN } else { s as f64 });
        let tmax = six_hourly(1, 2, |_, s| 20.0 + s as f64);
        let dt = daily_excursion(&tmin, &tmax).unwrap();
        // day 0: max tmax 23, min of remaining tmin {0, 2, 3} = 0
        assert_eq!(dt.series.cell_values(0)[0], 23.0);
        assert!((dt.input_missing_fraction[0] - 1.0 / 16.0).abs() < 1e-15);
        assert!(dt.input_missing_fraction[0] > 0.05);
    }

    #[test]
    fn excursion_rejects_misaligned_inputs() {
        let tmin = six_hourly(1, 2, |_, _| 0.0);
        let tmax = six_hourly(1, 3, |_, _| 1.0);
        assert!(daily_excursion(&tmin, &tmax).is_err());
    }
}
