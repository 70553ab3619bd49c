//! Engineered feature table: calendar and cyclical encodings, enriched
//! holiday flags, per-store lags, shifted rolling statistics, shifted EWMAs
//! and the `log1p` sales transform.
//!
//! Every target-derived column at row `(s, t)` only reads rows of store `s`
//! strictly before `t`. Undefined leading entries go through the same
//! forward-fill / back-fill / zero rule as the raw data.

use std::f64::consts::PI;
use std::ops::Range;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use thiserror::Error;

use crate::dataset::{fill_series, StorePanel};

pub const LAGS: [usize; 7] = [1, 2, 3, 7, 14, 28, 52];
pub const ROLL_MEAN_WINDOWS: [usize; 5] = [3, 4, 8, 12, 52];
pub const ROLL_STD_WINDOWS: [usize; 4] = [3, 4, 8, 52];
pub const EWMA_SPANS: [usize; 3] = [3, 7, 14];

pub const TARGET: &str = "weekly_sales";
pub const LOG_TARGET: &str = "sales_log1p";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("store {store} week {date}: weekly sales {value} <= -1, log1p undefined")]
    DomainError {
        store: u32,
        date: NaiveDate,
        value: f64,
    },
    #[error("feature column not found: {0}")]
    MissingColumn(String),
    #[error("malformed feature table at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// Column-major feature table with one row per (store, week), sorted by store
/// then date.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub stores: Vec<u32>,
    pub dates: Vec<NaiveDate>,
    columns: Vec<(String, Vec<f64>)>,
}

impl FeatureMatrix {
    /// Seeds the table with the raw variables and the sales target.
    pub fn from_panel(panel: &StorePanel) -> Self {
        let mut fm = FeatureMatrix {
            stores: Vec::new(),
            dates: Vec::new(),
            columns: Vec::new(),
        };
        let mut cols: [Vec<f64>; 6] = Default::default();
        for s in &panel.stores {
            fm.stores.extend(std::iter::repeat_n(s.store, s.len()));
            fm.dates.extend_from_slice(&s.dates);
            cols[0].extend_from_slice(&s.temperature);
            cols[1].extend_from_slice(&s.fuel_price);
            cols[2].extend_from_slice(&s.cpi);
            cols[3].extend_from_slice(&s.unemployment);
            cols[4].extend(s.is_holiday.iter().map(|&h| f64::from(u8::from(h))));
            cols[5].extend_from_slice(&s.weekly_sales);
        }
        let names = ["temperature", "fuel_price", "cpi", "unemployment", "is_holiday", TARGET];
        for (name, col) in names.into_iter().zip(cols) {
            fm.push_column(name, col);
        }
        fm
    }

    pub fn num_rows(&self) -> usize {
        self.dates.len()
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c.as_slice())
    }

    pub fn require(&self, name: &str) -> Result<&[f64]> {
        self.column(name)
            .ok_or_else(|| FeatureError::MissingColumn(name.to_string()))
    }

    /// Appends a column, replacing any existing column of the same name in place.
    pub fn push_column(&mut self, name: &str, values: Vec<f64>) {
        assert_eq!(values.len(), self.num_rows(), "column {name} has wrong length");
        if let Some(slot) = self.columns.iter_mut().find(|(n, _)| n == name) {
            slot.1 = values;
        } else {
            self.columns.push((name.to_string(), values));
        }
    }

    fn move_to_end(&mut self, name: &str) {
        if let Some(i) = self.columns.iter().position(|(n, _)| n == name) {
            let c = self.columns.remove(i);
            self.columns.push(c);
        }
    }

    /// Contiguous row range of each store, in table order.
    pub fn store_ranges(&self) -> Vec<(u32, Range<usize>)> {
        let mut out: Vec<(u32, Range<usize>)> = Vec::new();
        for (i, &s) in self.stores.iter().enumerate() {
            match out.last_mut() {
                Some((id, r)) if *id == s => r.end = i + 1,
                _ => out.push((s, i..i + 1)),
            }
        }
        out
    }

    fn per_store_derived(&mut self, name: &str, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<()> {
        let y = self.require(TARGET)?.to_vec();
        let mut out = vec![f64::NAN; y.len()];
        for (_, r) in self.store_ranges() {
            let mut col = f(&y[r.clone()]);
            fill_series(&mut col);
            out[r].copy_from_slice(&col);
        }
        self.push_column(name, out);
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("store,date");
        for (n, _) in &self.columns {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for i in 0..self.num_rows() {
            out.push_str(&format!("{},{}", self.stores[i], self.dates[i].format("%Y-%m-%d")));
            for (_, c) in &self.columns {
                out.push_str(&format!(",{}", c[i]));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(FeatureError::Malformed {
            line: 1,
            reason: "empty file".into(),
        })?;
        let names: Vec<&str> = header.split(',').map(str::trim).collect();
        if names.len() < 2 || names[0] != "store" || names[1] != "date" {
            return Err(FeatureError::Malformed {
                line: 1,
                reason: "header must start with store,date".into(),
            });
        }
        let mut fm = FeatureMatrix {
            stores: Vec::new(),
            dates: Vec::new(),
            columns: names[2..].iter().map(|n| (n.to_string(), Vec::new())).collect(),
        };
        for (i, line) in lines {
            let bad = |reason: String| FeatureError::Malformed { line: i + 1, reason };
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != names.len() {
                return Err(bad(format!("expected {} cells, got {}", names.len(), cells.len())));
            }
            fm.stores
                .push(cells[0].trim().parse().map_err(|_| bad(format!("bad store {:?}", cells[0])))?);
            fm.dates.push(
                NaiveDate::parse_from_str(cells[1].trim(), "%Y-%m-%d")
                    .map_err(|_| bad(format!("bad date {:?}", cells[1])))?,
            );
            for (c, cell) in fm.columns.iter_mut().zip(&cells[2..]) {
                c.1.push(cell.trim().parse().map_err(|_| bad(format!("bad number {cell:?}")))?);
            }
        }
        Ok(fm)
    }
}

/// Year, month, ISO week, weekday and the sine/cosine encodings of week
/// (period 52) and month (period 12).
pub fn add_calendar_features(fm: &mut FeatureMatrix) {
    let n = fm.num_rows();
    let mut cols: [Vec<f64>; 8] = std::array::from_fn(|_| Vec::with_capacity(n));
    for d in &fm.dates {
        let week = f64::from(d.iso_week().week());
        let month = f64::from(d.month());
        let (ws, wc) = cyclical(week, 52.0);
        let (ms, mc) = cyclical(month, 12.0);
        let vals = [
            f64::from(d.year()),
            month,
            week,
            f64::from(d.weekday().num_days_from_monday()),
            ws,
            wc,
            ms,
            mc,
        ];
        for (c, v) in cols.iter_mut().zip(vals) {
            c.push(v);
        }
    }
    let names = [
        "year",
        "month",
        "week_of_year",
        "day_of_week",
        "week_sin",
        "week_cos",
        "month_sin",
        "month_cos",
    ];
    for (name, col) in names.into_iter().zip(cols) {
        fm.push_column(name, col);
    }
}

pub fn cyclical(value: f64, period: f64) -> (f64, f64) {
    let angle = 2.0 * PI * value / period;
    (angle.sin(), angle.cos())
}

/// Fourth Thursday of November.
pub fn thanksgiving_date(year: i32) -> NaiveDate {
    NaiveDate::from_weekday_of_month_opt(year, 11, Weekday::Thu, 4)
        .expect("every November has four Thursdays")
}

pub fn christmas_date(year: i32) -> Option<NaiveDate> {
    NaiveDate::from_ymd_opt(year, 12, 25)
}

/// True when `day` falls in the seven days ending on `week_ending`.
pub fn week_contains(week_ending: NaiveDate, day: NaiveDate) -> bool {
    let back = (week_ending - day).num_days();
    (0..=6).contains(&back)
}

pub fn is_major_holiday_week(week_ending: NaiveDate) -> bool {
    let start = week_ending - Duration::days(6);
    [start.year(), week_ending.year()].into_iter().any(|y| {
        week_contains(week_ending, thanksgiving_date(y))
            || christmas_date(y).is_some_and(|c| week_contains(week_ending, c))
    })
}

/// `is_major_holiday` for Christmas and Thanksgiving weeks; `is_minor_holiday`
/// for the remaining weeks flagged by the source `IsHoliday` column.
pub fn add_holiday_flags(fm: &mut FeatureMatrix) -> Result<()> {
    let flagged = fm.require("is_holiday")?;
    let (major, minor): (Vec<f64>, Vec<f64>) = fm
        .dates
        .iter()
        .zip(flagged)
        .map(|(&d, &h)| {
            let major = is_major_holiday_week(d);
            let minor = h != 0.0 && !major;
            (f64::from(u8::from(major)), f64::from(u8::from(minor)))
        })
        .unzip();
    fm.push_column("is_major_holiday", major);
    fm.push_column("is_minor_holiday", minor);
    Ok(())
}

/// `out[t] = y[t - k]`, `NaN` where undefined.
pub fn lag(y: &[f64], k: usize) -> Vec<f64> {
    (0..y.len())
        .map(|t| if t >= k { y[t - k] } else { f64::NAN })
        .collect()
}

/// Mean of the up-to-`w` values strictly before each position.
pub fn shifted_rolling_mean(y: &[f64], w: usize) -> Vec<f64> {
    (0..y.len())
        .map(|t| {
            let win = &y[t.saturating_sub(w)..t];
            if win.is_empty() {
                f64::NAN
            } else {
                win.iter().sum::<f64>() / win.len() as f64
            }
        })
        .collect()
}

/// Sample (n - 1) standard deviation of the up-to-`w` values strictly before
/// each position; needs at least two points.
pub fn shifted_rolling_std(y: &[f64], w: usize) -> Vec<f64> {
    (0..y.len())
        .map(|t| {
            let win = &y[t.saturating_sub(w)..t];
            if win.len() < 2 {
                return f64::NAN;
            }
            let n = win.len() as f64;
            let mean = win.iter().sum::<f64>() / n;
            (win.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .collect()
}

/// Recursive EWMA with `alpha = 2 / (span + 1)` and `e[0] = y[0]`, shifted one
/// step so position `t` holds `e[t - 1]`.
pub fn shifted_ewma(y: &[f64], span: usize) -> Vec<f64> {
    let alpha = 2.0 / (span as f64 + 1.0);
    let mut out = vec![f64::NAN; y.len()];
    let mut e = f64::NAN;
    for t in 0..y.len() {
        if t > 0 {
            out[t] = e;
        }
        e = if t == 0 { y[0] } else { alpha * y[t] + (1.0 - alpha) * e };
    }
    out
}

pub fn add_lags(fm: &mut FeatureMatrix) -> Result<()> {
    for k in LAGS {
        fm.per_store_derived(&format!("lag_{k}"), |y| lag(y, k))?;
    }
    Ok(())
}

pub fn add_rolling_stats(fm: &mut FeatureMatrix) -> Result<()> {
    for w in ROLL_MEAN_WINDOWS {
        fm.per_store_derived(&format!("roll_mean_{w}"), |y| shifted_rolling_mean(y, w))?;
    }
    for w in ROLL_STD_WINDOWS {
        fm.per_store_derived(&format!("roll_std_{w}"), |y| shifted_rolling_std(y, w))?;
    }
    Ok(())
}

pub fn add_ewma(fm: &mut FeatureMatrix) -> Result<()> {
    for s in EWMA_SPANS {
        fm.per_store_derived(&format!("ewma_{s}"), |y| shifted_ewma(y, s))?;
    }
    Ok(())
}

pub fn log1p_transform(fm: &mut FeatureMatrix) -> Result<()> {
    let y = fm.require(TARGET)?;
    let mut out = Vec::with_capacity(y.len());
    for (i, &v) in y.iter().enumerate() {
        if v <= -1.0 {
            return Err(FeatureError::DomainError {
                store: fm.stores[i],
                date: fm.dates[i],
                value: v,
            });
        }
        out.push(v.ln_1p());
    }
    fm.push_column(LOG_TARGET, out);
    Ok(())
}

/// Runs the full feature pipeline on an imputed panel. The target column is
/// placed last.
pub fn build_features(panel: &StorePanel) -> Result<FeatureMatrix> {
    let mut fm = FeatureMatrix::from_panel(panel);
    add_calendar_features(&mut fm);
    add_holiday_flags(&mut fm)?;
    add_lags(&mut fm)?;
    add_rolling_stats(&mut fm)?;
    add_ewma(&mut fm)?;
    log1p_transform(&mut fm)?;
    fm.move_to_end(TARGET);
    Ok(fm)
}

/// Column order of [`build_features`] output (after `store,date`).
pub fn feature_column_order() -> Vec<String> {
    let mut v: Vec<String> = [
        "temperature",
        "fuel_price",
        "cpi",
        "unemployment",
        "is_holiday",
        "year",
        "month",
        "week_of_year",
        "day_of_week",
        "week_sin",
        "week_cos",
        "month_sin",
        "month_cos",
        "is_major_holiday",
        "is_minor_holiday",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    v.extend(LAGS.iter().map(|k| format!("lag_{k}")));
    v.extend(ROLL_MEAN_WINDOWS.iter().map(|w| format!("roll_mean_{w}")));
    v.extend(ROLL_STD_WINDOWS.iter().map(|w| format!("roll_std_{w}")));
    v.extend(EWMA_SPANS.iter().map(|s| format!("ewma_{s}")));
    v.push(LOG_TARGET.into());
    v.push(TARGET.into());
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::StoreSeries;
    use proptest::prelude::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn panel(series: &[Vec<f64>]) -> StorePanel {
        let n = series[0].len();
        let dates: Vec<NaiveDate> = (0..n as i64).map(|i| d("2010-02-05") + Duration::weeks(i)).collect();
        StorePanel {
            stores: series
                .iter()
                .enumerate()
                .map(|(i, y)| StoreSeries {
                    store: i as u32 + 1,
                    dates: dates.clone(),
                    weekly_sales: y.clone(),
                    temperature: vec![50.0; n],
                    fuel_price: vec![3.0; n],
                    cpi: vec![200.0; n],
                    unemployment: vec![7.0; n],
                    is_holiday: (0..n).map(|t| t % 10 == 1).collect(),
                })
                .collect(),
        }
    }

    /// Enumerates November days and picks the fourth Thursday.
    fn thanksgiving_oracle(year: i32) -> NaiveDate {
        (1..=30)
            .map(|day| NaiveDate::from_ymd_opt(year, 11, day).unwrap())
            .filter(|d| d.weekday() == Weekday::Thu)
            .nth(3)
            .unwrap()
    }

    #[test]
    fn thanksgiving_matches_enumeration() {
        assert_eq!(thanksgiving_oracle(2010), d("2010-11-25"));
        assert_eq!(thanksgiving_oracle(2011), d("2011-11-24"));
        assert_eq!(thanksgiving_oracle(2012), d("2012-11-22"));
        for y in 1990..2040 {
            assert_eq!(thanksgiving_date(y), thanksgiving_oracle(y));
        }
    }

    #[test]
    fn cyclical_anchor_points() {
        let (s, c) = cyclical(26.0, 52.0);
        assert!(s.abs() < 1e-12 && (c + 1.0).abs() < 1e-12);
        let (s, c) = cyclical(52.0, 52.0);
        assert!(s.abs() < 1e-12 && (c - 1.0).abs() < 1e-12);
        let (s, c) = cyclical(3.0, 12.0);
        assert!((s - 1.0).abs() < 1e-12 && c.abs() < 1e-12);
    }

    #[test]
    fn holiday_flags() {
        assert!(is_major_holiday_week(d("2010-11-26")));
        assert!(!is_major_holiday_week(d("2010-02-12")));
        // Christmas 2010 is a Saturday; the Friday-ending week that holds it is 12-31.
        assert!(is_major_holiday_week(d("2010-12-31")));
        assert!(!is_major_holiday_week(d("2010-12-24")));
        assert!(is_major_holiday_week(d("2011-12-30")));

        let mut fm = FeatureMatrix {
            stores: vec![1, 1, 1],
            dates: vec![d("2010-02-12"), d("2010-11-26"), d("2010-03-05")],
            columns: vec![],
        };
        fm.push_column("is_holiday", vec![1.0, 1.0, 0.0]);
        add_holiday_flags(&mut fm).unwrap();
        assert_eq!(fm.column("is_major_holiday").unwrap(), &[0.0, 1.0, 0.0]);
        assert_eq!(fm.column("is_minor_holiday").unwrap(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn lag_with_fill() {
        let fm = build_features(&panel(&[vec![10.0, 20.0, 30.0]])).unwrap();
        assert_eq!(fm.column("lag_1").unwrap(), &[10.0, 10.0, 20.0]);
        let mut raw = lag(&(0..143).map(f64::from).collect::<Vec<_>>(), 52);
        assert_eq!(raw.iter().take_while(|v| v.is_nan()).count(), 52);
        fill_series(&mut raw);
        assert_eq!(raw[0], 0.0);
    }

    #[test]
    fn lag_does_not_cross_stores() {
        let fm = build_features(&panel(&[vec![1.0, 2.0, 3.0], vec![100.0, 200.0, 300.0]])).unwrap();
        let l1 = fm.column("lag_1").unwrap();
        assert_eq!(&l1[3..], &[100.0, 100.0, 200.0]);
        assert_ne!(l1[3], 3.0);
    }

    #[test]
    fn rolling_examples() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(shifted_rolling_mean(&y, 3)[3], 2.0);
        assert_eq!(shifted_rolling_std(&y, 3)[3], 1.0);
        assert!(shifted_rolling_mean(&y, 3)[0].is_nan());
        // partial window at t = 2 uses the two available points
        assert_eq!(shifted_rolling_mean(&y, 3)[2], 1.5);
        assert!(shifted_rolling_std(&y, 3)[1].is_nan());
    }

    #[test]
    fn ewma_examples() {
        let e = shifted_ewma(&[0.0, 4.0], 3);
        assert!(e[0].is_nan());
        assert_eq!(e[1], 0.0);
        assert_eq!(shifted_ewma(&[0.0, 4.0, 4.0], 3)[2], 2.0);
        let c = shifted_ewma(&[7.5; 20], 14);
        assert!(c[1..].iter().all(|&v| v == 7.5));
    }

    #[test]
    fn log1p_values_and_domain() {
        let fm = build_features(&panel(&[vec![0.0, std::f64::consts::E - 1.0]])).unwrap();
        let l = fm.column(LOG_TARGET).unwrap();
        assert_eq!(l[0], 0.0);
        assert!((l[1] - 1.0).abs() < 1e-15);
        let err = build_features(&panel(&[vec![5.0, -1.0]])).unwrap_err();
        assert!(matches!(err, FeatureError::DomainError { store: 1, .. }));
    }

    #[test]
    fn column_order_is_fixed() {
        let fm = build_features(&panel(&[vec![1.0; 5]])).unwrap();
        let names: Vec<String> = fm.column_names().map(String::from).collect();
        assert_eq!(names, feature_column_order());
    }

    #[test]
    fn csv_round_trip() {
        let fm = build_features(&panel(&[vec![1.25, 2.0, 3.5], vec![4.0, 5.0, 6.125]])).unwrap();
        assert_eq!(FeatureMatrix::from_csv_str(&fm.to_csv_string()).unwrap(), fm);
    }

    proptest! {
        #[test]
        fn final_week_change_does_not_leak(
            ys in proptest::collection::vec(proptest::collection::vec(1.0..1000.0f64, 60), 2),
            bump in 1.0..500.0f64,
        ) {
            let base = build_features(&panel(&ys)).unwrap();
            let mut ys2 = ys.clone();
            let last = ys2[1].len() - 1;
            ys2[1][last] += bump;
            let alt = build_features(&panel(&ys2)).unwrap();
            let t0 = base.dates[last];
            for name in base.column_names() {
                let (a, b) = (base.column(name).unwrap(), alt.column(name).unwrap());
                for i in 0..a.len() {
                    let same_date_target = base.dates[i] == t0 && (name == TARGET || name == LOG_TARGET) && base.stores[i] == 2;
                    if !same_date_target {
                        prop_assert_eq!(a[i].to_bits(), b[i].to_bits(), "{} row {}", name, i);
                    }
                }
            }
        }

        #[test]
        fn cyclical_pairs_on_unit_circle(week in 1u32..=53, month in 1u32..=12) {
            let (s, c) = cyclical(f64::from(week), 52.0);
            prop_assert!((s * s + c * c - 1.0).abs() < 1e-12);
            let (s, c) = cyclical(f64::from(month), 12.0);
            prop_assert!((s * s + c * c - 1.0).abs() < 1e-12);
        }

        #[test]
        fn lag_composition(y in proptest::collection::vec(-50.0..50.0f64, 1..80), k in 2usize..10) {
            let composed = lag(&lag(&y, k - 1), 1);
            let direct = lag(&y, k);
            for t in k..y.len() {
                prop_assert_eq!(composed[t], direct[t]);
            }
        }

        #[test]
        fn rolling_mean_of_constant(c in -1e3..1e3f64, n in 1usize..60, w in 1usize..53) {
            let m = shifted_rolling_mean(&vec![c; n], w);
            for v in m.iter().skip(1) {
                prop_assert!((v - c).abs() <= 1e-12 * c.abs().max(1.0));
            }
        }

        #[test]
        fn holiday_flags_exclusive(offset in 0i64..1200, flag in proptest::bool::ANY) {
            let date = d("2009-01-02") + Duration::days(offset);
            let mut fm = FeatureMatrix { stores: vec![1], dates: vec![date], columns: vec![] };
            fm.push_column("is_holiday", vec![f64::from(u8::from(flag))]);
            add_holiday_flags(&mut fm).unwrap();
            let major = fm.column("is_major_holiday").unwrap()[0];
            let minor = fm.column("is_minor_holiday").unwrap()[0];
            prop_assert!(major + minor <= 1.0);
            prop_assert!(minor <= f64::from(u8::from(flag)));
        }
    }
}
