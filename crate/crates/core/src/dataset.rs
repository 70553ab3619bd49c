//! Raw CSV ingest, aggregation of department rows to store-level weekly
//! totals, and per-store imputation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use log::warn;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("input file not found: {0}")]
    MissingFile(String),
    #[error("required column missing from header: {0}")]
    MissingColumn(String),
    #[error("input file has no data rows")]
    EmptyFile,
    #[error("line {line}: invalid store id {value:?}")]
    InvalidStore { line: usize, value: String },
    #[error("line {line}: invalid date {value:?}")]
    InvalidDate { line: usize, value: String },
    #[error("no records for store {0}")]
    NoRecordsForStore(u32),
    #[error("store {store} does not share the common week grid ({got} weeks vs {expected}, first mismatch at {first_mismatch})")]
    MisalignedWeeks {
        store: u32,
        expected: usize,
        got: usize,
        first_mismatch: String,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// One data row of the raw file. Numeric cells that fail to parse are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub store: u32,
    pub dept: Option<u32>,
    /// Week-ending date.
    pub date: NaiveDate,
    pub weekly_sales: Option<f64>,
    pub is_holiday: bool,
    pub temperature: Option<f64>,
    pub fuel_price: Option<f64>,
    pub cpi: Option<f64>,
    pub unemployment: Option<f64>,
}

/// Weekly series of one store. Missing numeric values are `NaN` until
/// [`impute_per_store`] runs.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreSeries {
    pub store: u32,
    pub dates: Vec<NaiveDate>,
    pub weekly_sales: Vec<f64>,
    pub temperature: Vec<f64>,
    pub fuel_price: Vec<f64>,
    pub cpi: Vec<f64>,
    pub unemployment: Vec<f64>,
    pub is_holiday: Vec<bool>,
}

impl StoreSeries {
    fn with_capacity(store: u32, n: usize) -> Self {
        Self {
            store,
            dates: Vec::with_capacity(n),
            weekly_sales: Vec::with_capacity(n),
            temperature: Vec::with_capacity(n),
            fuel_price: Vec::with_capacity(n),
            cpi: Vec::with_capacity(n),
            unemployment: Vec::with_capacity(n),
            is_holiday: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    fn numeric_columns_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.weekly_sales,
            &mut self.temperature,
            &mut self.fuel_price,
            &mut self.cpi,
            &mut self.unemployment,
        ]
    }

    fn sort_by_date(&mut self) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by_key(|&i| self.dates[i]);
        let dates = idx.iter().map(|&i| self.dates[i]).collect();
        let holiday = idx.iter().map(|&i| self.is_holiday[i]).collect();
        self.dates = dates;
        self.is_holiday = holiday;
        for col in self.numeric_columns_mut() {
            *col = idx.iter().map(|&i| col[i]).collect();
        }
    }
}

/// Store-level weekly panel, sorted by store id then date.
#[derive(Debug, Clone, PartialEq)]
pub struct StorePanel {
    pub stores: Vec<StoreSeries>,
}

impl StorePanel {
    pub fn num_stores(&self) -> usize {
        self.stores.len()
    }

    /// Number of weeks per store (all stores share the grid).
    pub fn num_weeks(&self) -> usize {
        self.stores.first().map_or(0, StoreSeries::len)
    }

    pub fn store_ids(&self) -> Vec<u32> {
        self.stores.iter().map(|s| s.store).collect()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        self.stores.first().map_or(&[], |s| s.dates.as_slice())
    }

    pub fn store(&self, id: u32) -> Option<&StoreSeries> {
        self.stores.iter().find(|s| s.store == id)
    }

    /// Serializes the panel in the same column layout [`parse_raw_csv`] reads.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(
            "Store,Date,Weekly_Sales,IsHoliday,Temperature,Fuel_Price,CPI,Unemployment\n",
        );
        for s in &self.stores {
            for i in 0..s.len() {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    s.store,
                    s.dates[i].format("%Y-%m-%d"),
                    fmt_num(s.weekly_sales[i]),
                    if s.is_holiday[i] { "TRUE" } else { "FALSE" },
                    fmt_num(s.temperature[i]),
                    fmt_num(s.fuel_price[i]),
                    fmt_num(s.cpi[i]),
                    fmt_num(s.unemployment[i]),
                ));
            }
        }
        out
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DateFormat {
    YearFirst,
    DayFirst,
}

impl DateFormat {
    fn detect(sample: &str) -> Self {
        let s = sample.trim();
        if s.len() >= 5 && s[..4].bytes().all(|b| b.is_ascii_digit()) && &s[4..5] == "-" {
            DateFormat::YearFirst
        } else {
            DateFormat::DayFirst
        }
    }

    fn parse(self, s: &str) -> Option<NaiveDate> {
        let fmt = match self {
            DateFormat::YearFirst => "%Y-%m-%d",
            DateFormat::DayFirst => "%d-%m-%Y",
        };
        NaiveDate::parse_from_str(s.trim(), fmt).ok()
    }
}

fn parse_num(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_bool(s: &str) -> bool {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "t" | "yes" => true,
        other => other.parse::<f64>().is_ok_and(|v| v != 0.0),
    }
}

struct Columns {
    store: usize,
    dept: Option<usize>,
    date: usize,
    sales: usize,
    holiday: usize,
    temperature: usize,
    fuel_price: usize,
    cpi: usize,
    unemployment: usize,
}

impl Columns {
    fn locate(header: &csv::StringRecord) -> Result<Self> {
        let find = |names: &[&str]| {
            header
                .iter()
                .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
        };
        let need = |names: &[&str]| find(names).ok_or_else(|| DatasetError::MissingColumn(names[0].to_string()));
        Ok(Self {
            store: need(&["Store"])?,
            dept: find(&["Dept"]),
            date: need(&["Date"])?,
            sales: need(&["Weekly_Sales"])?,
            // The store-level Kaggle variant names the holiday column Holiday_Flag.
            holiday: need(&["IsHoliday", "Holiday_Flag"])?,
            temperature: need(&["Temperature"])?,
            fuel_price: need(&["Fuel_Price"])?,
            cpi: need(&["CPI"])?,
            unemployment: need(&["Unemployment"])?,
        })
    }
}

/// Reads a Walmart-schema CSV. Header names match case-insensitively and
/// extra columns are ignored. The date format (`YYYY-MM-DD` or `DD-MM-YYYY`)
/// is detected once from the first data row.
pub fn parse_raw_csv(path: &Path) -> Result<Vec<RawRecord>> {
    if !path.is_file() {
        return Err(DatasetError::MissingFile(path.display().to_string()));
    }
    let text = fs::read_to_string(path)?;
    parse_raw_csv_str(&text)
}

pub fn parse_raw_csv_str(text: &str) -> Result<Vec<RawRecord>> {
    if text.trim().is_empty() {
        return Err(DatasetError::EmptyFile);
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let cols = Columns::locate(rdr.headers()?)?;
    let mut format = None;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let cell = |c: usize| row.get(c).unwrap_or("");
        if row.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        let store_raw = cell(cols.store);
        let store = parse_num(store_raw)
            .filter(|v| *v >= 1.0 && v.fract() == 0.0)
            .map(|v| v as u32)
            .ok_or_else(|| DatasetError::InvalidStore {
                line,
                value: store_raw.to_string(),
            })?;
        let date_raw = cell(cols.date);
        let fmt = *format.get_or_insert_with(|| DateFormat::detect(date_raw));
        let date = fmt.parse(date_raw).ok_or_else(|| DatasetError::InvalidDate {
            line,
            value: date_raw.to_string(),
        })?;
        out.push(RawRecord {
            store,
            dept: cols
                .dept
                .and_then(|c| parse_num(cell(c)))
                .map(|v| v as u32),
            date,
            weekly_sales: parse_num(cell(cols.sales)),
            is_holiday: parse_bool(cell(cols.holiday)),
            temperature: parse_num(cell(cols.temperature)),
            fuel_price: parse_num(cell(cols.fuel_price)),
            cpi: parse_num(cell(cols.cpi)),
            unemployment: parse_num(cell(cols.unemployment)),
        });
    }
    if out.is_empty() {
        return Err(DatasetError::EmptyFile);
    }
    Ok(out)
}

/// First present value in group order; warns when later rows disagree.
fn group_constant(
    group: &[&RawRecord],
    field: &str,
    get: impl Fn(&RawRecord) -> Option<f64>,
) -> f64 {
    let mut present = group.iter().filter_map(|r| get(r));
    let Some(first) = present.next() else {
        return f64::NAN;
    };
    if present.any(|v| v != first) {
        let r = group[0];
        warn!(
            "store {} week {}: conflicting {field} values within group, keeping {first}",
            r.store, r.date
        );
    }
    first
}

/// Sums department sales per (store, week) and checks that every store covers
/// the same week grid.
pub fn aggregate_to_store_week(records: &[RawRecord]) -> Result<StorePanel> {
    let mut groups: BTreeMap<(u32, NaiveDate), Vec<&RawRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.store, r.date)).or_default().push(r);
    }
    let mut stores: BTreeMap<u32, StoreSeries> = BTreeMap::new();
    for ((store, date), mut group) in groups {
        group.sort_by_key(|r| r.dept);
        let sales: Vec<f64> = group.iter().filter_map(|r| r.weekly_sales).collect();
        let series = stores
            .entry(store)
            .or_insert_with(|| StoreSeries::with_capacity(store, 160));
        series.dates.push(date);
        series
            .weekly_sales
            .push(if sales.is_empty() { f64::NAN } else { sales.iter().sum() });
        series.temperature.push(group_constant(&group, "Temperature", |r| r.temperature));
        series.fuel_price.push(group_constant(&group, "Fuel_Price", |r| r.fuel_price));
        series.cpi.push(group_constant(&group, "CPI", |r| r.cpi));
        series
            .unemployment
            .push(group_constant(&group, "Unemployment", |r| r.unemployment));
        if group.iter().any(|r| r.is_holiday != group[0].is_holiday) {
            warn!("store {store} week {date}: conflicting IsHoliday values, keeping first");
        }
        series.is_holiday.push(group[0].is_holiday);
    }
    let stores: Vec<StoreSeries> = stores.into_values().collect();
    let Some(first) = stores.first() else {
        return Err(DatasetError::EmptyFile);
    };
    let grid = first.dates.clone();
    for s in &stores {
        if s.is_empty() {
            return Err(DatasetError::NoRecordsForStore(s.store));
        }
        if s.dates != grid {
            let first_mismatch = s
                .dates
                .iter()
                .zip(&grid)
                .find(|(a, b)| a != b)
                .map(|(a, _)| a.to_string())
                .unwrap_or_else(|| "end of series".into());
            return Err(DatasetError::MisalignedWeeks {
                store: s.store,
                expected: grid.len(),
                got: s.len(),
                first_mismatch,
            });
        }
    }
    Ok(StorePanel { stores })
}

/// Forward-fills, then back-fills, then zero-fills each numeric column within
/// one series.
pub fn fill_series(col: &mut [f64]) {
    let mut last = f64::NAN;
    for v in col.iter_mut() {
        if v.is_nan() {
            *v = last;
        } else {
            last = *v;
        }
    }
    let mut next = f64::NAN;
    for v in col.iter_mut().rev() {
        if v.is_nan() {
            *v = next;
        } else {
            next = *v;
        }
    }
    for v in col.iter_mut() {
        if v.is_nan() {
            *v = 0.0;
        }
    }
}

/// Imputes every store independently and re-sorts by store and date.
pub fn impute_per_store(mut panel: StorePanel) -> StorePanel {
    panel.stores.sort_by_key(|s| s.store);
    for s in &mut panel.stores {
        s.sort_by_date();
        for col in s.numeric_columns_mut() {
            fill_series(col);
        }
    }
    panel
}

/// Convenience: parse, aggregate and impute in one call.
pub fn load_panel(path: &Path) -> Result<StorePanel> {
    let records = parse_raw_csv(path)?;
    Ok(impute_per_store(aggregate_to_store_week(&records)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "Store,Date,Weekly_Sales,IsHoliday,Temperature,Fuel_Price,CPI,Unemployment\n";

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn parses_first_walmart_row() {
        let text = format!("{HEADER}1,2010-02-05,1643690.90,FALSE,42.31,2.572,211.096,8.106\n");
        let recs = parse_raw_csv_str(&text).unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!(r.store, 1);
        assert_eq!(r.date, d("2010-02-05"));
        assert_eq!(r.weekly_sales, Some(1643690.90));
        assert!(!r.is_holiday);
        assert_eq!(r.cpi, Some(211.096));
        assert_eq!(r.dept, None);
    }

    #[test]
    fn unparseable_sales_becomes_missing() {
        let text = format!("{HEADER}1,2010-02-05,abc,FALSE,42.31,2.572,211.096,8.106\n");
        let recs = parse_raw_csv_str(&text).unwrap();
        assert_eq!(recs[0].weekly_sales, None);
    }

    #[test]
    fn empty_file_is_rejected() {
        assert!(matches!(parse_raw_csv_str(""), Err(DatasetError::EmptyFile)));
        assert!(matches!(parse_raw_csv_str(HEADER), Err(DatasetError::EmptyFile)));
    }

    #[test]
    fn missing_file_and_column() {
        assert!(matches!(
            parse_raw_csv(Path::new("/nonexistent/walmart.csv")),
            Err(DatasetError::MissingFile(_))
        ));
        let text = "Store,Date,Weekly_Sales\n1,2010-02-05,1.0\n";
        match parse_raw_csv_str(text) {
            Err(DatasetError::MissingColumn(c)) => assert_eq!(c, "IsHoliday"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_case_insensitive_day_first_dates_and_extra_columns() {
        let text = "store,DATE,weekly_sales,Holiday_Flag,temperature,fuel_price,cpi,unemployment,Extra\n\
                    3,05-02-2010,10,1,1,2,3,4,zzz\n";
        let r = &parse_raw_csv_str(text).unwrap()[0];
        assert_eq!(r.store, 3);
        assert_eq!(r.date, d("2010-02-05"));
        assert!(r.is_holiday);
    }

    #[test]
    fn sums_department_rows() {
        let text = "Store,Dept,Date,Weekly_Sales,IsHoliday,Temperature,Fuel_Price,CPI,Unemployment\n\
                    1,2,2010-02-05,250,FALSE,40,2.5,210,8\n\
                    1,1,2010-02-05,100,FALSE,40,2.5,210,8\n";
        let panel = aggregate_to_store_week(&parse_raw_csv_str(text).unwrap()).unwrap();
        assert_eq!(panel.num_stores(), 1);
        assert_eq!(panel.stores[0].weekly_sales, vec![350.0]);
        assert_eq!(panel.stores[0].temperature, vec![40.0]);
    }

    #[test]
    fn single_store_is_sorted_by_date() {
        let text = format!(
            "{HEADER}1,2010-02-19,3,FALSE,1,1,1,1\n1,2010-02-05,1,FALSE,1,1,1,1\n1,2010-02-12,2,TRUE,1,1,1,1\n"
        );
        let panel = aggregate_to_store_week(&parse_raw_csv_str(&text).unwrap()).unwrap();
        let s = &panel.stores[0];
        assert_eq!(s.weekly_sales, vec![1.0, 2.0, 3.0]);
        assert_eq!(s.is_holiday, vec![false, true, false]);
        assert_eq!(s.dates, vec![d("2010-02-05"), d("2010-02-12"), d("2010-02-19")]);
    }

    #[test]
    fn conflicting_exogenous_takes_first_by_dept() {
        let text = "Store,Dept,Date,Weekly_Sales,IsHoliday,Temperature,Fuel_Price,CPI,Unemployment\n\
                    1,5,2010-02-05,1,FALSE,99,2.5,210,8\n\
                    1,1,2010-02-05,1,FALSE,40,2.5,210,8\n";
        let panel = aggregate_to_store_week(&parse_raw_csv_str(text).unwrap()).unwrap();
        assert_eq!(panel.stores[0].temperature, vec![40.0]);
    }

    #[test]
    fn misaligned_weeks_abort() {
        let text = format!(
            "{HEADER}1,2010-02-05,1,FALSE,1,1,1,1\n1,2010-02-12,1,FALSE,1,1,1,1\n2,2010-02-05,1,FALSE,1,1,1,1\n"
        );
        let err = aggregate_to_store_week(&parse_raw_csv_str(&text).unwrap()).unwrap_err();
        assert!(matches!(err, DatasetError::MisalignedWeeks { store: 2, .. }));
    }

    #[test]
    fn ffill_then_bfill() {
        let mut v = vec![f64::NAN, 50.0, f64::NAN, 60.0];
        fill_series(&mut v);
        assert_eq!(v, vec![50.0, 50.0, 50.0, 60.0]);
        let mut all_missing = vec![f64::NAN; 3];
        fill_series(&mut all_missing);
        assert_eq!(all_missing, vec![0.0; 3]);
    }

    fn two_store_panel(a_temp: Vec<f64>, b_temp: Vec<f64>) -> StorePanel {
        let n = a_temp.len();
        let dates: Vec<NaiveDate> = (0..n as i64)
            .map(|i| d("2010-02-05") + chrono::Duration::weeks(i))
            .collect();
        let mk = |store, temp: Vec<f64>| StoreSeries {
            store,
            dates: dates.clone(),
            weekly_sales: vec![1.0; n],
            temperature: temp,
            fuel_price: vec![f64::NAN; n],
            cpi: vec![1.0; n],
            unemployment: vec![1.0; n],
            is_holiday: vec![false; n],
        };
        StorePanel {
            stores: vec![mk(1, a_temp), mk(2, b_temp)],
        }
    }

    #[test]
    fn imputation_never_crosses_stores() {
        let p = two_store_panel(vec![f64::NAN, f64::NAN], vec![70.0, 71.0]);
        let out = impute_per_store(p);
        assert_eq!(out.stores[0].temperature, vec![0.0, 0.0]);
        assert_eq!(out.stores[0].fuel_price, vec![0.0, 0.0]);
        assert_eq!(out.stores[1].temperature, vec![70.0, 71.0]);
    }

    #[test]
    fn panel_csv_round_trips_through_parser() {
        let p = impute_per_store(two_store_panel(vec![1.5, f64::NAN], vec![2.25, 3.0]));
        let back = aggregate_to_store_week(&parse_raw_csv_str(&p.to_csv_string()).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    fn opt_f64() -> impl Strategy<Value = f64> {
        prop_oneof![Just(f64::NAN), -100.0..100.0f64]
    }

    proptest! {
        #[test]
        fn imputation_is_idempotent_and_store_local(
            a in proptest::collection::vec(opt_f64(), 1..20),
            b_seed in proptest::collection::vec(opt_f64(), 20),
        ) {
            let b: Vec<f64> = b_seed[..a.len()].to_vec();
            let once = impute_per_store(two_store_panel(a.clone(), b.clone()));
            let twice = impute_per_store(once.clone());
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.stores.iter().all(|s| s.temperature.iter().all(|v| v.is_finite())));
            let other: Vec<f64> = b.iter().map(|v| if v.is_nan() { 1.0 } else { f64::NAN }).collect();
            let alt = impute_per_store(two_store_panel(a, other));
            prop_assert_eq!(&alt.stores[0], &once.stores[0]);
        }

        #[test]
        fn aggregation_preserves_store_totals(
            sales in proptest::collection::vec((1u32..4, 1u32..6, -1000.0..5000.0f64), 1..40),
        ) {
            let recs: Vec<RawRecord> = sales.iter().map(|&(store, dept, s)| RawRecord {
                store, dept: Some(dept), date: d("2010-02-05"), weekly_sales: Some(s),
                is_holiday: false, temperature: Some(1.0), fuel_price: Some(1.0),
                cpi: Some(1.0), unemployment: Some(1.0),
            }).collect();
            let panel = aggregate_to_store_week(&recs).unwrap();
            for s in &panel.stores {
                let raw: f64 = recs.iter().filter(|r| r.store == s.store).filter_map(|r| r.weekly_sales).sum();
                let agg: f64 = s.weekly_sales.iter().sum();
                prop_assert!((raw - agg).abs() <= 1e-9 * raw.abs().max(1.0));
            }
        }
    }
}
