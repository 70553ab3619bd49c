//! Seeded synthetic data generators used by the fixtures, tests and the
//! acceptance suite.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::RawRecord;
use crate::features::is_major_holiday_week;
use crate::stgnn::PanelTensors;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// First week-ending Friday of the public Walmart file.
pub fn first_week() -> NaiveDate {
    NaiveDate::from_ymd_opt(2010, 2, 5).unwrap()
}

fn source_holiday_flag(week_ending: NaiveDate) -> bool {
    let start = week_ending - Duration::days(6);
    let contains = |d: Option<NaiveDate>| d.is_some_and(|d| d >= start && d <= week_ending);
    let y = week_ending.year();
    // Super Bowl Sunday falls two days after the flagged Friday; Labor Day is
    // the first Monday of September.
    let super_bowl = NaiveDate::from_weekday_of_month_opt(y, 2, Weekday::Fri, 2);
    let labor_day = NaiveDate::from_weekday_of_month_opt(y, 9, Weekday::Mon, 1);
    is_major_holiday_week(week_ending) || contains(super_bowl) || contains(labor_day)
}

/// Store-level weekly records in the Walmart schema.
///
/// Stores are split into `clusters` groups that share an AR(1) demand shock,
/// on top of a store-specific level, a yearly cycle and holiday spikes.
pub fn retail_records(stores: usize, weeks: usize, clusters: usize, seed: u64) -> Vec<RawRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = clusters.max(1);
    let mut shocks = vec![vec![0.0; weeks]; clusters];
    for shock in &mut shocks {
        let mut s = 0.0;
        for v in shock.iter_mut() {
            s = 0.6 * s + 0.03 * normal(&mut rng);
            *v = s;
        }
    }
    let mut fuel = vec![2.6; weeks];
    let mut cpi = vec![0.0; weeks];
    for t in 1..weeks {
        fuel[t] = (fuel[t - 1] + 0.02 * normal(&mut rng)).max(1.5);
    }
    for (t, c) in cpi.iter_mut().enumerate() {
        *c = t as f64 * 0.05;
    }
    let mut out = Vec::with_capacity(stores * weeks);
    for s in 0..stores {
        let level: f64 = rng.random_range(13.2..14.4);
        let cluster = s % clusters;
        let phase: f64 = rng.random_range(0.0..0.5);
        let base_temp: f64 = rng.random_range(40.0..75.0);
        let base_cpi: f64 = rng.random_range(126.0..225.0);
        let unemp: f64 = rng.random_range(4.0..10.0);
        for t in 0..weeks {
            let date = first_week() + Duration::weeks(t as i64);
            let yearly = 0.05 * (2.0 * std::f64::consts::PI * (t as f64 / 52.0 + phase)).sin();
            let holiday = if is_major_holiday_week(date) { 0.25 } else { 0.0 };
            let noise = 0.02 * normal(&mut rng);
            let log_sales = level + yearly + holiday + shocks[cluster][t] + noise;
            let temp_cycle = -20.0 * (2.0 * std::f64::consts::PI * (t as f64 + 2.0) / 52.0).cos();
            out.push(RawRecord {
                store: s as u32 + 1,
                dept: None,
                date,
                weekly_sales: Some((log_sales.exp_m1() * 100.0).round() / 100.0),
                is_holiday: source_holiday_flag(date),
                temperature: Some(((base_temp + temp_cycle + 3.0 * normal(&mut rng)) * 100.0).round() / 100.0),
                fuel_price: Some((fuel[t] * 1000.0).round() / 1000.0),
                cpi: Some(((base_cpi + cpi[t]) * 1000.0).round() / 1000.0),
                unemployment: Some(((unemp - 0.004 * t as f64) * 1000.0).round() / 1000.0),
            });
        }
    }
    out
}

/// Renders records as a Walmart-schema CSV (`DD-MM-YYYY` dates, like the
/// public store-level file).
pub fn records_to_csv(records: &[RawRecord]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("Store,Date,Weekly_Sales,Holiday_Flag,Temperature,Fuel_Price,CPI,Unemployment\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.store,
            r.date.format("%d-%m-%Y"),
            opt(r.weekly_sales),
            u8::from(r.is_holiday),
            opt(r.temperature),
            opt(r.fuel_price),
            opt(r.cpi),
            opt(r.unemployment),
        ));
    }
    out
}

/// Panel where each store's log-difference is driven by one of two latent
/// signals according to `blocks`. Every store sees only a noisy private copy
/// of its block's signal in its single feature, so pooling over block mates
/// is what reduces the error.
pub fn block_mixture_panel(blocks: &[usize], weeks: usize, noise: f64, seed: u64) -> PanelTensors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s_len = blocks.len();
    let n_blocks = blocks.iter().max().map_or(1, |m| m + 1);
    let latent: Vec<Vec<f64>> = (0..n_blocks)
        .map(|_| (0..weeks).map(|_| 0.05 * normal(&mut rng)).collect())
        .collect();
    let mut y_log = vec![0.0; weeks * s_len];
    let mut feats = vec![0.0; weeks * s_len];
    for s in 0..s_len {
        let mut level = 12.0 + 0.1 * s as f64;
        y_log[s] = level;
        for t in 1..weeks {
            level += latent[blocks[s]][t];
            y_log[t * s_len + s] = level;
        }
        // Feature row t - 1 carries the signal that moves the level at t.
        for t in 0..weeks - 1 {
            feats[t * s_len + s] = latent[blocks[s]][t + 1] + noise * 0.05 * normal(&mut rng);
        }
    }
    let y_raw = y_log.iter().map(|v: &f64| v.exp_m1()).collect();
    let dates = (0..weeks).map(|t| first_week() + Duration::weeks(t as i64)).collect();
    PanelTensors::from_arrays(
        (1..=s_len as u32).collect(),
        dates,
        vec!["signal".into()],
        y_raw,
        &feats,
        weeks,
    )
    .expect("consistent synthetic shapes")
}

/// Regression with ARMA(1,1) errors:
/// `y_t = c + beta . x_t + u_t`, `u_t = phi u_{t-1} + theta e_{t-1} + e_t`.
/// Returns `(y, x)` with `x` row-major `n x beta.len()`.
pub fn arma_regression(
    n: usize,
    c: f64,
    phi: f64,
    theta: f64,
    beta: &[f64],
    sigma: f64,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = beta.len();
    let burn = 200;
    let mut x = vec![0.0; n * k];
    let mut y = Vec::with_capacity(n);
    let (mut u_prev, mut e_prev) = (0.0, 0.0);
    for t in 0..n + burn {
        let e = sigma * normal(&mut rng);
        let u = phi * u_prev + theta * e_prev + e;
        u_prev = u;
        e_prev = e;
        if t >= burn {
            let row = t - burn;
            let mut reg = 0.0;
            for j in 0..k {
                let xv = normal(&mut rng);
                x[row * k + j] = xv;
                reg += beta[j] * xv;
            }
            y.push(c + reg + u);
        }
    }
    (y, x)
}
