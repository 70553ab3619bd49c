//! Regenerates the bundled synthetic fixture used by the integration and
//! acceptance tests: 5 stores x 143 weeks in the Walmart store-level schema.
//!
//! ```text
//! cargo run -p storecast --example make_fixture [OUTPUT]
//! ```

use std::path::PathBuf;

use storecast::synthetic::{records_to_csv, retail_records};

fn main() -> std::io::Result<()> {
    let out = std::env::args_os().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/walmart_synthetic.csv")
    });
    let records = retail_records(5, 143, 2, 2024);
    std::fs::write(&out, records_to_csv(&records))?;
    println!("wrote {} rows to {}", records.len(), out.display());
    Ok(())
}
