//! Bits each client population uploads before the model first reaches a
//! target accuracy, read from metrics CSV files written by `fedfq run`.
//!
//! `cargo run --example bits_to_target -- 0.6 a.csv b.csv`
use std::path::PathBuf;

use fedfq::report::{bits_to_target, load_metrics};

fn main() -> fedfq::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(target) = args.next().and_then(|t| t.parse::<f64>().ok()) else {
        eprintln!("usage: bits_to_target <accuracy> <metrics.csv>...");
        std::process::exit(2);
    };
    for path in args.map(PathBuf::from) {
        let metrics = load_metrics(&path)?;
        match bits_to_target(&metrics, target) {
            Some(bits) => println!("{}: {bits} bits", path.display()),
            None => println!("{}: never reaches {target}", path.display()),
        }
    }
    Ok(())
}
