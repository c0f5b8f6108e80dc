//! Train the same federated task with each uplink compressor.
//!
//! `cargo run --release --example fedavg_compare [rounds]`
use fedfq::config::DataSpec;
use fedfq::flsim::{run_experiment, Compressor, FlConfig};
use fedfq::mlkit::ModelSpec;

fn main() -> fedfq::Result<()> {
    let rounds = std::env::args().nth(1).and_then(|r| r.parse().ok()).unwrap_or(100);
    let seed = 0;
    let base = FlConfig { rounds, seed, eval_every: 10, ..FlConfig::default() };
    let data = DataSpec::default().build(base.n_clients, seed)?;
    let model = ModelSpec::logistic(20, 10)?;

    for compressor in ["none", "uniform:2", "uniform:8", "fedfq:1.0"] {
        let compressor: Compressor = compressor.parse()?;
        let result = run_experiment(&FlConfig { compressor, ..base.clone() }, &model, &data)?;
        let last = result.metrics.last().unwrap();
        println!(
            "{:<10} accuracy {:.3}  loss {:.4}  uplink {:>10} bits",
            compressor.to_string(),
            last.test_accuracy,
            last.train_loss,
            last.cumulative_payload_bits
        );
    }
    Ok(())
}
