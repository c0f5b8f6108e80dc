//! Encode quantized updates to bytes, decode them back and report sizes.
use fedfq::cgsa::{cgsa_optimize, CgsaParams};
use fedfq::codec::{compression_ratio, decode, encode, CompressionMode};
use fedfq::quantizer::{quantize_mixed, quantize_uniform};
use fedfq::rng::seeded;
use fedfq::DenseVector;
use rand_distr::{Distribution, StandardNormal};

fn main() -> fedfq::Result<()> {
    let mut rng = seeded(11);
    let d = 1000;
    let h = DenseVector::from_f64(&(0..d).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>())?;

    let mut updates = Vec::new();
    for bits in [2u8, 4, 8] {
        updates.push((format!("uniform {bits}"), quantize_uniform(&h, bits, &mut rng)?));
    }
    let alloc = cgsa_optimize(&h, d as u64, &CgsaParams::default(), &mut rng)?;
    updates.push(("mixed 1.0 b/p".into(), quantize_mixed(&h, &alloc, &mut rng)?));

    println!("{:<14} {:>7} {:>8} {:>8} {:>8}", "scheme", "bytes", "header", "payload", "ratio");
    for (name, q) in updates {
        let blob = encode(&q);
        assert_eq!(decode(&blob.bytes)?, q);
        println!(
            "{name:<14} {:>7} {:>8} {:>8} {:>8.2}",
            blob.bytes.len(),
            blob.header_bits,
            blob.payload_bits,
            compression_ratio(&blob, d, CompressionMode::PayloadOnly)
        );
    }
    Ok(())
}
