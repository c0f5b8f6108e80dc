//! Quantize one update at several bit-widths and compare the measured error
//! against the worst-case bound.
use fedfq::quantizer::{
    dequantize, empirical_mse, quantize_uniform, variance_bound_mixed, variance_bound_uniform, BitAllocation, Scheme,
};
use fedfq::rng::seeded;
use fedfq::DenseVector;
use rand_distr::{Distribution, StandardNormal};

fn main() -> fedfq::Result<()> {
    let mut rng = seeded(7);
    let d = 256;
    let raw: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let h = DenseVector::from_f64(&raw)?;

    let q = quantize_uniform(&h, 8, &mut rng)?;
    let back = dequantize(&q);
    println!("8-bit sample: {:?} -> {:?}", &h.as_slice()[..4], &back.as_slice()[..4]);

    println!("bits  mse/|h|^2  bound");
    for bits in [1u8, 2, 4, 8] {
        let mse = empirical_mse(&h, &Scheme::Uniform(bits), 2000, &mut rng)? / h.norm_squared();
        println!("{bits:>4}  {mse:>9.5}  {:>7.5}", variance_bound_uniform(d, bits as u32));
    }

    // 8 bits on the top quarter by magnitude, 2 bits on the rest.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| raw[b].abs().total_cmp(&raw[a].abs()));
    let mut bits = vec![2u8; d];
    for &j in &order[..d / 4] {
        bits[j] = 8;
    }
    let alloc = BitAllocation::new(bits, 4 * d as u64)?;
    let mse = empirical_mse(&h, &Scheme::Mixed(alloc.clone()), 2000, &mut rng)? / h.norm_squared();
    println!("mixed {mse:>9.5}  {:>7.5}", variance_bound_mixed(&h, &alloc)?);
    Ok(())
}
