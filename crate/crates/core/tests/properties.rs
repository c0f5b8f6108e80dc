use std::collections::BTreeSet;

use fedfq::cgsa::{cgsa_optimize, dp_oracle, exhaustive_oracle, objective, CgsaParams};
use fedfq::codec::{decode, encode};
use fedfq::mlkit::{make_synthetic, partition_iid, partition_label_shard};
use fedfq::quantizer::{dequantize, levels_for, quantize_mixed, quantize_uniform, BIT_LADDER};
use fedfq::rng::seeded;
use fedfq::{BitAllocation, DenseVector};
use proptest::prelude::*;

fn vector(len: impl Into<proptest::sample::SizeRange>) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1e3f32..1e3, len)
}

fn nonzero(v: Vec<f32>) -> Vec<f32> {
    let mut v = v;
    if v.iter().all(|&x| x == 0.0) {
        v[0] = 1.0;
    }
    v
}

fn ladder_bits(len: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(prop::sample::select(BIT_LADDER.to_vec()), len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn uniform_levels_stay_in_range(v in vector(1..200), bits in 1u8..=8, seed: u64) {
        let h = DenseVector::new(v).unwrap();
        let q = quantize_uniform(&h, bits, &mut seeded(seed)).unwrap();
        let top = levels_for(bits);
        prop_assert!(q.levels().iter().all(|&l| l <= top));
        prop_assert_eq!(q.payload_bits(), h.len() as u64 * bits as u64);
        let back = dequantize(&q);
        let norm = h.norm() as f32;
        for (&x, &y) in h.as_slice().iter().zip(back.as_slice()) {
            prop_assert!(y.abs() <= norm * (1.0 + 1e-5));
            prop_assert!(y == 0.0 || (x >= 0.0) == (y > 0.0) || x == 0.0);
        }
    }

    #[test]
    fn mixed_drops_zero_bit_elements(
        (v, bits) in (1usize..100).prop_flat_map(|d| (vector(d), ladder_bits(d))),
        seed: u64,
    ) {
        let h = DenseVector::new(v).unwrap();
        let alloc = BitAllocation::new(bits.clone(), bits.iter().map(|&b| b as u64).sum()).unwrap();
        let q = quantize_mixed(&h, &alloc, &mut seeded(seed)).unwrap();
        prop_assert_eq!(q.payload_bits(), alloc.used_bits());
        let back = dequantize(&q);
        for (j, &b) in bits.iter().enumerate() {
            if b == 0 {
                prop_assert_eq!(back.as_slice()[j], 0.0);
            } else {
                prop_assert!(q.levels()[j] <= levels_for(b));
            }
        }
    }

    #[test]
    fn codec_round_trips(
        d in prop::sample::select(vec![1usize, 7, 8, 9, 255, 256]),
        uniform in 1u8..=8,
        mixed: bool,
        seed: u64,
    ) {
        let mut rng = seeded(seed);
        let h = DenseVector::new(
            (0..d).map(|j| ((j as f32 * 0.7 + seed as f32 * 1e-9).sin() * 10.0) - 1.0).collect(),
        ).unwrap();
        let q = if mixed {
            let bits: Vec<u8> = (0..d).map(|j| BIT_LADDER[(j * 7 + seed as usize) % 4]).collect();
            let used = bits.iter().map(|&b| b as u64).sum();
            quantize_mixed(&h, &BitAllocation::new(bits, used).unwrap(), &mut rng).unwrap()
        } else {
            quantize_uniform(&h, uniform, &mut rng).unwrap()
        };
        let blob = encode(&q);
        prop_assert_eq!(blob.payload_bits, q.payload_bits());
        prop_assert_eq!(8 * blob.bytes.len() as u64, blob.header_bits + blob.payload_bits.div_ceil(8) * 8);
        prop_assert_eq!(decode(&blob.bytes).unwrap(), q);
    }

    #[test]
    fn codec_rejects_truncation(v in vector(1..64), bits in 1u8..=8, cut in 1usize..8, seed: u64) {
        let h = DenseVector::new(v).unwrap();
        let blob = encode(&quantize_uniform(&h, bits, &mut seeded(seed)).unwrap());
        let cut = cut.min(blob.bytes.len());
        prop_assert!(decode(&blob.bytes[..blob.bytes.len() - cut]).is_err());
    }

    #[test]
    fn annealing_is_feasible_and_never_beats_the_optimum(
        v in vector(1..=8),
        units in 0u64..=32,
        seed: u64,
    ) {
        let h = DenseVector::new(nonzero(v)).unwrap();
        let budget = (2 * units).min(8 * h.len() as u64);
        let params = CgsaParams::with_iterations(300);
        let found = cgsa_optimize(&h, budget, &params, &mut seeded(seed)).unwrap();
        let exact = dp_oracle(&h, budget).unwrap();
        prop_assert!(found.used_bits() <= budget);
        prop_assert!(found.bits().iter().all(|b| BIT_LADDER.contains(b)));
        let (f, e) = (objective(&h, &found).unwrap(), objective(&h, &exact).unwrap());
        prop_assert!(e <= f * (1.0 + 1e-12));
        prop_assert_eq!(objective(&h, &exhaustive_oracle(&h, budget).unwrap()).unwrap(), e);
    }

    #[test]
    fn more_budget_never_hurts_the_optimum(v in vector(1..=10), units in 0u64..40) {
        let h = DenseVector::new(nonzero(v)).unwrap();
        let cap = 8 * h.len() as u64;
        let lo = dp_oracle(&h, (2 * units).min(cap)).unwrap();
        let hi = dp_oracle(&h, (2 * units + 2).min(cap)).unwrap();
        prop_assert!(objective(&h, &hi).unwrap() <= objective(&h, &lo).unwrap());
    }

    #[test]
    fn partitions_are_disjoint(
        classes in 2usize..6,
        per_class in 5usize..30,
        clients in 1usize..8,
        k in 1usize..3,
        seed: u64,
    ) {
        let data = make_synthetic(classes, 3, per_class, 2.0, &mut seeded(seed)).unwrap();
        prop_assume!(data.len() >= clients * k);
        for part in [
            partition_iid(&data, clients, &mut seeded(seed)).unwrap(),
            partition_label_shard(&data, clients, k, &mut seeded(seed)).unwrap(),
        ] {
            prop_assert_eq!(part.clients.len(), clients);
            let mut seen = BTreeSet::new();
            for (ix, client) in part.indices.iter().zip(&part.clients) {
                prop_assert_eq!(ix.len(), client.len());
                for (r, &i) in ix.iter().enumerate() {
                    prop_assert!(seen.insert(i));
                    prop_assert_eq!(client.label(r), data.label(i));
                }
            }
            prop_assert_eq!(seen.len() + part.dropped, data.len());
        }
    }
}
