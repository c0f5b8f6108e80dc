//! Stochastic uniform quantization of update vectors.
//!
//! A vector `h` is encoded as a scale, one sign per element and one integer
//! level per element. With `s = 2^(b-1)` grid points, the normalized
//! magnitude `|h_j| / scale` is rounded stochastically to one of the two
//! neighbouring points of `{0, 1/s, ..., 1}`, which makes the decoded vector
//! an unbiased estimate of `h`.
//!
//! Mixed-precision updates give each element its own bit-width from the
//! ladder `{0, 2, 4, 8}`. Zero-bit elements are dropped. Every non-empty rung
//! is scaled by the l2 norm of its own members, so the quantization error of
//! the elements holding `b` bits is bounded by `d / 4^b` times their squared
//! norm and the total error never exceeds the mixed-precision bound computed
//! by [`variance_bound_mixed`].

use std::ops::Deref;

use rand::Rng;

use crate::error::{Error, Result};

/// Bit-widths available to mixed-precision allocations.
pub const BIT_LADDER: [u8; 4] = [0, 2, 4, 8];

/// Largest bit-width accepted by [`quantize_uniform`].
pub const MAX_UNIFORM_BITS: u8 = 16;

/// Position of `bits` on [`BIT_LADDER`].
pub fn rung_of(bits: u8) -> Option<usize> {
    BIT_LADDER.iter().position(|&b| b == bits)
}

/// Number of positive grid points for a `bits`-wide code, `2^(bits-1)`.
pub fn levels_for(bits: u8) -> u32 {
    debug_assert!(bits >= 1);
    1u32 << (bits - 1)
}

/// A non-empty vector of finite 32-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector(Vec<f32>);

impl DenseVector {
    pub fn new(data: Vec<f32>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyVector);
        }
        if let Some((index, &v)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                index,
                value: v as f64,
            });
        }
        Ok(Self(data))
    }

    /// Rounds each element to `f32`; fails on non-finite results.
    pub fn from_f64(data: &[f64]) -> Result<Self> {
        Self::new(data.iter().map(|&v| v as f32).collect())
    }

    pub fn zeros(len: usize) -> Result<Self> {
        Self::new(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }

    /// Squared l2 norm, accumulated in double precision.
    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// Squared l2 distance, accumulated in double precision.
    pub fn distance_squared(&self, other: &DenseVector) -> Result<f64> {
        check_len(self.len(), other.len())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| {
                let diff = a as f64 - b as f64;
                diff * diff
            })
            .sum())
    }
}

impl Deref for DenseVector {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.0
    }
}

impl TryFrom<Vec<f32>> for DenseVector {
    type Error = Error;

    fn try_from(data: Vec<f32>) -> Result<Self> {
        Self::new(data)
    }
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::LengthMismatch { expected, actual });
    }
    Ok(())
}

/// Per-element bit-widths over [`BIT_LADDER`] together with the budget they
/// were chosen under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitAllocation {
    bits: Vec<u8>,
    budget: u64,
}

impl BitAllocation {
    pub fn new(bits: Vec<u8>, budget: u64) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::EmptyVector);
        }
        if let Some(&bad) = bits.iter().find(|&&b| rung_of(b).is_none()) {
            return Err(Error::InvalidBitWidth(bad as u32));
        }
        let used = bits.iter().map(|&b| b as u64).sum();
        if used > budget {
            return Err(Error::OverBudget { used, budget });
        }
        Ok(Self { bits, budget })
    }

    /// Every element at `bits`, with a budget of exactly `bits * len`.
    pub fn constant(len: usize, bits: u8) -> Result<Self> {
        Self::new(vec![bits; len], bits as u64 * len as u64)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn used_bits(&self) -> u64 {
        self.bits.iter().map(|&b| b as u64).sum()
    }

    /// The same bits with the budget lowered to the bits actually used.
    /// Updates carry allocations in this form since the wire format has no
    /// budget field.
    pub fn tight(&self) -> Self {
        Self {
            bits: self.bits.clone(),
            budget: self.used_bits(),
        }
    }

    /// Number of elements on each rung of [`BIT_LADDER`].
    pub fn rung_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for &b in &self.bits {
            counts[rung_of(b).expect("validated")] += 1;
        }
        counts
    }
}

/// How the elements of an update were quantized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scheme {
    /// One bit-width for every element.
    Uniform(u8),
    /// Per-element bit-widths.
    Mixed(BitAllocation),
}

impl Scheme {
    /// Bit-width of element `j`.
    pub fn bits_at(&self, j: usize) -> u8 {
        match self {
            Scheme::Uniform(b) => *b,
            Scheme::Mixed(alloc) => alloc.bits[j],
        }
    }

    /// Payload size for `len` elements: sign plus level bits, summed.
    pub fn payload_bits(&self, len: usize) -> u64 {
        match self {
            Scheme::Uniform(b) => *b as u64 * len as u64,
            Scheme::Mixed(alloc) => alloc.used_bits(),
        }
    }
}

/// A quantized update as sent over the uplink.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedUpdate {
    scheme: Scheme,
    norm: f32,
    /// Scales of the 2-, 4- and 8-bit groups; unused by uniform updates.
    rung_norms: [f32; 3],
    negative: Vec<bool>,
    levels: Vec<u32>,
}

impl QuantizedUpdate {
    /// Assembles an update from decoded parts, checking every invariant.
    pub fn from_parts(
        scheme: Scheme,
        norm: f32,
        rung_norms: [f32; 3],
        negative: Vec<bool>,
        levels: Vec<u32>,
    ) -> Result<Self> {
        let len = levels.len();
        if len == 0 {
            return Err(Error::EmptyVector);
        }
        check_len(len, negative.len())?;
        let scales_ok = |v: f32| v.is_finite() && v >= 0.0;
        if !scales_ok(norm) || !rung_norms.iter().all(|&v| scales_ok(v)) {
            return Err(Error::Decode("scale must be finite and non-negative".into()));
        }
        match &scheme {
            Scheme::Uniform(b) => {
                if *b == 0 || *b > MAX_UNIFORM_BITS {
                    return Err(Error::InvalidBitWidth(*b as u32));
                }
            }
            Scheme::Mixed(alloc) => check_len(len, alloc.len())?,
        }
        if matches!(scheme, Scheme::Uniform(_)) && rung_norms != [0.0; 3] {
            return Err(Error::Decode("uniform update carries group scales".into()));
        }
        let scheme = match scheme {
            Scheme::Mixed(alloc) => Scheme::Mixed(alloc.tight()),
            other => other,
        };
        let update = Self {
            scheme,
            norm,
            rung_norms,
            negative,
            levels,
        };
        for j in 0..len {
            let bits = update.scheme.bits_at(j);
            let level = update.levels[j];
            if bits == 0 {
                if level != 0 || update.negative[j] {
                    return Err(Error::Decode(format!("dropped element {j} carries data")));
                }
                continue;
            }
            if level == 0 && update.negative[j] {
                return Err(Error::Decode(format!("element {j} is negative at level 0")));
            }
            if level > levels_for(bits) {
                return Err(Error::Decode(format!(
                    "level {level} of element {j} exceeds {}",
                    levels_for(bits)
                )));
            }
            if update.scale_of(bits) == 0.0 && level != 0 {
                return Err(Error::Decode(format!("element {j} has a level under a zero scale")));
            }
        }
        Ok(update)
    }

    pub fn scheme(&self) -> &Scheme {
        &self.scheme
    }

    /// l2 norm of the source vector, rounded to `f32`.
    pub fn norm(&self) -> f32 {
        self.norm
    }

    /// Scales of the 2-, 4- and 8-bit groups of a mixed update.
    pub fn rung_norms(&self) -> [f32; 3] {
        self.rung_norms
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// `true` where the source element was negative.
    pub fn negative(&self) -> &[bool] {
        &self.negative
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn payload_bits(&self) -> u64 {
        self.scheme.payload_bits(self.len())
    }

    /// Scale applied to an element quantized with `bits` bits.
    fn scale_of(&self, bits: u8) -> f32 {
        match self.scheme {
            Scheme::Uniform(_) => self.norm,
            Scheme::Mixed(_) => match rung_of(bits) {
                Some(r) if r > 0 => self.rung_norms[r - 1],
                _ => 0.0,
            },
        }
    }
}

fn to_scale(norm_squared: f64) -> Result<f32> {
    let norm = norm_squared.sqrt();
    let scale = norm as f32;
    if !scale.is_finite() {
        return Err(Error::NormOverflow(norm));
    }
    Ok(scale)
}

/// Stochastic rounding of `|value| / scale` onto `s` grid points.
fn round_level<R: Rng + ?Sized>(value: f32, scale: f64, s: u32, rng: &mut R) -> u32 {
    // always consume one draw so streams stay aligned across schemes
    let u: f64 = rng.random();
    if scale == 0.0 {
        return 0;
    }
    let ratio = (value.abs() as f64 / scale).min(1.0);
    let x = ratio * s as f64;
    let floor = x.floor();
    let level = floor as u32 + u32::from(u < x - floor);
    level.min(s)
}

/// Quantizes every element of `h` with `bits` bits (one sign bit and
/// `bits - 1` level bits, `s = 2^(bits-1)`).
pub fn quantize_uniform<R: Rng + ?Sized>(
    h: &DenseVector,
    bits: u8,
    rng: &mut R,
) -> Result<QuantizedUpdate> {
    if bits == 0 || bits > MAX_UNIFORM_BITS {
        return Err(Error::InvalidBitWidth(bits as u32));
    }
    let norm = to_scale(h.norm_squared())?;
    let s = levels_for(bits);
    let scale = norm as f64;
    let mut negative = Vec::with_capacity(h.len());
    let mut levels = Vec::with_capacity(h.len());
    for &v in h.iter() {
        let level = round_level(v, scale, s, rng);
        levels.push(level);
        negative.push(level > 0 && v < 0.0);
    }
    Ok(QuantizedUpdate {
        scheme: Scheme::Uniform(bits),
        norm,
        rung_norms: [0.0; 3],
        negative,
        levels,
    })
}

/// Quantizes element `j` of `h` with `alloc.bits()[j]` bits. Zero-bit
/// elements are dropped; the others are scaled by the norm of their rung.
pub fn quantize_mixed<R: Rng + ?Sized>(
    h: &DenseVector,
    alloc: &BitAllocation,
    rng: &mut R,
) -> Result<QuantizedUpdate> {
    check_len(h.len(), alloc.len())?;
    let norm = to_scale(h.norm_squared())?;
    let mut sums = [0.0f64; 3];
    for (&v, &b) in h.iter().zip(alloc.bits()) {
        if let Some(r) = rung_of(b).filter(|&r| r > 0) {
            sums[r - 1] += (v as f64) * (v as f64);
        }
    }
    let rung_norms = [to_scale(sums[0])?, to_scale(sums[1])?, to_scale(sums[2])?];

    let mut negative = Vec::with_capacity(h.len());
    let mut levels = Vec::with_capacity(h.len());
    for (&v, &b) in h.iter().zip(alloc.bits()) {
        let level = match rung_of(b) {
            Some(r) if r > 0 => round_level(v, rung_norms[r - 1] as f64, levels_for(b), rng),
            _ => {
                let _: f64 = rng.random();
                0
            }
        };
        levels.push(level);
        negative.push(level > 0 && v < 0.0);
    }
    Ok(QuantizedUpdate {
        scheme: Scheme::Mixed(alloc.tight()),
        norm,
        rung_norms,
        negative,
        levels,
    })
}

/// Dispatches on `scheme`.
pub fn quantize<R: Rng + ?Sized>(
    h: &DenseVector,
    scheme: &Scheme,
    rng: &mut R,
) -> Result<QuantizedUpdate> {
    match scheme {
        Scheme::Uniform(b) => quantize_uniform(h, *b, rng),
        Scheme::Mixed(alloc) => quantize_mixed(h, alloc, rng),
    }
}

/// Decodes `scale * sign * level / s` per element; dropped elements are 0.
pub fn dequantize(q: &QuantizedUpdate) -> DenseVector {
    let data = (0..q.len())
        .map(|j| {
            let bits = q.scheme.bits_at(j);
            if bits == 0 || q.levels[j] == 0 {
                return 0.0;
            }
            let magnitude = q.scale_of(bits) as f64 * q.levels[j] as f64 / levels_for(bits) as f64;
            let value = if q.negative[j] { -magnitude } else { magnitude };
            value as f32
        })
        .collect();
    DenseVector(data)
}

/// Variance bound of uniform quantization relative to `||h||^2`: `d / 4^b`.
pub fn variance_bound_uniform(len: usize, bits: u32) -> f64 {
    len as f64 / 4f64.powi(bits as i32)
}

/// Variance bound of mixed quantization relative to `||h||^2`:
/// `sum_j (d / 4^b_j) |h_j|^2 / ||h||^2`. Zero-bit terms use `4^0 = 1`.
pub fn variance_bound_mixed(h: &DenseVector, alloc: &BitAllocation) -> Result<f64> {
    check_len(h.len(), alloc.len())?;
    let norm_squared = h.norm_squared();
    if norm_squared == 0.0 {
        return Err(Error::ZeroVector);
    }
    let d = h.len() as f64;
    let weighted: f64 = h
        .iter()
        .zip(alloc.bits())
        .map(|(&v, &b)| (v as f64) * (v as f64) / 4f64.powi(b as i32))
        .sum();
    Ok(d * weighted / norm_squared)
}

/// Mean of `||dequantize(quantize(h)) - h||^2` over `trials` draws.
pub fn empirical_mse<R: Rng + ?Sized>(
    h: &DenseVector,
    scheme: &Scheme,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidParams("trials must be at least 1".into()));
    }
    let mut total = 0.0;
    for _ in 0..trials {
        let decoded = dequantize(&quantize(h, scheme, rng)?);
        total += decoded.distance_squared(h)?;
    }
    Ok(total / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn vector(v: &[f32]) -> DenseVector {
        DenseVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn dense_vector_rejects_bad_input() {
        assert!(matches!(DenseVector::new(vec![]), Err(Error::EmptyVector)));
        assert!(matches!(
            DenseVector::new(vec![1.0, f32::NAN]),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(DenseVector::new(vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn allocation_validation() {
        assert!(BitAllocation::new(vec![0, 2, 4, 8], 14).is_ok());
        assert!(matches!(
            BitAllocation::new(vec![3], 8),
            Err(Error::InvalidBitWidth(3))
        ));
        assert!(matches!(
            BitAllocation::new(vec![8, 8], 15),
            Err(Error::OverBudget { used: 16, budget: 15 })
        ));
        assert_eq!(BitAllocation::constant(3, 4).unwrap().budget(), 12);
    }

    #[test]
    fn zero_vector_quantizes_to_zero() {
        let h = vector(&[0.0, 0.0, 0.0]);
        let q = quantize_uniform(&h, 2, &mut seeded(1)).unwrap();
        assert_eq!(q.norm(), 0.0);
        assert_eq!(q.levels(), &[0, 0, 0]);
        assert!(dequantize(&q).is_zero());

        let alloc = BitAllocation::new(vec![2, 4, 8], 14).unwrap();
        let q = quantize_mixed(&h, &alloc, &mut seeded(1)).unwrap();
        assert_eq!(q.levels(), &[0, 0, 0]);
    }

    #[test]
    fn rounding_stays_on_neighbouring_levels() {
        // s = 4, r*s = [2.4, 3.2]
        let h = vector(&[3.0, 4.0]);
        let mut rng = seeded(9);
        let mut low = [0usize; 2];
        let trials = 20_000;
        for _ in 0..trials {
            let q = quantize_uniform(&h, 3, &mut rng).unwrap();
            assert_eq!(q.norm(), 5.0);
            assert!(matches!(q.levels()[0], 2 | 3));
            assert!(matches!(q.levels()[1], 3 | 4));
            low[0] += usize::from(q.levels()[0] == 2);
            low[1] += usize::from(q.levels()[1] == 3);
        }
        let p0 = low[0] as f64 / trials as f64;
        let p1 = low[1] as f64 / trials as f64;
        // 5 binomial standard deviations
        assert!((p0 - 0.6).abs() < 5.0 * (0.24f64 / trials as f64).sqrt(), "{p0}");
        assert!((p1 - 0.8).abs() < 5.0 * (0.16f64 / trials as f64).sqrt(), "{p1}");
    }

    #[test]
    fn dequantize_direct_formula() {
        let q = QuantizedUpdate::from_parts(
            Scheme::Uniform(3),
            5.0,
            [0.0; 3],
            vec![false, false],
            vec![2, 4],
        )
        .unwrap();
        assert_eq!(dequantize(&q).as_slice(), &[2.5, 5.0]);

        let q = QuantizedUpdate::from_parts(
            Scheme::Uniform(3),
            0.0,
            [0.0; 3],
            vec![false, false],
            vec![0, 0],
        )
        .unwrap();
        assert!(dequantize(&q).is_zero());
    }

    #[test]
    fn grid_aligned_input_is_a_fixed_point() {
        for bits in [1, 2, 4, 8] {
            let h = vector(&[1.0, 0.0]);
            let q = quantize_uniform(&h, bits, &mut seeded(3)).unwrap();
            assert_eq!(dequantize(&q), h);
            assert_eq!(empirical_mse(&h, &Scheme::Uniform(bits), 50, &mut seeded(4)).unwrap(), 0.0);
        }
        let h = vector(&[-2.0, 0.0, 0.0]);
        let q = quantize_uniform(&h, 2, &mut seeded(3)).unwrap();
        assert_eq!(dequantize(&q), h);
        assert_eq!(q.negative(), &[true, false, false]);
    }

    #[test]
    fn constant_allocation_matches_uniform_with_same_seed() {
        let h = vector(&[1.0, 1.0]);
        for bits in [2u8, 4, 8] {
            let alloc = BitAllocation::constant(2, bits).unwrap();
            let u = quantize_uniform(&h, bits, &mut seeded(11)).unwrap();
            let m = quantize_mixed(&h, &alloc, &mut seeded(11)).unwrap();
            assert_eq!(u.levels(), m.levels());
            assert_eq!(u.negative(), m.negative());
            assert_eq!(dequantize(&u), dequantize(&m));
        }
    }

    #[test]
    fn zero_bit_elements_are_dropped() {
        let h = vector(&[5.0, 0.001]);
        let alloc = BitAllocation::new(vec![4, 0], 4).unwrap();
        for seed in 0..20 {
            let q = quantize_mixed(&h, &alloc, &mut seeded(seed)).unwrap();
            assert_eq!(dequantize(&q)[1], 0.0);
            // the only 4-bit element is scaled by its own magnitude
            assert_eq!(dequantize(&q)[0], 5.0);
        }
    }

    #[test]
    fn mixed_length_mismatch() {
        let h = vector(&[1.0, 2.0, 3.0]);
        let alloc = BitAllocation::new(vec![2, 2], 4).unwrap();
        assert!(matches!(
            quantize_mixed(&h, &alloc, &mut seeded(0)),
            Err(Error::LengthMismatch { expected: 3, actual: 2 })
        ));
    }

    #[test]
    fn invalid_uniform_width() {
        let h = vector(&[1.0]);
        assert!(quantize_uniform(&h, 0, &mut seeded(0)).is_err());
        assert!(quantize_uniform(&h, 17, &mut seeded(0)).is_err());
    }

    #[test]
    fn uniform_bound_arithmetic() {
        assert_eq!(variance_bound_uniform(1000, 2), 62.5);
        assert_eq!(variance_bound_uniform(4, 8), 4.0 / 65536.0);
        assert_eq!(variance_bound_uniform(1, 1), 0.25);
    }

    #[test]
    fn mixed_bound_arithmetic() {
        let h = vector(&[1.0, 1.0]);
        let alloc = BitAllocation::constant(2, 2).unwrap();
        assert_eq!(variance_bound_mixed(&h, &alloc).unwrap(), variance_bound_uniform(2, 2));

        let h = vector(&[10.0, 1.0, 0.1, 0.01]);
        let alloc = BitAllocation::new(vec![4, 4, 0, 0], 8).unwrap();
        // independent evaluation with f32 inputs widened to f64
        let sq = |v: f32| (v as f64) * (v as f64);
        let norm2 = sq(10.0) + sq(1.0) + sq(0.1) + sq(0.01);
        let expected = 4.0 * (sq(10.0) / 256.0 + sq(1.0) / 256.0 + sq(0.1) + sq(0.01)) / norm2;
        let got = variance_bound_mixed(&h, &alloc).unwrap();
        assert!((got - expected).abs() < 1e-12);
        // 4 * 0.40463125 / 101.0101 by hand
        assert!((got - 0.0160234).abs() < 1e-6, "{got}");

        let h = vector(&[3.0, -1.0, 0.5]);
        let all8 = BitAllocation::constant(3, 8).unwrap();
        assert!((variance_bound_mixed(&h, &all8).unwrap() - 3.0 / 65536.0).abs() < 1e-15);

        assert!(matches!(
            variance_bound_mixed(&vector(&[0.0, 0.0]), &BitAllocation::constant(2, 2).unwrap()),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn payload_bits_is_sum_of_widths() {
        let h = vector(&[1.0, -2.0, 3.0, 0.5]);
        let alloc = BitAllocation::new(vec![8, 4, 2, 0], 14).unwrap();
        let q = quantize_mixed(&h, &alloc, &mut seeded(0)).unwrap();
        assert_eq!(q.payload_bits(), 14);
        let q = quantize_uniform(&h, 2, &mut seeded(0)).unwrap();
        assert_eq!(q.payload_bits(), 8);
    }

    #[test]
    fn from_parts_rejects_invariant_violations() {
        let bad_level =
            QuantizedUpdate::from_parts(Scheme::Uniform(2), 1.0, [0.0; 3], vec![false], vec![3]);
        assert!(bad_level.is_err());
        let level_without_scale =
            QuantizedUpdate::from_parts(Scheme::Uniform(2), 0.0, [0.0; 3], vec![false], vec![1]);
        assert!(level_without_scale.is_err());
        let alloc = BitAllocation::new(vec![0, 2], 2).unwrap();
        let dropped_with_data = QuantizedUpdate::from_parts(
            Scheme::Mixed(alloc),
            1.0,
            [1.0, 0.0, 0.0],
            vec![false, false],
            vec![1, 1],
        );
        assert!(dropped_with_data.is_err());
    }
}
