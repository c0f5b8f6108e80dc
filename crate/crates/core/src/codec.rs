//! Byte-level wire format for [`QuantizedUpdate`] and uplink bit accounting.
//!
//! Layout, little-endian for multi-byte fields:
//!
//! ```text
//! u8   scheme tag (0 = uniform, 1 = mixed)
//! u32  d
//! f32  l2 norm of the source
//! uniform: u8 bit-width
//! mixed:   2-bit rung code per element (0,1,2,3 <-> 0,2,4,8 bits), MSB-first,
//!          zero-padded to a byte; then three f32 group scales (2-, 4-, 8-bit)
//! u32  escape count, then u32 indices (ascending)
//! payload: per element with b > 0, one sign bit then b-1 bits of
//!          (level mod s), MSB-first, zero-padded to a byte
//! ```
//!
//! A level can reach `s = 2^(b-1)`, one more value than `b-1` bits hold. A
//! positive element at level `s` is sent as sign 1 with zero level bits (a
//! code no other value uses); a negative one is listed in the escape list
//! and sent as all zeros.

use crate::error::{Error, Result};
use crate::quantizer::{levels_for, rung_of, BitAllocation, QuantizedUpdate, Scheme, BIT_LADDER};

const TAG_UNIFORM: u8 = 0;
const TAG_MIXED: u8 = 1;

/// An encoded update with its size split into payload and header bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedBlob {
    pub bytes: Vec<u8>,
    /// Sign and level bits, `sum_j b_j`.
    pub payload_bits: u64,
    /// Everything before the payload, in whole bytes.
    pub header_bits: u64,
}

impl EncodedBlob {
    pub fn total_bits(&self) -> u64 {
        self.payload_bits + self.header_bits
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompressionMode {
    /// `32 d / payload_bits`.
    PayloadOnly,
    /// `32 d / (payload_bits + header_bits)`.
    Total,
}

/// Size of `d` 32-bit floats divided by the encoded size. Returns infinity
/// when the counted size is zero.
pub fn compression_ratio(blob: &EncodedBlob, len: usize, mode: CompressionMode) -> f64 {
    let bits = match mode {
        CompressionMode::PayloadOnly => blob.payload_bits,
        CompressionMode::Total => blob.total_bits(),
    };
    if bits == 0 {
        return f64::INFINITY;
    }
    32.0 * len as f64 / bits as f64
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    used: u32,
}

impl BitWriter {
    fn write(&mut self, value: u32, width: u32) {
        for shift in (0..width).rev() {
            if self.used == 0 {
                self.bytes.push(0);
            }
            let bit = ((value >> shift) & 1) as u8;
            *self.bytes.last_mut().expect("pushed above") |= bit << (7 - self.used);
            self.used = (self.used + 1) % 8;
        }
    }

    fn finish(self) -> Vec<u8> {
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn read(&mut self, width: u32) -> Result<u32> {
        let mut value = 0u32;
        for _ in 0..width {
            let byte = self
                .bytes
                .get((self.pos / 8) as usize)
                .ok_or_else(|| Error::Decode("payload truncated".into()))?;
            let bit = (byte >> (7 - self.pos % 8)) & 1;
            value = (value << 1) | bit as u32;
            self.pos += 1;
        }
        Ok(value)
    }

    /// Bytes consumed, counting a partial byte as whole.
    fn bytes_used(&self) -> usize {
        self.pos.div_ceil(8) as usize
    }
}

/// Serializes `q`.
pub fn encode(q: &QuantizedUpdate) -> EncodedBlob {
    let len = q.len();
    let mut bytes = Vec::new();
    let scheme = q.scheme();
    bytes.push(match scheme {
        Scheme::Uniform(_) => TAG_UNIFORM,
        Scheme::Mixed(_) => TAG_MIXED,
    });
    bytes.extend_from_slice(&(len as u32).to_le_bytes());
    bytes.extend_from_slice(&q.norm().to_le_bytes());
    match scheme {
        Scheme::Uniform(b) => bytes.push(*b),
        Scheme::Mixed(alloc) => {
            let mut map = BitWriter::default();
            for &b in alloc.bits() {
                map.write(rung_of(b).expect("validated allocation") as u32, 2);
            }
            bytes.extend(map.finish());
            for scale in q.rung_norms() {
                bytes.extend_from_slice(&scale.to_le_bytes());
            }
        }
    }

    let mut escapes = Vec::new();
    let mut payload = BitWriter::default();
    for j in 0..len {
        let bits = scheme.bits_at(j);
        if bits == 0 {
            continue;
        }
        let s = levels_for(bits);
        let level = q.levels()[j];
        let negative = q.negative()[j];
        let (sign, rest) = match (level == s, negative) {
            (true, false) => (1, 0),
            (true, true) => {
                escapes.push(j as u32);
                (0, 0)
            }
            (false, neg) => (neg as u32, level),
        };
        payload.write(sign, 1);
        payload.write(rest, bits as u32 - 1);
    }
    bytes.extend_from_slice(&(escapes.len() as u32).to_le_bytes());
    for j in &escapes {
        bytes.extend_from_slice(&j.to_le_bytes());
    }
    let header_bits = 8 * bytes.len() as u64;
    bytes.extend(payload.finish());
    EncodedBlob {
        bytes,
        payload_bits: q.payload_bits(),
        header_bits,
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| Error::Decode("header truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parses bytes produced by [`encode`]. Rejects trailing bytes, non-zero
/// padding and anything [`QuantizedUpdate::from_parts`] rejects.
pub fn decode(bytes: &[u8]) -> Result<QuantizedUpdate> {
    let mut cur = Cursor { bytes, pos: 0 };
    let tag = cur.u8()?;
    let len = cur.u32()? as usize;
    if len == 0 {
        return Err(Error::Decode("zero-length update".into()));
    }
    let norm = cur.f32()?;
    let (scheme, rung_norms) = match tag {
        TAG_UNIFORM => (Scheme::Uniform(cur.u8()?), [0.0; 3]),
        TAG_MIXED => {
            let map = cur.take(len.div_ceil(4))?;
            let mut reader = BitReader::new(map);
            let mut bits = Vec::with_capacity(len);
            for _ in 0..len {
                bits.push(BIT_LADDER[reader.read(2)? as usize]);
            }
            if !len.is_multiple_of(4) && map[map.len() - 1] & (0xFF >> (2 * (len % 4))) != 0 {
                return Err(Error::Decode("non-zero rung map padding".into()));
            }
            let alloc = BitAllocation::new(bits, u64::MAX)?;
            let scales = [cur.f32()?, cur.f32()?, cur.f32()?];
            (Scheme::Mixed(alloc), scales)
        }
        other => return Err(Error::Decode(format!("unknown scheme tag {other}"))),
    };
    if let Scheme::Uniform(b) = scheme {
        if b == 0 || b > crate::quantizer::MAX_UNIFORM_BITS {
            return Err(Error::InvalidBitWidth(b as u32));
        }
    }

    let n_escapes = cur.u32()? as usize;
    if n_escapes > len {
        return Err(Error::Decode("more escapes than elements".into()));
    }
    let mut escaped = vec![false; len];
    let mut last = None;
    for _ in 0..n_escapes {
        let j = cur.u32()? as usize;
        if j >= len || last.is_some_and(|prev| j <= prev) {
            return Err(Error::Decode("escape indices must be ascending and in range".into()));
        }
        if scheme.bits_at(j) == 0 {
            return Err(Error::Decode(format!("escape index {j} names a dropped element")));
        }
        escaped[j] = true;
        last = Some(j);
    }

    let payload = &bytes[cur.pos..];
    let mut reader = BitReader::new(payload);
    let mut negative = vec![false; len];
    let mut levels = vec![0u32; len];
    for j in 0..len {
        let bits = scheme.bits_at(j);
        if bits == 0 {
            continue;
        }
        let s = levels_for(bits);
        let sign = reader.read(1)?;
        let rest = reader.read(bits as u32 - 1)?;
        (levels[j], negative[j]) = match (escaped[j], sign, rest) {
            (true, 0, 0) => (s, true),
            (true, _, _) => return Err(Error::Decode(format!("escaped element {j} has payload"))),
            (false, 1, 0) => (s, false),
            (false, sign, level) => (level, sign == 1),
        };
    }
    if reader.bytes_used() != payload.len() {
        return Err(Error::Decode("trailing bytes after payload".into()));
    }
    if !reader.pos.is_multiple_of(8) && payload[payload.len() - 1] & (0xFF >> (reader.pos % 8)) != 0 {
        return Err(Error::Decode("non-zero payload padding".into()));
    }
    QuantizedUpdate::from_parts(scheme, norm, rung_norms, negative, levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::{quantize_mixed, quantize_uniform, DenseVector};
    use crate::rng::seeded;

    fn uniform_sample() -> QuantizedUpdate {
        QuantizedUpdate::from_parts(
            Scheme::Uniform(2),
            1.0,
            [0.0; 3],
            vec![false, true, false, false],
            vec![0, 1, 2, 1],
        )
        .unwrap()
    }

    #[test]
    fn uniform_golden_bytes() {
        let blob = encode(&uniform_sample());
        let expected = [
            0x00, // uniform
            0x04, 0x00, 0x00, 0x00, // d
            0x00, 0x00, 0x80, 0x3F, // 1.0f32
            0x02, // b
            0x00, 0x00, 0x00, 0x00, // no escapes
            0b0011_1001, // (+,0) (-,1) (+,s) (+,1)
        ];
        assert_eq!(blob.bytes, expected);
        assert_eq!(blob.payload_bits, 8);
        assert_eq!(blob.header_bits, 14 * 8);
        assert_eq!(decode(&blob.bytes).unwrap(), uniform_sample());
    }

    #[test]
    fn mixed_golden_bytes() {
        let alloc = BitAllocation::new(vec![8, 4, 2, 0], 14).unwrap();
        let q = QuantizedUpdate::from_parts(
            Scheme::Mixed(alloc),
            2.0,
            [1.0, 0.5, 0.25],
            vec![true, false, false, false],
            vec![128, 3, 2, 0],
        )
        .unwrap();
        let blob = encode(&q);
        assert_eq!(blob.payload_bits, 14);
        let mut expected = vec![0x01, 0x04, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x40];
        expected.push(0b1110_0100); // rung map 3,2,1,0
        expected.extend_from_slice(&[0x00, 0x00, 0x80, 0x3F]);
        expected.extend_from_slice(&[0x00, 0x00, 0x00, 0x3F]);
        expected.extend_from_slice(&[0x00, 0x00, 0x80, 0x3E]);
        expected.extend_from_slice(&[0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00]);
        // 8-bit (-,s) escaped: 0 0000000; 4-bit (+,3): 0 011; 2-bit (+,s): 1 0
        expected.extend_from_slice(&[0b0000_0000, 0b0011_1000]);
        assert_eq!(blob.bytes, expected);
        // the rung map adds 2 bits per element on top of the uniform-style fields
        assert_eq!(blob.header_bits, (1 + 4 + 4 + 1 + 12 + 4 + 4) * 8);
        assert_eq!(decode(&blob.bytes).unwrap(), q);
    }

    #[test]
    fn ratios_follow_the_float_baseline() {
        let mut rng = seeded(2);
        let h = DenseVector::from_f64(&(0..100).map(|i| (i as f64).sin()).collect::<Vec<_>>()).unwrap();
        for (b, ratio) in [(2u8, 16.0), (4, 8.0), (8, 4.0)] {
            let blob = encode(&quantize_uniform(&h, b, &mut rng).unwrap());
            assert_eq!(compression_ratio(&blob, 100, CompressionMode::PayloadOnly), ratio);
            assert!(compression_ratio(&blob, 100, CompressionMode::Total) < ratio);
        }
        let zero = BitAllocation::new(vec![0; 100], 0).unwrap();
        let blob = encode(&quantize_mixed(&h, &zero, &mut rng).unwrap());
        assert_eq!(blob.payload_bits, 0);
        assert_eq!(compression_ratio(&blob, 100, CompressionMode::PayloadOnly), f64::INFINITY);
        assert!(compression_ratio(&blob, 100, CompressionMode::Total).is_finite());
    }

    #[test]
    fn one_bit_uniform_round_trips() {
        let h = DenseVector::new(vec![0.5, -0.5, 0.7, -0.1, 0.0]).unwrap();
        let q = quantize_uniform(&h, 1, &mut seeded(4)).unwrap();
        assert_eq!(decode(&encode(&q).bytes).unwrap(), q);
    }

    #[test]
    fn rejects_malformed_input() {
        let good = encode(&uniform_sample()).bytes;
        assert!(decode(&good[..good.len() - 1]).is_err());
        let mut extra = good.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut tag = good.clone();
        tag[0] = 7;
        assert!(decode(&tag).is_err());
        let mut width = good.clone();
        width[9] = 0;
        assert!(decode(&width).is_err());
        assert!(decode(&[]).is_err());

        // escape pointing at an element whose payload is not all zeros
        let mut escaped = good[..10].to_vec();
        escaped.extend_from_slice(&[1, 0, 0, 0, 1, 0, 0, 0]);
        escaped.push(0b0011_1001);
        assert!(decode(&escaped).is_err());
    }

    #[test]
    fn rejects_dirty_padding() {
        let h = DenseVector::new(vec![0.3, -0.2, 0.9]).unwrap();
        let mut bytes = encode(&quantize_uniform(&h, 2, &mut seeded(1)).unwrap()).bytes;
        *bytes.last_mut().unwrap() |= 1;
        assert!(decode(&bytes).is_err());
    }
}
