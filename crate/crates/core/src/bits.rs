//! Packed bit strings, most significant bit first within each byte.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct PackedBits {
    bytes: Vec<u8>,
    len: usize,
}

impl PackedBits {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        PackedBits {
            bytes: Vec::with_capacity(bits.div_ceil(8)),
            len: 0,
        }
    }

    pub fn zeros(len: usize) -> Self {
        PackedBits {
            bytes: vec![0; len.div_ceil(8)],
            len,
        }
    }

    /// Wraps `bytes` holding exactly `len` bits; trailing padding is cleared.
    pub fn from_bytes(mut bytes: Vec<u8>, len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::DimensionMismatch {
                expected: len,
                found: bytes.len() * 8,
            });
        }
        if !len.is_multiple_of(8) {
            let keep = 0xffu8 << (8 - len % 8);
            *bytes.last_mut().expect("non-empty") &= keep;
        }
        Ok(PackedBits { bytes, len })
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut out = Self::with_capacity(bits.len());
        for &b in bits {
            out.push(b);
        }
        out
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    #[inline]
    pub fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            self.bytes[self.len / 8] |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.bytes[i / 8] & (0x80 >> (i % 8)) != 0
    }

    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let mask = 0x80 >> (i % 8);
        if bit {
            self.bytes[i / 8] |= mask;
        } else {
            self.bytes[i / 8] &= !mask;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn xor(&self, other: &PackedBits) -> Result<PackedBits> {
        if self.len != other.len {
            return Err(Error::DimensionMismatch {
                expected: self.len,
                found: other.len,
            });
        }
        let bytes = self.bytes.iter().zip(&other.bytes).map(|(a, b)| a ^ b).collect();
        Ok(PackedBits { bytes, len: self.len })
    }

    /// Bits as little-endian `u64` words: bit `i` lands in word `i / 64` at
    /// position `i % 64`.
    pub(crate) fn to_words_lsb(&self) -> Vec<u64> {
        let mut words = vec![0u64; self.len.div_ceil(64)];
        for (i, &byte) in self.bytes.iter().enumerate() {
            // reverse so that bit 8i+j sits at position j
            words[i / 8] |= (byte.reverse_bits() as u64) << (8 * (i % 8));
        }
        words
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, &self.bytes).map_err(|e| Error::io(path, e))
    }

    /// Reads a packed file; `len` defaults to every bit in the file.
    pub fn read_file(path: &Path, len: Option<usize>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let len = len.unwrap_or(bytes.len() * 8);
        Self::from_bytes(bytes, len)
    }
}

impl FromIterator<bool> for PackedBits {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        let mut out = PackedBits::new();
        for b in iter {
            out.push(b);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn msb_first_layout() {
        let bits = PackedBits::from_bools(&[true, false, true, true, false, false, false, false, true]);
        assert_eq!(bits.as_bytes(), &[0b1011_0000, 0b1000_0000]);
        assert_eq!(bits.len(), 9);
        assert_eq!(bits.count_ones(), 4);
    }

    #[test]
    fn from_bytes_checks_length() {
        assert!(PackedBits::from_bytes(vec![0xff, 0xff], 17).is_err());
        assert!(PackedBits::from_bytes(vec![0xff, 0xff], 8).is_err());
        let b = PackedBits::from_bytes(vec![0xff, 0xff], 10).unwrap();
        assert_eq!(b.as_bytes(), &[0xff, 0xc0]);
    }

    proptest! {
        #[test]
        fn bool_round_trip_and_words(v in proptest::collection::vec(any::<bool>(), 0..300)) {
            let bits = PackedBits::from_bools(&v);
            prop_assert_eq!(bits.to_bools(), v.clone());
            let words = bits.to_words_lsb();
            for (i, &b) in v.iter().enumerate() {
                prop_assert_eq!(words[i / 64] >> (i % 64) & 1 == 1, b);
            }
        }
    }
}
