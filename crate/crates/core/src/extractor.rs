//! Seeded Toeplitz-hashing extractor.
//!
//! The `m × n` matrix has entries `T[i][j] = seed[i − j + n − 1]`, so row `i`
//! is the seed window `seed[i .. i + n]` read backwards. Each output bit is
//! the GF(2) inner product of a row with the raw input.
//!
//! Small products use a bit-packed row scan. Large ones go through blocked
//! floating-point FFT convolution; every block sum is at most the FFT length,
//! far inside the range where rounding recovers the exact integer.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::bits::PackedBits;
use crate::error::{Error, Result};

/// Default extractor error, reported separately from the smoothing parameter.
pub const DEFAULT_EPS_EXT: f64 = 5.421010862427522e-20; // 2^-64

/// Leftover-hash output length `⌊certified − 2·log2(1/ε_ext)⌋`, floored at 0.
pub fn output_length(certified_bits: f64, eps_ext: f64) -> Result<usize> {
    if !(eps_ext > 0.0 && eps_ext <= 1.0) {
        return Err(Error::param("eps_ext", format!("{eps_ext} not in (0,1]")));
    }
    let m = (certified_bits - 2.0 * (1.0 / eps_ext).log2()).floor();
    Ok(if m > 0.0 { m as usize } else { 0 })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToeplitzSeed {
    bits: PackedBits,
    n_in: usize,
    m_out: usize,
}

impl ToeplitzSeed {
    pub fn new(bits: PackedBits, n_in: usize, m_out: usize) -> Result<Self> {
        if m_out == 0 || n_in == 0 {
            return Err(Error::param("m_out", "matrix dimensions must be positive"));
        }
        let expected = n_in + m_out - 1;
        if bits.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: bits.len(),
            });
        }
        Ok(ToeplitzSeed { bits, n_in, m_out })
    }

    /// Uniformly random seed drawn from `rng`.
    pub fn generate<R: rand::Rng + ?Sized>(n_in: usize, m_out: usize, rng: &mut R) -> Result<Self> {
        if m_out == 0 || n_in == 0 {
            return Err(Error::param("m_out", "matrix dimensions must be positive"));
        }
        let len = Self::required_len(n_in, m_out);
        let mut bytes = vec![0u8; len.div_ceil(8)];
        rng.fill_bytes(&mut bytes);
        Self::new(PackedBits::from_bytes(bytes, len)?, n_in, m_out)
    }

    /// Required seed length for an `m_out × n_in` matrix.
    pub fn required_len(n_in: usize, m_out: usize) -> usize {
        n_in + m_out - 1
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn m_out(&self) -> usize {
        self.m_out
    }

    pub fn bits(&self) -> &PackedBits {
        &self.bits
    }

    /// Matrix entry `T[i][j]`.
    pub fn entry(&self, i: usize, j: usize) -> bool {
        self.bits.get(i + self.n_in - 1 - j)
    }
}

/// Above this many matrix entries [`extract`] switches to FFT convolution.
pub const PACKED_LIMIT: u128 = 1 << 34;

const MAX_FFT_LEN: usize = 1 << 22;

fn check_input(raw: &PackedBits, seed: &ToeplitzSeed) -> Result<()> {
    if raw.len() != seed.n_in {
        return Err(Error::DimensionMismatch {
            expected: seed.n_in,
            found: raw.len(),
        });
    }
    Ok(())
}

/// `T · raw` over GF(2).
pub fn extract(raw: &PackedBits, seed: &ToeplitzSeed) -> Result<PackedBits> {
    if seed.n_in as u128 * seed.m_out as u128 <= PACKED_LIMIT {
        extract_packed(raw, seed)
    } else {
        extract_fft(raw, seed)
    }
}

/// Row-by-row product, 64 matrix entries per word operation.
pub fn extract_packed(raw: &PackedBits, seed: &ToeplitzSeed) -> Result<PackedBits> {
    check_input(raw, seed)?;
    let n = seed.n_in;
    // out_i = ⊕_k seed[i + k] · raw[n − 1 − k]
    let reversed: PackedBits = (0..n).rev().map(|j| raw.get(j)).collect();
    let rev = reversed.to_words_lsb();
    let mut seed_words = seed.bits.to_words_lsb();
    seed_words.push(0);

    let row = |i: usize| -> bool {
        let (q, r) = (i / 64, i % 64);
        let mut acc = 0u64;
        for (k, &w) in rev.iter().enumerate() {
            let window = if r == 0 {
                seed_words[q + k]
            } else {
                (seed_words[q + k] >> r) | (seed_words[q + k + 1] << (64 - r))
            };
            acc ^= window & w;
        }
        acc.count_ones() & 1 == 1
    };

    let m = seed.m_out;
    let bytes: Vec<u8> = (0..m.div_ceil(8))
        .into_par_iter()
        .map(|byte| {
            let mut out = 0u8;
            for bit in 0..8 {
                let i = byte * 8 + bit;
                if i < m && row(i) {
                    out |= 0x80 >> bit;
                }
            }
            out
        })
        .collect();
    PackedBits::from_bytes(bytes, m)
}

/// Blocked convolution product. For an output block starting at `i0` and a
/// raw block `raw[j0 .. j0 + b]`, the needed seed window starts at
/// `i0 + n − j0 − b`, and output `i0 + d` is entry `d + b − 1` of the
/// window convolved with the raw block.
pub fn extract_fft(raw: &PackedBits, seed: &ToeplitzSeed) -> Result<PackedBits> {
    check_input(raw, seed)?;
    Ok(fft_product(raw, seed, MAX_FFT_LEN))
}

fn fft_product(raw: &PackedBits, seed: &ToeplitzSeed, max_len: usize) -> PackedBits {
    let (n, m) = (seed.n_in, seed.m_out);
    let len = (n + m - 1).next_power_of_two().clamp(2, max_len);
    let block_in = n.min(len / 2);
    let block_out = m.min(len - block_in + 1);

    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(len);
    let inverse = planner.plan_fft_inverse(len);
    let scale = 1.0 / len as f64;

    let mut out = PackedBits::zeros(m);
    for j0 in (0..n).step_by(block_in) {
        let b = block_in.min(n - j0);
        let mut r = vec![Complex::new(0.0, 0.0); len];
        for (u, x) in r.iter_mut().take(b).enumerate() {
            x.re = f64::from(u8::from(raw.get(j0 + u)));
        }
        forward.process(&mut r);

        let starts: Vec<usize> = (0..m).step_by(block_out).collect();
        let parities: Vec<Vec<bool>> = starts
            .par_iter()
            .map(|&i0| {
                let rows = block_out.min(m - i0);
                let k0 = i0 + n - j0 - b;
                let mut w = vec![Complex::new(0.0, 0.0); len];
                for (t, x) in w.iter_mut().take(rows + b - 1).enumerate() {
                    x.re = f64::from(u8::from(seed.bits.get(k0 + t)));
                }
                forward.process(&mut w);
                for (x, y) in w.iter_mut().zip(&r) {
                    *x *= y;
                }
                inverse.process(&mut w);
                (0..rows)
                    .map(|d| (w[d + b - 1].re * scale).round() as u64 & 1 == 1)
                    .collect()
            })
            .collect();
        for (&i0, bits) in starts.iter().zip(&parities) {
            for (d, &bit) in bits.iter().enumerate() {
                if bit {
                    out.set(i0 + d, !out.get(i0 + d));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_lengths() {
        assert_eq!(output_length(1000.0, 2f64.powi(-32)).unwrap(), 936);
        assert_eq!(output_length(0.0, 1e-6).unwrap(), 0);
        assert_eq!(output_length(1000.7, 1.0).unwrap(), 1000);
        assert_eq!(output_length(100.0, DEFAULT_EPS_EXT).unwrap(), 0);
        assert!(output_length(10.0, 0.0).is_err());
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let seed = ToeplitzSeed::new(PackedBits::from_bools(&[true; 20]), 13, 8).unwrap();
        let out = extract(&PackedBits::zeros(13), &seed).unwrap();
        assert_eq!(out, PackedBits::zeros(8));
    }

    #[test]
    fn all_ones_seed_single_row_is_parity() {
        let raw = PackedBits::from_bools(&[true, false, true, true, false, true, false]);
        let seed = ToeplitzSeed::new(PackedBits::from_bools(&[true; 7]), 7, 1).unwrap();
        let out = extract(&raw, &seed).unwrap();
        assert_eq!(out.len(), 1);
        assert!(!out.get(0)); // four ones
    }

    #[test]
    fn dimension_checks() {
        assert!(matches!(
            ToeplitzSeed::new(PackedBits::zeros(10), 8, 4),
            Err(Error::DimensionMismatch { expected: 11, found: 10 })
        ));
        let seed = ToeplitzSeed::new(PackedBits::zeros(11), 8, 4).unwrap();
        assert!(extract(&PackedBits::zeros(9), &seed).is_err());
        assert!(extract_fft(&PackedBits::zeros(9), &seed).is_err());
        assert!(ToeplitzSeed::new(PackedBits::zeros(7), 8, 0).is_err());
    }

    #[test]
    fn small_fft_blocks_match_packed() {
        for (n, m) in [(1, 1), (5, 300), (300, 5), (257, 129), (1000, 999)] {
            let raw: PackedBits = (0..n).map(|i| (i * 13 + 5) % 7 < 3).collect();
            let bits: PackedBits = (0..n + m - 1).map(|i| (i * 11 + 2) % 5 < 2).collect();
            let seed = ToeplitzSeed::new(bits, n, m).unwrap();
            let want = extract_packed(&raw, &seed).unwrap();
            for max_len in [4, 16, 64, 1024] {
                assert_eq!(fft_product(&raw, &seed, max_len), want, "n {n} m {m} len {max_len}");
            }
        }
    }

    #[test]
    fn diagonal_constancy() {
        let bits: PackedBits = (0..40).map(|i| (i * 7 + 3) % 5 < 2).collect();
        let seed = ToeplitzSeed::new(bits, 25, 16).unwrap();
        for i in 0..15 {
            for j in 0..24 {
                assert_eq!(seed.entry(i + 1, j + 1), seed.entry(i, j));
            }
        }
    }
}
