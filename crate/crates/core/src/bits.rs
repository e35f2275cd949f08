//! Fixed-length bit strings packed into 64-bit words.

use std::fmt;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("bit length mismatch: {left} vs {right}")]
pub struct LengthMismatch {
    pub left: usize,
    pub right: usize,
}

/// A bit string of fixed length. Bits beyond `len` in the last word are
/// always zero.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Bits {
    words: Vec<u64>,
    len: usize,
}

fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

impl Bits {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; words_for(len)],
            len,
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut b = Self {
            words: vec![u64::MAX; words_for(len)],
            len,
        };
        b.clear_tail();
        b
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut b = Self {
            words: (0..words_for(len)).map(|_| rng.random()).collect(),
            len,
        };
        b.clear_tail();
        b
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut words = Vec::new();
        let mut len = 0;
        for bit in bits {
            if len % 64 == 0 {
                words.push(0);
            }
            if bit {
                words[len / 64] |= 1 << (len % 64);
            }
            len += 1;
        }
        Self { words, len }
    }

    /// Parses a string of `0`/`1` characters, index 0 first.
    pub fn parse01(s: &str) -> Option<Self> {
        let mut out = Vec::with_capacity(s.len());
        for c in s.chars() {
            match c {
                '0' => out.push(false),
                '1' => out.push(true),
                _ => return None,
            }
        }
        Some(Self::from_bools(out))
    }

    /// Packs bytes LSB-first; `len` may be shorter than `8 * bytes.len()`,
    /// in which case the surplus bits must be zero.
    pub fn from_bytes(bytes: &[u8], len: usize) -> Option<Self> {
        if bytes.len() != len.div_ceil(8) {
            return None;
        }
        let mut words = vec![0u64; words_for(len)];
        for (i, &byte) in bytes.iter().enumerate() {
            words[i / 8] |= u64::from(byte) << (8 * (i % 8));
        }
        let b = Self { words, len };
        let mut check = b.clone();
        check.clear_tail();
        (check == b).then_some(b)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        (0..self.len.div_ceil(8))
            .map(|i| (self.words[i / 8] >> (8 * (i % 8))) as u8)
            .collect()
    }

    fn clear_tail(&mut self) {
        let r = self.len % 64;
        if r != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << r) - 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i / 64] ^= 1u64 << (i % 64);
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i))
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn xor(&self, other: &Self) -> Result<Self, LengthMismatch> {
        self.check_len(other)?;
        Ok(Self {
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a ^ b)
                .collect(),
            len: self.len,
        })
    }

    /// Number of differing positions.
    pub fn hamming(&self, other: &Self) -> Result<usize, LengthMismatch> {
        self.check_len(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    /// Hamming distance divided by the length; 0 for empty strings.
    pub fn normalized_hamming(&self, other: &Self) -> Result<f64, LengthMismatch> {
        let d = self.hamming(other)?;
        Ok(if self.len == 0 {
            0.0
        } else {
            d as f64 / self.len as f64
        })
    }

    /// `out[i] = self[perm[i]]`.
    pub fn gather(&self, perm: &[usize]) -> Self {
        debug_assert_eq!(perm.len(), self.len);
        Self::from_bools(perm.iter().map(|&p| self.get(p)))
    }

    fn check_len(&self, other: &Self) -> Result<(), LengthMismatch> {
        if self.len == other.len {
            Ok(())
        } else {
            Err(LengthMismatch {
                left: self.len,
                right: other.len,
            })
        }
    }
}

impl fmt::Debug for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 128 {
            write!(f, "Bits({self})")
        } else {
            write!(f, "Bits(len={}, ones={})", self.len, self.count_ones())
        }
    }
}

impl fmt::Display for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(s: &str) -> Bits {
        Bits::parse01(s).unwrap()
    }

    #[test]
    fn parse_and_display() {
        assert_eq!(b("1011").to_string(), "1011");
        assert!(b("1011").get(0) && !b("1011").get(1));
        assert!(Bits::parse01("10x").is_none());
    }

    #[test]
    fn xor_and_hamming() {
        assert_eq!(b("1010").xor(&b("1111")).unwrap(), b("0101"));
        assert_eq!(b("1100").hamming(&b("1010")).unwrap(), 2);
        assert_eq!(b("1100").normalized_hamming(&b("1010")).unwrap(), 0.5);
        assert!(b("10").xor(&b("101")).is_err());
    }

    #[test]
    fn ones_keeps_tail_clear() {
        let o = Bits::ones(70);
        assert_eq!(o.count_ones(), 70);
        assert_eq!(o.hamming(&Bits::zeros(70)).unwrap(), 70);
    }

    #[test]
    fn bytes_are_lsb_first() {
        assert_eq!(b("1000000001").to_bytes(), vec![0x01, 0x02]);
        assert_eq!(
            Bits::from_bytes(&[0x01, 0x02], 10).unwrap(),
            b("1000000001")
        );
        // bit 10 set beyond the declared length
        assert!(Bits::from_bytes(&[0x00, 0x04], 10).is_none());
        assert!(Bits::from_bytes(&[0x00], 10).is_none());
    }

    proptest! {
        #[test]
        fn bytes_round_trip(v in prop::collection::vec(any::<bool>(), 0..300)) {
            let bits = Bits::from_bools(v.clone());
            let back = Bits::from_bytes(&bits.to_bytes(), v.len()).unwrap();
            prop_assert_eq!(back.iter().collect::<Vec<_>>(), v);
        }

        #[test]
        fn hamming_is_popcount_of_xor(
            pair in (1usize..200).prop_flat_map(|n| (
                prop::collection::vec(any::<bool>(), n),
                prop::collection::vec(any::<bool>(), n),
            ))
        ) {
            let (x, y) = (Bits::from_bools(pair.0.clone()), Bits::from_bools(pair.1.clone()));
            let naive = pair.0.iter().zip(&pair.1).filter(|(a, b)| a != b).count();
            prop_assert_eq!(x.hamming(&y).unwrap(), naive);
            prop_assert_eq!(x.xor(&y).unwrap().count_ones(), naive);
        }
    }
}
