//! Byte-packed bit vectors backing DRAM row contents.
//!
//! Bit `i` is column `i`; it lives in byte `i / 8` at position `i % 8`.

use std::fmt;
use std::ops::Range;

use rand::RngCore;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitRow {
    bytes: Vec<u8>,
    bits: usize,
}

impl BitRow {
    pub fn zero(bits: usize) -> Self {
        BitRow {
            bytes: vec![0u8; bits.div_ceil(8)],
            bits,
        }
    }

    /// Builds a row from raw bytes; excess bits in the last byte are masked off.
    pub fn from_bytes(mut bytes: Vec<u8>, bits: usize) -> Self {
        bytes.resize(bits.div_ceil(8), 0);
        let mut row = BitRow { bytes, bits };
        row.mask_tail();
        row
    }

    fn mask_tail(&mut self) {
        let rem = self.bits % 8;
        if rem != 0 {
            if let Some(last) = self.bytes.last_mut() {
                *last &= (1u8 << rem) - 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.bits
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.bits);
        self.bytes[i / 8] >> (i % 8) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: bool) {
        debug_assert!(i < self.bits);
        let mask = 1u8 << (i % 8);
        if v {
            self.bytes[i / 8] |= mask;
        } else {
            self.bytes[i / 8] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        debug_assert!(i < self.bits);
        self.bytes[i / 8] ^= 1u8 << (i % 8);
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn fill_random<R: RngCore>(&mut self, rng: &mut R) {
        rng.fill_bytes(&mut self.bytes);
        self.mask_tail();
    }

    /// Overwrites the bits of `self` inside `cols` with `f(byte_index)`,
    /// leaving bits outside the range untouched.
    pub fn splice_bytewise(&mut self, cols: Range<usize>, mut f: impl FnMut(usize) -> u8) {
        let cols = clamp_range(cols, self.bits);
        if cols.is_empty() {
            return;
        }
        let first = cols.start / 8;
        let last = (cols.end - 1) / 8;
        for byte in first..=last {
            let lo = byte * 8;
            let mut mask = 0xffu8;
            if cols.start > lo {
                mask &= 0xffu8 << (cols.start - lo);
            }
            if cols.end < lo + 8 {
                mask &= (1u8 << (cols.end - lo)) - 1;
            }
            self.bytes[byte] = (self.bytes[byte] & !mask) | (f(byte) & mask);
        }
    }

    pub fn copy_from(&mut self, src: &BitRow, cols: Range<usize>) {
        self.splice_bytewise(cols, |b| src.bytes[b]);
    }

    pub fn not_from(&mut self, src: &BitRow, cols: Range<usize>) {
        self.splice_bytewise(cols, |b| !src.bytes[b]);
    }

    /// Bitwise majority of three rows.
    pub fn maj3_from(&mut self, a: &BitRow, b: &BitRow, c: &BitRow, cols: Range<usize>) {
        self.splice_bytewise(cols, |i| {
            (a.bytes[i] & b.bytes[i]) | (a.bytes[i] & c.bytes[i]) | (b.bytes[i] & c.bytes[i])
        });
    }

    /// k-ary AND/OR fold with optional output inversion (NAND/NOR).
    pub fn fold_from(&mut self, inputs: &[&BitRow], or: bool, invert: bool, cols: Range<usize>) {
        self.splice_bytewise(cols, |i| {
            let mut acc = if or { 0x00u8 } else { 0xffu8 };
            for row in inputs {
                if or {
                    acc |= row.bytes[i];
                } else {
                    acc &= row.bytes[i];
                }
            }
            if invert {
                !acc
            } else {
                acc
            }
        });
    }

    pub fn set_all(&mut self, v: bool, cols: Range<usize>) {
        let byte = if v { 0xffu8 } else { 0x00 };
        self.splice_bytewise(cols, |_| byte);
    }
}

fn clamp_range(cols: Range<usize>, bits: usize) -> Range<usize> {
    cols.start.min(bits)..cols.end.min(bits)
}

impl fmt::Debug for BitRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitRow[{}b;", self.bits)?;
        for b in self.bytes.iter().take(8) {
            write!(f, " {b:02x}")?;
        }
        if self.bytes.len() > 8 {
            write!(f, " ..")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn set_get_flip() {
        let mut r = BitRow::zero(16);
        r.set(3, true);
        r.set(15, true);
        assert!(r.get(3));
        assert!(r.get(15));
        assert!(!r.get(4));
        r.flip(3);
        assert!(!r.get(3));
        assert_eq!(r.count_ones(), 1);
    }

    #[test]
    fn splice_respects_range() {
        let mut r = BitRow::zero(32);
        r.set_all(true, 0..32);
        r.set_all(false, 5..19);
        for i in 0..32 {
            assert_eq!(r.get(i), !(5..19).contains(&i), "bit {i}");
        }
    }

    #[test]
    fn maj3_bytes() {
        let a = BitRow::from_bytes(vec![0b1010], 8);
        let b = BitRow::from_bytes(vec![0b1100], 8);
        let c = BitRow::from_bytes(vec![0b0110], 8);
        let mut out = BitRow::zero(8);
        out.maj3_from(&a, &b, &c, 0..8);
        assert_eq!(out.bytes()[0], 0b1110);
    }

    #[test]
    fn fold_and_or() {
        let a = BitRow::from_bytes(vec![0b1010], 8);
        let b = BitRow::from_bytes(vec![0b1100], 8);
        let mut out = BitRow::zero(8);
        out.fold_from(&[&a, &b], false, false, 0..8);
        assert_eq!(out.bytes()[0], 0b1000);
        out.fold_from(&[&a, &b], true, true, 0..8);
        assert_eq!(out.bytes()[0], !0b1110);
    }

    #[test]
    fn random_fill_masks_tail() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut r = BitRow::zero(12);
        r.fill_random(&mut rng);
        for i in 12..16 {
            assert_eq!(r.bytes()[1] >> (i % 8) & 1, 0);
        }
    }
}
