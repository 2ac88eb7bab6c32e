//! Packed bit frames and prefix-parity lists.
//!
//! Bits are packed 8 per byte, least-significant bit first. Bit `i` lives in
//! byte `i / 8` at position `i % 8`. Unused high bits of the final byte are
//! always zero, which makes byte-wise equality and hashing exact.
//!
//! A [`PrefixParity`] holds `pp[0..=n]` with `pp[0] = 0` and
//! `pp[i] = pp[i-1] ^ d[i-1]`, so the parity of any interval is two lookups.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitFrame {
    bytes: Vec<u8>,
    len: usize,
}

impl BitFrame {
    /// All-zero frame of `len` bits.
    pub fn zeros(len: usize) -> Self {
        BitFrame {
            bytes: vec![0; len.div_ceil(8)],
            len,
        }
    }

    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut bytes = Vec::new();
        let mut len = 0;
        for bit in bits {
            if len % 8 == 0 {
                bytes.push(0);
            }
            if bit {
                bytes[len / 8] |= 1 << (len % 8);
            }
            len += 1;
        }
        BitFrame { bytes, len }
    }

    /// Wraps packed bytes. Trailing bits beyond `len` must be zero.
    pub fn from_bytes(bytes: Vec<u8>, len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::LengthMismatch {
                left: bytes.len(),
                right: len.div_ceil(8),
            });
        }
        if !len.is_multiple_of(8) {
            let last = bytes[bytes.len() - 1];
            if last >> (len % 8) != 0 {
                return Err(Error::contract("nonzero padding bits in final byte"));
            }
        }
        Ok(BitFrame { bytes, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.bytes[i >> 3] >> (i & 7)) & 1 == 1
    }

    pub fn try_get(&self, i: usize) -> Result<bool> {
        self.check(i)?;
        Ok(self.get(i))
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.len);
        let mask = 1u8 << (i & 7);
        if value {
            self.bytes[i >> 3] |= mask;
        } else {
            self.bytes[i >> 3] &= !mask;
        }
    }

    #[inline]
    pub(crate) fn toggle(&mut self, i: usize) {
        self.bytes[i >> 3] ^= 1 << (i & 7);
    }

    /// Toggles bit `i`. Any [`PrefixParity`] built from this frame is stale
    /// afterwards; use [`ParityIndex::flip`] to keep an index in step.
    pub fn flip_bit(&mut self, i: usize) -> Result<()> {
        self.check(i)?;
        self.toggle(i);
        Ok(())
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// XOR of all bits.
    pub fn parity(&self) -> bool {
        self.bytes.iter().fold(0u8, |acc, b| acc ^ b).count_ones() & 1 == 1
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Positions of set bits, ascending.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bytes.iter().enumerate().flat_map(|(byte_idx, &b)| {
            let mut word = b;
            std::iter::from_fn(move || {
                if word == 0 {
                    return None;
                }
                let bit = word.trailing_zeros() as usize;
                word &= word - 1;
                Some(byte_idx * 8 + bit)
            })
        })
    }

    pub fn xor(&self, other: &BitFrame) -> Result<BitFrame> {
        self.check_same_len(other)?;
        let bytes = self
            .bytes
            .iter()
            .zip(&other.bytes)
            .map(|(a, b)| a ^ b)
            .collect();
        Ok(BitFrame {
            bytes,
            len: self.len,
        })
    }

    /// Heap bytes held by the frame.
    pub fn heap_bytes(&self) -> usize {
        self.bytes.capacity()
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.len {
            return Err(Error::OutOfRange {
                index: i,
                len: self.len,
            });
        }
        Ok(())
    }

    fn check_same_len(&self, other: &BitFrame) -> Result<()> {
        if self.len != other.len {
            return Err(Error::LengthMismatch {
                left: self.len,
                right: other.len,
            });
        }
        Ok(())
    }

    /// 64-bit little-endian word `w` of the packed representation, zero-padded.
    fn word(&self, w: usize) -> u64 {
        let lo = w * 8;
        let hi = (lo + 8).min(self.bytes.len());
        let mut buf = [0u8; 8];
        buf[..hi - lo].copy_from_slice(&self.bytes[lo..hi]);
        u64::from_le_bytes(buf)
    }
}

/// Number of positions at which `a` and `b` differ.
pub fn hamming_distance(a: &BitFrame, b: &BitFrame) -> Result<usize> {
    a.check_same_len(b)?;
    Ok(a.bytes
        .iter()
        .zip(&b.bytes)
        .map(|(x, y)| (x ^ y).count_ones() as usize)
        .sum())
}

impl fmt::Debug for BitFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 64 {
            write!(f, "BitFrame({self})")
        } else {
            write!(f, "BitFrame(len={}, ones={})", self.len, self.count_ones())
        }
    }
}

impl fmt::Display for BitFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for bit in self.iter() {
            f.write_str(if bit { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Parses a string of `0`/`1` characters, first character is bit 0.
impl FromStr for BitFrame {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::contract(format!("invalid bit character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(BitFrame::from_bits)
    }
}

/// Prefix-parity list of a frame: `n + 1` packed bits.
///
/// Word storage holds the inclusive scan `pp[1..=n]`; `pp[0]` is implicit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrefixParity {
    words: Vec<u64>,
    n: usize,
}

/// Inclusive prefix XOR across the bits of one word.
#[inline]
fn scan_word(mut x: u64) -> u64 {
    x ^= x << 1;
    x ^= x << 2;
    x ^= x << 4;
    x ^= x << 8;
    x ^= x << 16;
    x ^= x << 32;
    x
}

impl PrefixParity {
    pub fn build(frame: &BitFrame) -> Self {
        let n_words = frame.len.div_ceil(64);
        let mut words = Vec::with_capacity(n_words);
        let mut carry = 0u64;
        for w in 0..n_words {
            let scanned = scan_word(frame.word(w)) ^ carry;
            carry = if scanned >> 63 == 1 { u64::MAX } else { 0 };
            words.push(scanned);
        }
        if !frame.len.is_multiple_of(64) {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << (frame.len % 64)) - 1;
            }
        }
        PrefixParity { words, n: frame.len }
    }

    /// Frame length `n`; the list itself has `n + 1` entries.
    pub fn frame_len(&self) -> usize {
        self.n
    }

    /// `pp[i]` for `i` in `0..=n`.
    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i <= self.n);
        if i == 0 {
            return false;
        }
        let j = i - 1;
        (self.words[j >> 6] >> (j & 63)) & 1 == 1
    }

    /// Parity of `d[start..start + len]`.
    pub fn interval_parity(&self, start: usize, len: usize) -> Result<bool> {
        match start.checked_add(len) {
            Some(end) if end <= self.n => Ok(self.get(start) ^ self.get(end)),
            _ => Err(Error::IntervalOutOfRange {
                start,
                len,
                n: self.n,
            }),
        }
    }

    #[inline]
    pub(crate) fn parity_unchecked(&self, start: usize, len: usize) -> bool {
        self.get(start) ^ self.get(start + len)
    }

    /// Patches the list after bit `i` of the frame was toggled: `pp[i+1..=n]` flip.
    pub fn patch_flip(&mut self, i: usize) -> Result<()> {
        if i >= self.n {
            return Err(Error::OutOfRange {
                index: i,
                len: self.n,
            });
        }
        let first_word = i >> 6;
        self.words[first_word] ^= u64::MAX << (i & 63);
        for w in &mut self.words[first_word + 1..] {
            *w = !*w;
        }
        if !self.n.is_multiple_of(64) {
            let last = self.words.len() - 1;
            self.words[last] &= (1u64 << (self.n % 64)) - 1;
        }
        Ok(())
    }

    pub fn heap_bytes(&self) -> usize {
        self.words.capacity() * 8
    }
}

/// A prefix-parity list plus the set of positions toggled since it was built.
///
/// Queries stay exact between rebuilds: the stale prefix answer is corrected by
/// the parity of the number of pending toggles inside the interval.
#[derive(Clone, Debug)]
pub struct ParityIndex {
    prefix: PrefixParity,
    pending: BTreeSet<usize>,
}

impl ParityIndex {
    pub fn build(frame: &BitFrame) -> Self {
        ParityIndex {
            prefix: PrefixParity::build(frame),
            pending: BTreeSet::new(),
        }
    }

    pub fn frame_len(&self) -> usize {
        self.prefix.n
    }

    /// Records that bit `i` of the indexed frame was toggled.
    pub fn flip(&mut self, i: usize) -> Result<()> {
        if i >= self.prefix.n {
            return Err(Error::OutOfRange {
                index: i,
                len: self.prefix.n,
            });
        }
        if !self.pending.remove(&i) {
            self.pending.insert(i);
        }
        Ok(())
    }

    pub fn is_stale(&self) -> bool {
        !self.pending.is_empty()
    }

    pub fn interval_parity(&self, start: usize, len: usize) -> Result<bool> {
        let base = self.prefix.interval_parity(start, len)?;
        Ok(base ^ self.pending_parity(start, len))
    }

    #[inline]
    pub(crate) fn parity_unchecked(&self, start: usize, len: usize) -> bool {
        self.prefix.parity_unchecked(start, len) ^ self.pending_parity(start, len)
    }

    fn pending_parity(&self, start: usize, len: usize) -> bool {
        if self.pending.is_empty() || len == 0 {
            return false;
        }
        self.pending.range(start..start + len).count() & 1 == 1
    }

    /// Folds pending toggles into the prefix list.
    pub fn repair(&mut self) {
        let pending = std::mem::take(&mut self.pending);
        for i in pending {
            self.prefix
                .patch_flip(i)
                .expect("pending positions are in range");
        }
    }

    pub fn prefix(&self) -> &PrefixParity {
        &self.prefix
    }

    pub fn heap_bytes(&self) -> usize {
        // BTreeSet nodes hold up to 11 keys; 16 bytes per key is a fair upper estimate.
        self.prefix.heap_bytes() + self.pending.len() * 16
    }
}
