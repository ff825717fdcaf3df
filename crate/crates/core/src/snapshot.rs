//! Little-endian byte codec used by the sketch snapshot format.
//!
//! The reader never trusts a length prefix: every allocation is preceded by a
//! check that the remaining input can actually hold the announced data.

use crate::bits::Bits;
use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub(crate) fn new() -> Self {
        Self::default()
    }

    pub(crate) fn into_inner(self) -> Vec<u8> {
        self.buf
    }

    pub(crate) fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub(crate) fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub(crate) fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn bits(&mut self, b: &Bits) {
        for &w in b.words() {
            self.u64(w);
        }
    }
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub(crate) fn expect_remaining(&self, n: usize) -> Result<()> {
        if self.remaining() < n {
            Err(Error::Snapshot(format!(
                "truncated: need {n} more bytes, have {}",
                self.remaining()
            )))
        } else {
            Ok(())
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        self.expect_remaining(n)?;
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    /// A `u64` length/count field, bounded so it fits `usize` arithmetic.
    pub(crate) fn len_u64(&mut self) -> Result<usize> {
        let v = self.u64()?;
        if v > (1 << 40) {
            return Err(Error::Snapshot(format!("implausible length {v}")));
        }
        Ok(v as usize)
    }

    pub(crate) fn bits(&mut self, len: usize) -> Result<Bits> {
        let n = len.div_ceil(64);
        self.expect_remaining(n.saturating_mul(8))?;
        let words = (0..n).map(|_| self.u64()).collect::<Result<Vec<_>>>()?;
        Bits::from_words(words, len).ok_or_else(|| Error::Snapshot("stray bits past bitmap end".into()))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Snapshot(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}
