//! Little-endian cursor helpers shared by the binary formats.

use crate::error::{Error, Result};

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Truncated {
                context,
                needed: n as u64,
                available: self.remaining() as u64,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    /// Checks that `count * width` bytes are available without consuming them,
    /// so callers can validate untrusted length fields before allocating.
    pub fn ensure(&self, count: u64, width: u64, context: &'static str) -> Result<usize> {
        let needed = count.checked_mul(width).ok_or(Error::Truncated {
            context,
            needed: u64::MAX,
            available: self.remaining() as u64,
        })?;
        if needed > self.remaining() as u64 {
            return Err(Error::Truncated {
                context,
                needed,
                available: self.remaining() as u64,
            });
        }
        Ok(needed as usize)
    }

    pub fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4, "magic")?.try_into().unwrap();
        if found != expected {
            return Err(Error::BadMagic { expected, found });
        }
        Ok(())
    }

    pub fn u8(&mut self, context: &'static str) -> Result<u8> {
        Ok(self.take(1, context)?[0])
    }

    pub fn u16(&mut self, context: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, context)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, context: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().unwrap()))
    }

    pub fn i32(&mut self, context: &'static str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4, context)?.try_into().unwrap()))
    }

    /// Reads `count` f32 values, rejecting NaN and infinities.
    pub fn f32s(&mut self, count: usize, context: &'static str) -> Result<Vec<f32>> {
        let n = self.ensure(count as u64, 4, context)?;
        let raw = self.take(n, context)?;
        let mut out = Vec::with_capacity(count);
        for chunk in raw.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFinite(context.to_string()));
            }
            out.push(v);
        }
        Ok(out)
    }

    pub fn finish(&self, context: &str) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Malformed(format!(
                "{} trailing bytes after {context}",
                self.remaining()
            )));
        }
        Ok(())
    }
}

pub(crate) fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_i32(out: &mut Vec<u8>, v: i32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f32s<'a>(out: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn checked_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Invariant(format!("{what} {v} exceeds u32 range")))
}
