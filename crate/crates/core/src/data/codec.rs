use crate::{Error, Result};

/// Little-endian byte sink.
#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
        self.buf.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// Length-prefixed block of f64s.
    pub fn f64_block(&mut self, xs: &[f64]) {
        self.u64(xs.len() as u64);
        for x in xs {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    pub fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len())?;
        self.bytes(s.as_bytes());
        Ok(())
    }
}

/// Little-endian byte source; running out of input is a format error.
pub(crate) struct Reader<'a> {
    raw: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(raw: &'a [u8]) -> Self {
        Self { raw, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.raw.len()).ok_or_else(|| {
            Error::Format(format!(
                "truncated payload: need {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.raw.len() - self.pos
            ))
        })?;
        let out = &self.raw[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64_block(&mut self, expected: usize) -> Result<Vec<f64>> {
        let n = self.u64()?;
        if n != expected as u64 {
            return Err(Error::Format(format!("block holds {n} values, expected {expected}")));
        }
        let raw = self.take(expected * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid utf-8 string".into()))
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.raw.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.raw.len() - self.pos)));
        }
        Ok(())
    }
}
