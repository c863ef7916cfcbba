//! Little-endian helpers shared by the WGEM, WGFC and WGSP weight files.
//!
//! All three formats are a 4-byte magic followed by `u32` header fields and
//! `f32` payloads. Values are held as `f64` in memory and rounded to `f32` on
//! save, so a load of a saved file re-saves to identical bytes.

use std::io;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("file truncated")]
    Truncated,
    #[error("{0}")]
    Invalid(String),
}

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4]) -> Self {
        Self { buf: magic.to_vec() }
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, values: &[f64]) {
        for &v in values {
            self.buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], magic: &'static [u8; 4]) -> Result<Self, FormatError> {
        if bytes.len() < 4 {
            return Err(FormatError::Truncated);
        }
        if &bytes[..4] != magic {
            return Err(FormatError::BadMagic {
                expected: std::str::from_utf8(magic).unwrap_or("?"),
            });
        }
        Ok(Self { bytes, pos: 4 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or(FormatError::Truncated)?;
        let out = self.bytes.get(self.pos..end).ok_or(FormatError::Truncated)?;
        self.pos = end;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        let raw = self.take(n.checked_mul(4).ok_or(FormatError::Truncated)?)?;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::Invalid("non-finite weight".into()));
        }
        Ok(values)
    }

    pub fn finish(self) -> Result<(), FormatError> {
        if self.pos != self.bytes.len() {
            return Err(FormatError::Invalid(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Rounds every value through `f32`, matching what a save/load cycle keeps.
pub fn round_to_f32(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}
