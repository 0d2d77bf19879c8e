//! Little-endian binary helpers for the on-disk artifact formats.
//!
//! All formats in this crate share the same conventions: a 4-byte magic,
//! a u32 version, little-endian integers, and 32-bit IEEE-754 payloads.
//! The reader tracks how many bytes it has consumed so format errors can
//! report an exact byte offset.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

/// Reader wrapper that remembers the current byte offset for error reports.
pub(crate) struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    pub fn new(inner: R) -> Self {
        CountingReader { inner, offset: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    fn map_eof(&self, err: std::io::Error, what: &str) -> Error {
        if err.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(self.offset, format!("truncated file while reading {what}"))
        } else {
            Error::Io(err)
        }
    }

    pub fn read_magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let mut buf = [0u8; 4];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| self.map_eof(e, "magic"))?;
        if &buf != expected {
            return Err(Error::format(
                self.offset,
                format!(
                    "bad magic: expected {:?}, found {:?}",
                    String::from_utf8_lossy(expected),
                    String::from_utf8_lossy(&buf)
                ),
            ));
        }
        self.offset += 4;
        Ok(())
    }

    pub fn read_u8(&mut self, what: &str) -> Result<u8> {
        let v = self.inner.read_u8().map_err(|e| self.map_eof(e, what))?;
        self.offset += 1;
        Ok(v)
    }

    pub fn read_u16(&mut self, what: &str) -> Result<u16> {
        let v = self
            .inner
            .read_u16::<LittleEndian>()
            .map_err(|e| self.map_eof(e, what))?;
        self.offset += 2;
        Ok(v)
    }

    pub fn read_u32(&mut self, what: &str) -> Result<u32> {
        let v = self
            .inner
            .read_u32::<LittleEndian>()
            .map_err(|e| self.map_eof(e, what))?;
        self.offset += 4;
        Ok(v)
    }

    pub fn read_u64(&mut self, what: &str) -> Result<u64> {
        let v = self
            .inner
            .read_u64::<LittleEndian>()
            .map_err(|e| self.map_eof(e, what))?;
        self.offset += 8;
        Ok(v)
    }

    pub fn read_f64(&mut self, what: &str) -> Result<f64> {
        let v = self
            .inner
            .read_f64::<LittleEndian>()
            .map_err(|e| self.map_eof(e, what))?;
        self.offset += 8;
        Ok(v)
    }

    pub fn read_f32_into(&mut self, out: &mut [f32], what: &str) -> Result<()> {
        self.inner
            .read_f32_into::<LittleEndian>(out)
            .map_err(|e| self.map_eof(e, what))?;
        self.offset += 4 * out.len() as u64;
        Ok(())
    }

    pub fn read_u16_into(&mut self, out: &mut [u16], what: &str) -> Result<()> {
        self.inner
            .read_u16_into::<LittleEndian>(out)
            .map_err(|e| self.map_eof(e, what))?;
        self.offset += 2 * out.len() as u64;
        Ok(())
    }

    pub fn read_exact(&mut self, out: &mut [u8], what: &str) -> Result<()> {
        self.inner
            .read_exact(out)
            .map_err(|e| self.map_eof(e, what))?;
        self.offset += out.len() as u64;
        Ok(())
    }

    /// Expect the version field to match; all current formats are version 1.
    pub fn read_version(&mut self, expected: u32) -> Result<()> {
        let at = self.offset;
        let v = self.read_u32("version")?;
        if v != expected {
            return Err(Error::format(
                at,
                format!("unsupported version {v}, expected {expected}"),
            ));
        }
        Ok(())
    }
}

pub(crate) fn write_magic<W: Write>(w: &mut W, magic: &[u8; 4]) -> Result<()> {
    w.write_all(magic)?;
    Ok(())
}

pub(crate) fn write_u8<W: Write>(w: &mut W, v: u8) -> Result<()> {
    w.write_u8(v)?;
    Ok(())
}

pub(crate) fn write_u16<W: Write>(w: &mut W, v: u16) -> Result<()> {
    w.write_u16::<LittleEndian>(v)?;
    Ok(())
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_u32::<LittleEndian>(v)?;
    Ok(())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_u64::<LittleEndian>(v)?;
    Ok(())
}

pub(crate) fn write_f32<W: Write>(w: &mut W, v: f32) -> Result<()> {
    w.write_f32::<LittleEndian>(v)?;
    Ok(())
}

pub(crate) fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_f64::<LittleEndian>(v)?;
    Ok(())
}
