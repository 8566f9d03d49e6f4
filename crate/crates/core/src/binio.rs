//! Little-endian binary primitives shared by the model, index, and corpus
//! file formats, plus a CRC32 integrity footer.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// CRC32 (IEEE) over a byte stream, used as a trailing integrity footer so a
/// single flipped byte anywhere in a saved artifact is detected on load.
pub struct Crc32 {
    state: u32,
}

const CRC_POLY: u32 = 0xEDB8_8320;

impl Crc32 {
    pub fn new() -> Self {
        Crc32 { state: 0xFFFF_FFFF }
    }

    pub fn update(&mut self, bytes: &[u8]) {
        let mut s = self.state;
        for &b in bytes {
            s ^= b as u32;
            for _ in 0..8 {
                let mask = (s & 1).wrapping_neg();
                s = (s >> 1) ^ (CRC_POLY & mask);
            }
        }
        self.state = s;
    }

    pub fn finish(&self) -> u32 {
        !self.state
    }
}

impl Default for Crc32 {
    fn default() -> Self {
        Self::new()
    }
}

/// Writer that tracks a running CRC32 of everything written through it.
pub struct CheckedWriter<W: Write> {
    inner: W,
    crc: Crc32,
}

impl<W: Write> CheckedWriter<W> {
    pub fn new(inner: W) -> Self {
        CheckedWriter {
            inner,
            crc: Crc32::new(),
        }
    }

    pub fn write_all(&mut self, bytes: &[u8]) -> Result<()> {
        self.crc.update(bytes);
        self.inner.write_all(bytes)?;
        Ok(())
    }

    pub fn write_u8(&mut self, v: u8) -> Result<()> {
        self.write_all(&[v])
    }

    pub fn write_u32(&mut self, v: u32) -> Result<()> {
        self.write_all(&v.to_le_bytes())
    }

    pub fn write_u64(&mut self, v: u64) -> Result<()> {
        self.write_all(&v.to_le_bytes())
    }

    pub fn write_f32(&mut self, v: f32) -> Result<()> {
        self.write_all(&v.to_le_bytes())
    }

    /// Appends the CRC32 of everything written so far and flushes.
    pub fn finish_with_crc(mut self) -> Result<()> {
        let crc = self.crc.finish();
        self.inner.write_all(&crc.to_le_bytes())?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn flush_without_crc(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Reader that tracks section names for error reporting and a running CRC32.
pub struct CheckedReader<R: Read> {
    inner: R,
    crc: Crc32,
    section: &'static str,
}

impl<R: Read> CheckedReader<R> {
    pub fn new(inner: R) -> Self {
        CheckedReader {
            inner,
            crc: Crc32::new(),
            section: "header",
        }
    }

    pub fn set_section(&mut self, section: &'static str) {
        self.section = section;
    }

    pub fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::corrupt(self.section, "unexpected end of file")
            } else {
                Error::Io(e)
            }
        })?;
        self.crc.update(buf);
        Ok(())
    }

    pub fn read_u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.read_exact(&mut b)?;
        Ok(b[0])
    }

    pub fn read_u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn read_u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn read_f32(&mut self) -> Result<f32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let mut got = [0u8; 4];
        self.read_exact(&mut got)?;
        if &got != magic {
            return Err(Error::corrupt(
                self.section,
                format!(
                    "bad magic: expected {:?}, got {:?}",
                    String::from_utf8_lossy(magic),
                    String::from_utf8_lossy(&got)
                ),
            ));
        }
        Ok(())
    }

    pub fn expect_version(&mut self, version: u32) -> Result<()> {
        let got = self.read_u32()?;
        if got != version {
            return Err(Error::corrupt(
                self.section,
                format!("unsupported version {got}, expected {version}"),
            ));
        }
        Ok(())
    }

    /// Requires end-of-file at the current position (for formats without a
    /// checksum footer).
    pub fn expect_eof(mut self, section: &'static str) -> Result<()> {
        let mut extra = [0u8; 1];
        match self.inner.read(&mut extra)? {
            0 => Ok(()),
            _ => Err(Error::corrupt(section, "trailing bytes after last record")),
        }
    }

    /// Reads the trailing CRC32, verifies it against the bytes consumed so
    /// far, and checks that the file ends here.
    pub fn finish_with_crc(mut self) -> Result<()> {
        let expected = self.crc.finish();
        self.section = "checksum";
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::corrupt("checksum", "unexpected end of file")
            } else {
                Error::Io(e)
            }
        })?;
        let stored = u32::from_le_bytes(b);
        if stored != expected {
            return Err(Error::corrupt(
                "checksum",
                format!("crc mismatch: stored {stored:#010x}, computed {expected:#010x}"),
            ));
        }
        let mut extra = [0u8; 1];
        match self.inner.read(&mut extra)? {
            0 => Ok(()),
            _ => Err(Error::corrupt("checksum", "trailing bytes after checksum")),
        }
    }
}
