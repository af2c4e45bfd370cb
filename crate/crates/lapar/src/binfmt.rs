//! Little-endian primitives shared by the checkpoint and dictionary files.

use crate::error::{format_err, Result};

pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4], version: u16) -> Self {
        let mut buf = magic.to_vec();
        buf.extend_from_slice(&version.to_le_bytes());
        Self { buf }
    }

    pub fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("length fits in u32");
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len());
        self.buf.extend_from_slice(b);
    }

    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic, version and trailing CRC; the reader starts after the
    /// version field.
    pub fn open(bytes: &'a [u8], magic: &[u8; 4], version: u16, what: &str) -> Result<Self> {
        if bytes.len() < 10 {
            return Err(format_err!("{what}: file truncated ({} bytes)", bytes.len()));
        }
        if &bytes[..4] != magic {
            return Err(format_err!(
                "{what}: bad magic {:?}",
                String::from_utf8_lossy(&bytes[..4])
            ));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let found = u16::from_le_bytes([bytes[4], bytes[5]]);
        let crc = crc32fast::hash(body);
        if stored != crc {
            return Err(format_err!(
                "{what}: checksum mismatch (stored {stored:08x}, computed {crc:08x}); file truncated or corrupted"
            ));
        }
        if found != version {
            return Err(format_err!(
                "{what}: unsupported format version {found} (expected {version})"
            ));
        }
        Ok(Self { buf: body, pos: 6 })
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(format_err!(
                "unexpected end of data at byte {} (need {n} more)",
                self.pos
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()?;
        self.take(n)
    }

    pub fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| format_err!("invalid UTF-8 at byte {}", self.pos))
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(format_err!("{} trailing bytes", self.buf.len() - self.pos));
        }
        Ok(())
    }
}
