//! Native on-disk format.
//!
//! All integers are little-endian.
//!
//! ```text
//! header (22 bytes)
//!   magic     "PSVS"
//!   version   u16 = 1
//!   dim       u32
//!   count     u64
//!   crc32c    u32   over bytes 4..18 followed by every byte after the header
//! record (repeated `count` times)
//!   id_len u16, id
//!   uri_len u32, uri
//!   tag_count u16, (key_len u16, key, val_len u16, val)*
//!   dim × f32
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::path::Path;

use super::{ImageRecord, StoreError};
use crate::embedding::{EmbeddingError, EmbeddingVector};

pub const MAGIC: &[u8; 4] = b"PSVS";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 22;
const CRC_OFFSET: usize = 18;

/// Header facts of a validated store file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FileSummary {
    pub version: u16,
    pub dim: usize,
    pub count: u64,
    pub checksum: u32,
    pub bytes: u64,
}

struct CrcWriter<W> {
    inner: W,
    crc: u32,
}

impl<W: Write> CrcWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        self.crc = crc32c::crc32c_append(self.crc, bytes);
        self.inner.write_all(bytes)
    }
}

pub(super) fn save(records: &[ImageRecord], dim: usize, path: &Path) -> Result<(), StoreError> {
    let dim32 = u32::try_from(dim).map_err(|_| StoreError::InvalidDimension(dim))?;
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_owned(),
    });
    let file = File::create(&tmp)?;
    let mut out = CrcWriter {
        inner: BufWriter::with_capacity(1 << 20, file),
        crc: 0,
    };

    out.inner.write_all(MAGIC)?;
    out.put(&FORMAT_VERSION.to_le_bytes())?;
    out.put(&dim32.to_le_bytes())?;
    out.put(&(records.len() as u64).to_le_bytes())?;
    // Placeholder, patched once the body checksum is known.
    out.inner.write_all(&0u32.to_le_bytes())?;

    let mut payload = Vec::with_capacity(dim * 4);
    for r in records {
        out.put(&(r.id.len() as u16).to_le_bytes())?;
        out.put(r.id.as_bytes())?;
        out.put(&(r.uri.len() as u32).to_le_bytes())?;
        out.put(r.uri.as_bytes())?;
        out.put(&(r.tags.len() as u16).to_le_bytes())?;
        for (k, v) in &r.tags {
            out.put(&(k.len() as u16).to_le_bytes())?;
            out.put(k.as_bytes())?;
            out.put(&(v.len() as u16).to_le_bytes())?;
            out.put(v.as_bytes())?;
        }
        payload.clear();
        for v in r.embedding.values() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        out.put(&payload)?;
    }

    let crc = out.crc;
    let mut file = out.inner.into_inner().map_err(|e| e.into_error())?;
    file.seek(SeekFrom::Start(CRC_OFFSET as u64))?;
    file.write_all(&crc.to_le_bytes())?;
    file.sync_all()?;
    drop(file);
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let end = self.pos.checked_add(n).ok_or(StoreError::TruncatedFile)?;
        let s = self.buf.get(self.pos..end).ok_or(StoreError::TruncatedFile)?;
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, StoreError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, len: usize, what: &str) -> Result<String, StoreError> {
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| StoreError::Corrupt(format!("{what} is not valid UTF-8")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

struct Header {
    dim: usize,
    count: u64,
    stored_crc: u32,
}

fn read_header(buf: &[u8]) -> Result<Header, StoreError> {
    let prefix = &buf[..buf.len().min(MAGIC.len())];
    if prefix != &MAGIC[..prefix.len()] {
        return Err(StoreError::BadMagic);
    }
    if buf.len() < HEADER_LEN {
        return Err(StoreError::TruncatedFile);
    }
    let mut c = Cursor { buf, pos: 4 };
    let version = c.u16()?;
    if version != FORMAT_VERSION {
        return Err(StoreError::UnsupportedVersion(version));
    }
    let dim = c.u32()? as usize;
    let count = c.u64()?;
    let stored_crc = c.u32()?;
    Ok(Header {
        dim,
        count,
        stored_crc,
    })
}

fn body_crc(buf: &[u8]) -> u32 {
    let crc = crc32c::crc32c(&buf[4..CRC_OFFSET]);
    crc32c::crc32c_append(crc, &buf[HEADER_LEN..])
}

/// Walks record boundaries without decoding, to tell truncation apart from
/// in-place corruption once the checksum has failed.
fn walk(buf: &[u8], header: &Header) -> Result<(), StoreError> {
    let mut c = Cursor {
        buf,
        pos: HEADER_LEN,
    };
    let payload = header.dim.checked_mul(4).ok_or(StoreError::TruncatedFile)?;
    for _ in 0..header.count {
        let n = c.u16()? as usize;
        c.take(n)?;
        let n = c.u32()? as usize;
        c.take(n)?;
        for _ in 0..c.u16()? {
            let n = c.u16()? as usize;
            c.take(n)?;
            let n = c.u16()? as usize;
            c.take(n)?;
        }
        c.take(payload)?;
    }
    Ok(())
}

fn validate(buf: &[u8]) -> Result<Header, StoreError> {
    let header = read_header(buf)?;
    let actual = body_crc(buf);
    if actual != header.stored_crc {
        walk(buf, &header)?;
        return Err(StoreError::ChecksumMismatch {
            expected: header.stored_crc,
            actual,
        });
    }
    if header.dim == 0 {
        return Err(StoreError::Corrupt("dimension 0".into()));
    }
    Ok(header)
}

pub(super) fn open(path: &Path) -> Result<(usize, Vec<ImageRecord>), StoreError> {
    let buf = fs::read(path)?;
    let header = validate(&buf)?;
    let dim = header.dim;
    let mut c = Cursor {
        buf: &buf,
        pos: HEADER_LEN,
    };
    // Minimum record size bounds the allocation when `count` is hostile.
    let min_record = 2 + 4 + 2 + dim * 4;
    let cap = (header.count as usize).min(c.remaining() / min_record.max(1));
    let mut records = Vec::with_capacity(cap);
    let mut values = Vec::with_capacity(dim);
    for _ in 0..header.count {
        let n = c.u16()? as usize;
        let id = c.string(n, "record id")?;
        let n = c.u32()? as usize;
        let uri = c.string(n, "uri")?;
        let mut record_tags = std::collections::BTreeMap::new();
        for _ in 0..c.u16()? {
            let n = c.u16()? as usize;
            let k = c.string(n, "tag key")?;
            let n = c.u16()? as usize;
            let v = c.string(n, "tag value")?;
            record_tags.insert(k, v);
        }
        values.clear();
        for chunk in c.take(dim * 4)?.chunks_exact(4) {
            values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        let embedding = EmbeddingVector::new(values.clone()).map_err(|e| match e {
            EmbeddingError::ZeroVector => StoreError::Corrupt(format!("record {id:?} has a zero vector")),
            other => StoreError::Corrupt(format!("record {id:?}: {other}")),
        })?;
        records.push(ImageRecord {
            id,
            uri,
            embedding,
            tags: record_tags,
        });
    }
    if c.remaining() != 0 {
        return Err(StoreError::Corrupt(format!(
            "{} trailing bytes after last record",
            c.remaining()
        )));
    }
    Ok((dim, records))
}

/// Fully validates the file at `path` and reports its header.
pub fn inspect(path: impl AsRef<Path>) -> Result<FileSummary, StoreError> {
    let buf = fs::read(path.as_ref())?;
    let header = validate(&buf)?;
    walk(&buf, &header).map_err(|_| StoreError::Corrupt("record layout does not match header".into()))?;
    Ok(FileSummary {
        version: FORMAT_VERSION,
        dim: header.dim,
        count: header.count,
        checksum: header.stored_crc,
        bytes: buf.len() as u64,
    })
}
