//! Reuse index files.
//!
//! ```text
//! "MORI" | u32 version = 1 | u8 strategy (1 = S1, 2 = S2)
//! | u64 model fingerprint | u32 K | u32 n | u32 heads | u64 doc_count
//! | offset table, per doc: u16 id_len, id bytes, u64 absolute offset
//! | records, per doc: u32 d, payload f64
//! ```
//!
//! The S1 payload is `D` row-major; the S2 payload is, for each block in
//! order, its keys then its values, head-major. Records are written in
//! ascending id order. [`IndexReader`] fetches single records without
//! reading the rest of the file.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use mores_core::reuse::{DocRecord, IndexShape, ReuseIndex, Strategy};

use crate::bytes::{decode_f64s, expect_magic, put_f64s, put_u16, put_u32, put_u64, Reader};
use crate::error::{Error, FormatError, Result};

pub const MAGIC: [u8; 4] = *b"MORI";
pub const VERSION: u32 = 1;
/// Bytes before the offset table.
pub const HEADER_BYTES: usize = 4 + 4 + 1 + 8 + 4 + 4 + 4 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IndexHeader {
    pub strategy: Strategy,
    pub fingerprint: u64,
    pub shape: IndexShape,
    pub doc_count: u64,
}

fn put_header(out: &mut Vec<u8>, h: &IndexHeader) {
    out.extend_from_slice(&MAGIC);
    put_u32(out, VERSION);
    out.push(h.strategy.code());
    put_u64(out, h.fingerprint);
    put_u32(out, h.shape.blocks as u32);
    put_u32(out, h.shape.hidden as u32);
    put_u32(out, h.shape.heads as u32);
    put_u64(out, h.doc_count);
}

fn read_header(r: &mut Reader<'_>) -> Result<IndexHeader, FormatError> {
    expect_magic(r, MAGIC)?;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(FormatError::Version(version));
    }
    let code = r.u8("strategy")?;
    let strategy = Strategy::from_code(code).ok_or(FormatError::Strategy(code))?;
    let fingerprint = r.u64("fingerprint")?;
    let blocks = r.u32("block count")? as usize;
    let hidden = r.u32("hidden size")? as usize;
    let heads = r.u32("heads")? as usize;
    let doc_count = r.u64("document count")?;
    if heads == 0 || !hidden.is_multiple_of(heads) {
        return Err(FormatError::DimOverflow(vec![hidden as u64, heads as u64]));
    }
    Ok(IndexHeader {
        strategy,
        fingerprint,
        shape: IndexShape { blocks, hidden, heads },
        doc_count,
    })
}

pub fn header_of(index: &ReuseIndex) -> IndexHeader {
    IndexHeader {
        strategy: index.strategy(),
        fingerprint: index.fingerprint(),
        shape: index.shape(),
        doc_count: index.len() as u64,
    }
}

pub fn to_bytes(index: &ReuseIndex) -> Vec<u8> {
    let mut out = Vec::new();
    put_header(&mut out, &header_of(index));
    let table: usize = index.iter().map(|(id, _)| 2 + id.len() + 8).sum();
    let mut offset = (HEADER_BYTES + table) as u64;
    for (id, rec) in index.iter() {
        put_u16(&mut out, id.len() as u16);
        out.extend_from_slice(id.as_bytes());
        put_u64(&mut out, offset);
        offset += 4 + rec.payload_bytes() as u64;
    }
    for (_, rec) in index.iter() {
        put_u32(&mut out, rec.len as u32);
        put_f64s(&mut out, rec.payload_values());
    }
    out
}

fn record_bytes(h: &IndexHeader, len: usize) -> Option<usize> {
    h.shape.payload_floats(h.strategy, len).checked_mul(8)
}

pub fn from_bytes(bytes: &[u8]) -> Result<ReuseIndex, FormatError> {
    let mut r = Reader::new(bytes);
    let h = read_header(&mut r)?;
    let mut table = Vec::new();
    for _ in 0..h.doc_count {
        let len = r.u16("id length")? as usize;
        let id = std::str::from_utf8(r.take(len, "document id")?).map_err(|_| FormatError::Name)?;
        table.push((id.to_string(), r.u64("offset")?));
    }
    let mut index = ReuseIndex::new(h.strategy, h.fingerprint, h.shape);
    for (id, offset) in table {
        if offset != r.pos() as u64 {
            return Err(FormatError::Offset { id, offset });
        }
        let len = r.u32("record length")? as usize;
        let n = record_bytes(&h, len).ok_or(FormatError::DimOverflow(vec![len as u64]))?;
        let values = decode_f64s(r.take(n, "record payload")?);
        let rec = DocRecord::from_values(h.strategy, len, &h.shape, values)
            .map_err(|_| FormatError::DimOverflow(vec![len as u64]))?;
        index
            .insert(id.clone(), rec)
            .map_err(|_| FormatError::Offset { id, offset })?;
    }
    if r.remaining() != 0 {
        return Err(FormatError::Trailing(r.remaining()));
    }
    Ok(index)
}

pub fn save_index(index: &ReuseIndex, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(index)).map_err(Error::io(path))
}

pub fn load_index(path: &Path) -> Result<ReuseIndex> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    from_bytes(&bytes).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

/// Random-access reader: opening reads the header and offset table, and
/// [`get`](Self::get) reads exactly one record.
pub struct IndexReader {
    path: PathBuf,
    file: File,
    file_len: u64,
    header: IndexHeader,
    offsets: BTreeMap<String, u64>,
    bytes_read: u64,
}

impl IndexReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(Error::io(path))?;
        let file_len = file.metadata().map_err(Error::io(path))?.len();
        let mut me = IndexReader {
            path: path.to_path_buf(),
            file,
            file_len,
            header: IndexHeader {
                strategy: Strategy::S1,
                fingerprint: 0,
                shape: IndexShape {
                    blocks: 0,
                    hidden: 0,
                    heads: 1,
                },
                doc_count: 0,
            },
            offsets: BTreeMap::new(),
            bytes_read: 0,
        };
        let head = me.read_exact(HEADER_BYTES, "header")?;
        me.header = read_header(&mut Reader::new(&head)).map_err(|e| me.format(e))?;
        for _ in 0..me.header.doc_count {
            let len = u16::from_le_bytes(me.read_exact(2, "id length")?.try_into().expect("2 bytes")) as usize;
            let entry = me.read_exact(len + 8, "offset table")?;
            let id = std::str::from_utf8(&entry[..len]).map_err(|_| me.format(FormatError::Name))?;
            let offset = u64::from_le_bytes(entry[len..].try_into().expect("8 bytes"));
            me.offsets.insert(id.to_string(), offset);
        }
        Ok(me)
    }

    fn format(&self, source: FormatError) -> Error {
        Error::Format {
            path: self.path.clone(),
            source,
        }
    }

    fn read_exact(&mut self, n: usize, what: &'static str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.file.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                self.format(FormatError::Truncated(what))
            } else {
                Error::Io {
                    path: self.path.clone(),
                    source: e,
                }
            }
        })?;
        self.bytes_read += n as u64;
        Ok(buf)
    }

    pub fn header(&self) -> &IndexHeader {
        &self.header
    }

    /// Bytes consumed from the file so far.
    pub fn bytes_read(&self) -> u64 {
        self.bytes_read
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.offsets.keys().map(String::as_str)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.offsets.contains_key(id)
    }

    pub fn get(&mut self, id: &str) -> Result<Option<DocRecord>> {
        let Some(&offset) = self.offsets.get(id) else {
            return Ok(None);
        };
        if offset + 4 > self.file_len {
            return Err(self.format(FormatError::Offset { id: id.into(), offset }));
        }
        self.file.seek(SeekFrom::Start(offset)).map_err(Error::io(&self.path))?;
        let len = u32::from_le_bytes(self.read_exact(4, "record length")?.try_into().expect("4 bytes")) as usize;
        let n = record_bytes(&self.header, len)
            .filter(|&n| offset + 4 + n as u64 <= self.file_len)
            .ok_or_else(|| self.format(FormatError::Offset { id: id.into(), offset }))?;
        let values = decode_f64s(&self.read_exact(n, "record payload")?);
        let rec = DocRecord::from_values(self.header.strategy, len, &self.header.shape, values)?;
        Ok(Some(rec))
    }
}
