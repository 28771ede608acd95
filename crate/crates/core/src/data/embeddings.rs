//! Id-keyed embedding tables and the DUPE binary format.
//!
//! Layout (little-endian):
//!
//! ```text
//! "DUPE"  u16 version=1  u32 count  u32 dim          14-byte header
//! repeat count times:
//!     u16 id_len  [id_len bytes UTF-8]  [dim x f32]
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"DUPE";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 14;

/// Dense vectors of one domain's users or items, in insertion order.
///
/// Values are stored as `f32`, the precision of the on-disk format.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: IndexMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dim must be positive".into(),
            ));
        }
        if dim > u32::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "embedding dim {dim} exceeds u32"
            )));
        }
        Ok(Self {
            dim,
            entries: IndexMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Data("empty entity id".into()));
        }
        if id.len() > u16::MAX as usize {
            return Err(Error::Data(format!("id longer than {} bytes", u16::MAX)));
        }
        if vector.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        if let Some(pos) = vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at index {pos} for id {id:?}"
            )));
        }
        if self.entries.contains_key(&id) {
            return Err(Error::Data(format!("duplicate id {id:?}")));
        }
        self.entries.insert(id, vector);
        Ok(())
    }

    /// Inserts a 64-bit vector, rounding to the stored precision.
    pub fn insert_f64(&mut self, id: impl Into<String>, vector: &[f64]) -> Result<()> {
        self.insert(id, vector.iter().map(|&v| v as f32).collect())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn get_f64(&self, id: &str) -> Option<Vec<f64>> {
        self.get(id)
            .map(|v| v.iter().map(|&x| f64::from(x)).collect())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

pub fn save_embeddings(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let file = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut out = BufWriter::new(file);
    out.write_all(&encode(table))
        .map_err(|e| Error::io(ctx(), e))?;
    out.flush().map_err(|e| Error::io(ctx(), e))
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode(&bytes)
}

pub fn encode(table: &EmbeddingTable) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + table.len() * (8 + 4 * table.dim));
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(table.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(table.dim as u32).to_le_bytes());
    for (id, vector) in table.iter() {
        buf.extend_from_slice(&(id.len() as u16).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
        for v in vector {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<EmbeddingTable> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected \"DUPE\""));
    }
    let version = cur.u16("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let count = cur.u32("record count")? as usize;
    let dim = cur.u32("dim")? as usize;
    if dim == 0 {
        return Err(Error::format(10, "dim must be positive"));
    }
    let mut table = EmbeddingTable {
        dim,
        entries: IndexMap::new(),
    };
    for record in 0..count {
        let record_start = cur.pos as u64;
        let id_len = cur.u16("id length")? as usize;
        let id_offset = cur.pos as u64;
        let id_bytes = cur.take(id_len, "id")?;
        if id_len == 0 {
            return Err(Error::format(
                record_start,
                format!("record {record}: empty id"),
            ));
        }
        let id = std::str::from_utf8(id_bytes)
            .map_err(|_| Error::format(id_offset, format!("record {record}: id is not UTF-8")))?;
        let mut vector = Vec::with_capacity(dim);
        for _ in 0..dim {
            let offset = cur.pos as u64;
            let v = f32::from_le_bytes(cur.take(4, "vector")?.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format(
                    offset,
                    format!("record {record}: non-finite float"),
                ));
            }
            vector.push(v);
        }
        if table.entries.contains_key(id) {
            return Err(Error::format(record_start, format!("duplicate id {id:?}")));
        }
        table.entries.insert(id.to_owned(), vector);
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(
            cur.pos as u64,
            "trailing bytes after last record",
        ));
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_entry_table() -> EmbeddingTable {
        let mut t = EmbeddingTable::new(2).unwrap();
        t.insert("u1", vec![1.0, 0.0]).unwrap();
        t.insert("u2", vec![0.0, 1.0]).unwrap();
        t
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = EmbeddingTable::new(128).unwrap();
        let bytes = encode(&t);
        assert_eq!(bytes.len(), HEADER_LEN);
        let back = decode(&bytes).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 128);
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&two_entry_table());
        assert_eq!(&bytes[..4], b"DUPE");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[2, 0, 0, 0]);
        assert_eq!(&bytes[10..14], &[2, 0, 0, 0]);
        // u16 len + "u1" + 2 f32
        assert_eq!(&bytes[14..18], &[2, 0, b'u', b'1']);
        assert_eq!(&bytes[18..22], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), HEADER_LEN + 2 * (2 + 2 + 8));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.dupe");
        let t = two_entry_table();
        save_embeddings(&t, &path).unwrap();
        let back = load_embeddings(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.ids().collect::<Vec<_>>(), ["u1", "u2"]);
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(EmbeddingTable::new(0).is_err());
    }

    #[test]
    fn duplicate_id_is_format_error() {
        let mut bytes = encode(&two_entry_table());
        // rename "u2" to "u1"
        let second = HEADER_LEN + 12 + 3;
        bytes[second] = b'1';
        match decode(&bytes) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, (HEADER_LEN + 12) as u64);
                assert!(message.contains("duplicate"));
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(&two_entry_table());
        bytes[0] = b'X';
        assert!(matches!(
            decode(&bytes),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn truncated_record_reports_offset() {
        let bytes = encode(&two_entry_table());
        let cut = &bytes[..bytes.len() - 3];
        match decode(cut) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, (bytes.len() - 4) as u64),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_float_rejected() {
        let mut bytes = encode(&two_entry_table());
        let at = HEADER_LEN + 4;
        bytes[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Format { offset, .. }) if offset == at as u64));
    }

    #[test]
    fn insert_validates() {
        let mut t = EmbeddingTable::new(2).unwrap();
        assert!(t.insert("", vec![0.0, 0.0]).is_err());
        assert!(t.insert("a", vec![0.0]).is_err());
        assert!(t.insert("a", vec![f32::INFINITY, 0.0]).is_err());
        t.insert("a", vec![0.0, 0.0]).unwrap();
        assert!(t.insert("a", vec![1.0, 0.0]).is_err());
    }
}
