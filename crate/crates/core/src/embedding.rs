//! Dense embedding matrices and the EMB1 binary format.
//!
//! EMB1 layout (all integers little-endian):
//!
//! | bytes  | field                                   |
//! |--------|-----------------------------------------|
//! | 0..4   | magic `b"EMB1"`                         |
//! | 4..8   | version `u32` = 1                       |
//! | 8..12  | dim `u32`                               |
//! | 12..20 | count `u64`                             |
//! | 20..   | count × dim `f32`, row-major            |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, Result};

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";
pub const EMB1_VERSION: u32 = 1;
pub const EMB1_HEADER_LEN: usize = 20;

/// Row-major matrix of finite `f32` vectors, one row per corpus item.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Builds a matrix from row-major data. `data.len()` must be a multiple
    /// of `dim` and every value finite.
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("dim must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "data length {} is not a multiple of dim {dim}",
                data.len()
            )));
        }
        check_finite(dim, &data)?;
        Ok(Self { dim, data })
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new())
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            data,
        }
    }

    /// Serializes to EMB1.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let dim = u32::try_from(self.dim)
            .map_err(|_| Error::Shape(format!("dim {} exceeds u32", self.dim)))?;
        w.write_all(EMB1_MAGIC)?;
        w.write_all(&EMB1_VERSION.to_le_bytes())?;
        w.write_all(&dim.to_le_bytes())?;
        w.write_all(&(self.count() as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Parses one EMB1 block, consuming exactly its bytes from `r`.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; EMB1_HEADER_LEN];
        let got = read_up_to(&mut r, &mut header)?;
        if got < 4 || &header[..4] != EMB1_MAGIC {
            return Err(Error::BadMagic {
                expected: "EMB1",
                found: String::from_utf8_lossy(&header[..got.min(4)]).into_owned(),
            });
        }
        if got < EMB1_HEADER_LEN {
            return Err(Error::Truncated {
                what: "EMB1 header",
                expected: EMB1_HEADER_LEN as u64,
                found: got as u64,
            });
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != EMB1_VERSION {
            return Err(Error::UnsupportedVersion {
                format: "EMB1",
                expected: EMB1_VERSION,
                found: version,
            });
        }
        let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(header[12..20].try_into().unwrap());
        if dim == 0 {
            return Err(Error::Shape("EMB1 header declares dim 0".into()));
        }
        let expected = count
            .checked_mul(dim as u64)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Shape("EMB1 header size overflows".into()))?;

        let mut bytes = Vec::new();
        r.take(expected).read_to_end(&mut bytes)?;
        if (bytes.len() as u64) < expected {
            return Err(Error::Truncated {
                what: "EMB1 payload",
                expected,
                found: bytes.len() as u64,
            });
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        check_finite(dim, &data)?;
        Ok(Self { dim, data })
    }
}

fn check_finite(dim: usize, data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite {
            row: i / dim,
            col: i % dim,
        }),
        None => Ok(()),
    }
}

/// Like `read_exact`, but reports how many bytes were available instead of
/// failing on a short read.
pub(crate) fn read_up_to<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

pub(crate) fn ensure_eof<R: Read>(mut r: R, what: &'static str) -> Result<()> {
    let mut probe = [0u8; 1];
    if read_up_to(&mut r, &mut probe)? != 0 {
        return Err(Error::TrailingData(what));
    }
    Ok(())
}

/// Writes `matrix` to `path` in EMB1 format.
pub fn write_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io_at(path, e))?;
    let mut w = BufWriter::new(file);
    matrix.write_to(&mut w)?;
    w.flush().map_err(|e| Error::io_at(path, e))?;
    Ok(())
}

/// Reads an EMB1 file. Trailing bytes after the payload are rejected.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
    let mut r = BufReader::new(file);
    let m = EmbeddingMatrix::read_from(&mut r)?;
    ensure_eof(r, "EMB1 payload")?;
    Ok(m)
}
