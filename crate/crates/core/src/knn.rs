//! Exact nearest-neighbor search over code vectors.
//!
//! [`FlatIndex`] scans every stored vector. Results are ordered by
//! ascending `(distance, id)`, so ties resolve the same way everywhere.
//!
//! IDX1 layout (little-endian): magic `b"IDX1"`, version `u32` = 1, metric
//! `u8` (0 = squared-l2, 1 = l2, 2 = cosine), an embedded EMB1 block, then
//! one `u32` length-prefixed UTF-8 id per row.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::check_unique;
use crate::embedding::{ensure_eof, read_up_to, EmbeddingMatrix};
use crate::{Error, Result};

pub const IDX1_MAGIC: &[u8; 4] = b"IDX1";
pub const IDX1_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    SquaredL2,
    L2,
    /// `1 − cos(q, v)`; a zero vector has cosine distance 1 to everything.
    Cosine,
}

impl Metric {
    pub fn code(self) -> u8 {
        match self {
            Metric::SquaredL2 => 0,
            Metric::L2 => 1,
            Metric::Cosine => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Metric::SquaredL2),
            1 => Ok(Metric::L2),
            2 => Ok(Metric::Cosine),
            other => Err(Error::BadMetric(other)),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::SquaredL2 => "squared-l2",
            Metric::L2 => "l2",
            Metric::Cosine => "cosine",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared-l2" => Ok(Metric::SquaredL2),
            "l2" => Ok(Metric::L2),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::InvalidConfig(format!(
                "unknown metric {other:?} (expected squared-l2, l2 or cosine)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: String,
    pub distance: f64,
    /// 1-based.
    pub rank: usize,
}

pub fn sq_l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Immutable exact index. Safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    vectors: EmbeddingMatrix,
    ids: Vec<String>,
    metric: Metric,
    norms: Vec<f64>,
}

pub fn build_index(matrix: EmbeddingMatrix, ids: Vec<String>, metric: Metric) -> Result<FlatIndex> {
    if ids.len() != matrix.count() {
        return Err(Error::CountMismatch {
            expected: matrix.count(),
            found: ids.len(),
        });
    }
    check_unique(ids.iter().map(String::as_str))?;
    let norms = match metric {
        Metric::Cosine => matrix.rows().map(norm).collect(),
        _ => Vec::new(),
    };
    Ok(FlatIndex {
        vectors: matrix,
        ids,
        metric,
        norms,
    })
}

struct Candidate<'a> {
    distance: f64,
    id: &'a str,
}

impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then_with(|| self.id.cmp(other.id))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

impl FlatIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.dim()
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &EmbeddingMatrix {
        &self.vectors
    }

    /// Distance from `query` to stored row `row` under the index metric.
    pub fn distance_to_row(&self, query: &[f32], query_norm: f64, row: usize) -> f64 {
        let v = self.vectors.row(row);
        match self.metric {
            Metric::SquaredL2 => sq_l2(query, v),
            Metric::L2 => sq_l2(query, v).sqrt(),
            Metric::Cosine => {
                let denom = query_norm * self.norms[row];
                if denom == 0.0 {
                    1.0
                } else {
                    (1.0 - dot(query, v) / denom).max(0.0)
                }
            }
        }
    }

    fn check_query(&self, query: &[f32]) -> Result<()> {
        if query.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: query.len(),
            });
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("query has non-finite values".into()));
        }
        Ok(())
    }

    /// The `min(n, len)` nearest items, ascending by `(distance, id)`.
    /// Equivalent to sorting a full scan; uses a bounded heap internally.
    pub fn search(&self, query: &[f32], n: usize) -> Result<Vec<SearchHit>> {
        if n == 0 {
            return Err(Error::InvalidInput("n must be at least 1".into()));
        }
        self.check_query(query)?;
        let query_norm = if self.metric == Metric::Cosine { norm(query) } else { 0.0 };
        let keep = n.min(self.len());
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(keep + 1);
        for (row, id) in self.ids.iter().enumerate() {
            let c = Candidate {
                distance: self.distance_to_row(query, query_norm, row),
                id,
            };
            if heap.len() < keep {
                heap.push(c);
            } else if heap.peek().is_some_and(|worst| c < *worst) {
                heap.pop();
                heap.push(c);
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .enumerate()
            .map(|(i, c)| SearchHit {
                id: c.id.to_string(),
                distance: c.distance,
                rank: i + 1,
            })
            .collect())
    }

    /// One hit list per query row, in query order.
    pub fn batch_search(&self, queries: &EmbeddingMatrix, n: usize) -> Result<Vec<Vec<SearchHit>>> {
        if queries.dim() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: queries.dim(),
            });
        }
        queries.rows().map(|q| self.search(q, n)).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(IDX1_MAGIC)?;
        w.write_all(&IDX1_VERSION.to_le_bytes())?;
        w.write_all(&[self.metric.code()])?;
        self.vectors.write_to(&mut w)?;
        for id in &self.ids {
            let len = u32::try_from(id.len())
                .map_err(|_| Error::InvalidInput(format!("id of {} bytes is too long", id.len())))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 9];
        let got = read_up_to(&mut r, &mut header)?;
        if got < 4 || &header[..4] != IDX1_MAGIC {
            return Err(Error::BadMagic {
                expected: "IDX1",
                found: String::from_utf8_lossy(&header[..got.min(4)]).into_owned(),
            });
        }
        if got < header.len() {
            return Err(Error::Truncated {
                what: "IDX1 header",
                expected: header.len() as u64,
                found: got as u64,
            });
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != IDX1_VERSION {
            return Err(Error::UnsupportedVersion {
                format: "IDX1",
                expected: IDX1_VERSION,
                found: version,
            });
        }
        let metric = Metric::from_code(header[8])?;
        let vectors = EmbeddingMatrix::read_from(&mut r)?;
        let mut ids = Vec::with_capacity(vectors.count());
        for _ in 0..vectors.count() {
            let mut len = [0u8; 4];
            let got = read_up_to(&mut r, &mut len)?;
            if got < 4 {
                return Err(Error::Truncated {
                    what: "IDX1 id table",
                    expected: 4,
                    found: got as u64,
                });
            }
            let len = u32::from_le_bytes(len) as u64;
            let mut bytes = Vec::new();
            (&mut r).take(len).read_to_end(&mut bytes)?;
            if (bytes.len() as u64) < len {
                return Err(Error::Truncated {
                    what: "IDX1 id table",
                    expected: len,
                    found: bytes.len() as u64,
                });
            }
            ids.push(
                String::from_utf8(bytes)
                    .map_err(|_| Error::InvalidInput("IDX1 id is not valid UTF-8".into()))?,
            );
        }
        build_index(vectors, ids, metric)
    }
}

pub fn save_index(index: &FlatIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io_at(path, e))?;
    let mut w = BufWriter::new(file);
    index.write_to(&mut w)?;
    w.flush().map_err(|e| Error::io_at(path, e))?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<FlatIndex> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
    let mut r = BufReader::new(file);
    let index = FlatIndex::read_from(&mut r)?;
    ensure_eof(r, "IDX1 id table")?;
    Ok(index)
}
