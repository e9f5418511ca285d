//! Binary embedding files, dataset metadata and exact cosine scans.
//!
//! The on-disk layout is `"EMB1"`, a little-endian `u64` row count, a
//! little-endian `u32` dimension, then `count * dim` little-endian `f32`
//! values in row-major order.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";
const HEADER_LEN: usize = 4 + 8 + 4;

/// Rows processed per block in [`cosine_scan`].
pub const DEFAULT_SCAN_CHUNK: usize = 4096;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes {found:?}, expected \"EMB1\"")]
    BadMagic { found: [u8; 4] },
    #[error("file too short for header ({len} bytes)")]
    TruncatedHeader { len: usize },
    #[error("payload is {actual} bytes but header declares {count}x{dim} floats ({expected} bytes)")]
    Truncated {
        count: u64,
        dim: u32,
        expected: u64,
        actual: u64,
    },
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("row {row} has zero norm; cosine similarity is undefined")]
    ZeroNorm { row: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("data length {len} is not count {count} x dim {dim}")]
    Shape { len: usize, count: usize, dim: usize },
    #[error("matrix must be normalized before scanning")]
    NotNormalized,
    #[error("metadata line {line}: {message}")]
    Metadata { line: usize, message: String },
    #[error("metadata has {records} records but embeddings have {rows} rows")]
    RowCount { records: usize, rows: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EmbeddingError + '_ {
    move |source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Dense row-major `f32` matrix, one row per image.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    count: usize,
    dim: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl EmbeddingMatrix {
    pub fn new(count: usize, dim: usize, data: Vec<f32>) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        if data.len() != count * dim {
            return Err(EmbeddingError::Shape {
                len: data.len(),
                count,
                dim,
            });
        }
        Ok(Self {
            count,
            dim,
            data,
            normalized: false,
        })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, EmbeddingError> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(EmbeddingError::DimMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn empty(dim: usize) -> Result<Self, EmbeddingError> {
        Self::new(0, dim, Vec::new())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// New matrix made of the given rows, in order. Keeps the normalized flag.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self {
            count: rows.len(),
            dim: self.dim,
            data,
            normalized: self.normalized,
        }
    }

    /// Scales every row to unit Euclidean norm.
    pub fn normalize(mut self) -> Result<Self, EmbeddingError> {
        for (i, row) in self.data.chunks_exact_mut(self.dim).enumerate() {
            if let Some(col) = row.iter().position(|v| !v.is_finite()) {
                return Err(EmbeddingError::NonFinite { row: i, col });
            }
            let norm = row
                .iter()
                .map(|&v| f64::from(v) * f64::from(v))
                .sum::<f64>()
                .sqrt();
            if norm == 0.0 {
                return Err(EmbeddingError::ZeroNorm { row: i });
            }
            for v in row.iter_mut() {
                *v = (f64::from(*v) / norm) as f32;
            }
        }
        self.normalized = true;
        Ok(self)
    }

    /// Writes the matrix in the `EMB1` format.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_all(&(self.count as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
        let path = path.as_ref();
        let mut bytes = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        self.write_to(&mut bytes).map_err(io_err(path))?;
        std::fs::write(path, bytes).map_err(io_err(path))
    }

    /// Parses an `EMB1` byte buffer.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbeddingError> {
        if bytes.len() < 4 {
            return Err(EmbeddingError::TruncatedHeader { len: bytes.len() });
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
        if &magic != EMBEDDING_MAGIC {
            return Err(EmbeddingError::BadMagic { found: magic });
        }
        if bytes.len() < HEADER_LEN {
            return Err(EmbeddingError::TruncatedHeader { len: bytes.len() });
        }
        let count = u64::from_le_bytes(bytes[4..12].try_into().expect("length checked"));
        let dim = u32::from_le_bytes(bytes[12..16].try_into().expect("length checked"));
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        let payload = &bytes[HEADER_LEN..];
        let expected = count.checked_mul(u64::from(dim)).and_then(|n| n.checked_mul(4));
        if expected != Some(payload.len() as u64) {
            return Err(EmbeddingError::Truncated {
                count,
                dim,
                expected: expected.unwrap_or(u64::MAX),
                actual: payload.len() as u64,
            });
        }
        let dim = dim as usize;
        let mut data = Vec::with_capacity(payload.len() / 4);
        for (k, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("chunks_exact"));
            if !v.is_finite() {
                return Err(EmbeddingError::NonFinite {
                    row: k / dim,
                    col: k % dim,
                });
            }
            data.push(v);
        }
        Self::new(count as usize, dim, data)
    }
}

/// Reads an `EMB1` file. The result is not normalized.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix, EmbeddingError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    EmbeddingMatrix::from_bytes(&bytes)
}

pub fn normalize(m: EmbeddingMatrix) -> Result<EmbeddingMatrix, EmbeddingError> {
    m.normalize()
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// A row of the matrix together with its similarity to a probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanHit {
    pub row: usize,
    pub similarity: f64,
}

/// Orders hits by similarity descending, then by row ascending.
pub(crate) fn sort_hits(hits: &mut [ScanHit]) {
    hits.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then(a.row.cmp(&b.row))
    });
}

/// All rows with `row . q >= threshold`, best first.
pub fn cosine_scan(
    m: &EmbeddingMatrix,
    q: &[f32],
    threshold: f64,
) -> Result<Vec<ScanHit>, EmbeddingError> {
    cosine_scan_chunked(m, q, threshold, DEFAULT_SCAN_CHUNK)
}

pub fn cosine_scan_chunked(
    m: &EmbeddingMatrix,
    q: &[f32],
    threshold: f64,
    chunk_rows: usize,
) -> Result<Vec<ScanHit>, EmbeddingError> {
    if !m.normalized {
        return Err(EmbeddingError::NotNormalized);
    }
    if q.len() != m.dim {
        return Err(EmbeddingError::DimMismatch {
            expected: m.dim,
            actual: q.len(),
        });
    }
    let chunk_rows = chunk_rows.max(1);
    let mut hits = Vec::new();
    for (c, block) in m.data.chunks(chunk_rows * m.dim).enumerate() {
        let base = c * chunk_rows;
        hits.extend(
            block
                .chunks_exact(m.dim)
                .enumerate()
                .map(|(i, row)| ScanHit {
                    row: base + i,
                    similarity: dot(row, q),
                })
                .filter(|h| h.similarity >= threshold),
        );
    }
    sort_hits(&mut hits);
    Ok(hits)
}

/// One image of the audited dataset. `row` is assigned from file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    #[serde(default)]
    pub url: String,
    #[serde(default)]
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ocr_text: Option<String>,
    #[serde(skip)]
    pub row: usize,
}

/// Reads newline-delimited JSON metadata. Blank lines are skipped.
pub fn load_metadata(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>, EmbeddingError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    parse_metadata(BufReader::new(file))
}

pub fn parse_metadata<R: BufRead>(reader: R) -> Result<Vec<ImageRecord>, EmbeddingError> {
    let mut out: Vec<ImageRecord> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EmbeddingError::Metadata {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: ImageRecord =
            serde_json::from_str(&line).map_err(|e| EmbeddingError::Metadata {
                line: i + 1,
                message: e.to_string(),
            })?;
        if !seen.insert(rec.id.clone()) {
            return Err(EmbeddingError::Metadata {
                line: i + 1,
                message: format!("duplicate id {:?}", rec.id),
            });
        }
        rec.row = out.len();
        out.push(rec);
    }
    Ok(out)
}

pub fn write_metadata<W: Write>(records: &[ImageRecord], mut w: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Records paired with their embedding rows.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<ImageRecord>,
    pub embeddings: EmbeddingMatrix,
}

impl Dataset {
    pub fn new(
        records: Vec<ImageRecord>,
        embeddings: EmbeddingMatrix,
    ) -> Result<Self, EmbeddingError> {
        if records.len() != embeddings.count() {
            return Err(EmbeddingError::RowCount {
                records: records.len(),
                rows: embeddings.count(),
            });
        }
        Ok(Self {
            records,
            embeddings,
        })
    }

    /// Dataset with synthetic ids `img-000000`, ... and empty captions.
    pub fn anonymous(embeddings: EmbeddingMatrix) -> Self {
        let records = (0..embeddings.count())
            .map(|row| ImageRecord {
                id: format!("img-{row:06}"),
                url: String::new(),
                caption: String::new(),
                ocr_text: None,
                row,
            })
            .collect();
        Self {
            records,
            embeddings,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Text,
    Image,
}

/// Pre-encoded retrieval queries. Embeddings are normalized on construction.
#[derive(Debug, Clone)]
pub struct QuerySet {
    pub kind: QueryKind,
    pub embeddings: EmbeddingMatrix,
    pub labels: Vec<String>,
}

impl QuerySet {
    pub fn new(
        kind: QueryKind,
        embeddings: EmbeddingMatrix,
        labels: Vec<String>,
    ) -> Result<Self, EmbeddingError> {
        if labels.len() != embeddings.count() {
            return Err(EmbeddingError::RowCount {
                records: labels.len(),
                rows: embeddings.count(),
            });
        }
        let embeddings = if embeddings.is_normalized() {
            embeddings
        } else {
            embeddings.normalize()?
        };
        Ok(Self {
            kind,
            embeddings,
            labels,
        })
    }

    /// Queries labelled `q0`, `q1`, ... by row.
    pub fn unlabeled(kind: QueryKind, embeddings: EmbeddingMatrix) -> Result<Self, EmbeddingError> {
        let labels = (0..embeddings.count()).map(|i| format!("q{i}")).collect();
        Self::new(kind, embeddings, labels)
    }

    pub fn len(&self) -> usize {
        self.embeddings.count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
