//! Fixed-dimension unit embeddings and the read-only store that serves them.
//!
//! Every vector that enters the engine is validated (finite, non-zero, correct
//! dimension) and L2-normalized, so inner product and cosine coincide
//! everywhere downstream.
//!
//! Two on-disk formats are supported:
//!
//! * **binary**: header `b"CQES"`, `u32` version, `u32` dimension, `u64`
//!   count (all little-endian), then per entry a `u32` byte length, the UTF-8
//!   id, and `dimension` little-endian `f32` values.
//! * **jsonl**: one `{"id": "...", "v": [..]}` object per line.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norm deviation below which a vector is considered already normalized and
/// left untouched. Keeps normalization idempotent bit for bit.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

const BINARY_MAGIC: &[u8; 4] = b"CQES";
const BINARY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("vector `{id}` has dimension {found}, expected {expected}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("vector `{id}` contains a non-finite component")]
    NonFinite { id: String },
    #[error("vector `{id}` has zero norm and cannot be normalized")]
    ZeroNorm { id: String },
    #[error("duplicate image id `{0}`")]
    DuplicateId(String),
    #[error("embedding dimension must be positive")]
    ZeroDimension,
    #[error("store is empty")]
    Empty,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("not a croqs binary embedding file (bad magic)")]
    BadMagic,
    #[error("unsupported binary format version {0}")]
    UnsupportedVersion(u32),
    #[error("binary file truncated: {0}")]
    Truncated(String),
    #[error("unknown embedding format `{0}` (expected `binary` or `jsonl`)")]
    UnknownFormat(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A validated, unit-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Validates and normalizes raw values.
    pub fn new(values: Vec<f64>) -> Result<Self, StoreError> {
        Self::with_id("<anonymous>", values)
    }

    fn with_id(id: &str, mut values: Vec<f64>) -> Result<Self, StoreError> {
        if values.is_empty() {
            return Err(StoreError::ZeroDimension);
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(StoreError::NonFinite { id: id.to_string() });
        }
        if !normalize_in_place(&mut values) {
            return Err(StoreError::ZeroNorm { id: id.to_string() });
        }
        Ok(Self(values))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> Result<f64, StoreError> {
        cosine(&self.0, &other.0)
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = StoreError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `values` to unit norm. Vectors already within
/// [`UNIT_NORM_TOLERANCE`] of unit norm are left as they are. Returns `false`
/// for a zero (or non-finite norm) vector.
pub fn normalize_in_place(values: &mut [f64]) -> bool {
    let norm = l2_norm(values);
    if !norm.is_finite() || norm == 0.0 {
        return false;
    }
    if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        for x in values.iter_mut() {
            *x /= norm;
        }
    }
    true
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine of two unit vectors, i.e. their dot product.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, StoreError> {
    if a.len() != b.len() {
        return Err(StoreError::DimensionMismatch {
            id: "<query>".to_string(),
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(dot(a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreFormat {
    Binary,
    Jsonl,
}

impl std::str::FromStr for StoreFormat {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" | "bin" => Ok(Self::Binary),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(StoreError::UnknownFormat(other.to_string())),
        }
    }
}

impl StoreFormat {
    /// Guesses the format from the file extension, defaulting to binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") | Some("ndjson") => Self::Jsonl,
            _ => Self::Binary,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreMetadata {
    pub model_name: Option<String>,
    /// True when every input vector was already unit-norm before loading.
    pub normalized: bool,
}

#[derive(Serialize, Deserialize)]
struct JsonlEntry {
    id: String,
    v: Vec<f64>,
}

/// Read-only collection of image embeddings, stored row-major.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dimension: usize,
    ids: Vec<String>,
    data: Vec<f64>,
    index: HashMap<String, usize>,
    metadata: StoreMetadata,
}

impl EmbeddingStore {
    pub fn from_entries<I>(entries: I, model_name: Option<String>) -> Result<Self, StoreError>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut builder = StoreBuilder::default();
        for (id, v) in entries {
            builder.push(id, v)?;
        }
        builder.finish(model_name)
    }

    pub fn load(path: impl AsRef<Path>, format: StoreFormat) -> Result<Self, StoreError> {
        let file = File::open(path.as_ref())?;
        let reader = BufReader::new(file);
        let store = match format {
            StoreFormat::Binary => Self::read_binary(reader)?,
            StoreFormat::Jsonl => Self::read_jsonl(reader)?,
        };
        tracing::info!(
            path = %path.as_ref().display(),
            count = store.len(),
            dimension = store.dimension(),
            "loaded embedding store"
        );
        Ok(store)
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, StoreError> {
        let mut builder = StoreBuilder::default();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: JsonlEntry = serde_json::from_str(&line).map_err(|e| StoreError::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            builder.push(entry.id, entry.v)?;
        }
        builder.finish(None)
    }

    pub fn read_binary<R: Read>(mut reader: R) -> Result<Self, StoreError> {
        let mut magic = [0u8; 4];
        read_exact(&mut reader, &mut magic, "header")?;
        if &magic != BINARY_MAGIC {
            return Err(StoreError::BadMagic);
        }
        let version = read_u32(&mut reader, "version")?;
        if version != BINARY_VERSION {
            return Err(StoreError::UnsupportedVersion(version));
        }
        let dimension = read_u32(&mut reader, "dimension")? as usize;
        if dimension == 0 {
            return Err(StoreError::ZeroDimension);
        }
        let mut count_buf = [0u8; 8];
        read_exact(&mut reader, &mut count_buf, "count")?;
        let count = u64::from_le_bytes(count_buf) as usize;

        let mut builder = StoreBuilder::with_capacity(dimension, count);
        let mut row = vec![0u8; dimension * 4];
        for i in 0..count {
            let what = format!("entry {i}");
            let id_len = read_u32(&mut reader, &what)? as usize;
            let mut id_bytes = vec![0u8; id_len];
            read_exact(&mut reader, &mut id_bytes, &what)?;
            let id = String::from_utf8(id_bytes).map_err(|_| StoreError::Parse {
                line: i + 1,
                message: "id is not valid UTF-8".to_string(),
            })?;
            read_exact(&mut reader, &mut row, &what)?;
            let values = row
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            builder.push(id, values)?;
        }
        builder.finish(None)
    }

    pub fn save(&self, path: impl AsRef<Path>, format: StoreFormat) -> Result<(), StoreError> {
        let mut w = BufWriter::new(File::create(path)?);
        match format {
            StoreFormat::Binary => self.write_binary(&mut w)?,
            StoreFormat::Jsonl => self.write_jsonl(&mut w)?,
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&BINARY_VERSION.to_le_bytes())?;
        w.write_all(&(self.dimension as u32).to_le_bytes())?;
        w.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        for (i, id) in self.ids.iter().enumerate() {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            for x in self.row(i) {
                w.write_all(&(*x as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> io::Result<()> {
        for (i, id) in self.ids.iter().enumerate() {
            let entry = JsonlEntry {
                id: id.clone(),
                v: self.row(i).to_vec(),
            };
            serde_json::to_writer(&mut *w, &entry)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids in load order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn metadata(&self) -> &StoreMetadata {
        &self.metadata
    }

    pub fn set_model_name(&mut self, name: impl Into<String>) {
        self.metadata.model_name = Some(name.into());
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.row(i))
    }

    /// The vector at load position `i`. Panics when out of bounds.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .enumerate()
            .map(move |(i, id)| (id.as_str(), self.row(i)))
    }
}

struct StoreBuilder {
    dimension: Option<usize>,
    ids: Vec<String>,
    data: Vec<f64>,
    index: HashMap<String, usize>,
    all_unit: bool,
}

impl Default for StoreBuilder {
    fn default() -> Self {
        Self {
            dimension: None,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
            all_unit: true,
        }
    }
}

impl StoreBuilder {
    fn with_capacity(dimension: usize, count: usize) -> Self {
        Self {
            dimension: Some(dimension),
            ids: Vec::with_capacity(count),
            data: Vec::with_capacity(count.saturating_mul(dimension)),
            index: HashMap::with_capacity(count),
            all_unit: true,
        }
    }

    fn push(&mut self, id: String, mut values: Vec<f64>) -> Result<(), StoreError> {
        let dimension = *self.dimension.get_or_insert(values.len());
        if dimension == 0 {
            return Err(StoreError::ZeroDimension);
        }
        if values.len() != dimension {
            return Err(StoreError::DimensionMismatch {
                id,
                expected: dimension,
                found: values.len(),
            });
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(StoreError::NonFinite { id });
        }
        if self.index.contains_key(&id) {
            return Err(StoreError::DuplicateId(id));
        }
        let norm = l2_norm(&values);
        self.all_unit &= (norm - 1.0).abs() <= UNIT_NORM_TOLERANCE;
        if !normalize_in_place(&mut values) {
            return Err(StoreError::ZeroNorm { id });
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(&values);
        Ok(())
    }

    fn finish(self, model_name: Option<String>) -> Result<EmbeddingStore, StoreError> {
        let dimension = self.dimension.ok_or(StoreError::Empty)?;
        if self.ids.is_empty() {
            return Err(StoreError::Empty);
        }
        Ok(EmbeddingStore {
            dimension,
            ids: self.ids,
            data: self.data,
            index: self.index,
            metadata: StoreMetadata {
                model_name,
                normalized: self.all_unit,
            },
        })
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), StoreError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => StoreError::Truncated(what.to_string()),
        _ => StoreError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32, StoreError> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}
