//! Checkpoint and raw-matrix loading.
//!
//! The checkpoint container is the usual single-file tensor layout:
//!
//! ```text
//! [0..8)        u64 little-endian header length N
//! [8..8+N)      UTF-8 JSON object: name -> {"dtype", "shape", "data_offsets"}
//! [8+N..)       tensor payloads, row-major little-endian
//! ```
//!
//! `data_offsets` are relative to the start of the payload region. A
//! `"__metadata__"` entry is skipped. Only the resolved output projection is
//! ever read from the payload region; [`parse_checkpoint`] reads the header
//! alone.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tensor names tried, in order, when no explicit name is given.
pub const LM_HEAD_CANDIDATES: [&str; 3] =
    ["lm_head.weight", "output.weight", "model.embed_tokens.weight"];

const METADATA_KEY: &str = "__metadata__";
const READ_CHUNK: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("truncated header: file has {len} bytes, need at least 8")]
    TruncatedHeader { len: u64 },
    #[error("header length {header_len} exceeds file size {file_len}")]
    HeaderTooLarge { header_len: u64, file_len: u64 },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("tensors `{first}` and `{second}` have overlapping byte ranges")]
    OverlappingRanges { first: String, second: String },
    #[error("tensor `{name}`: byte range holds {actual} bytes, shape and dtype need {expected}")]
    WrongLength {
        name: String,
        expected: u64,
        actual: u64,
    },
    #[error("tensor `{name}` extends past end of file")]
    RangeOutOfBounds { name: String },
    #[error("no output projection tensor found (tried {tried:?})")]
    NoCandidateTensor { tried: Vec<String> },
    #[error("tensor `{name}` has shape {shape:?}, expected 2-D")]
    NotTwoDimensional { name: String, shape: Vec<u64> },
    #[error("tensor `{name}` contains a non-finite value at element {index}")]
    NonFinite { name: String, index: usize },
    #[error("unsupported dtype {0}")]
    UnsupportedDtype(String),
    #[error("raw matrix holds {actual} bytes, sidecar declares {expected}")]
    LengthMismatch { expected: u64, actual: u64 },
    #[error("unreadable sidecar {path}: {reason}")]
    Sidecar { path: PathBuf, reason: String },
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
}

impl LoadError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        LoadError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Element type of a stored tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dtype {
    F64,
    F32,
    F16,
    BF16,
    I64,
    I32,
    I16,
    I8,
    U64,
    U32,
    U16,
    U8,
    #[serde(rename = "BOOL")]
    Bool,
}

impl Dtype {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "F64" => Dtype::F64,
            "F32" => Dtype::F32,
            "F16" => Dtype::F16,
            "BF16" => Dtype::BF16,
            "I64" => Dtype::I64,
            "I32" => Dtype::I32,
            "I16" => Dtype::I16,
            "I8" => Dtype::I8,
            "U64" => Dtype::U64,
            "U32" => Dtype::U32,
            "U16" => Dtype::U16,
            "U8" => Dtype::U8,
            "BOOL" => Dtype::Bool,
            _ => return None,
        })
    }

    pub fn width(self) -> u64 {
        match self {
            Dtype::F64 | Dtype::I64 | Dtype::U64 => 8,
            Dtype::F32 | Dtype::I32 | Dtype::U32 => 4,
            Dtype::F16 | Dtype::BF16 | Dtype::I16 | Dtype::U16 => 2,
            Dtype::I8 | Dtype::U8 | Dtype::Bool => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F64 => "F64",
            Dtype::F32 => "F32",
            Dtype::F16 => "F16",
            Dtype::BF16 => "BF16",
            Dtype::I64 => "I64",
            Dtype::I32 => "I32",
            Dtype::I16 => "I16",
            Dtype::I8 => "I8",
            Dtype::U64 => "U64",
            Dtype::U32 => "U32",
            Dtype::U16 => "U16",
            Dtype::U8 => "U8",
            Dtype::Bool => "BOOL",
        }
    }

    /// The subset of dtypes a [`WeightMatrix`] can be loaded from.
    pub fn as_float(self) -> Option<FloatDtype> {
        match self {
            Dtype::F32 => Some(FloatDtype::F32),
            Dtype::F16 => Some(FloatDtype::F16),
            Dtype::BF16 => Some(FloatDtype::BF16),
            _ => None,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Storage precision of a loaded weight matrix before widening to `f32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FloatDtype {
    F32,
    F16,
    BF16,
}

impl FloatDtype {
    pub fn width(self) -> usize {
        match self {
            FloatDtype::F32 => 4,
            FloatDtype::F16 | FloatDtype::BF16 => 2,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Dtype::parse(s).and_then(Dtype::as_float)
    }

    /// Widen one little-endian element to `f32`. Exact for every input.
    #[inline]
    fn decode(self, bytes: &[u8]) -> f32 {
        match self {
            FloatDtype::F32 => f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
            FloatDtype::F16 => half::f16::from_bits(u16::from_le_bytes([bytes[0], bytes[1]])).to_f32(),
            FloatDtype::BF16 => half::bf16::from_bits(u16::from_le_bytes([bytes[0], bytes[1]])).to_f32(),
        }
    }
}

impl fmt::Display for FloatDtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FloatDtype::F32 => "F32",
            FloatDtype::F16 => "F16",
            FloatDtype::BF16 => "BF16",
        })
    }
}

/// A dense `rows x cols` output-projection matrix, rows indexed by token ID.
///
/// Every value is finite. The matrix is immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    source_tensor_name: String,
    source_dtype: FloatDtype,
    model_label: String,
}

impl WeightMatrix {
    /// Build a matrix from row-major data, checking shape and finiteness.
    pub fn new(
        rows: usize,
        cols: usize,
        data: Vec<f32>,
        source_tensor_name: impl Into<String>,
        source_dtype: FloatDtype,
        model_label: impl Into<String>,
    ) -> Result<Self, LoadError> {
        let source_tensor_name = source_tensor_name.into();
        if rows == 0 || cols == 0 {
            return Err(LoadError::InvalidMatrix(format!(
                "shape {rows}x{cols} has an empty dimension"
            )));
        }
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(LoadError::InvalidMatrix(format!(
                "shape {rows}x{cols} does not match {} values",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|x| !x.is_finite()) {
            return Err(LoadError::NonFinite {
                name: source_tensor_name,
                index,
            });
        }
        Ok(Self {
            rows,
            cols,
            data,
            source_tensor_name,
            source_dtype,
            model_label: model_label.into(),
        })
    }

    /// Convenience constructor for in-memory F32 data.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, LoadError> {
        Self::new(rows, cols, data, "in-memory", FloatDtype::F32, "in-memory")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn source_tensor_name(&self) -> &str {
        &self.source_tensor_name
    }

    pub fn source_dtype(&self) -> FloatDtype {
        self.source_dtype
    }

    pub fn model_label(&self) -> &str {
        &self.model_label
    }

    pub fn with_model_label(mut self, label: impl Into<String>) -> Self {
        self.model_label = label.into();
        self
    }
}

/// Header entry for one tensor in a checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<u64>,
    /// `[begin, end)` relative to the payload region.
    pub byte_range: (u64, u64),
}

impl TensorEntry {
    pub fn element_count(&self) -> u64 {
        self.shape.iter().product()
    }

    pub fn byte_len(&self) -> u64 {
        self.byte_range.1 - self.byte_range.0
    }
}

/// Index of every tensor in a checkpoint, sorted by name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointIndex {
    entries: Vec<TensorEntry>,
    /// Absolute file offset of the payload region (8 + header length).
    data_start: u64,
}

impl CheckpointIndex {
    pub fn entries(&self) -> &[TensorEntry] {
        &self.entries
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.entries
            .binary_search_by(|e| e.name.as_str().cmp(name))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn data_start(&self) -> u64 {
        self.data_start
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Deserialize)]
struct RawHeaderEntry {
    dtype: String,
    shape: Vec<u64>,
    data_offsets: [u64; 2],
}

/// Read and validate the header of a checkpoint file. Payload bytes are not
/// touched.
pub fn parse_checkpoint(path: impl AsRef<Path>) -> Result<CheckpointIndex, LoadError> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| LoadError::io(path, e))?;
    let file_len = file.metadata().map_err(|e| LoadError::io(path, e))?.len();
    if file_len < 8 {
        return Err(LoadError::TruncatedHeader { len: file_len });
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)
        .map_err(|e| LoadError::io(path, e))?;
    let header_len = u64::from_le_bytes(len_bytes);
    if header_len > file_len - 8 {
        return Err(LoadError::HeaderTooLarge {
            header_len,
            file_len,
        });
    }
    let mut header = vec![0u8; header_len as usize];
    file.read_exact(&mut header)
        .map_err(|e| LoadError::io(path, e))?;
    let data_start = 8 + header_len;
    let index = parse_header(&header, data_start)?;

    let payload_len = file_len - data_start;
    for e in &index.entries {
        if e.byte_range.1 > payload_len {
            return Err(LoadError::RangeOutOfBounds {
                name: e.name.clone(),
            });
        }
    }
    Ok(index)
}

fn parse_header(header: &[u8], data_start: u64) -> Result<CheckpointIndex, LoadError> {
    let text = std::str::from_utf8(header)
        .map_err(|e| LoadError::MalformedHeader(format!("header is not UTF-8: {e}")))?;
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| LoadError::MalformedHeader(e.to_string()))?;
    let serde_json::Value::Object(map) = value else {
        return Err(LoadError::MalformedHeader(
            "header is not a JSON object".into(),
        ));
    };

    let mut entries = Vec::with_capacity(map.len());
    for (name, raw) in map {
        if name == METADATA_KEY {
            continue;
        }
        let raw: RawHeaderEntry = serde_json::from_value(raw)
            .map_err(|e| LoadError::MalformedHeader(format!("tensor `{name}`: {e}")))?;
        let dtype = Dtype::parse(&raw.dtype).ok_or_else(|| {
            LoadError::MalformedHeader(format!("tensor `{name}`: unknown dtype {}", raw.dtype))
        })?;
        let [begin, end] = raw.data_offsets;
        if end < begin {
            return Err(LoadError::MalformedHeader(format!(
                "tensor `{name}`: data_offsets end {end} precedes begin {begin}"
            )));
        }
        let expected = raw
            .shape
            .iter()
            .try_fold(dtype.width(), |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| {
                LoadError::MalformedHeader(format!("tensor `{name}`: shape overflows"))
            })?;
        if end - begin != expected {
            return Err(LoadError::WrongLength {
                name,
                expected,
                actual: end - begin,
            });
        }
        entries.push(TensorEntry {
            name,
            dtype,
            shape: raw.shape,
            byte_range: (begin, end),
        });
    }

    let mut by_offset: Vec<&TensorEntry> = entries.iter().filter(|e| e.byte_len() > 0).collect();
    by_offset.sort_by_key(|e| (e.byte_range.0, e.byte_range.1));
    for pair in by_offset.windows(2) {
        if pair[0].byte_range.1 > pair[1].byte_range.0 {
            return Err(LoadError::OverlappingRanges {
                first: pair[0].name.clone(),
                second: pair[1].name.clone(),
            });
        }
    }

    entries.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(CheckpointIndex {
        entries,
        data_start,
    })
}

/// Resolve and load the output projection matrix from a parsed checkpoint.
///
/// Without `name_override`, the names in [`LM_HEAD_CANDIDATES`] are tried in
/// order; the one that matched is kept in
/// [`WeightMatrix::source_tensor_name`]. The model label is the file stem.
pub fn load_lm_head(
    index: &CheckpointIndex,
    path: impl AsRef<Path>,
    name_override: Option<&str>,
) -> Result<WeightMatrix, LoadError> {
    let path = path.as_ref();
    let entry = match name_override {
        Some(name) => index.get(name).ok_or_else(|| LoadError::NoCandidateTensor {
            tried: vec![name.to_string()],
        })?,
        None => LM_HEAD_CANDIDATES
            .iter()
            .find_map(|name| index.get(name))
            .ok_or_else(|| LoadError::NoCandidateTensor {
                tried: LM_HEAD_CANDIDATES.iter().map(|s| s.to_string()).collect(),
            })?,
    };
    if entry.shape.len() != 2 {
        return Err(LoadError::NotTwoDimensional {
            name: entry.name.clone(),
            shape: entry.shape.clone(),
        });
    }
    let dtype = entry
        .dtype
        .as_float()
        .ok_or_else(|| LoadError::UnsupportedDtype(entry.dtype.to_string()))?;
    let rows = entry.shape[0] as usize;
    let cols = entry.shape[1] as usize;

    let mut file = File::open(path).map_err(|e| LoadError::io(path, e))?;
    file.seek(SeekFrom::Start(index.data_start + entry.byte_range.0))
        .map_err(|e| LoadError::io(path, e))?;
    let data = read_elements(&mut file, dtype, rows * cols).map_err(|e| LoadError::io(path, e))?;
    WeightMatrix::new(rows, cols, data, entry.name.clone(), dtype, file_label(path))
}

/// Parse the header and load the output projection in one call.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
    name_override: Option<&str>,
) -> Result<WeightMatrix, LoadError> {
    let path = path.as_ref();
    let index = parse_checkpoint(path)?;
    load_lm_head(&index, path, name_override)
}

/// Shape and dtype declaration accompanying a raw matrix file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub rows: usize,
    pub cols: usize,
    /// Kept as text so unknown names surface as `UnsupportedDtype`.
    pub dtype: String,
}

/// Load a headerless row-major little-endian matrix described by a JSON
/// sidecar `{"rows", "cols", "dtype"}`.
pub fn load_raw(
    matrix_path: impl AsRef<Path>,
    sidecar_path: impl AsRef<Path>,
) -> Result<WeightMatrix, LoadError> {
    let matrix_path = matrix_path.as_ref();
    let sidecar_path = sidecar_path.as_ref();
    let sidecar_err = |reason: String| LoadError::Sidecar {
        path: sidecar_path.to_path_buf(),
        reason,
    };
    let text = std::fs::read_to_string(sidecar_path).map_err(|e| sidecar_err(e.to_string()))?;
    let sidecar: RawSidecar =
        serde_json::from_str(&text).map_err(|e| sidecar_err(e.to_string()))?;
    let dtype = FloatDtype::parse(&sidecar.dtype)
        .ok_or_else(|| LoadError::UnsupportedDtype(sidecar.dtype.clone()))?;

    let mut file = File::open(matrix_path).map_err(|e| LoadError::io(matrix_path, e))?;
    let actual = file
        .metadata()
        .map_err(|e| LoadError::io(matrix_path, e))?
        .len();
    let count = sidecar
        .rows
        .checked_mul(sidecar.cols)
        .ok_or_else(|| sidecar_err("rows x cols overflows".into()))?;
    let expected = count as u64 * dtype.width() as u64;
    if actual != expected {
        return Err(LoadError::LengthMismatch { expected, actual });
    }
    let data = read_elements(&mut file, dtype, count).map_err(|e| LoadError::io(matrix_path, e))?;
    WeightMatrix::new(
        sidecar.rows,
        sidecar.cols,
        data,
        "raw",
        dtype,
        file_label(matrix_path),
    )
}

fn read_elements<R: Read>(reader: &mut R, dtype: FloatDtype, count: usize) -> std::io::Result<Vec<f32>> {
    let width = dtype.width();
    let mut out = Vec::with_capacity(count);
    let mut buf = vec![0u8; READ_CHUNK - READ_CHUNK % width];
    let mut remaining = count * width;
    while remaining > 0 {
        let take = remaining.min(buf.len());
        reader.read_exact(&mut buf[..take])?;
        out.extend(buf[..take].chunks_exact(width).map(|b| dtype.decode(b)));
        remaining -= take;
    }
    Ok(out)
}

fn file_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// One tensor to be written by [`write_checkpoint`].
#[derive(Debug, Clone)]
pub struct TensorPayload<'a> {
    pub dtype: Dtype,
    pub shape: Vec<u64>,
    /// Already-encoded little-endian bytes.
    pub bytes: &'a [u8],
}

/// Write a single-file checkpoint. Tensors are laid out in name order.
pub fn write_checkpoint(
    path: impl AsRef<Path>,
    tensors: &BTreeMap<String, TensorPayload<'_>>,
) -> Result<(), LoadError> {
    let path = path.as_ref();
    let mut header = serde_json::Map::new();
    let mut offset = 0u64;
    for (name, t) in tensors {
        let end = offset + t.bytes.len() as u64;
        header.insert(
            name.clone(),
            serde_json::json!({
                "dtype": t.dtype.as_str(),
                "shape": t.shape,
                "data_offsets": [offset, end],
            }),
        );
        offset = end;
    }
    let mut header = serde_json::to_vec(&serde_json::Value::Object(header))
        .map_err(|e| LoadError::MalformedHeader(e.to_string()))?;
    // pad to 8 bytes so the payload region stays aligned
    while header.len() % 8 != 0 {
        header.push(b' ');
    }

    let file = File::create(path).map_err(|e| LoadError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| LoadError::io(path, e);
    w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    for t in tensors.values() {
        w.write_all(t.bytes).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Write `matrix` as an F32 `lm_head.weight` checkpoint.
pub fn write_lm_head_f32(path: impl AsRef<Path>, matrix: &WeightMatrix) -> Result<(), LoadError> {
    let bytes: Vec<u8> = matrix.data().iter().flat_map(|x| x.to_le_bytes()).collect();
    let mut tensors = BTreeMap::new();
    tensors.insert(
        "lm_head.weight".to_string(),
        TensorPayload {
            dtype: Dtype::F32,
            shape: vec![matrix.rows() as u64, matrix.cols() as u64],
            bytes: &bytes,
        },
    );
    write_checkpoint(path, &tensors)
}
