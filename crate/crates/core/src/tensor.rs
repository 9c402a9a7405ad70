//! Dense `f32` tensors and the GSPC binary format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    "GSPC"            4 bytes
//! version  0x01              1 byte
//! dtype    0x01 (float32)    1 byte
//! ndim                       u8
//! dims                       ndim x u32
//! payload                    prod(dims) x f32, row-major
//! ```
//!
//! Several tensors may be written back to back into one stream; `read_tensor`
//! consumes exactly one.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"GSPC";
pub const VERSION: u8 = 0x01;
pub const DTYPE_F32: u8 = 0x01;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("bad magic {found:?}, expected \"GSPC\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported version byte {0:#04x}")]
    UnsupportedVersion(u8),
    #[error("unsupported dtype byte {0:#04x}")]
    UnsupportedDtype(u8),
    #[error("stream truncated while reading {field}")]
    Truncated { field: String },
    #[error("dims {dims:?} imply {expected} elements but data holds {actual}")]
    ShapeMismatch {
        dims: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("tensor has {0} dimensions; at most 255 are encodable")]
    TooManyDims(usize),
    #[error("extent {0} does not fit in 32 bits")]
    ExtentTooLarge(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Row-major `f32` array with explicit extents.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorBlock {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl TensorBlock {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let expected = dims.iter().product::<usize>();
        if expected != data.len() {
            return Err(TensorError::ShapeMismatch {
                dims,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; n],
        }
    }

    /// Narrows `f64` values to storage precision.
    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self, TensorError> {
        Self::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    /// Packs equal-length rows into a `[rows, cols]` tensor.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    dims: vec![rows.len(), cols],
                    expected: cols,
                    actual: row.len(),
                });
            }
            data.extend(row.iter().map(|&v| v as f32));
        }
        Self::new(vec![rows.len(), cols], data)
    }

    /// Splits along the first axis into widened rows.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        let n = self.dims.first().copied().unwrap_or(1);
        if n == 0 {
            return Vec::new();
        }
        let width = self.data.len() / n;
        self.data
            .chunks(width.max(1))
            .take(n)
            .map(|c| c.iter().map(|&v| f64::from(v)).collect())
            .collect()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    /// Number of bytes `write_tensor` will emit.
    pub fn encoded_len(&self) -> usize {
        4 + 1 + 1 + 1 + 4 * self.dims.len() + 4 * self.data.len()
    }

    /// Serializes into a fresh buffer.
    pub fn to_bytes(&self) -> Result<Vec<u8>, TensorError> {
        let mut buf = Vec::with_capacity(self.encoded_len());
        write_tensor(self, &mut buf)?;
        Ok(buf)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self, TensorError> {
        read_tensor(&mut bytes)
    }
}

/// Writes one tensor and returns the number of bytes emitted.
pub fn write_tensor<W: Write>(t: &TensorBlock, sink: &mut W) -> Result<usize, TensorError> {
    if t.dims.len() > u8::MAX as usize {
        return Err(TensorError::TooManyDims(t.dims.len()));
    }
    let mut header = Vec::with_capacity(7 + 4 * t.dims.len());
    header.extend_from_slice(MAGIC);
    header.push(VERSION);
    header.push(DTYPE_F32);
    header.push(t.dims.len() as u8);
    for &d in &t.dims {
        let d32 = u32::try_from(d).map_err(|_| TensorError::ExtentTooLarge(d))?;
        header.extend_from_slice(&d32.to_le_bytes());
    }
    sink.write_all(&header)?;

    let mut payload = Vec::with_capacity(4 * t.data.len());
    for v in &t.data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    sink.write_all(&payload)?;
    Ok(header.len() + payload.len())
}

fn read_field<R: Read>(source: &mut R, buf: &mut [u8], field: &str) -> Result<(), TensorError> {
    source.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => TensorError::Truncated {
            field: field.to_owned(),
        },
        _ => TensorError::Io(e),
    })
}

/// Reads exactly one tensor from the stream.
pub fn read_tensor<R: Read>(source: &mut R) -> Result<TensorBlock, TensorError> {
    let mut magic = [0u8; 4];
    read_field(source, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(TensorError::BadMagic { found: magic });
    }
    let mut byte = [0u8; 1];
    read_field(source, &mut byte, "version")?;
    if byte[0] != VERSION {
        return Err(TensorError::UnsupportedVersion(byte[0]));
    }
    read_field(source, &mut byte, "dtype")?;
    if byte[0] != DTYPE_F32 {
        return Err(TensorError::UnsupportedDtype(byte[0]));
    }
    read_field(source, &mut byte, "ndim")?;
    let ndim = byte[0] as usize;
    let mut dims = Vec::with_capacity(ndim);
    let mut word = [0u8; 4];
    for i in 0..ndim {
        read_field(source, &mut word, &format!("dims[{i}]"))?;
        dims.push(u32::from_le_bytes(word) as usize);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| TensorError::Truncated {
            field: "payload".into(),
        })?;
    let nbytes = count.checked_mul(4).ok_or_else(|| TensorError::Truncated {
        field: "payload".into(),
    })?;
    // Read through `take` so a hostile header cannot force a huge allocation.
    let mut payload = Vec::new();
    source.take(nbytes as u64).read_to_end(&mut payload)?;
    if payload.len() != nbytes {
        return Err(TensorError::Truncated {
            field: format!("payload ({} of {} bytes)", payload.len(), nbytes),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    TensorBlock::new(dims, data)
}

/// Writes several tensors back to back.
pub fn write_archive<W: Write>(tensors: &[&TensorBlock], sink: &mut W) -> Result<usize, TensorError> {
    let mut total = 0;
    for t in tensors {
        total += write_tensor(t, sink)?;
    }
    Ok(total)
}

/// Reads `count` consecutive tensors.
pub fn read_archive<R: Read>(source: &mut R, count: usize) -> Result<Vec<TensorBlock>, TensorError> {
    (0..count).map(|_| read_tensor(source)).collect()
}

/// Reads tensors until the stream is exhausted.
pub fn read_all<R: Read>(source: &mut R) -> Result<Vec<TensorBlock>, TensorError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let mut cursor = bytes.as_slice();
    let mut out = Vec::new();
    while !cursor.is_empty() {
        out.push(read_tensor(&mut cursor)?);
    }
    Ok(out)
}
