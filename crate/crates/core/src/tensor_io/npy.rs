//! Minimal reader and writer for NPY version 1.0 files.
//!
//! Only little-endian, C-order `<f4`, `<f8` and `<i8` arrays of rank at most
//! four are accepted. Everything else is rejected with a typed error.

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE_LEN: usize = 10;
const ALIGN: usize = 64;
pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    I64,
}

impl Dtype {
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
            Dtype::I64 => "<i8",
        }
    }

    pub fn item_size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 | Dtype::I64 => 8,
        }
    }

    fn from_descr(descr: &str) -> Result<Self> {
        match descr {
            "<f4" => Ok(Dtype::F32),
            "<f8" => Ok(Dtype::F64),
            "<i8" => Ok(Dtype::I64),
            other => Err(Error::UnsupportedDescr(format!(
                "descr {other:?} is not one of <f4, <f8, <i8"
            ))),
        }
    }
}

/// Typed element buffer. The variant is the dtype tag, so the two can never
/// disagree.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
            TensorData::I64(_) => Dtype::I64,
        }
    }
}

/// A dense row-major tensor as stored in an NPY file.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    shape: Vec<usize>,
    data: TensorData,
}

impl TensorFile {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        if shape.len() > MAX_RANK {
            return Err(Error::Shape(format!(
                "rank {} exceeds the supported maximum of {MAX_RANK}",
                shape.len()
            )));
        }
        let expected = element_count(&shape)?;
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {expected} elements but buffer has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(shape, TensorData::F64(data))
    }

    pub fn from_i64(shape: Vec<usize>, data: Vec<i64>) -> Result<Self> {
        Self::new(shape, TensorData::I64(data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    /// Float elements widened to f64; `None` for integer tensors.
    pub fn to_f64_vec(&self) -> Option<Vec<f64>> {
        match &self.data {
            TensorData::F32(v) => Some(v.iter().map(|&x| f64::from(x)).collect()),
            TensorData::F64(v) => Some(v.clone()),
            TensorData::I64(_) => None,
        }
    }
}

fn element_count(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Shape(format!("shape {shape:?} overflows")))
}

/// Decode an NPY v1.0 byte buffer.
pub fn read_npy(bytes: &[u8]) -> Result<TensorFile> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < PREAMBLE_LEN {
        return Err(Error::HeaderMismatch("truncated preamble".into()));
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(Error::HeaderMismatch(format!(
            "unsupported format version {}.{}",
            bytes[6], bytes[7]
        )));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let payload_start = PREAMBLE_LEN + header_len;
    if bytes.len() < payload_start {
        return Err(Error::HeaderMismatch(format!(
            "header declares {header_len} bytes but only {} remain",
            bytes.len() - PREAMBLE_LEN
        )));
    }
    let header = std::str::from_utf8(&bytes[PREAMBLE_LEN..payload_start])
        .map_err(|_| Error::HeaderMismatch("header is not ASCII".into()))?;
    let parsed = parse_header(header)?;
    if parsed.fortran_order {
        return Err(Error::FortranOrder);
    }
    if parsed.shape.len() > MAX_RANK {
        return Err(Error::Shape(format!(
            "rank {} exceeds the supported maximum of {MAX_RANK}",
            parsed.shape.len()
        )));
    }
    let count = element_count(&parsed.shape)?;
    let payload = &bytes[payload_start..];
    let expected = count
        .checked_mul(parsed.dtype.item_size())
        .ok_or_else(|| Error::HeaderMismatch("payload size overflows".into()))?;
    if payload.len() != expected {
        return Err(Error::HeaderMismatch(format!(
            "shape {:?} needs {expected} payload bytes, found {}",
            parsed.shape,
            payload.len()
        )));
    }
    let data = match parsed.dtype {
        Dtype::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::F64 => TensorData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::I64 => TensorData::I64(
            payload
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    TensorFile::new(parsed.shape, data)
}

/// Encode a tensor as an NPY v1.0 byte buffer with a 64-byte aligned header.
pub fn write_npy(tensor: &TensorFile) -> Vec<u8> {
    let shape = match tensor.shape.as_slice() {
        [] => "()".to_string(),
        [d] => format!("({d},)"),
        dims => format!(
            "({})",
            dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {shape}, }}",
        tensor.dtype().descr()
    );
    // The header is terminated by a newline and space-padded so the payload
    // starts on a 64-byte boundary.
    let unpadded = PREAMBLE_LEN + header.len() + 1;
    let padding = (ALIGN - unpadded % ALIGN) % ALIGN;
    header.extend(std::iter::repeat_n(' ', padding));
    header.push('\n');

    let mut out = Vec::with_capacity(PREAMBLE_LEN + header.len() + tensor.data.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match &tensor.data {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

struct Header {
    dtype: Dtype,
    fortran_order: bool,
    shape: Vec<usize>,
}

fn parse_header(header: &str) -> Result<Header> {
    let body = header.trim();
    let body = body
        .strip_prefix('{')
        .and_then(|b| b.strip_suffix('}'))
        .ok_or_else(|| Error::HeaderMismatch("header is not a dict literal".into()))?;

    let descr = dict_value(body, "descr")?;
    let descr = descr
        .strip_prefix('\'')
        .and_then(|d| d.strip_suffix('\''))
        .or_else(|| descr.strip_prefix('"').and_then(|d| d.strip_suffix('"')))
        .ok_or_else(|| Error::HeaderMismatch(format!("descr value {descr:?} is not a string")))?;
    // A native-endian single-byte tag ("|") never applies to the supported dtypes.
    let dtype = Dtype::from_descr(descr)?;

    let fortran_order = match dict_value(body, "fortran_order")? {
        "False" => false,
        "True" => true,
        other => {
            return Err(Error::HeaderMismatch(format!(
                "fortran_order value {other:?} is not a bool"
            )))
        }
    };

    let shape_src = dict_value(body, "shape")?;
    let inner = shape_src
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::HeaderMismatch(format!("shape {shape_src:?} is not a tuple")))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim_end_matches('L')
                .parse::<usize>()
                .map_err(|_| Error::HeaderMismatch(format!("bad shape extent {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Header {
        dtype,
        fortran_order,
        shape,
    })
}

/// Raw source text of the value bound to `key` in a flat Python dict literal.
fn dict_value<'a>(body: &'a str, key: &str) -> Result<&'a str> {
    let missing = || Error::HeaderMismatch(format!("header lacks key {key:?}"));
    let start = [format!("'{key}'"), format!("\"{key}\"")]
        .iter()
        .find_map(|k| body.find(k.as_str()).map(|i| i + k.len()))
        .ok_or_else(missing)?;
    let rest = body[start..].trim_start();
    let rest = rest.strip_prefix(':').ok_or_else(missing)?.trim_start();
    // The value ends at the first comma outside parentheses.
    let mut depth = 0i32;
    let mut end = rest.len();
    for (i, ch) in rest.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                end = i;
                break;
            }
            _ => {}
        }
    }
    Ok(rest[..end].trim())
}
