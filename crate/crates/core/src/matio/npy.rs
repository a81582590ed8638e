//! Reading and writing 2-D arrays in the npy format (version 1.0).
//!
//! Only little-endian `<f4` / `<f8` payloads in C order are accepted. The
//! header dict may contain exactly the keys `descr`, `fortran_order` and
//! `shape`. Headers are emitted byte-for-byte the way numpy 2.x writes them,
//! so a matrix saved by numpy and re-saved here produces an identical file.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE_LEN: usize = 10;
const ARRAY_ALIGN: usize = 64;
/// numpy leaves room for the growth axis to reach this many digits.
const GROWTH_AXIS_MAX_DIGITS: usize = 21;

/// On-disk element type. Computation is always carried out in `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Float32,
    #[default]
    Float64,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::Float32 => 4,
            Dtype::Float64 => 8,
        }
    }

    fn descr(self) -> &'static str {
        match self {
            Dtype::Float32 => "<f4",
            Dtype::Float64 => "<f8",
        }
    }

    fn from_descr(descr: &str) -> Option<Self> {
        match descr {
            "<f4" => Some(Dtype::Float32),
            "<f8" => Some(Dtype::Float64),
            _ => None,
        }
    }
}

/// A matrix read from disk together with the dtype it was stored in.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    pub dtype: Dtype,
    pub matrix: DMatrix<f64>,
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    read_matrix_file(path).map(|f| f.matrix)
}

/// Reads a 2-D array, widening `<f4` payloads to `f64`.
pub fn read_matrix_file(path: impl AsRef<Path>) -> Result<MatrixFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw(&bytes).map_err(|e| e.at(path))
}

/// Decodes an in-memory npy image.
pub fn decode(bytes: &[u8]) -> Result<MatrixFile> {
    decode_raw(bytes).map_err(|e| e.at(Path::new("<memory>")))
}

/// Writes `m` as a 2-D array. `Float32` output rounds to nearest, so the
/// round-trip is bit-exact for `f64` and for `f32`-representable values.
pub fn write_matrix(m: &DMatrix<f64>, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(m, dtype)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode(m: &DMatrix<f64>, dtype: Dtype) -> Result<Vec<u8>> {
    check_finite(m)?;
    let (rows, cols) = m.shape();
    let header = header_bytes(dtype, rows, cols);
    let mut out = Vec::with_capacity(header.len() + rows * cols * dtype.width());
    out.extend_from_slice(&header);
    for r in 0..rows {
        for c in 0..cols {
            let v = m[(r, c)];
            match dtype {
                Dtype::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::Float64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    Ok(out)
}

pub(crate) fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !m[(r, c)].is_finite() {
                return Err(Error::NonFinite { row: r, col: c });
            }
        }
    }
    Ok(())
}

fn header_bytes(dtype: Dtype, rows: usize, cols: usize) -> Vec<u8> {
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': ({}, {}), }}",
        dtype.descr(),
        rows,
        cols
    );
    let growth_digits = rows.to_string().len();
    dict.push_str(&" ".repeat(GROWTH_AXIS_MAX_DIGITS.saturating_sub(growth_digits)));
    let unpadded = PREAMBLE_LEN + dict.len() + 1;
    let pad = (ARRAY_ALIGN - unpadded % ARRAY_ALIGN) % ARRAY_ALIGN;
    let header_len = dict.len() + pad + 1;

    let mut out = Vec::with_capacity(PREAMBLE_LEN + header_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.write_all(&(header_len as u16).to_le_bytes()).unwrap();
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat_n(b' ', pad));
    out.push(b'\n');
    out
}

/// Decode failure without a path attached yet.
#[derive(Debug)]
enum DecodeError {
    Header(String),
    Dtype(String),
    Ndim(usize),
    Payload { expected: usize, actual: usize },
    NonFinite { row: usize, col: usize },
}

impl DecodeError {
    fn at(self, path: &Path) -> Error {
        let path = path.to_path_buf();
        match self {
            DecodeError::Header(reason) => Error::MalformedHeader { path, reason },
            DecodeError::Dtype(descr) => Error::UnsupportedDtype { path, descr },
            DecodeError::Ndim(ndim) => Error::NotTwoDimensional { path, ndim },
            DecodeError::Payload { expected, actual } => Error::PayloadMismatch {
                path,
                expected,
                actual,
            },
            DecodeError::NonFinite { row, col } => Error::NonFinite { row, col },
        }
    }
}

fn decode_raw(bytes: &[u8]) -> std::result::Result<MatrixFile, DecodeError> {
    let header = |s: &str| DecodeError::Header(s.to_string());
    if bytes.len() < PREAMBLE_LEN || &bytes[..6] != MAGIC {
        return Err(header("missing npy magic"));
    }
    if bytes[6..8] != [1, 0] {
        return Err(DecodeError::Header(format!(
            "unsupported format version {}.{}",
            bytes[6], bytes[7]
        )));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = PREAMBLE_LEN + header_len;
    if bytes.len() < data_start {
        return Err(header("file ends inside the header"));
    }
    let text = std::str::from_utf8(&bytes[PREAMBLE_LEN..data_start])
        .map_err(|_| header("header is not valid text"))?;
    let dict = HeaderDict::parse(text).map_err(DecodeError::Header)?;

    let dtype = Dtype::from_descr(&dict.descr).ok_or(DecodeError::Dtype(dict.descr.clone()))?;
    if dict.fortran_order {
        return Err(header("fortran_order must be False"));
    }
    if dict.shape.len() != 2 {
        return Err(DecodeError::Ndim(dict.shape.len()));
    }
    let (rows, cols) = (dict.shape[0], dict.shape[1]);
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(dtype.width()))
        .ok_or_else(|| header("shape overflows"))?;
    let payload = &bytes[data_start..];
    if payload.len() != expected {
        return Err(DecodeError::Payload {
            expected,
            actual: payload.len(),
        });
    }

    let values = payload.chunks_exact(dtype.width()).map(|chunk| match dtype {
        Dtype::Float32 => f32::from_le_bytes(chunk.try_into().unwrap()) as f64,
        Dtype::Float64 => f64::from_le_bytes(chunk.try_into().unwrap()),
    });
    let matrix = DMatrix::from_row_iterator(rows, cols, values);
    for r in 0..rows {
        for c in 0..cols {
            if !matrix[(r, c)].is_finite() {
                return Err(DecodeError::NonFinite { row: r, col: c });
            }
        }
    }
    Ok(MatrixFile { dtype, matrix })
}

#[derive(Debug, PartialEq)]
struct HeaderDict {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

#[derive(Debug, PartialEq)]
enum Literal {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

/// Parser for the python-literal dict subset that npy headers use.
struct Cursor<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn expect(&mut self, b: u8) -> std::result::Result<(), String> {
        match self.peek() {
            Some(c) if c == b => {
                self.pos += 1;
                Ok(())
            }
            other => Err(format!(
                "expected '{}' at byte {}, found {:?}",
                b as char,
                self.pos,
                other.map(|c| c as char)
            )),
        }
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err(format!("expected a string at byte {}", self.pos)),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos == self.s.len() {
            return Err("unterminated string".into());
        }
        let out = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(out)
    }

    fn integer(&mut self) -> std::result::Result<usize, String> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.s[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| format!("expected a dimension at byte {start}"))
    }

    fn literal(&mut self) -> std::result::Result<Literal, String> {
        match self.peek() {
            Some(b'\'' | b'"') => self.string().map(Literal::Str),
            Some(b'(') => {
                self.pos += 1;
                let mut dims = Vec::new();
                loop {
                    if self.peek() == Some(b')') {
                        self.pos += 1;
                        break;
                    }
                    dims.push(self.integer()?);
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b')') => {}
                        _ => return Err("malformed shape tuple".into()),
                    }
                }
                Ok(Literal::Tuple(dims))
            }
            _ => {
                let rest = &self.s[self.pos..];
                if rest.starts_with(b"True") {
                    self.pos += 4;
                    Ok(Literal::Bool(true))
                } else if rest.starts_with(b"False") {
                    self.pos += 5;
                    Ok(Literal::Bool(false))
                } else {
                    Err(format!("unsupported value at byte {}", self.pos))
                }
            }
        }
    }
}

impl HeaderDict {
    fn parse(text: &str) -> std::result::Result<Self, String> {
        if !text.ends_with('\n') {
            return Err("header must end with a newline".into());
        }
        let mut cur = Cursor {
            s: text.as_bytes(),
            pos: 0,
        };
        let (mut descr, mut fortran, mut shape) = (None, None, None);
        cur.expect(b'{')?;
        loop {
            if cur.peek() == Some(b'}') {
                cur.pos += 1;
                break;
            }
            let key = cur.string()?;
            cur.expect(b':')?;
            let value = cur.literal()?;
            let slot_taken = match (key.as_str(), value) {
                ("descr", Literal::Str(s)) => descr.replace(s).is_some(),
                ("fortran_order", Literal::Bool(b)) => fortran.replace(b).is_some(),
                ("shape", Literal::Tuple(t)) => shape.replace(t).is_some(),
                ("descr" | "fortran_order" | "shape", _) => {
                    return Err(format!("wrong value type for key {key:?}"))
                }
                _ => return Err(format!("unexpected header key {key:?}")),
            };
            if slot_taken {
                return Err(format!("duplicate header key {key:?}"));
            }
            match cur.peek() {
                Some(b',') => cur.pos += 1,
                Some(b'}') => {}
                _ => return Err("expected ',' or '}' in header dict".into()),
            }
        }
        if cur.peek().is_some() {
            return Err("trailing characters after header dict".into());
        }
        Ok(HeaderDict {
            descr: descr.ok_or("missing key 'descr'")?,
            fortran_order: fortran.ok_or("missing key 'fortran_order'")?,
            shape: shape.ok_or("missing key 'shape'")?,
        })
    }
}
