//! `GEOF` columnar binary container.
//!
//! All multi-byte integers and floats are little-endian.
//!
//! | offset | size        | field                                             |
//! |--------|-------------|---------------------------------------------------|
//! | 0      | 4           | magic `b"GEOF"`                                   |
//! | 4      | 2           | format version (`u16`, currently 1)               |
//! | 6      | 2           | frame kind (`u16`): 1 series, 2 features, 3 cells, 4 economy |
//! | 8      | 8           | `n_rows` (`u64`): cells, or records for economy   |
//! | 16     | 8           | `n_cols` (`u64`): time steps or named columns     |
//! | 24     | 4           | `meta_len` (`u32`)                                |
//! | 28     | meta_len    | UTF-8 metadata, one `key=value` per line          |
//! | ..     | 8 · n_rows  | row keys (`i64`, cell ids)                        |
//! | ..     | n_cols × (4 + len) | column labels, each `u32` length + UTF-8   |
//! | ..     | 8 · n_rows · n_cols | values (`f64`), column-major: all rows of column 0, then column 1, ... |
//!
//! Missing values are stored as the quiet NaN bit pattern `0x7ff8_0000_0000_0000`.
//! Series frames label columns with ISO-8601 timestamps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GEOF";
pub const VERSION: u16 = 1;
pub const MISSING_BITS: u64 = 0x7ff8_0000_0000_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum FrameKind {
    Series = 1,
    Features = 2,
    Cells = 3,
    Economy = 4,
}

impl FrameKind {
    fn from_u16(v: u16) -> Option<Self> {
        match v {
            1 => Some(FrameKind::Series),
            2 => Some(FrameKind::Features),
            3 => Some(FrameKind::Cells),
            4 => Some(FrameKind::Economy),
            _ => None,
        }
    }
}

/// In-memory image of a `GEOF` file. `values` is column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub kind: FrameKind,
    pub meta: Vec<(String, String)>,
    pub row_keys: Vec<i64>,
    pub col_labels: Vec<String>,
    pub values: Vec<f64>,
}

impl Frame {
    pub fn n_rows(&self) -> usize {
        self.row_keys.len()
    }

    pub fn n_cols(&self) -> usize {
        self.col_labels.len()
    }

    pub fn column(&self, c: usize) -> &[f64] {
        let n = self.n_rows();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        assert_eq!(self.values.len(), self.n_rows() * self.n_cols());
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.kind as u16).to_le_bytes())?;
        w.write_all(&(self.n_rows() as u64).to_le_bytes())?;
        w.write_all(&(self.n_cols() as u64).to_le_bytes())?;
        let meta: String = self
            .meta
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(meta.as_bytes())?;
        for key in &self.row_keys {
            w.write_all(&key.to_le_bytes())?;
        }
        for label in &self.col_labels {
            w.write_all(&(label.len() as u32).to_le_bytes())?;
            w.write_all(label.as_bytes())?;
        }
        for v in &self.values {
            let bits = if v.is_nan() { MISSING_BITS } else { v.to_bits() };
            w.write_all(&bits.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Frame> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        Self::read_from(&mut r).map_err(|e| match e {
            ReadError::Io(e) => Error::io(path, e),
            ReadError::Format(message) => Error::Format {
                path: path.to_path_buf(),
                message,
            },
        })
    }

    fn read_from<R: Read>(r: &mut R) -> Result<Frame, ReadError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ReadError::Format(format!("bad magic {magic:?}")));
        }
        let version = read_u16(r)?;
        if version != VERSION {
            return Err(ReadError::Format(format!("unsupported version {version}")));
        }
        let kind_raw = read_u16(r)?;
        let kind = FrameKind::from_u16(kind_raw)
            .ok_or_else(|| ReadError::Format(format!("unknown frame kind {kind_raw}")))?;
        let n_rows = read_u64(r)? as usize;
        let n_cols = read_u64(r)? as usize;
        let n_values = n_rows
            .checked_mul(n_cols)
            .filter(|n| *n <= (1 << 34))
            .ok_or_else(|| ReadError::Format(format!("implausible dims {n_rows} x {n_cols}")))?;

        let meta_len = read_u32(r)? as usize;
        let meta_text = read_string(r, meta_len)?;
        let meta = meta_text
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| match l.split_once('=') {
                Some((k, v)) => Ok((k.to_string(), v.to_string())),
                None => Err(ReadError::Format(format!("bad metadata line '{l}'"))),
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut row_keys = Vec::with_capacity(n_rows);
        for _ in 0..n_rows {
            row_keys.push(read_i64(r)?);
        }
        let mut col_labels = Vec::with_capacity(n_cols);
        for _ in 0..n_cols {
            let len = read_u32(r)? as usize;
            col_labels.push(read_string(r, len)?);
        }

        let mut raw = vec![0u8; n_values * 8];
        r.read_exact(&mut raw)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(ReadError::Format("trailing bytes after values".into()));
        }

        Ok(Frame {
            kind,
            meta,
            row_keys,
            col_labels,
            values,
        })
    }
}

enum ReadError {
    Io(std::io::Error),
    Format(String),
}

impl From<std::io::Error> for ReadError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ReadError::Format("truncated file".into())
        } else {
            ReadError::Io(e)
        }
    }
}

fn read_u16<R: Read>(r: &mut R) -> std::io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_i64<R: Read>(r: &mut R) -> std::io::Result<i64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(i64::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, len: usize) -> Result<String, ReadError> {
    if len > (1 << 24) {
        return Err(ReadError::Format(format!("string length {len} too large")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| ReadError::Format("invalid UTF-8".into()))
}
