//! Little-endian float containers shared by weight files and volume dumps.
//!
//! A matrix file is a 16-byte header (`magic`, `rows`, `cols`, reserved; all
//! u32 except the 4-byte magic) followed by `rows * cols` f32 values in
//! row-major order. A section file starts with a 16-byte header (`SFWS`,
//! section count, two reserved u32), then one 40-byte table entry per
//! section (32-byte zero-padded name, rows, cols) and finally the payloads
//! in table order.

use std::io::{Read, Write};

use thiserror::Error;

pub const MATRIX_MAGIC: [u8; 4] = *b"SFWM";
pub const SECTIONS_MAGIC: [u8; 4] = *b"SFWS";

const NAME_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("truncated or malformed container: {0}")]
    Malformed(String),
    #[error("missing section {0:?}")]
    MissingSection(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, ContainerError> {
        if data.len() != rows * cols {
            return Err(ContainerError::Malformed(format!(
                "{rows}x{cols} matrix with {} values",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out = self · input`.
    pub fn apply(&self, input: &[f32], out: &mut [f32]) {
        debug_assert_eq!(input.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = row.iter().zip(input).map(|(w, x)| w * x).sum();
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), ContainerError> {
        w.write_all(&MATRIX_MAGIC)?;
        write_u32(w, self.rows as u32)?;
        write_u32(w, self.cols as u32)?;
        write_u32(w, 0)?;
        write_f32s(w, &self.data)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, ContainerError> {
        expect_magic(r, MATRIX_MAGIC)?;
        let rows = read_u32(r)? as usize;
        let cols = read_u32(r)? as usize;
        let _reserved = read_u32(r)?;
        let data = read_f32s(r, rows * cols)?;
        Ok(Self { rows, cols, data })
    }
}

/// Named matrices in a single file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sections {
    entries: Vec<(String, Matrix)>,
}

impl Sections {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, m: Matrix) {
        self.entries.push((name.into(), m));
    }

    pub fn get(&self, name: &str) -> Result<&Matrix, ContainerError> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| ContainerError::MissingSection(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), ContainerError> {
        w.write_all(&SECTIONS_MAGIC)?;
        write_u32(w, self.entries.len() as u32)?;
        write_u32(w, 0)?;
        write_u32(w, 0)?;
        for (name, m) in &self.entries {
            let bytes = name.as_bytes();
            if bytes.len() > NAME_LEN {
                return Err(ContainerError::Malformed(format!(
                    "section name {name:?} longer than {NAME_LEN} bytes"
                )));
            }
            let mut padded = [0u8; NAME_LEN];
            padded[..bytes.len()].copy_from_slice(bytes);
            w.write_all(&padded)?;
            write_u32(w, m.rows as u32)?;
            write_u32(w, m.cols as u32)?;
        }
        for (_, m) in &self.entries {
            write_f32s(w, &m.data)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, ContainerError> {
        expect_magic(r, SECTIONS_MAGIC)?;
        let count = read_u32(r)? as usize;
        read_u32(r)?;
        read_u32(r)?;
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            let mut name = [0u8; NAME_LEN];
            r.read_exact(&mut name)?;
            let end = name.iter().position(|&b| b == 0).unwrap_or(NAME_LEN);
            let name = String::from_utf8(name[..end].to_vec())
                .map_err(|_| ContainerError::Malformed("section name is not utf-8".into()))?;
            let rows = read_u32(r)? as usize;
            let cols = read_u32(r)? as usize;
            table.push((name, rows, cols));
        }
        let mut entries = Vec::with_capacity(count);
        for (name, rows, cols) in table {
            let data = read_f32s(r, rows * cols)?;
            entries.push((name, Matrix { rows, cols, data }));
        }
        Ok(Self { entries })
    }
}

pub(crate) fn expect_magic<R: Read>(r: &mut R, expected: [u8; 4]) -> Result<(), ContainerError> {
    let mut found = [0u8; 4];
    r.read_exact(&mut found)?;
    if found != expected {
        return Err(ContainerError::BadMagic { expected, found });
    }
    Ok(())
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32, ContainerError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, vals: &[f32]) -> Result<(), ContainerError> {
    let mut buf = Vec::with_capacity(vals.len() * 4);
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>, ContainerError> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ContainerError::Malformed(format!("expected {n} floats"))
        } else {
            e.into()
        }
    })?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_header_layout() {
        let m = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 6 * 4);
        assert_eq!(&buf[..4], b"SFWM");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 3);
        assert_eq!(f32::from_le_bytes(buf[16..20].try_into().unwrap()), 1.0);
        let back = Matrix::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn sections_round_trip() {
        let mut s = Sections::new();
        s.push("ray_kernel", Matrix::new(1, 2, vec![0.5, -1.0]).unwrap());
        s.push("bias", Matrix::zeros(3, 1));
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        let back = Sections::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, s);
        assert!(matches!(
            back.get("nope"),
            Err(ContainerError::MissingSection(_))
        ));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut buf = Vec::new();
        Matrix::zeros(4, 4).write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            Matrix::read_from(&mut bad.as_slice()),
            Err(ContainerError::BadMagic { .. })
        ));
        buf.truncate(30);
        assert!(Matrix::read_from(&mut buf.as_slice()).is_err());
    }
}
