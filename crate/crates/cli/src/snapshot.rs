//! Parameter snapshot format.
//!
//! Layout: magic bytes `SAGEPS1\n`, then a little-endian u32 tensor count,
//! then per tensor: u16 name length, UTF-8 name, u8 kind (0 = vector,
//! 1 = matrix), the dimensions as u32s (one for vectors: length; two for
//! matrices: rows then columns), and the values as f64 little-endian in
//! row-major order.

use std::fs;
use std::path::Path;

use sage_core::params::{ParamSet, ParamTensor, TensorKind};

use crate::CliError;

const MAGIC: &[u8; 8] = b"SAGEPS1\n";

pub fn write_snapshot(path: &Path, params: &ParamSet) -> Result<(), CliError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(params.tensors().len() as u32).to_le_bytes());
    for tensor in params.tensors() {
        let name = tensor.name().as_bytes();
        assert!(name.len() <= u16::MAX as usize, "tensor name too long");
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        match tensor.kind() {
            TensorKind::Vector { len } => {
                buf.push(0);
                buf.extend_from_slice(&(len as u32).to_le_bytes());
            }
            TensorKind::Matrix { rows, cols } => {
                buf.push(1);
                buf.extend_from_slice(&(rows as u32).to_le_bytes());
                buf.extend_from_slice(&(cols as u32).to_le_bytes());
            }
        }
        for v in tensor.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(CliError::from)
}

pub fn read_snapshot(path: &Path) -> Result<ParamSet, CliError> {
    let bytes = fs::read(path)?;
    let mut cursor = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    let magic = cursor.take(8)?;
    if magic != MAGIC {
        return Err(CliError::config(format!(
            "{}: bad snapshot magic",
            path.display()
        )));
    }
    let count = cursor.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cursor.u16()? as usize;
        let name = String::from_utf8(cursor.take(name_len)?.to_vec())
            .map_err(|_| CliError::config(format!("{}: tensor name not UTF-8", path.display())))?;
        let kind = cursor.u8()?;
        let tensor = match kind {
            0 => {
                let len = cursor.u32()? as usize;
                ParamTensor::vector(name, cursor.f64s(len)?)
            }
            1 => {
                let rows = cursor.u32()? as usize;
                let cols = cursor.u32()? as usize;
                ParamTensor::matrix(name, rows, cols, cursor.f64s(rows * cols)?)
            }
            other => {
                return Err(CliError::config(format!(
                    "{}: unknown tensor kind {other}",
                    path.display()
                )))
            }
        };
        tensors.push(tensor);
    }
    cursor.expect_end()?;
    ParamSet::new(tensors)
        .map_err(|e| CliError::config(format!("{}: invalid snapshot: {e}", path.display())))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        if self.pos + n > self.bytes.len() {
            return Err(CliError::config(format!(
                "{}: snapshot truncated",
                self.path.display()
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, CliError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CliError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CliError> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn expect_end(&self) -> Result<(), CliError> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(CliError::config(format!(
                "{}: trailing bytes after snapshot payload",
                self.path.display()
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trip() {
        let dir = std::env::temp_dir().join(format!("sageps-test-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("params.sageps");
        let params = ParamSet::new(vec![
            ParamTensor::matrix("w", 2, 3, vec![1.0, -2.5, 0.0, 3.25, 1e-300, -0.0]),
            ParamTensor::vector("b", vec![42.0, f64::MIN_POSITIVE]),
        ])
        .unwrap();
        write_snapshot(&path, &params).unwrap();
        let back = read_snapshot(&path).unwrap();
        assert_eq!(back, params);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn rejects_corrupt_snapshots() {
        let dir = std::env::temp_dir().join(format!("sageps-bad-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.sageps");
        fs::write(&path, b"NOTMAGIC").unwrap();
        assert!(read_snapshot(&path).is_err());
        fs::remove_dir_all(&dir).unwrap();
    }
}
