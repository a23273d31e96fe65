//! Checkpoint container: a flat map from name strings to tensors.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  b"AKPT"
//! version u32      currently 1
//! count   u32
//! entry*  name_len u32, name utf-8 bytes,
//!         ndim u32, dims u32 × ndim,
//!         payload f32 × product(dims)
//! ```
//!
//! Payloads are always 32-bit floats regardless of the scalar type in use;
//! loading into a wider type widens, saving from a wider type narrows.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"AKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl CheckpointEntry {
    pub fn from_tensor<S: Scalar>(name: &str, t: &Tensor<S>) -> Self {
        CheckpointEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            values: t.data().iter().map(|v| v.to_f64_lossy() as f32).collect(),
        }
    }

    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        Tensor::new(
            self.shape.clone(),
            self.values.iter().map(|&v| S::of(v as f64)).collect(),
        )
    }
}

/// Write entries sorted by name so identical contents give identical bytes.
pub fn save(path: &Path, entries: &[CheckpointEntry]) -> Result<()> {
    let mut sorted: Vec<&CheckpointEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));

    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);

    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(sorted.len() as u32).to_le_bytes()).map_err(io_err)?;
    for entry in sorted {
        let name = entry.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(name).map_err(io_err)?;
        w.write_all(&(entry.shape.len() as u32).to_le_bytes())
            .map_err(io_err)?;
        for &d in &entry.shape {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io_err)?;
        }
        let numel: usize = entry.shape.iter().product();
        if numel != entry.values.len() {
            return Err(Error::Checkpoint(format!(
                "entry {:?}: shape {:?} vs {} values",
                entry.name,
                entry.shape,
                entry.values.len()
            )));
        }
        for &v in &entry.values {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn load(path: &Path) -> Result<Vec<CheckpointEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let version = read_u32(&mut r, path)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported checkpoint version {version} (expected {VERSION})",
            path.display()
        )));
    }
    let count = read_u32(&mut r, path)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r, path)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(io_err)?;
        let name = String::from_utf8(name_bytes).map_err(|_| {
            Error::Checkpoint(format!("{}: entry name is not utf-8", path.display()))
        })?;
        let ndim = read_u32(&mut r, path)? as usize;
        if ndim > 2 {
            return Err(Error::Checkpoint(format!(
                "{}: entry {name:?} has rank {ndim} > 2",
                path.display()
            )));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut r, path)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        let mut buf = [0u8; 4];
        for _ in 0..numel {
            r.read_exact(&mut buf).map_err(io_err)?;
            values.push(f32::from_le_bytes(buf));
        }
        entries.push(CheckpointEntry {
            name,
            shape,
            values,
        });
    }
    Ok(entries)
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_bits() {
        let dir = std::env::temp_dir().join("anticipate-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.bin");

        let entries = vec![
            CheckpointEntry {
                name: "b.weight".into(),
                shape: vec![2, 3],
                values: vec![1.0, -2.5, 0.0, f32::MIN_POSITIVE, 3.25e7, -0.125],
            },
            CheckpointEntry {
                name: "a.bias".into(),
                shape: vec![1, 2],
                values: vec![0.5, 1.5],
            },
        ];
        save(&path, &entries).unwrap();
        let loaded = load(&path).unwrap();
        // Entries come back sorted by name.
        assert_eq!(loaded[0].name, "a.bias");
        assert_eq!(loaded[1].name, "b.weight");
        assert_eq!(loaded[1].shape, vec![2, 3]);
        assert_eq!(loaded[1].values, entries[0].values);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = std::env::temp_dir().join("anticipate-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("not-a-checkpoint.bin");
        std::fs::write(&path, b"PNG\x0drubbish").unwrap();
        let err = load(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
        std::fs::remove_file(&path).ok();
    }
}
