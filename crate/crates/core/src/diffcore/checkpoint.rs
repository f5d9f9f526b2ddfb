//! Model checkpoints: named tensors in a little-endian binary container.
//!
//! Layout: magic `TGCK`, u32 format version, u32 entry count, then per
//! entry a u32 name length, the UTF-8 name, u32 rows, u32 cols, and
//! `rows * cols` little-endian f64 values. Files are written to a
//! temporary sibling and renamed into place.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tensor::{Parameter, Tensor};
use super::DiffError;

const MAGIC: &[u8; 4] = b"TGCK";
const VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, entries: &[(&str, &Tensor)]) -> Result<(), DiffError> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(entries.len() as u32).to_le_bytes())?;
        for (name, tensor) in entries {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&(tensor.rows() as u32).to_le_bytes())?;
            w.write_all(&(tensor.cols() as u32).to_le_bytes())?;
            for v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_params(path: &Path, params: &[&Parameter]) -> Result<(), DiffError> {
    let entries: Vec<(&str, &Tensor)> = params.iter().map(|p| (p.name.as_str(), &p.value)).collect();
    save_checkpoint(path, &entries)
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>, DiffError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DiffError::BadCheckpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(DiffError::BadCheckpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| DiffError::BadCheckpoint("non-UTF-8 entry name".into()))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut data = vec![0.0; rows * cols];
        let mut buf = [0u8; 8];
        for v in &mut data {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        entries.push((name, Tensor::from_vec(rows, cols, data)?));
    }
    Ok(entries)
}

/// Copies checkpoint entries into the matching parameters by name.
/// Every parameter must be present with a matching shape.
pub fn restore_params(entries: &[(String, Tensor)], params: &mut [&mut Parameter]) -> Result<(), DiffError> {
    for p in params.iter_mut() {
        let found = entries
            .iter()
            .find(|(name, _)| *name == p.name)
            .ok_or_else(|| DiffError::BadCheckpoint(format!("missing entry `{}`", p.name)))?;
        if found.1.shape() != p.value.shape() {
            return Err(DiffError::BadCheckpoint(format!(
                "entry `{}` has shape {:?}, expected {:?}",
                p.name,
                found.1.shape(),
                p.value.shape()
            )));
        }
        p.value = found.1.clone();
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, DiffError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_names_shapes_and_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let a = Tensor::from_vec(2, 3, vec![1.5, -2.25, 0.0, f64::MIN_POSITIVE, 3.0, -0.5]).unwrap();
        let b = Tensor::scalar(42.0);
        save_checkpoint(&path, &[("layer.w", &a), ("layer.b", &b)]).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "layer.w");
        assert_eq!(loaded[0].1, a);
        assert_eq!(loaded[1].0, "layer.b");
        assert_eq!(loaded[1].1, b);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(DiffError::BadCheckpoint(_)) | Err(DiffError::Io(_))
        ));
    }
}
