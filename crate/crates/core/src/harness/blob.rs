//! Raw little-endian f64 blobs with FNV-1a checksums, written atomically.

use std::fs;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DTYPE: &str = "f64";

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Manifest record for one tensor blob.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub file: String,
    /// FNV-1a 64 of the blob bytes, 16 hex digits.
    pub fnv1a64: String,
}

pub fn f64_bytes(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn bytes_f64(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

fn tmp_sibling(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = tmp_sibling(path);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Builds a directory under a temp name via `fill`, then renames it into
/// place, replacing any previous directory of that name.
pub fn write_dir_atomic(dir: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = tmp_sibling(dir);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    fill(&tmp)?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
}

/// Writes `data` as `dir/file` and returns its manifest entry.
pub fn write_tensor(
    dir: &Path,
    file: &str,
    name: &str,
    shape: &[usize],
    data: &[f64],
) -> Result<TensorEntry> {
    let expected: usize = shape.iter().product();
    if expected != data.len() {
        return Err(Error::invalid(format!(
            "tensor `{name}` has {} values but shape {shape:?}",
            data.len()
        )));
    }
    let bytes = f64_bytes(data);
    let path = dir.join(file);
    fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
    Ok(TensorEntry {
        name: name.to_string(),
        shape: shape.to_vec(),
        dtype: DTYPE.to_string(),
        file: file.to_string(),
        fnv1a64: format!("{:016x}", fnv1a64(&bytes)),
    })
}

/// Reads and verifies the blob behind `entry`.
pub fn read_tensor(dir: &Path, entry: &TensorEntry) -> Result<Vec<f64>> {
    let path = dir.join(&entry.file);
    let checksum_err = || Error::Checksum {
        tensor: entry.name.clone(),
        path: path.clone(),
    };
    if entry.dtype != DTYPE {
        return Err(Error::invalid(format!(
            "tensor `{}` has dtype {}, expected {DTYPE}",
            entry.name, entry.dtype
        )));
    }
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(checksum_err()),
        Err(e) => return Err(Error::io(&path, e)),
    };
    let expected: usize = entry.shape.iter().product::<usize>() * 8;
    if bytes.len() != expected || format!("{:016x}", fnv1a64(&bytes)) != entry.fnv1a64 {
        return Err(checksum_err());
    }
    Ok(bytes_f64(&bytes))
}

/// Length-prefixed f64 array: a little-endian u64 count, then the values.
pub fn write_f64_array(path: &Path, data: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + 8 * data.len());
    bytes.extend_from_slice(&(data.len() as u64).to_le_bytes());
    bytes.extend(f64_bytes(data));
    write_atomic(path, &bytes)
}

pub fn read_f64_array(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = || {
        Error::invalid(format!(
            "{} is not a length-prefixed f64 array",
            path.display()
        ))
    };
    if bytes.len() < 8 {
        return Err(bad());
    }
    let n = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    if bytes.len() - 8 != n.checked_mul(8).ok_or_else(bad)? {
        return Err(bad());
    }
    Ok(bytes_f64(&bytes[8..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn tensor_round_trip_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        let data = vec![1.5, -0.0, f64::MIN_POSITIVE, 1e300, -7.25, 3.0];
        let e = write_tensor(dir.path(), "w.bin", "w", &[2, 3], &data).unwrap();
        let back = read_tensor(dir.path(), &e).unwrap();
        assert_eq!(
            back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let path = dir.path().join("w.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes[3] ^= 1;
        fs::write(&path, bytes).unwrap();
        assert!(
            matches!(read_tensor(dir.path(), &e), Err(Error::Checksum { tensor, .. }) if tensor == "w")
        );
        assert!(write_tensor(dir.path(), "x.bin", "x", &[4], &data).is_err());
    }

    #[test]
    fn array_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        write_f64_array(&p, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 32);
        assert_eq!(read_f64_array(&p).unwrap(), vec![1.0, 2.0, 3.0]);
        fs::write(&p, [0u8; 12]).unwrap();
        assert!(read_f64_array(&p).is_err());
    }
}
