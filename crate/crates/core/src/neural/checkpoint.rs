//! Self-describing binary checkpoint: magic, version, then named tensors
//! with shapes. All integers little-endian; payloads are raw f64 bits, so a
//! save/load round trip is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use super::store::ParamStore;
use super::tensor::Tensor;

const MAGIC: &[u8; 4] = b"XLNT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
}

pub fn tensors_to_bytes(tensors: impl Iterator<Item = (String, Tensor)>) -> Vec<u8> {
    let items: Vec<(String, Tensor)> = tensors.collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(items.len() as u64).to_le_bytes());
    for (name, tensor) in &items {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_named_tensors(
    path: &Path,
    tensors: impl Iterator<Item = (String, Tensor)>,
) -> Result<(), CheckpointError> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&tensors_to_bytes(tensors))?;
    Ok(())
}

pub fn tensors_from_bytes(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let mut cur = Cursor { bytes, pos: 0 };

    if cur.take(4)? != MAGIC {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::Format(format!(
            "unsupported version {version}"
        )));
    }
    let count = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
    let mut items = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Format("tensor name is not UTF-8".into()))?;
        let ndim = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
        }
        items.push((name, Tensor::new(shape, data)));
    }
    if cur.pos != bytes.len() {
        return Err(CheckpointError::Format("trailing bytes".into()));
    }
    Ok(items)
}

pub fn read_named_tensors(path: &Path) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    tensors_from_bytes(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

impl ParamStore {
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), CheckpointError> {
        write_named_tensors(path, self.iter().map(|(n, t)| (n.to_string(), t.clone())))
    }

    pub fn load_checkpoint(path: &Path) -> Result<ParamStore, CheckpointError> {
        let mut store = ParamStore::new();
        for (name, tensor) in read_named_tensors(path)? {
            store.insert(name, tensor);
        }
        Ok(store)
    }
}
