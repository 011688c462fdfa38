//! Tagged binary container: `[magic; 4][u32 LE version][u64 LE header length]
//! [JSON header][raw little-endian payloads in directory order]`.

use std::fs;
use std::io::Write;
use std::path::Path;

use lrsim_tensor::{DType, Element, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const VERSION: u32 = 1;
const PREFIX_LEN: usize = 4 + 4 + 8;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("format error: {0}")]
    Format(String),
    #[error("integrity error: {0}")]
    Integrity(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl ArrayData {
    pub fn dtype(&self) -> DType {
        match self {
            ArrayData::F32(_) => DType::F32,
            ArrayData::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn bytes(&self) -> Vec<u8> {
        match self {
            ArrayData::F32(v) => f32::to_le_bytes_vec(v),
            ArrayData::F64(v) => f64::to_le_bytes_vec(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn f32(name: impl Into<String>, shape: &[usize], data: Vec<f32>) -> Self {
        NamedArray { name: name.into(), shape: shape.to_vec(), data: ArrayData::F32(data) }
    }

    pub fn f64(name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Self {
        NamedArray { name: name.into(), shape: shape.to_vec(), data: ArrayData::F64(data) }
    }

    pub fn from_tensor<T: Element>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let data = match T::DTYPE {
            DType::F32 => ArrayData::F32(t.data().iter().map(|v| v.to_f32().expect("f32")).collect()),
            DType::F64 => ArrayData::F64(t.to_f64_vec()),
        };
        NamedArray { name: name.into(), shape: t.shape().to_vec(), data }
    }

    /// Converts to a tensor of element type `T`; the stored dtype must match.
    pub fn to_tensor<T: Element>(&self) -> Result<Tensor<T>, ContainerError> {
        if self.data.dtype() != T::DTYPE {
            return Err(ContainerError::Format(format!(
                "`{}` is {}, requested {}",
                self.name,
                self.data.dtype().name(),
                T::DTYPE.name()
            )));
        }
        let values: Vec<T> = match &self.data {
            ArrayData::F32(v) => v.iter().map(|&x| T::from_f32(x).expect("same dtype")).collect(),
            ArrayData::F64(v) => v.iter().map(|&x| T::from_f64_lossy(x)).collect(),
        };
        Tensor::from_vec(values, &self.shape).map_err(|e| ContainerError::Format(e.to_string()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DirEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arrays: Vec<DirEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

/// A set of named arrays plus free-form JSON metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub arrays: Vec<NamedArray>,
    pub metadata: serde_json::Value,
}

impl Container {
    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&NamedArray, ContainerError> {
        self.get(name).ok_or_else(|| ContainerError::Format(format!("missing array `{name}`")))
    }

    pub fn push(&mut self, array: NamedArray) {
        self.arrays.push(array);
    }

    pub fn encode(&self, magic: [u8; 4]) -> Result<Vec<u8>, ContainerError> {
        let mut entries = Vec::with_capacity(self.arrays.len());
        let mut payload = Vec::new();
        for a in &self.arrays {
            let n: usize = a.shape.iter().product();
            if n != a.data.len() {
                return Err(ContainerError::Format(format!(
                    "`{}` declares shape {:?} but holds {} values",
                    a.name,
                    a.shape,
                    a.data.len()
                )));
            }
            let bytes = a.data.bytes();
            entries.push(DirEntry {
                name: a.name.clone(),
                dtype: a.data.dtype().name().to_string(),
                shape: a.shape.clone(),
                offset: payload.len() as u64,
                nbytes: bytes.len() as u64,
            });
            payload.extend_from_slice(&bytes);
        }
        let header = serde_json::to_vec(&Header { arrays: entries, metadata: self.metadata.clone() })
            .map_err(|e| ContainerError::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + payload.len());
        out.extend_from_slice(&magic);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn decode(magic: [u8; 4], bytes: &[u8]) -> Result<Self, ContainerError> {
        if bytes.len() < PREFIX_LEN {
            if bytes.len() >= 4 && bytes[..4] != magic {
                return Err(bad_magic(magic, &bytes[..4]));
            }
            return Err(ContainerError::Integrity(format!("file is {} bytes, shorter than the prefix", bytes.len())));
        }
        if bytes[..4] != magic {
            return Err(bad_magic(magic, &bytes[..4]));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(ContainerError::Format(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[PREFIX_LEN..];
        if body.len() < hlen {
            return Err(ContainerError::Integrity(format!("header needs {hlen} bytes, {} present", body.len())));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| ContainerError::Format(format!("bad header: {e}")))?;
        let payload = &body[hlen..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            let n: usize = e.shape.iter().product();
            let (start, len) = (e.offset as usize, e.nbytes as usize);
            let end = start.checked_add(len).ok_or_else(|| ContainerError::Format("offset overflow".into()))?;
            if end > payload.len() {
                return Err(ContainerError::Integrity(format!(
                    "`{}` needs payload bytes {start}..{end}, only {} present",
                    e.name,
                    payload.len()
                )));
            }
            let raw = &payload[start..end];
            let data = match e.dtype.as_str() {
                "f32" if len == 4 * n => ArrayData::F32(f32::from_le_bytes_slice(raw)),
                "f64" if len == 8 * n => ArrayData::F64(f64::from_le_bytes_slice(raw)),
                "f32" | "f64" => {
                    return Err(ContainerError::Integrity(format!("`{}` byte count does not match its shape", e.name)))
                }
                other => return Err(ContainerError::Format(format!("unknown dtype `{other}`"))),
            };
            arrays.push(NamedArray { name: e.name, shape: e.shape, data });
        }
        Ok(Container { arrays, metadata: header.metadata })
    }

    /// Writes via a temporary sibling file and rename.
    pub fn save(&self, path: &Path, magic: [u8; 4]) -> Result<(), ContainerError> {
        let bytes = self.encode(magic)?;
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path, magic: [u8; 4]) -> Result<Self, ContainerError> {
        let bytes = fs::read(path).map_err(|source| io_err(path, source))?;
        Self::decode(magic, &bytes)
    }
}

fn bad_magic(expected: [u8; 4], found: &[u8]) -> ContainerError {
    ContainerError::Format(format!(
        "wrong magic {:?}, expected {:?}",
        String::from_utf8_lossy(found),
        String::from_utf8_lossy(&expected)
    ))
}

fn io_err(path: &Path, source: std::io::Error) -> ContainerError {
    ContainerError::Io { path: path.display().to_string(), source }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ContainerError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|source| io_err(dir, source))?;
    let file_name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{file_name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(source) = result {
        let _ = fs::remove_file(&tmp);
        return Err(io_err(path, source));
    }
    Ok(())
}
