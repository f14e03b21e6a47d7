//! Binary named-tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "STC1"                    magic
//! u32                       tensor count
//! per tensor:
//!   u16 + bytes             name length and name
//!   u8                      dtype (0 = f32, 1 = i32, 2 = u8)
//!   u8                      rank
//!   rank × u64              dims
//!   payload                 row-major elements
//! ```
//!
//! The file ends exactly after the last payload. Readers reject anything
//! else with an error carrying the byte offset of the problem.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"STC1";
pub const MAX_RANK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    I32 = 1,
    U8 = 2,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    I32(Vec<i32>),
    U8(Vec<u8>),
}

impl Payload {
    pub fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::I32(_) => DType::I32,
            Payload::U8(_) => DType::U8,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::I32(v) => v.len(),
            Payload::U8(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub payload: Payload,
}

impl NamedTensor {
    pub fn float<S: Scalar>(name: &str, t: &Tensor<S>) -> Self {
        NamedTensor {
            name: name.to_string(),
            dims: t.shape().to_vec(),
            payload: Payload::F32(t.data().iter().map(|v| v.as_f64() as f32).collect()),
        }
    }

    pub fn int(name: &str, dims: &[usize], data: Vec<i32>) -> Self {
        NamedTensor {
            name: name.to_string(),
            dims: dims.to_vec(),
            payload: Payload::I32(data),
        }
    }

    pub fn bytes(name: &str, data: Vec<u8>) -> Self {
        NamedTensor {
            name: name.to_string(),
            dims: vec![data.len()],
            payload: Payload::U8(data),
        }
    }

    pub fn as_bytes(&self) -> Result<&[u8]> {
        match &self.payload {
            Payload::U8(v) => Ok(v),
            _ => Err(Error::Data(format!("`{}` is not a u8 tensor", self.name))),
        }
    }

    pub fn as_i32(&self) -> Result<&[i32]> {
        match &self.payload {
            Payload::I32(v) => Ok(v),
            _ => Err(Error::Data(format!("`{}` is not an i32 tensor", self.name))),
        }
    }

    pub fn to_float<S: Scalar>(&self) -> Result<Tensor<S>> {
        match &self.payload {
            Payload::F32(v) => Tensor::new(&self.dims, v.iter().map(|&x| S::of(x as f64)).collect()),
            _ => Err(Error::Data(format!("`{}` is not an f32 tensor", self.name))),
        }
    }
}

pub fn encode(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let count = u32::try_from(tensors.len()).map_err(|_| Error::Contract("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for t in tensors {
        if t.name.is_empty() || !seen.insert(t.name.as_str()) {
            return Err(Error::Contract(format!(
                "tensor names must be unique and non-empty (`{}`)",
                t.name
            )));
        }
        let name_len = u16::try_from(t.name.len())
            .map_err(|_| Error::Contract(format!("name `{}` longer than 65535 bytes", t.name)))?;
        if t.dims.len() > MAX_RANK {
            return Err(Error::Contract(format!("rank of `{}` exceeds {MAX_RANK}", t.name)));
        }
        if t.dims.iter().product::<usize>() != t.payload.len() {
            return Err(Error::Contract(format!(
                "`{}`: dims {:?} do not match {} elements",
                t.name,
                t.dims,
                t.payload.len()
            )));
        }
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.payload.dtype() as u8);
        out.push(t.dims.len() as u8);
        for &d in &t.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &t.payload {
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U8(v) => out.extend_from_slice(v),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::format(
                    self.pos as u64,
                    format!("truncated: {what} needs {n} bytes, {} left", self.buf.len() - self.pos),
                )
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected STC1"));
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for _ in 0..count {
        let at = r.pos as u64;
        let len = r.u16("name length")? as usize;
        if len == 0 {
            return Err(Error::format(at, "empty tensor name"));
        }
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::format(at + 2, "tensor name is not UTF-8"))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::format(at, format!("duplicate tensor name `{name}`")));
        }
        let dtype_at = r.pos as u64;
        let dtype = match r.u8("dtype")? {
            0 => DType::F32,
            1 => DType::I32,
            2 => DType::U8,
            other => return Err(Error::format(dtype_at, format!("unknown dtype {other}"))),
        };
        let rank_at = r.pos as u64;
        let rank = r.u8("rank")? as usize;
        if rank > MAX_RANK {
            return Err(Error::format(rank_at, format!("rank {rank} exceeds {MAX_RANK}")));
        }
        let dims_at = r.pos as u64;
        let mut dims = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = usize::try_from(r.u64("dimension")?)
                .map_err(|_| Error::format(dims_at, "dimension overflows usize"))?;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| Error::format(dims_at, "element count overflows"))?;
            dims.push(d);
        }
        let bytes = numel
            .checked_mul(dtype.size())
            .ok_or_else(|| Error::format(dims_at, "payload size overflows"))?;
        let raw = r.take(bytes, "payload")?;
        let payload = match dtype {
            DType::F32 => Payload::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::I32 => Payload::I32(
                raw.chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U8 => Payload::U8(raw.to_vec()),
        };
        out.push(NamedTensor { name, dims, payload });
    }
    if r.pos != buf.len() {
        return Err(Error::format(
            r.pos as u64,
            format!("{} trailing bytes after last tensor", buf.len() - r.pos),
        ));
    }
    Ok(out)
}

pub fn write_container(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    let bytes = encode(tensors)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path) -> Result<Vec<NamedTensor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Finds a tensor by name.
pub fn find<'a>(tensors: &'a [NamedTensor], name: &str) -> Result<&'a NamedTensor> {
    tensors
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::Data(format!("container has no tensor `{name}`")))
}
