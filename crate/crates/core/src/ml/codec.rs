//! `MMV1` model encoding.
//!
//! ```text
//! "MMV1"
//! u32 len | kind tag ("lr" | "mlp"), UTF-8
//! u32 len | input_dim     u64
//! u32 len | hidden_dims   u64 × h   (len = 8h, h may be 0)
//! u32 len | num_classes   u64
//! u64     | parameter count
//! f64 × count parameters
//! ```
//! All integers and floats little-endian.

use super::arch::{ArchDescriptor, ModelKind};
use super::model::Model;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MODEL_MAGIC: &[u8; 4] = b"MMV1";

pub fn encode<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let arch = model.arch();
    let mut out = Vec::with_capacity(encoded_len(arch));
    out.extend_from_slice(MODEL_MAGIC);
    put_field(&mut out, arch.kind.tag().as_bytes());
    put_field(&mut out, &(arch.input_dim as u64).to_le_bytes());
    let hidden: Vec<u8> = arch.hidden_dims.iter().flat_map(|h| (*h as u64).to_le_bytes()).collect();
    put_field(&mut out, &hidden);
    put_field(&mut out, &(arch.num_classes as u64).to_le_bytes());
    out.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for p in model.params() {
        out.extend_from_slice(&p.widen().to_le_bytes());
    }
    out
}

/// Size in bytes of the encoding of any model with this architecture.
pub fn encoded_len(arch: &ArchDescriptor) -> usize {
    4 + (4 + arch.kind.tag().len()) + 12 + (4 + 8 * arch.hidden_dims.len()) + 12 + 8 + 8 * arch.param_count()
}

fn put_field(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("truncated model: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn field(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn u64_field(&mut self) -> Result<usize> {
        let f = self.field()?;
        if f.len() != 8 {
            return Err(Error::Format(format!("integer field has length {}", f.len())));
        }
        Ok(u64::from_le_bytes(f.try_into().unwrap()) as usize)
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MODEL_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"MMV1\"")));
    }
    let tag = std::str::from_utf8(r.field()?).map_err(|_| Error::Format("kind tag is not UTF-8".into()))?;
    let kind = ModelKind::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown model kind {tag:?}")))?;
    let input_dim = r.u64_field()?;
    let hidden = r.field()?;
    if hidden.len() % 8 != 0 {
        return Err(Error::Format("hidden_dims field is not a multiple of 8 bytes".into()));
    }
    let hidden_dims = hidden.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize).collect();
    let num_classes = r.u64_field()?;
    let arch = ArchDescriptor { kind, input_dim, hidden_dims, num_classes };
    arch.validate().map_err(|e| Error::Format(e.to_string()))?;
    let count = r.u64()? as usize;
    if count != arch.param_count() {
        return Err(Error::Format(format!("{arch} needs {} parameters, header says {count}", arch.param_count())));
    }
    let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Format("parameter count overflow".into()))?)?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let params = raw.chunks_exact(8).map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap()))).collect();
    Model::new(arch, params).map_err(|e| Error::Format(e.to_string()))
}
