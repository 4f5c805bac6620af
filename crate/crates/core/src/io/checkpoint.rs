//! Binary model checkpoints.
//!
//! Layout (all integers little-endian): the magic `CLADELAB1`, the model seed
//! (`u64`), the graph spec in text form (`u32` length + UTF-8), the parameter
//! tensors (`u32` count, then per tensor: `u32` name length, name, four `u32`
//! dims, `f32` values), and the norm statistics (`u32` count, then per site:
//! name, `u32` channels, `f64` eps, `f64` momentum, `u64` updates, running
//! means and variances as `f32`).

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::generator::{GraphSpec, Model};
use crate::layers::NormStats;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 9] = b"CLADELAB1";

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, vals: &[f32]) {
    out.reserve(vals.len() * 4);
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes `model` to bytes.
pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&model.seed().to_le_bytes());
    put_str(&mut out, &model.spec().to_text())?;
    put_u32(&mut out, model.params().len())?;
    for (name, t) in model.params() {
        put_str(&mut out, name)?;
        for d in t.shape().dims() {
            put_u32(&mut out, d)?;
        }
        put_f32s(&mut out, t.data());
    }
    put_u32(&mut out, model.stats().len())?;
    for (name, s) in model.stats() {
        put_str(&mut out, name)?;
        put_u32(&mut out, s.channels())?;
        out.extend_from_slice(&s.eps.to_le_bytes());
        out.extend_from_slice(&s.momentum.to_le_bytes());
        out.extend_from_slice(&s.updates.to_le_bytes());
        put_f32s(&mut out, &s.running_mean);
        put_f32s(&mut out, &s.running_var);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("take returns N bytes"))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk"))).collect())
    }
}

/// Parses checkpoint bytes; the embedded graph spec must match the stored
/// tensors exactly.
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    if !bytes.starts_with(MAGIC) {
        return Err(Error::Checkpoint("bad magic (not a CLADELAB1 checkpoint)".into()));
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let seed = r.u64()?;
    let spec = GraphSpec::parse(&r.string()?).map_err(|e| Error::Checkpoint(format!("embedded graph spec: {e}")))?;
    let mut params = BTreeMap::new();
    for _ in 0..r.u32()? {
        let name = r.string()?;
        let shape = Shape::new(r.u32()?, r.u32()?, r.u32()?, r.u32()?);
        let data = r.f32s(shape.numel())?;
        params.insert(name, Tensor::from_vec(shape, data)?);
    }
    let mut stats = BTreeMap::new();
    for _ in 0..r.u32()? {
        let name = r.string()?;
        let c = r.u32()?;
        let mut s = NormStats::new(c);
        s.eps = r.f64()?;
        s.momentum = r.f64()?;
        s.updates = r.u64()?;
        s.running_mean = r.f32s(c)?;
        s.running_var = r.f32s(c)?;
        stats.insert(name, s);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Model::from_parts(spec, seed, params, stats)
}

pub fn save<W: Write>(mut out: W, model: &Model) -> Result<()> {
    out.write_all(&to_bytes(model)?)?;
    Ok(())
}

pub fn load<R: Read>(mut input: R) -> Result<Model> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
