//! Binary checkpoint format.
//!
//! ```text
//! "INSG" | version: u16 | spec_len: u32 | spec text (UTF-8)
//! record*: name_len: u32 | name | rank: u8 | dims: u32 * rank | f64 * prod(dims)
//! ```
//! All integers and floats are little-endian. Parameters come first in
//! registration order, then batch-norm running statistics.

use std::path::Path;

use super::{build_model, ModelGraph, NetworkSpec};
use crate::error::{CheckpointError, Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"INSG";
pub const CHECKPOINT_VERSION: u16 = 1;

fn put_record(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f64]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(graph: &ModelGraph) -> Vec<u8> {
    let store = graph.store();
    let spec = graph.spec().to_text();
    let mut out = Vec::with_capacity(16 + spec.len() + 8 * store.total());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(spec.as_bytes());
    for p in store.params() {
        put_record(&mut out, &p.name, &p.shape, &p.value);
    }
    for b in store.buffers() {
        put_record(&mut out, &b.name, &[b.value.len()], &b.value);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn record(&mut self, name: &str, shape: &[usize], into: &mut [f64]) -> Result<(), CheckpointError> {
        let len = self.u32("record name length")?;
        let found = self.take(len, "record name")?;
        if found != name.as_bytes() {
            return Err(CheckpointError::Parameter(format!(
                "expected '{name}', found '{}'",
                String::from_utf8_lossy(found)
            )));
        }
        let rank = self.take(1, "record rank")?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32("record dims")?);
        }
        if dims != shape {
            return Err(CheckpointError::Parameter(format!(
                "'{name}' has shape {dims:?}, model expects {shape:?}"
            )));
        }
        let raw = self.take(8 * into.len(), "record values")?;
        for (v, b) in into.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(b.try_into().unwrap());
        }
        Ok(())
    }
}

/// Rebuilds a model from checkpoint bytes; the embedded spec must equal `spec`.
pub fn decode_checkpoint(bytes: &[u8], spec: &NetworkSpec) -> Result<ModelGraph> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Magic(magic).into());
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version).into());
    }
    let len = r.u32("spec length")?;
    let text = r.take(len, "spec text")?;
    if text != spec.to_text().as_bytes() {
        return Err(CheckpointError::SpecMismatch.into());
    }
    let mut graph = build_model(spec)?;
    let store = graph.store_mut();
    for p in store.params_mut() {
        r.record(&p.name, &p.shape, &mut p.value)?;
    }
    for b in store.buffers_mut() {
        let n = b.value.len();
        r.record(&b.name, &[n], &mut b.value)?;
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Parameter(format!("{} trailing bytes", bytes.len() - r.pos)).into());
    }
    Ok(graph)
}

/// Reads only the embedded spec text of a checkpoint.
pub fn checkpoint_spec(bytes: &[u8]) -> Result<NetworkSpec> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Magic(magic).into());
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version).into());
    }
    let len = r.u32("spec length")?;
    let text = std::str::from_utf8(r.take(len, "spec text")?)
        .map_err(|_| Error::Config("checkpoint spec is not UTF-8".into()))?;
    NetworkSpec::from_text(text)
}

pub fn save_checkpoint(graph: &ModelGraph, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(graph)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, spec: &NetworkSpec) -> Result<ModelGraph> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Variant;

    #[test]
    fn encode_decode_encode_is_identical() {
        let spec = NetworkSpec::tiny(Variant::Inceptnet, 1);
        let g = build_model(&spec).unwrap();
        let a = encode_checkpoint(&g);
        let b = encode_checkpoint(&decode_checkpoint(&a, &spec).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_load_errors() {
        let spec = NetworkSpec::tiny(Variant::Unet, 1);
        let bytes = encode_checkpoint(&build_model(&spec).unwrap());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad, &spec), Err(Error::Checkpoint(CheckpointError::Magic(_)))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_checkpoint(&bad, &spec), Err(Error::Checkpoint(CheckpointError::Version(9)))));
        let other = NetworkSpec::tiny(Variant::Inceptnet, 1);
        assert!(matches!(decode_checkpoint(&bytes, &other), Err(Error::Checkpoint(CheckpointError::SpecMismatch))));
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 3], &spec),
            Err(Error::Checkpoint(CheckpointError::Truncated(_)))
        ));
    }
}
