//! Binary model files: `MCDW` magic, format version, tensor count, then per
//! tensor the name, rank, extents and a little-endian `f32` payload. All
//! integers are little-endian `u32`.

use std::path::Path;

use super::network::{Architecture, NetworkParams};
use super::tensor::Tensor;
use crate::error::{McdError, Result};
use crate::io::ensure_parent;

pub const MAGIC: &[u8; 4] = b"MCDW";
pub const VERSION: u32 = 1;
/// Record holding the patch width and height.
const PATCH_RECORD: &str = "meta.patch_size";

pub fn encode(params: &NetworkParams) -> Vec<u8> {
    let arch = params.architecture();
    let meta = Tensor::from_vec(&[2], vec![arch.patch_w as f64, arch.patch_h as f64]).unwrap();
    let records: Vec<(&str, &Tensor)> = std::iter::once((PATCH_RECORD, &meta)).chain(params.iter()).collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(McdError::format(
                "checkpoint",
                format!("{} byte {}", self.origin, self.pos),
                "truncated",
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn err(&self, detail: impl Into<String>) -> McdError {
        McdError::format("checkpoint", format!("{} byte {}", self.origin, self.pos), detail)
    }
}

/// Upper bound on any single extent or name length, to reject garbage
/// before allocating.
const SANITY_LIMIT: u32 = 1 << 24;

pub fn decode(bytes: &[u8], origin: &str) -> Result<NetworkParams> {
    let mut r = Reader { bytes, pos: 0, origin };
    if r.take(4)? != MAGIC {
        return Err(r.err("bad magic, not a model file"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported format version {version}")));
    }
    let count = r.u32()?;
    let mut named = Vec::new();
    let mut arch = None;
    for _ in 0..count {
        let len = r.u32()?;
        if len > SANITY_LIMIT {
            return Err(r.err("implausible name length"));
        }
        let name = match std::str::from_utf8(r.take(len as usize)?) {
            Ok(s) => s.to_string(),
            Err(_) => return Err(r.err("tensor name is not UTF-8")),
        };
        let rank = r.u32()?;
        if rank > 8 {
            return Err(r.err(format!("implausible rank {rank}")));
        }
        let mut shape = Vec::new();
        for _ in 0..rank {
            let e = r.u32()?;
            if e > SANITY_LIMIT {
                return Err(r.err("implausible extent"));
            }
            shape.push(e as usize);
        }
        let n: usize = shape.iter().product();
        let payload = r.take(n.checked_mul(4).ok_or_else(|| r.err("tensor too large"))?)?;
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let t = Tensor::from_vec(&shape, data)?;
        if name == PATCH_RECORD {
            match t.data() {
                [w, h] => arch = Some(Architecture::new(*w as usize, *h as usize)?),
                _ => return Err(r.err("patch size record needs two values")),
            }
        } else {
            named.push((name, t));
        }
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes"));
    }
    let arch = arch.ok_or_else(|| r.err("missing patch size record"))?;
    NetworkParams::from_named(arch, named).map_err(|e| match e {
        McdError::InvalidArgument(d) | McdError::NonFinite(d) => McdError::format("checkpoint", origin, d),
        other => other,
    })
}

pub fn save(params: &NetworkParams, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, encode(params)).map_err(|e| McdError::io(path, e))
}

pub fn load(path: &Path) -> Result<NetworkParams> {
    let bytes = std::fs::read(path).map_err(|e| McdError::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_f32_exact() {
        let p = NetworkParams::init(Architecture::default(), 12);
        let bytes = encode(&p);
        assert_eq!(&bytes[..4], b"MCDW");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let q = decode(&bytes, "mem").unwrap();
        for ((_, a), (_, b)) in p.iter().zip(q.iter()) {
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        assert_eq!(encode(&q), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode(&NetworkParams::init(Architecture::default(), 1));
        assert!(decode(b"NOPE", "m").is_err());
        assert!(decode(&bytes[..bytes.len() - 1], "m").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra, "m").is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(decode(&v2, "m"), Err(McdError::Format { .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m/model.mcdw");
        let p = NetworkParams::init(Architecture::new(16, 16).unwrap(), 3);
        save(&p, &path).unwrap();
        assert_eq!(load(&path).unwrap().architecture(), p.architecture());
    }
}
