//! Binary persistence of a [`PriorModel`].
//!
//! Layout, all integers `u64` and all reals `f64`, little-endian:
//!
//! ```text
//! "PSNISM1"                      7 magic bytes
//! patch_size, k_count, m         header
//! member_count × k_count
//! seed
//! epsilon_ridge, epsilon_floor, peak
//! per cluster: mean (m), covariance (m², row-major), members (count · m)
//! CRC-32 of every preceding byte  (u32)
//! ```
//!
//! Only the raw covariance is stored; the ridge and Cholesky factor are rebuilt
//! on load with the same arithmetic used at training time.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::patch_model::{ClusterModel, PatchPool, PriorModel};

pub const MAGIC: &[u8; 7] = b"PSNISM1";

/// Serializes a model. Fails for models without a square patch shape.
pub fn encode_model(model: &PriorModel) -> Result<Vec<u8>> {
    if model.patch_size() == 0 {
        return Err(Error::InvalidArgument("only patch-shaped models can be saved".into()));
    }
    let m = model.dim();
    let total: usize = model.cluster_sizes().iter().map(|n| (1 + m + n) * m).sum();
    let mut out = Vec::with_capacity(7 + 8 * (7 + model.k_count() + total) + 4);
    out.extend_from_slice(MAGIC);
    let put_u64 = |out: &mut Vec<u8>, v: u64| out.extend_from_slice(&v.to_le_bytes());
    put_u64(&mut out, model.patch_size() as u64);
    put_u64(&mut out, model.k_count() as u64);
    put_u64(&mut out, m as u64);
    for n in model.cluster_sizes() {
        put_u64(&mut out, n as u64);
    }
    put_u64(&mut out, model.training_seed());
    for v in [model.epsilon_ridge(), model.epsilon_floor(), model.peak()] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for c in model.clusters() {
        for v in c.mean().iter().chain(c.covariance().as_slice()).chain(c.members().values()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptModel(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt("truncated model file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("header value out of range"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| corrupt("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<PriorModel> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt("missing model magic"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(corrupt("checksum mismatch"));
    }
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let patch_size = r.usize()?;
    let k = r.usize()?;
    let m = r.usize()?;
    if patch_size == 0 || patch_size.checked_mul(patch_size) != Some(m) {
        return Err(corrupt(format!("dimension {m} does not match patch size {patch_size}")));
    }
    if k == 0 || k > body.len() / 8 {
        return Err(corrupt(format!("implausible cluster count {k}")));
    }
    let counts = (0..k).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let seed = r.u64()?;
    let epsilon_ridge = r.f64()?;
    let epsilon_floor = r.f64()?;
    let peak = r.f64()?;

    let mut expected: usize = 0;
    for &n in &counts {
        if n == 0 {
            return Err(corrupt("cluster with no members"));
        }
        let per = n
            .checked_add(m + 1)
            .and_then(|rows| rows.checked_mul(m))
            .and_then(|v| v.checked_mul(8))
            .ok_or_else(|| corrupt("length overflow"))?;
        expected = expected.checked_add(per).ok_or_else(|| corrupt("length overflow"))?;
    }
    if body.len() - r.pos != expected {
        return Err(corrupt(format!(
            "payload holds {} bytes, header implies {expected}",
            body.len() - r.pos
        )));
    }

    let mut clusters = Vec::with_capacity(k);
    for n in counts {
        let mean = r.f64s(m)?;
        let cov = Matrix::from_row_major(m, r.f64s(m * m)?).expect("m² entries");
        let members = r.f64s(n * m)?;
        let pool = PatchPool::new(m, members, epsilon_floor).map_err(|e| corrupt(e.to_string()))?;
        let cluster = ClusterModel::new(mean, cov, pool, epsilon_ridge).map_err(|e| corrupt(e.to_string()))?;
        clusters.push(cluster);
    }
    PriorModel::new(clusters, patch_size, seed, epsilon_ridge, peak).map_err(|e| corrupt(e.to_string()))
}

pub fn save_model(model: &PriorModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<PriorModel> {
    decode_model(&std::fs::read(path)?)
}
