//! Named parameter collections and their binary checkpoint format.
//!
//! Checkpoint layout: magic `GZLB-P1`, then for each parameter in
//! name-sorted order: name length (u32 LE), UTF-8 name, rank (u32 LE),
//! dims (u32 LE each), f64 LE data. The file carries parameters only;
//! the seed that initialized them travels in run configs or sidecars.

use super::{Graph, NodeId, Tensor, TensorError};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 7] = b"GZLB-P1";

/// Map of named parameter tensors. Iteration is always name-sorted, so
/// binding order, update order and serialization are deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: BTreeMap<String, Tensor>,
    pub rng_seed: u64,
}

impl ParamSet {
    pub fn new(rng_seed: u64) -> Self {
        ParamSet {
            params: BTreeMap::new(),
            rng_seed,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t.with_grad());
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Bind every parameter into a graph as a trainable leaf,
    /// prefixing names (so several sets can share one graph).
    pub fn bind(&self, g: &mut Graph, prefix: &str) -> BTreeMap<String, NodeId> {
        self.params
            .iter()
            .map(|(name, t)| {
                let full = format!("{prefix}{name}");
                let id = g.param(&full, t);
                (full, id)
            })
            .collect()
    }

    /// Bind as constants: values participate, gradients do not. Used
    /// for frozen expert weights inside the gaze loss.
    pub fn bind_frozen(&self, g: &mut Graph) -> BTreeMap<String, NodeId> {
        self.params
            .iter()
            .map(|(name, t)| (name.clone(), g.input(t)))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        for (name, t) in &self.params {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        let mut cur = bytes;
        let mut magic = [0u8; 7];
        cur.read_exact(&mut magic)
            .map_err(|_| TensorError::Format("truncated magic".into()))?;
        if &magic != MAGIC {
            return Err(TensorError::Format(format!(
                "bad magic {:?}, expected GZLB-P1",
                String::from_utf8_lossy(&magic)
            )));
        }
        let mut set = ParamSet::new(0);
        while !cur.is_empty() {
            let name_len = read_u32(&mut cur)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            cur.read_exact(&mut name_bytes)
                .map_err(|_| TensorError::Format("truncated name".into()))?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| TensorError::Format("parameter name is not UTF-8".into()))?;
            let rank = read_u32(&mut cur)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut cur)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                let mut b = [0u8; 8];
                cur.read_exact(&mut b)
                    .map_err(|_| TensorError::Format(format!("truncated data for `{name}`")))?;
                data.push(f64::from_le_bytes(b));
            }
            set.insert(name, Tensor::new(shape, data));
        }
        Ok(set)
    }

    /// Atomic write: temp file in the same directory, then rename.
    pub fn save(&self, path: &Path) -> Result<(), TensorError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TensorError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized bytes; the frozen-weights identity
    /// used by the freeze-invariance checks.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.to_bytes());
        format!("{:x}", h.finalize())
    }
}

fn read_u32(cur: &mut &[u8]) -> Result<u32, TensorError> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b)
        .map_err(|_| TensorError::Format("truncated u32".into()))?;
    Ok(u32::from_le_bytes(b))
}
