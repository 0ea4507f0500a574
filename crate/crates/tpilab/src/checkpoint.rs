// SPDX-License-Identifier: Apache-2.0
//! Versioned binary checkpoints of parameter stores.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "TPILABCK"
//! version   u32      1
//! meta_len  u32      followed by meta_len bytes of UTF-8 JSON
//! count     u32      number of tensors
//! tensor*   name_len u32, name bytes, rows u32, cols u32, rows*cols f64
//! digest    32 bytes SHA-256 of every preceding byte
//! ```

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use tpilab_core::dqn::{DqnConfig, GraphDqnParams};
use tpilab_core::nn::{Matrix, NnError, ParamStore};
use tpilab_core::pretrain::{PretrainMeta, PretrainModel};

pub const MAGIC: &[u8; 8] = b"TPILABCK";
pub const VERSION: u32 = 1;
pub const KIND_DQN: &str = "graph-dqn";
pub const KIND_PRETRAIN: &str = "pretrain";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint digest mismatch")]
    Corrupt,
    #[error("trailing bytes after checkpoint digest")]
    TrailingBytes,
    #[error("invalid metadata: {0}")]
    Meta(String),
    #[error("expected a {expected} checkpoint, found {found}")]
    WrongKind { expected: &'static str, found: String },
    #[error("tensor `{0}` is missing from the checkpoint")]
    Missing(String),
    #[error("tensor `{0}` is not part of the model")]
    Unexpected(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Named tensors plus JSON metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: Value,
    pub tensors: Vec<(String, Matrix)>,
}

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.b.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, meta: Value) -> Checkpoint {
        Checkpoint { meta, tensors: store.iter().map(|(n, m)| (n.to_string(), m.clone())).collect() }
    }

    pub fn kind(&self) -> Option<&str> {
        self.meta.get("kind").and_then(Value::as_str)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("JSON values always serialize");
        let mut out = Vec::with_capacity(64 + meta.len() + self.tensors.iter().map(|(_, m)| 8 * m.data().len() + 64).sum::<usize>());
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, meta.len() as u32);
        out.extend_from_slice(&meta);
        put_u32(&mut out, self.tensors.len() as u32);
        for (name, m) in &self.tensors {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, m.rows() as u32);
            put_u32(&mut out, m.cols() as u32);
            for x in m.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut r = Reader { b: bytes, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let meta_len = r.u32()? as usize;
        let meta: Value =
            serde_json::from_slice(r.take(meta_len)?).map_err(|e| CheckpointError::Meta(e.to_string()))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| CheckpointError::Meta("tensor name is not UTF-8".into()))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let n = rows.checked_mul(cols).ok_or(CheckpointError::Truncated)?;
            let raw = r.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.push((name, Matrix::from_vec(rows, cols, data)?));
        }
        let body_end = r.pos;
        let digest = r.take(32)?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes);
        }
        if Sha256::digest(&bytes[..body_end]).as_slice() != digest {
            return Err(CheckpointError::Corrupt);
        }
        Ok(Checkpoint { meta, tensors })
    }

    /// Overwrites every parameter of `store`; names must match exactly.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<(), CheckpointError> {
        for (name, m) in &self.tensors {
            if store.find(name).is_none() {
                return Err(CheckpointError::Unexpected(name.clone()));
            }
            store.load(name, m.clone())?;
        }
        if let Some((name, _)) = store.iter().find(|(n, _)| !self.tensors.iter().any(|(t, _)| t == n)) {
            return Err(CheckpointError::Missing(name.to_string()));
        }
        Ok(())
    }

    fn expect_kind(&self, expected: &'static str) -> Result<(), CheckpointError> {
        match self.kind() {
            Some(k) if k == expected => Ok(()),
            other => Err(CheckpointError::WrongKind { expected, found: other.unwrap_or("<none>").to_string() }),
        }
    }

    fn field<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T, CheckpointError> {
        let v = self.meta.get(key).ok_or_else(|| CheckpointError::Meta(format!("missing `{key}`")))?;
        serde_json::from_value(v.clone()).map_err(|e| CheckpointError::Meta(format!("`{key}`: {e}")))
    }

    /// Checkpoint of a Q-network. `run` records the producing run.
    pub fn from_dqn(params: &GraphDqnParams, run: Value) -> Checkpoint {
        let meta = json!({
            "format": "tpilab-checkpoint",
            "kind": KIND_DQN,
            "tool_version": crate::VERSION,
            "model": params.config,
            "run": run,
        });
        Checkpoint::from_store(&params.store, meta)
    }

    pub fn to_dqn(&self) -> Result<GraphDqnParams, CheckpointError> {
        self.expect_kind(KIND_DQN)?;
        let config: DqnConfig = self.field("model")?;
        let mut p = GraphDqnParams::new(config, 0);
        self.load_into(&mut p.store)?;
        Ok(p)
    }

    pub fn from_pretrain(model: &PretrainModel, run: Value) -> Checkpoint {
        let meta = json!({
            "format": "tpilab-checkpoint",
            "kind": KIND_PRETRAIN,
            "tool_version": crate::VERSION,
            "model": model.meta,
            "run": run,
        });
        Checkpoint::from_store(&model.store, meta)
    }

    pub fn to_pretrain(&self) -> Result<PretrainModel, CheckpointError> {
        self.expect_kind(KIND_PRETRAIN)?;
        let meta: PretrainMeta = self.field("model")?;
        let mut m = PretrainModel::new(meta.seed);
        self.load_into(&mut m.store)?;
        m.meta = meta;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tpilab_core::gnn::Aggregation;

    #[test]
    fn dqn_round_trip_is_bit_exact() {
        for agg in [Aggregation::TestabilityAware, Aggregation::Tied, Aggregation::Mean] {
            let p = GraphDqnParams::new(DqnConfig { aggregation: agg, ..Default::default() }, 11);
            let bytes = Checkpoint::from_dqn(&p, json!({"seed": 11})).to_bytes();
            let ck = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(ck.to_bytes(), bytes);
            let q = ck.to_dqn().unwrap();
            assert_eq!(q.config, p.config);
            for ((na, a), (nb, b)) in p.store.iter().zip(q.store.iter()) {
                assert_eq!(na, nb);
                assert_eq!(a.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn pretrain_round_trip() {
        let m = PretrainModel::new(4);
        let ck = Checkpoint::from_bytes(&Checkpoint::from_pretrain(&m, Value::Null).to_bytes()).unwrap();
        let back = ck.to_pretrain().unwrap();
        assert!(m.store.iter().zip(back.store.iter()).all(|(a, b)| a == b));
        assert!(matches!(ck.to_dqn(), Err(CheckpointError::WrongKind { .. })));
    }

    #[test]
    fn damaged_files_are_rejected() {
        let p = GraphDqnParams::new(DqnConfig::default(), 1);
        let bytes = Checkpoint::from_dqn(&p, Value::Null).to_bytes();
        assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(CheckpointError::BadMagic)));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(CheckpointError::Truncated)));
        let mut flipped = bytes.clone();
        let last = flipped.len() - 33;
        flipped[last] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(CheckpointError::Corrupt)));
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v2), Err(CheckpointError::UnsupportedVersion(2))));
        let mut longer = bytes;
        longer.push(0);
        assert!(matches!(Checkpoint::from_bytes(&longer), Err(CheckpointError::TrailingBytes)));
    }

    #[test]
    fn layout_mismatch_is_reported() {
        let full = GraphDqnParams::new(DqnConfig::default(), 1);
        let mut ck = Checkpoint::from_dqn(&full, Value::Null);
        ck.tensors.pop();
        assert!(matches!(ck.to_dqn(), Err(CheckpointError::Missing(_))));
        let mut ck = Checkpoint::from_dqn(&full, Value::Null);
        ck.tensors.push(("extra".into(), Matrix::zeros(1, 1)));
        assert!(matches!(ck.to_dqn(), Err(CheckpointError::Unexpected(_))));
    }
}
