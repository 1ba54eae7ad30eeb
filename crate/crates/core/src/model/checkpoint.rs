//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "SEFCKPT\0"
//! version    u32
//! meta_len   u32, then meta_len bytes of JSON metadata
//! count      u32, then `count` table rows:
//!            name_len u16, name bytes, ndim u8, dims u32×ndim,
//!            dtype u8 (0 = f32), offset u64 (from payload start)
//! payload    raw f32 values
//! ```
//!
//! Backbone weights are never stored; they are regenerated from
//! `meta.model.backbone_seed`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::expert::Expert;
use super::sef::SefModel;
use super::tensors::Tensors;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::forge::ArtifactDomain;

pub const MAGIC: &[u8; 8] = b"SEFCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Expert,
    Sef,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: CheckpointKind,
    /// Domain of an expert; `None` for the mixed baseline and fused models.
    pub domain: Option<ArtifactDomain>,
    pub model: ModelConfig,
    /// Optimizer steps taken.
    pub iterations: u64,
    pub seed: u64,
    pub config_hash: String,
    /// Adapter blocks unfrozen in stage 2 (fused models only).
    #[serde(default)]
    pub unfreeze_k: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<StoredTensor>,
}

fn collect<P: Tensors<f32>>(p: &P, prefix: &str) -> Vec<StoredTensor> {
    p.tensors(prefix)
        .into_iter()
        .map(|(name, shape, data)| StoredTensor {
            name,
            shape,
            data: data.to_vec(),
        })
        .collect()
}

impl Checkpoint {
    pub fn from_expert(expert: &Expert<f32>, meta: CheckpointMeta) -> Self {
        Self {
            meta: CheckpointMeta {
                kind: CheckpointKind::Expert,
                domain: expert.domain,
                ..meta
            },
            tensors: collect(expert, "expert."),
        }
    }

    pub fn from_sef(model: &SefModel<f32>, meta: CheckpointMeta) -> Self {
        let mut tensors = collect(&model.expert_v, "expert_v.");
        tensors.extend(collect(&model.expert_s, "expert_s."));
        tensors.extend(collect(&model.gate, "gate"));
        tensors.extend(collect(&model.fusion_head, "fusion_head"));
        Self {
            meta: CheckpointMeta {
                kind: CheckpointKind::Sef,
                domain: None,
                unfreeze_k: Some(model.unfreeze_k),
                ..meta
            },
            tensors,
        }
    }

    fn fill<P: Tensors<f32>>(&self, target: &mut P, prefix: &str) -> Result<usize> {
        let mut used = 0;
        for (name, shape, dst) in target.tensors_mut(prefix) {
            let src = self
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
            if src.shape != shape || src.data.len() != dst.len() {
                return Err(Error::Format(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    src.shape
                )));
            }
            dst.copy_from_slice(&src.data);
            used += 1;
        }
        Ok(used)
    }

    fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.meta.kind != kind {
            return Err(Error::Format(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.meta.kind
            )));
        }
        self.meta.model.validate()
    }

    pub fn to_expert(&self) -> Result<Expert<f32>> {
        self.expect_kind(CheckpointKind::Expert)?;
        let mut e = Expert::fresh(&self.meta.model, self.meta.domain, 0);
        let used = self.fill(&mut e, "expert.")?;
        if used != self.tensors.len() {
            return Err(Error::Format("checkpoint has unexpected extra tensors".into()));
        }
        Ok(e)
    }

    pub fn to_sef(&self) -> Result<SefModel<f32>> {
        self.expect_kind(CheckpointKind::Sef)?;
        let cfg = &self.meta.model;
        let k = self
            .meta
            .unfreeze_k
            .ok_or_else(|| Error::Format("fused checkpoint lacks unfreeze_k".into()))?;
        let ev = Expert::fresh(cfg, Some(ArtifactDomain::VaeSim), 0);
        let es = Expert::fresh(cfg, Some(ArtifactDomain::GanSim), 0);
        let mut m = SefModel::new(cfg, ev, es, k, 0)?;
        let mut used = self.fill(&mut m.expert_v, "expert_v.")?;
        used += self.fill(&mut m.expert_s, "expert_s.")?;
        used += self.fill(&mut m.gate, "gate")?;
        used += self.fill(&mut m.fusion_head, "fusion_head")?;
        if used != self.tensors.len() {
            return Err(Error::Format("checkpoint has unexpected extra tensors".into()));
        }
        Ok(m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for t in &self.tensors {
            let name = t.name.as_bytes();
            if name.len() > u16::MAX as usize || t.shape.len() > u8::MAX as usize {
                return Err(Error::Format(format!("tensor {} cannot be encoded", t.name)));
            }
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Format(format!("tensor {} shape/data mismatch", t.name)));
            }
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.push(DTYPE_F32);
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 4 * t.data.len() as u64;
        }
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::Format(format!("bad checkpoint metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let ndim = r.take(1)?[0] as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F32 {
                return Err(Error::Format(format!("tensor {name} has unknown dtype {dtype}")));
            }
            let offset = r.u64()?;
            table.push((name, shape, offset));
        }
        let payload = &bytes[r.pos..];
        let mut tensors = Vec::with_capacity(table.len());
        for (name, shape, offset) in table {
            let len: usize = shape.iter().product();
            let start = usize::try_from(offset).map_err(|_| Error::Format("offset overflow".into()))?;
            let end = start
                .checked_add(4 * len)
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| Error::Format(format!("checkpoint truncated inside tensor {name}")))?;
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(StoredTensor { name, shape, data });
        }
        Ok(Self { meta, tensors })
    }
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
            .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            kind: CheckpointKind::Expert,
            domain: None,
            model: ModelConfig::tiny(),
            iterations: 7,
            seed: 3,
            config_hash: "abc".into(),
            unfreeze_k: None,
        }
    }

    fn trained_expert(domain: ArtifactDomain, seed: u64) -> Expert<f32> {
        let mut e = Expert::fresh(&ModelConfig::tiny(), Some(domain), seed);
        for (i, (_, _, v)) in e.tensors_mut("").into_iter().enumerate() {
            for (j, x) in v.iter_mut().enumerate() {
                *x += (i * 31 + j) as f32 * 1e-3;
            }
        }
        e
    }

    #[test]
    fn expert_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let e = trained_expert(ArtifactDomain::GanSim, 1);
        let ck = Checkpoint::from_expert(&e, meta());
        let p = dir.path().join("e.ckpt");
        save_checkpoint(&ck, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back, ck);
        let e2 = back.to_expert().unwrap();
        assert_eq!(e2, e);
        assert_eq!(e2.domain, Some(ArtifactDomain::GanSim));
    }

    #[test]
    fn sef_roundtrip() {
        let cfg = ModelConfig::tiny();
        let m = SefModel::new(
            &cfg,
            trained_expert(ArtifactDomain::VaeSim, 1),
            trained_expert(ArtifactDomain::GanSim, 2),
            2,
            9,
        )
        .unwrap();
        let ck = Checkpoint::from_sef(&m, meta());
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        let m2 = back.to_sef().unwrap();
        assert_eq!(m2, m);
        assert_eq!(m2.expert_v.domain, Some(ArtifactDomain::VaeSim));
        assert!(back.to_expert().is_err());
    }

    #[test]
    fn truncation_and_corruption_are_format_errors() {
        let ck = Checkpoint::from_expert(&trained_expert(ArtifactDomain::VaeSim, 1), meta());
        let bytes = ck.to_bytes().unwrap();
        for cut in [0, 5, 12, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[8] = 99;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
        bad = bytes;
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn shape_mismatch_is_refused() {
        let mut ck = Checkpoint::from_expert(&trained_expert(ArtifactDomain::VaeSim, 1), meta());
        ck.meta.model.lora_rank = 3;
        assert!(matches!(ck.to_expert(), Err(Error::Format(_))));
    }
}
