use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::codec::{Reader, Writer};
use crate::numcore::{Activation, DenseLayer, Mlp, Tensor};
use crate::protocol::{PassiveParty, SplitFederation};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VFUC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Human-readable sidecar written next to every checkpoint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub parties: usize,
    pub num_classes: usize,
    pub concat_order: Vec<usize>,
    pub bottom_dims: Vec<Vec<usize>>,
    pub top_dims: Vec<usize>,
    pub num_params: usize,
    /// Seed the weights were derived from.
    pub seed: u64,
}

fn dims(m: &Mlp) -> Vec<usize> {
    let mut d = vec![m.in_dim()];
    d.extend(m.layers().iter().map(|l| l.out_dim()));
    d
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_mlp(w: &mut Writer, tag: usize, m: &Mlp) -> Result<()> {
    w.u32(tag)?;
    w.u32(m.layers().len())?;
    for l in m.layers() {
        w.u32(l.in_dim())?;
        w.u32(l.out_dim())?;
        w.u8(l.activation.code());
        w.f64_block(l.weights.data());
        w.f64_block(l.bias.data());
    }
    Ok(())
}

fn read_mlp(r: &mut Reader, tag: usize) -> Result<Mlp> {
    let found = r.u32()?;
    if found != tag {
        return Err(Error::Format(format!("expected model tag {tag}, found {found}")));
    }
    let n = r.u32()?;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let (i, o) = (r.u32()?, r.u32()?);
        let code = r.u8()?;
        let act = Activation::from_code(code).ok_or_else(|| Error::Format(format!("unknown activation code {code}")))?;
        let w = Tensor::matrix(i, o, r.f64_block(i * o)?)?;
        let b = Tensor::new(vec![o], r.f64_block(o)?)?;
        layers.push(DenseLayer::new(w, b, act)?);
    }
    Mlp::new(layers).map_err(|e| Error::Format(format!("inconsistent layers: {e}")))
}

/// Writes `fed` to `path` and its metadata to `path.json`.
pub fn save_checkpoint(fed: &SplitFederation, seed: u64, path: &Path) -> Result<CheckpointMeta> {
    let mut w = Writer::default();
    w.bytes(&CHECKPOINT_MAGIC);
    w.buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    w.u32(fed.num_parties())?;
    w.u32(fed.num_classes())?;
    for &id in fed.concat_order() {
        w.u32(id)?;
    }
    w.u64(seed);
    for p in fed.passives() {
        write_mlp(&mut w, p.id(), p.bottom())?;
    }
    write_mlp(&mut w, 0, fed.active().top())?;
    fs::write(path, &w.buf).map_err(|e| Error::io(path, e))?;

    let meta = CheckpointMeta {
        format_version: CHECKPOINT_VERSION,
        parties: fed.num_parties(),
        num_classes: fed.num_classes(),
        concat_order: fed.concat_order().to_vec(),
        bottom_dims: fed.passives().iter().map(|p| dims(p.bottom())).collect(),
        top_dims: dims(fed.active().top()),
        num_params: fed.passives().iter().map(|p| p.bottom().num_params()).sum::<usize>() + fed.active().top().num_params(),
        seed,
    };
    let side = sidecar(path);
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
    Ok(meta)
}

/// Decodes checkpoint bytes; returns the federation and its seed.
pub fn decode_checkpoint(raw: &[u8]) -> Result<(SplitFederation, u64)> {
    if raw.len() < 8 {
        return Err(Error::Format(format!("checkpoint header needs 8 bytes, found {}", raw.len())));
    }
    if raw[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = u32::from_le_bytes(raw[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let mut r = Reader::new(&raw[8..]);
    let k = r.u32()?;
    let classes = r.u32()?;
    let order = (0..k).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let seed = r.u64()?;
    let passives = order
        .iter()
        .map(|&id| Ok(PassiveParty::new(id, read_mlp(&mut r, id)?)))
        .collect::<Result<Vec<_>>>()?;
    let top = read_mlp(&mut r, 0)?;
    r.finish()?;
    let fed = SplitFederation::from_parts(passives, top, order, classes).map_err(|e| Error::Format(e.to_string()))?;
    Ok((fed, seed))
}

pub fn load_checkpoint(path: &Path) -> Result<(SplitFederation, u64)> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&raw)
}
