use std::fs;
use std::path::Path;

use super::codec::{Reader, Writer};
use crate::attacks::GradientTrace;
use crate::numcore::Tensor;
use crate::{Error, Result};

pub const TRACE_MAGIC: [u8; 4] = *b"VFUT";
pub const TRACE_VERSION: u32 = 1;

/// Serializes a trace: header (magic, version, scenario, party, count,
/// dim) then one record per sample (index, label flag, label, length,
/// raw little-endian f64s).
pub fn encode_trace(trace: &GradientTrace) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(&TRACE_MAGIC);
    w.buf.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    w.str(&trace.scenario)?;
    w.u32(trace.party_id)?;
    w.u64(trace.len() as u64);
    w.u32(trace.dim())?;
    for (r, &idx) in trace.indices.iter().enumerate() {
        w.u64(idx as u64);
        match trace.labels.as_ref().map(|l| l[r]) {
            Some(y) => {
                w.u8(1);
                w.u32(y)?;
            }
            None => {
                w.u8(0);
                w.u32(0)?;
            }
        }
        w.u32(trace.dim())?;
        for x in trace.gradients.row(r) {
            w.bytes(&x.to_le_bytes());
        }
    }
    Ok(w.buf)
}

pub fn decode_trace(raw: &[u8]) -> Result<GradientTrace> {
    let mut r = Reader::new(raw);
    if r.take(4)? != TRACE_MAGIC {
        return Err(Error::Format("bad trace magic".into()));
    }
    let version = r.u32()? as u32;
    if version != TRACE_VERSION {
        return Err(Error::Incompatible {
            expected: TRACE_VERSION,
            found: version,
        });
    }
    let scenario = r.str()?;
    let party_id = r.u32()?;
    let n = r.u64()? as usize;
    let dim = r.u32()?;
    let mut indices = Vec::new();
    let mut labels = Vec::new();
    let mut any_label = None;
    let mut data = Vec::new();
    for _ in 0..n {
        indices.push(r.u64()? as usize);
        let flag = r.u8()?;
        let y = r.u32()?;
        match (any_label, flag) {
            (None, f @ (0 | 1)) => any_label = Some(f == 1),
            (Some(true), 1) | (Some(false), 0) => {}
            _ => return Err(Error::Format("label flags must be all set or all clear".into())),
        }
        labels.push(y);
        let len = r.u32()?;
        if len != dim {
            return Err(Error::Format(format!("record of length {len} in a trace of dimension {dim}")));
        }
        data.extend(r.take(8 * dim)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())));
    }
    r.finish()?;
    GradientTrace::new(
        scenario,
        party_id,
        indices,
        if any_label == Some(true) { Some(labels) } else { None },
        Tensor::matrix(n, dim, data)?,
    )
}

pub fn write_trace(path: &Path, trace: &GradientTrace) -> Result<()> {
    fs::write(path, encode_trace(trace)?).map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<GradientTrace> {
    decode_trace(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
