use std::fs;
use std::path::Path;

use crate::data::Dataset;
use crate::numcore::Tensor;
use crate::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw contents of an unsigned-byte IDX file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub bytes: Vec<u8>,
}

/// Parses IDX bytes. Only the MNIST image (3-D) and label (1-D) magics are
/// accepted.
pub fn read_idx(raw: &[u8]) -> Result<IdxArray> {
    if raw.len() < 4 {
        return Err(Error::Length {
            expected: 4,
            found: raw.len(),
        });
    }
    let magic = u32::from_be_bytes(raw[0..4].try_into().unwrap());
    let ndim = match magic {
        IDX_IMAGES_MAGIC => 3,
        IDX_LABELS_MAGIC => 1,
        other => return Err(Error::Format(format!("unknown IDX magic {other:#010x}"))),
    };
    let header = 4 + 4 * ndim;
    if raw.len() < header {
        return Err(Error::Length {
            expected: header,
            found: raw.len(),
        });
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u32::from_be_bytes(raw[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let payload: usize = dims.iter().product();
    if raw.len() < header + payload {
        return Err(Error::Length {
            expected: header + payload,
            found: raw.len(),
        });
    }
    Ok(IdxArray {
        magic,
        dims,
        bytes: raw[header..header + payload].to_vec(),
    })
}

pub fn write_idx(path: &Path, array: &IdxArray) -> Result<()> {
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.bytes.len());
    out.extend_from_slice(&array.magic.to_be_bytes());
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.bytes);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads an IDX file as a tensor. Image pixels are scaled to `[0, 1]`;
/// labels keep their raw values.
pub fn load_idx(path: &Path) -> Result<Tensor> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let array = read_idx(&raw)?;
    let scale = if array.magic == IDX_IMAGES_MAGIC { 1.0 / 255.0 } else { 1.0 };
    Tensor::new(array.dims, array.bytes.iter().map(|&b| b as f64 * scale).collect())
}

/// Loads `train-*` and `t10k-*` MNIST files from `dir` as flattened
/// `[n × 784]` datasets. Sample ids are row positions; test ids are offset
/// past the training ids.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let load = |images: &str, labels: &str, id_offset: u64| -> Result<Dataset> {
        let x = load_idx(&dir.join(images))?.flatten_rows();
        let y = load_idx(&dir.join(labels))?;
        if x.rows() != y.len() {
            return Err(Error::Shape(format!("{} images but {} labels", x.rows(), y.len())));
        }
        let labels: Vec<usize> = y.data().iter().map(|&v| v as usize).collect();
        let ids = (0..x.rows() as u64).map(|i| i + id_offset).collect();
        Dataset::new(ids, x, labels, 10)
    };
    let train = load("train-images-idx3-ubyte", "train-labels-idx1-ubyte", 0)?;
    let test = load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", 1_000_000)?;
    Ok((train, test))
}
