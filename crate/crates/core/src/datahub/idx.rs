use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};

/// Decoded IDX file: big-endian magic `00 00 <type> <ndims>`, then one
/// big-endian `u32` per dimension, then the row-major payload.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl IdxArray {
    pub fn rows(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    pub fn row_width(&self) -> usize {
        self.dims.iter().skip(1).product()
    }
}

fn element_size(code: u8) -> Option<usize> {
    match code {
        0x08 | 0x09 => Some(1),
        0x0B => Some(2),
        0x0C | 0x0D => Some(4),
        0x0E => Some(8),
        _ => None,
    }
}

fn decode(code: u8, b: &[u8]) -> f64 {
    match code {
        0x08 => f64::from(b[0]),
        0x09 => f64::from(b[0] as i8),
        0x0B => f64::from(i16::from_be_bytes([b[0], b[1]])),
        0x0C => f64::from(i32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        0x0D => f64::from(f32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        0x0E => f64::from_be_bytes(b.try_into().expect("8 bytes")),
        _ => unreachable!("validated type code"),
    }
}

pub fn parse_idx(bytes: &[u8]) -> std::result::Result<IdxArray, String> {
    if bytes.len() < 4 {
        return Err(format!("offset 0: file too short for IDX magic ({} bytes)", bytes.len()));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(format!(
            "offset 0: bad magic {:02x} {:02x}, expected 00 00",
            bytes[0], bytes[1]
        ));
    }
    let code = bytes[2];
    let size = element_size(code).ok_or_else(|| format!("offset 2: unknown IDX type code 0x{code:02x}"))?;
    let ndims = usize::from(bytes[3]);
    if ndims == 0 {
        return Err("offset 3: IDX file declares zero dimensions".into());
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(format!("offset 4: header needs {header} bytes, file has {}", bytes.len()));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let count: usize = dims.iter().product();
    let expected = header + count * size;
    if bytes.len() != expected {
        return Err(format!(
            "offset {header}: dims {dims:?} need {} payload bytes, found {}",
            count * size,
            bytes.len() - header
        ));
    }
    let data = bytes[header..].chunks_exact(size).map(|c| decode(code, c)).collect();
    Ok(IdxArray { dims, data })
}

pub fn load_idx(path: &Path) -> Result<IdxArray> {
    let bytes = std::fs::read(path)?;
    parse_idx(&bytes).map_err(|message| Error::Parse {
        path: path.to_path_buf(),
        message,
    })
}

/// Images `[N, d1, d2, ...]` flattened to `N x (d1*d2*...)` and globally
/// min-max scaled into `[0, 1]`, with labels from a 1-D IDX file.
pub fn load_idx_pair(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = load_idx(images)?;
    let lab = load_idx(labels)?;
    let bad = |path: &Path, message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    if lab.dims.len() != 1 {
        return Err(bad(labels, format!("label file must be 1-D, found dims {:?}", lab.dims)));
    }
    if img.rows() != lab.rows() {
        return Err(bad(labels, format!("{} labels for {} images", lab.rows(), img.rows())));
    }
    if img.rows() == 0 || img.row_width() == 0 {
        return Err(bad(images, "no samples".into()));
    }
    let ys: Vec<usize> = lab
        .data
        .iter()
        .map(|v| {
            if *v >= 0.0 && v.fract() == 0.0 {
                Ok(*v as usize)
            } else {
                Err(bad(labels, format!("label {v} is not a non-negative integer")))
            }
        })
        .collect::<Result<_>>()?;
    let (lo, hi) = img
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let span = hi - lo;
    let width = img.row_width();
    let features = img
        .data
        .into_iter()
        .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect();
    let num_classes = ys.iter().max().map_or(0, |m| m + 1).max(2);
    let n = ys.len();
    Dataset::new(
        features,
        width,
        ys,
        num_classes,
        vec![Split::Train; n],
        format!("idx:{}+{}", images.display(), labels.display()),
    )
}
