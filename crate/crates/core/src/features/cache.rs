//! The `RPF1` feature cache.
//!
//! Layout (little-endian): magic `RPF1`, version `u32`, strategy `u8`,
//! D `u32`, C `u32`, count `u64`, backbone seed `u64`, then per record:
//! split tag `u8`, label `i32` (−1 for anomaly), width `u32`, and
//! `width` × `f32` values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureVector, FusionStrategy, SplitTag};
use crate::error::{ensure, FormatError, Result};
use crate::framing::{read_file, FrameReader, FrameWriter};

pub const CACHE_MAGIC: &[u8; 4] = b"RPF1";

// split tag + label + width
const RECORD_HEADER_BYTES: usize = 1 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub strategy: FusionStrategy,
    pub dim: usize,
    pub classes: usize,
    pub backbone_seed: u64,
}

impl CacheMeta {
    pub fn width(&self) -> usize {
        self.strategy.width(self.dim)
    }
}

pub fn encode_cache(records: &[FeatureVector], meta: &CacheMeta) -> Result<Vec<u8>> {
    let width = meta.width();
    for (i, r) in records.iter().enumerate() {
        ensure!(
            r.width() == width,
            "record {i} has width {}, expected {width} for {} with D={}",
            r.width(),
            meta.strategy,
            meta.dim
        );
        match (r.split, r.label) {
            (SplitTag::Anomaly, None) => {}
            (SplitTag::Anomaly, Some(_)) => {
                return Err(crate::Error::arg(format!("anomaly record {i} carries a label")))
            }
            (_, Some(y)) => ensure!(
                y < meta.classes,
                "record {i} has label {y} but there are {} classes",
                meta.classes
            ),
            (_, None) => return Err(crate::Error::arg(format!("record {i} is missing its label"))),
        }
    }

    let mut w = FrameWriter::new(CACHE_MAGIC);
    w.u8(meta.strategy.tag());
    w.usize_as_u32(meta.dim, "feature dim")?;
    w.usize_as_u32(meta.classes, "class count")?;
    w.u64(records.len() as u64);
    w.u64(meta.backbone_seed);
    for r in records {
        w.u8(r.split.tag());
        // Labels were range-checked above and C fits in u32.
        w.i32(r.label.map_or(-1, |y| y as i32));
        w.usize_as_u32(width, "record width")?;
        for v in &r.values {
            w.f32(*v as f32);
        }
    }
    Ok(w.into_bytes())
}

pub fn decode_cache(bytes: &[u8]) -> Result<(Vec<FeatureVector>, CacheMeta)> {
    let mut r = FrameReader::open(bytes, CACHE_MAGIC)?;
    let tag = r.u8()?;
    let strategy = FusionStrategy::from_tag(tag).ok_or(FormatError::InvalidField {
        field: "strategy",
        value: u64::from(tag),
    })?;
    let dim = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let count = r.u64()?;
    let backbone_seed = r.u64()?;
    let meta = CacheMeta {
        strategy,
        dim,
        classes,
        backbone_seed,
    };
    let width = meta.width();

    let record_bytes = RECORD_HEADER_BYTES as u128 + 4 * width as u128;
    if u128::from(count) * record_bytes > r.remaining() as u128 {
        return Err(FormatError::Truncated {
            offset: bytes.len() - r.remaining(),
            needed: usize::try_from(u128::from(count) * record_bytes).unwrap_or(usize::MAX),
            available: r.remaining(),
        }
        .into());
    }

    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let split_tag = r.u8()?;
        let split = SplitTag::from_tag(split_tag).ok_or(FormatError::InvalidField {
            field: "split tag",
            value: u64::from(split_tag),
        })?;
        let raw_label = r.i32()?;
        let label = match (split, raw_label) {
            (SplitTag::Anomaly, -1) => None,
            (s, y) if s != SplitTag::Anomaly && y >= 0 && (y as usize) < classes => Some(y as usize),
            (_, y) => {
                return Err(FormatError::InvalidField {
                    field: "label",
                    value: y as u32 as u64,
                }
                .into())
            }
        };
        let w = r.u32()? as usize;
        if w != width {
            return Err(FormatError::InvalidField {
                field: "record width",
                value: w as u64,
            }
            .into());
        }
        let mut values = Vec::with_capacity(width);
        for _ in 0..width {
            values.push(f64::from(r.f32()?));
        }
        records.push(FeatureVector {
            values,
            label,
            split,
        });
    }
    r.finish()?;
    Ok((records, meta))
}

pub fn write_cache(path: &Path, records: &[FeatureVector], meta: &CacheMeta) -> Result<()> {
    let bytes = encode_cache(records, meta)?;
    std::fs::write(path, bytes).map_err(|e| crate::Error::io(path, e))
}

pub fn read_cache(path: &Path) -> Result<(Vec<FeatureVector>, CacheMeta)> {
    decode_cache(&read_file(path)?)
}
