//! Binary sample files.
//!
//! Little-endian layout:
//!
//! | field         | type            |
//! |---------------|-----------------|
//! | magic         | `b"OCCS"`       |
//! | version       | u32 = 1         |
//! | N             | u32             |
//! | class label   | u32             |
//! | query points  | N x 3 f32       |
//! | occupancy     | N u8 (0 or 1)   |
//! | part labels   | N u16           |
//! | input cloud   | 300 x 3 f32     |

use std::path::Path;

use super::{SampleBatch, INPUT_CLOUD_POINTS};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OCCS";
pub const VERSION: u32 = 1;

pub fn encode(batch: &SampleBatch) -> Result<Vec<u8>> {
    let n = batch.len();
    if batch.gt_occupancy.len() != n || batch.gt_part_label.len() != n {
        return Err(Error::Decode("ragged sample batch".into()));
    }
    if batch.input_cloud.len() != INPUT_CLOUD_POINTS {
        return Err(Error::Decode(format!(
            "input cloud has {} points, expected {INPUT_CLOUD_POINTS}",
            batch.input_cloud.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + n * 15 + INPUT_CLOUD_POINTS * 12);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&u32::from(batch.class_label).to_le_bytes());
    for p in &batch.query_points {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out.extend(batch.gt_occupancy.iter().map(|&o| u8::from(o)));
    for l in &batch.gt_part_label {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for p in &batch.input_cloud {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Decode("truncated OCCS file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn points(&mut self, n: usize) -> Result<Vec<[f32; 3]>> {
        let raw = self.take(n.checked_mul(12).ok_or_else(|| Error::Decode("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(12)
            .map(|c| {
                let f = |i: usize| f32::from_le_bytes(c[i..i + 4].try_into().unwrap());
                [f(0), f(4), f(8)]
            })
            .collect())
    }
}

pub fn decode(buf: &[u8]) -> Result<SampleBatch> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Decode("bad magic, expected OCCS".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Decode(format!("unsupported OCCS version {version}")));
    }
    let n = r.u32()? as usize;
    let class = r.u32()?;
    let class_label =
        u16::try_from(class).map_err(|_| Error::Decode(format!("class label {class} too large")))?;
    let query_points = r.points(n)?;
    let gt_occupancy = r
        .take(n)?
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Error::Decode(format!("occupancy byte {b}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let gt_part_label = r
        .take(n * 2)?
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    let input_cloud = r.points(INPUT_CLOUD_POINTS)?;
    if r.pos != buf.len() {
        return Err(Error::Decode(format!(
            "{} trailing bytes",
            buf.len() - r.pos
        )));
    }
    Ok(SampleBatch {
        query_points,
        gt_occupancy,
        gt_part_label,
        input_cloud,
        class_label,
    })
}

pub fn write(path: &Path, batch: &SampleBatch) -> Result<()> {
    std::fs::write(path, encode(batch)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<SampleBatch> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}
