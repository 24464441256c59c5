//! PMAP v1: a sequence of pointmap records.
//!
//! Record: `"PMAP"`, u32 version, u32 width, u32 height, u32 flags, then the
//! f32×3 points plane and the optional planes in flag-bit order: bit 0 u8
//! mask, bit 1 f32 confidence, bit 2 3×u8 color. Without a mask plane a
//! point is valid iff all its coordinates are finite. A pair prediction is
//! two consecutive records.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use super::bytes::{put_f32, put_u32, Reader};
use super::{read_bytes, write_atomic, FormatError, IoError};
use crate::geometry::ImageSize;
use crate::pointmap::{ConfidenceMap, PairPrediction, Pointmap, ViewPrediction};

pub const PMAP_MAGIC: &[u8; 4] = b"PMAP";
pub const PMAP_VERSION: u32 = 1;

const FLAG_MASK: u32 = 1;
const FLAG_CONFIDENCE: u32 = 1 << 1;
const FLAG_COLOR: u32 = 1 << 2;

#[derive(Clone, Debug, PartialEq)]
pub struct PmapRecord {
    pub points: Pointmap,
    pub confidence: Option<ConfidenceMap>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PmapRecord {
    pub fn points_only(points: Pointmap) -> Self {
        Self {
            points,
            confidence: None,
            colors: None,
        }
    }
}

fn encode_record(out: &mut Vec<u8>, r: &PmapRecord) {
    let size = r.points.size();
    let needs_mask = r.points.valid().iter().any(|&v| !v);
    let mut flags = 0;
    if needs_mask {
        flags |= FLAG_MASK;
    }
    if r.confidence.is_some() {
        flags |= FLAG_CONFIDENCE;
    }
    if r.colors.is_some() {
        flags |= FLAG_COLOR;
    }
    out.extend_from_slice(PMAP_MAGIC);
    put_u32(out, PMAP_VERSION);
    put_u32(out, size.width as u32);
    put_u32(out, size.height as u32);
    put_u32(out, flags);
    for p in r.points.points() {
        for c in p.iter() {
            put_f32(out, *c as f32);
        }
    }
    if needs_mask {
        out.extend(r.points.valid().iter().map(|&v| u8::from(v)));
    }
    if let Some(conf) = &r.confidence {
        for w in conf.weights() {
            put_f32(out, *w as f32);
        }
    }
    if let Some(colors) = &r.colors {
        for c in colors {
            out.extend_from_slice(c);
        }
    }
}

/// Serializes records back to back.
pub fn encode_pmap(records: &[PmapRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        encode_record(&mut out, r);
    }
    out
}

fn decode_record(rd: &mut Reader<'_>) -> Result<PmapRecord, FormatError> {
    rd.magic(PMAP_MAGIC, "PMAP")?;
    let version_at = rd.offset();
    let version = rd.u32()?;
    if version != PMAP_VERSION {
        return Err(FormatError::UnsupportedVersion {
            offset: version_at,
            version,
        });
    }
    let dims_at = rd.offset();
    let (w, h) = (rd.u32()? as usize, rd.u32()? as usize);
    let size = ImageSize::new(w, h).ok_or(FormatError::Invalid {
        offset: dims_at,
        reason: format!("image size {w}x{h}"),
    })?;
    let flags_at = rd.offset();
    let flags = rd.u32()?;
    if flags & !(FLAG_MASK | FLAG_CONFIDENCE | FLAG_COLOR) != 0 {
        return Err(FormatError::Invalid {
            offset: flags_at,
            reason: format!("unknown flags {flags:#x}"),
        });
    }
    let n = size.len();
    let mut payload = 12 * n;
    if flags & FLAG_MASK != 0 {
        payload += n;
    }
    if flags & FLAG_CONFIDENCE != 0 {
        payload += 4 * n;
    }
    if flags & FLAG_COLOR != 0 {
        payload += 3 * n;
    }
    rd.require(payload)?;

    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        points.push(Vector3::new(rd.f32()? as f64, rd.f32()? as f64, rd.f32()? as f64));
    }
    let valid: Vec<bool> = if flags & FLAG_MASK != 0 {
        let at = rd.offset();
        let mask = rd.take(n)?;
        if let Some(k) = mask.iter().position(|&b| b > 1) {
            return Err(FormatError::Invalid {
                offset: at + k,
                reason: format!("mask byte {}", mask[k]),
            });
        }
        mask.iter().map(|&b| b == 1).collect()
    } else {
        points.iter().map(|p| p.iter().all(|c| c.is_finite())).collect()
    };
    if let Some(k) = (0..n).find(|&k| valid[k] && !points[k].iter().all(|c| c.is_finite())) {
        return Err(FormatError::Invalid {
            offset: flags_at + 4 + 12 * k,
            reason: "non-finite point marked valid".into(),
        });
    }
    let points = Pointmap::new(size, points, valid).expect("checked above");
    let confidence = if flags & FLAG_CONFIDENCE != 0 {
        let at = rd.offset();
        let mut w = Vec::with_capacity(n);
        for _ in 0..n {
            w.push(rd.f32()? as f64);
        }
        Some(ConfidenceMap::new(size, w).map_err(|e| FormatError::Invalid {
            offset: at,
            reason: e.to_string(),
        })?)
    } else {
        None
    };
    let colors = if flags & FLAG_COLOR != 0 {
        let raw = rd.take(3 * n)?;
        Some(raw.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    } else {
        None
    };
    Ok(PmapRecord {
        points,
        confidence,
        colors,
    })
}

/// Parses one or more records spanning the whole buffer.
pub fn decode_pmap(bytes: &[u8]) -> Result<Vec<PmapRecord>, FormatError> {
    let mut rd = Reader::new(bytes);
    let mut out = vec![decode_record(&mut rd)?];
    while !rd.is_at_end() {
        out.push(decode_record(&mut rd)?);
    }
    Ok(out)
}

pub fn read_pmap(path: &Path) -> Result<Vec<PmapRecord>, IoError> {
    decode_pmap(&read_bytes(path)?).map_err(|e| IoError::format(path, e))
}

pub fn write_pmap(path: &Path, records: &[PmapRecord]) -> Result<(), IoError> {
    write_atomic(path, &encode_pmap(records))
}

pub fn pair_to_records(pair: &PairPrediction) -> [PmapRecord; 2] {
    [&pair.view1, &pair.view2].map(|v| PmapRecord {
        points: v.points.clone(),
        confidence: Some(v.confidence.clone()),
        colors: None,
    })
}

/// A pair prediction from exactly two records carrying confidence planes.
pub fn pair_from_records(records: Vec<PmapRecord>) -> Result<PairPrediction, IoError> {
    let [a, b]: [PmapRecord; 2] = records
        .try_into()
        .map_err(|r: Vec<PmapRecord>| IoError::Content(format!("pair file needs 2 records, found {}", r.len())))?;
    let view = |r: PmapRecord| -> Result<ViewPrediction, IoError> {
        let conf = r
            .confidence
            .ok_or_else(|| IoError::Content("pair records need confidence planes".into()))?;
        ViewPrediction::new(r.points, conf).map_err(|e| IoError::Content(e.to_string()))
    };
    Ok(PairPrediction::new(view(a)?, view(b)?))
}

/// `pair_<n>_<m>.pmap`: the prediction for `(I^n, I^m)`.
pub fn pair_file_name(n: usize, m: usize) -> String {
    format!("pair_{n}_{m}.pmap")
}

fn parse_pair_file_name(name: &str) -> Option<(usize, usize)> {
    let (n, m) = name.strip_prefix("pair_")?.strip_suffix(".pmap")?.split_once('_')?;
    Some((n.parse().ok()?, m.parse().ok()?))
}

/// Every pair file in `dir`, keyed by `(n, m)`. Other files are ignored.
pub fn read_pair_dir(dir: &Path) -> Result<BTreeMap<(usize, usize), PairPrediction>, IoError> {
    let entries = fs::read_dir(dir).map_err(|e| IoError::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| IoError::io(dir, e))?.path();
        let Some(key) = path.file_name().and_then(|n| n.to_str()).and_then(parse_pair_file_name) else {
            continue;
        };
        let pair =
            pair_from_records(read_pmap(&path)?).map_err(|e| IoError::Content(format!("{}: {e}", path.display())))?;
        out.insert(key, pair);
    }
    if out.is_empty() {
        return Err(IoError::Content(format!(
            "{}: no pair_<n>_<m>.pmap files",
            dir.display()
        )));
    }
    Ok(out)
}
