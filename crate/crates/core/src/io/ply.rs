//! PLY point clouds: float x, y, z and optional uchar red, green, blue.

use std::path::Path;

use nalgebra::Vector3;

use super::{write_atomic, IoError};
use crate::pointmap::{ConfidenceMap, Pointmap};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlyCloud {
    pub points: Vec<[f32; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
}

/// Valid points of `pm` whose confidence, if given, is at least `min_conf`.
pub fn cloud_from_pointmap(
    pm: &Pointmap,
    confidence: Option<&ConfidenceMap>,
    min_conf: f64,
    colors: Option<&[[u8; 3]]>,
) -> PlyCloud {
    let keep: Vec<usize> = pm
        .iter_valid()
        .map(|(k, _)| k)
        .filter(|&k| confidence.is_none_or(|c| c.weight(k) >= min_conf))
        .collect();
    PlyCloud {
        points: keep
            .iter()
            .map(|&k| {
                let p: &Vector3<f64> = pm.point(k);
                [p.x as f32, p.y as f32, p.z as f32]
            })
            .collect(),
        colors: colors.map(|c| keep.iter().map(|&k| c[k]).collect()),
    }
}

pub fn encode_ply(cloud: &PlyCloud, format: PlyFormat) -> Result<Vec<u8>, IoError> {
    if cloud.points.is_empty() {
        return Err(IoError::Content("point cloud is empty".into()));
    }
    if cloud.colors.as_ref().is_some_and(|c| c.len() != cloud.points.len()) {
        return Err(IoError::Content("color count differs from point count".into()));
    }
    let mut out = String::from("ply\n");
    out.push_str(match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    out.push_str(&format!("element vertex {}\n", cloud.points.len()));
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    if cloud.colors.is_some() {
        out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    out.push_str("end_header\n");
    let mut bytes = out.into_bytes();
    for (k, p) in cloud.points.iter().enumerate() {
        let color = cloud.colors.as_ref().map(|c| c[k]);
        match format {
            PlyFormat::Ascii => {
                // `{}` on f32 prints the shortest string that parses back exactly.
                let mut line = format!("{} {} {}", p[0], p[1], p[2]);
                if let Some(c) = color {
                    line.push_str(&format!(" {} {} {}", c[0], c[1], c[2]));
                }
                line.push('\n');
                bytes.extend_from_slice(line.as_bytes());
            }
            PlyFormat::BinaryLittleEndian => {
                for c in p {
                    bytes.extend_from_slice(&c.to_le_bytes());
                }
                if let Some(c) = color {
                    bytes.extend_from_slice(&c);
                }
            }
        }
    }
    Ok(bytes)
}

pub fn write_ply(path: &Path, cloud: &PlyCloud, format: PlyFormat) -> Result<(), IoError> {
    write_atomic(path, &encode_ply(cloud, format)?)
}

/// Reads back the vertex layout written by [`encode_ply`].
pub fn parse_ply(bytes: &[u8]) -> Result<PlyCloud, IoError> {
    let bad = |msg: &str| IoError::Content(format!("ply: {msg}"));
    const END: &[u8] = b"end_header\n";
    let header_end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| bad("missing end_header"))?
        + END.len();
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| bad("header is not UTF-8"))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(bad("missing magic line"));
    }
    let mut format = None;
    let mut count = None;
    let mut props = Vec::new();
    for line in lines {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", "1.0"] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", "1.0"] => format = Some(PlyFormat::BinaryLittleEndian),
            ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| bad("vertex count"))?),
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            ["comment", ..] | ["end_header"] => {}
            _ => return Err(bad(&format!("unsupported header line {line:?}"))),
        }
    }
    let format = format.ok_or_else(|| bad("missing format"))?;
    let count = count.ok_or_else(|| bad("missing vertex element"))?;
    let names: Vec<&str> = props.iter().map(|(_, n)| n.as_str()).collect();
    let has_color = match names.as_slice() {
        ["x", "y", "z"] => false,
        ["x", "y", "z", "red", "green", "blue"] => true,
        _ => return Err(bad("unsupported vertex properties")),
    };
    let body = &bytes[header_end..];
    let mut cloud = PlyCloud {
        points: Vec::with_capacity(count),
        colors: has_color.then(Vec::new),
    };
    match format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| bad("body is not UTF-8"))?;
            let mut rows = text.lines();
            for _ in 0..count {
                let row = rows.next().ok_or_else(|| bad("too few vertices"))?;
                let f: Vec<&str> = row.split_whitespace().collect();
                if f.len() != if has_color { 6 } else { 3 } {
                    return Err(bad("wrong field count"));
                }
                let xyz = |k: usize| f[k].parse::<f32>().map_err(|_| bad("bad coordinate"));
                cloud.points.push([xyz(0)?, xyz(1)?, xyz(2)?]);
                if let Some(colors) = &mut cloud.colors {
                    let c = |k: usize| f[k].parse::<u8>().map_err(|_| bad("bad color"));
                    colors.push([c(3)?, c(4)?, c(5)?]);
                }
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let stride = if has_color { 15 } else { 12 };
            if body.len() < stride * count {
                return Err(bad("truncated vertex data"));
            }
            for row in body.chunks_exact(stride).take(count) {
                let f = |k: usize| f32::from_le_bytes(row[4 * k..4 * k + 4].try_into().expect("4 bytes"));
                cloud.points.push([f(0), f(1), f(2)]);
                if let Some(colors) = &mut cloud.colors {
                    colors.push([row[12], row[13], row[14]]);
                }
            }
        }
    }
    Ok(cloud)
}
