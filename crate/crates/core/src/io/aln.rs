//! ALN v1: a serialized alignment result, lossless in f64.
//!
//! Header: `"ALN1"`, u32 version, u32 mode (0 free, 1 pinhole), u32 views,
//! u32 edges, u32 iterations run, u32 trace length.
//! Per view: u32 width, u32 height, u32 flags (bit 0 camera, bit 1 depth,
//! bit 2 points, bit 3 mask), then in flag order: camera as f64
//! `[focal, cx, cy, qw, qx, qy, qz, tx, ty, tz]` (world-to-camera), f64
//! depth plane, f64×3 points plane, u8 mask plane.
//! Per edge: u32 n, u32 m, f64 `[σ, qw, qx, qy, qz, tx, ty, tz]`.
//! Then the f64 loss trace.

use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector2, Vector3};

use super::bytes::{put_f64, put_u32, Reader};
use super::{read_bytes, write_atomic, FormatError, IoError};
use crate::align::{AlignMode, AlignmentResult, EdgeResult, ViewResult};
use crate::geometry::{ImageSize, Intrinsics, RigidPose, SimTransform};
use crate::pointmap::{DepthMap, Pointmap};

pub const ALN_MAGIC: &[u8; 4] = b"ALN1";
pub const ALN_VERSION: u32 = 1;

const HAS_CAMERA: u32 = 1;
const HAS_DEPTH: u32 = 1 << 1;
const HAS_POINTS: u32 = 1 << 2;
const HAS_MASK: u32 = 1 << 3;

fn put_quat(out: &mut Vec<u8>, q: &UnitQuaternion<f64>) {
    for c in [q.w, q.i, q.j, q.k] {
        put_f64(out, c);
    }
}

fn put_vec(out: &mut Vec<u8>, v: &Vector3<f64>) {
    for c in v.iter() {
        put_f64(out, *c);
    }
}

pub fn encode_aln(result: &AlignmentResult) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(ALN_MAGIC);
    put_u32(&mut out, ALN_VERSION);
    put_u32(&mut out, u32::from(result.mode == AlignMode::Pinhole));
    put_u32(&mut out, result.views.len() as u32);
    put_u32(&mut out, result.edges.len() as u32);
    put_u32(&mut out, result.iterations_run as u32);
    put_u32(&mut out, result.loss_trace.len() as u32);
    for (view, size) in result.views.iter().zip(&result.sizes) {
        put_u32(&mut out, size.width as u32);
        put_u32(&mut out, size.height as u32);
        match view {
            ViewResult::Pinhole {
                intrinsics,
                pose,
                depth,
            } => {
                put_u32(&mut out, HAS_CAMERA | HAS_DEPTH | HAS_MASK);
                put_f64(&mut out, intrinsics.focal);
                put_f64(&mut out, intrinsics.principal_point.x);
                put_f64(&mut out, intrinsics.principal_point.y);
                put_quat(&mut out, &pose.rotation);
                put_vec(&mut out, &pose.translation);
                for d in depth.depths() {
                    put_f64(&mut out, *d);
                }
                out.extend(depth.valid().iter().map(|&v| u8::from(v)));
            }
            ViewResult::Free { points } => {
                put_u32(&mut out, HAS_POINTS | HAS_MASK);
                for p in points.points() {
                    put_vec(&mut out, p);
                }
                out.extend(points.valid().iter().map(|&v| u8::from(v)));
            }
        }
    }
    for e in &result.edges {
        put_u32(&mut out, e.n as u32);
        put_u32(&mut out, e.m as u32);
        put_f64(&mut out, e.transform.scale);
        put_quat(&mut out, &e.transform.rotation);
        put_vec(&mut out, &e.transform.translation);
    }
    for l in &result.loss_trace {
        put_f64(&mut out, *l);
    }
    out
}

fn read_quat(rd: &mut Reader<'_>) -> Result<UnitQuaternion<f64>, FormatError> {
    let at = rd.offset();
    let q = Quaternion::new(rd.f64()?, rd.f64()?, rd.f64()?, rd.f64()?);
    if !((q.norm() - 1.0).abs() < 1e-6) {
        return Err(FormatError::Invalid {
            offset: at,
            reason: "quaternion is not normalized".into(),
        });
    }
    // Stored normalized; taken verbatim so round trips are exact.
    Ok(UnitQuaternion::new_unchecked(q))
}

fn read_vec(rd: &mut Reader<'_>) -> Result<Vector3<f64>, FormatError> {
    Ok(Vector3::new(rd.f64()?, rd.f64()?, rd.f64()?))
}

fn read_mask(rd: &mut Reader<'_>, n: usize) -> Result<Vec<bool>, FormatError> {
    let at = rd.offset();
    let raw = rd.take(n)?;
    if let Some(k) = raw.iter().position(|&b| b > 1) {
        return Err(FormatError::Invalid {
            offset: at + k,
            reason: format!("mask byte {}", raw[k]),
        });
    }
    Ok(raw.iter().map(|&b| b == 1).collect())
}

pub fn decode_aln(bytes: &[u8]) -> Result<AlignmentResult, FormatError> {
    let mut rd = Reader::new(bytes);
    rd.magic(ALN_MAGIC, "ALN1")?;
    let version_at = rd.offset();
    let version = rd.u32()?;
    if version != ALN_VERSION {
        return Err(FormatError::UnsupportedVersion {
            offset: version_at,
            version,
        });
    }
    let mode_at = rd.offset();
    let mode = match rd.u32()? {
        0 => AlignMode::FreePointmaps,
        1 => AlignMode::Pinhole,
        other => {
            return Err(FormatError::Invalid {
                offset: mode_at,
                reason: format!("mode {other}"),
            })
        }
    };
    let n_views = rd.u32()? as usize;
    let n_edges = rd.u32()? as usize;
    let iterations_run = rd.u32()? as usize;
    let trace_len = rd.u32()? as usize;
    let mut sizes = Vec::with_capacity(n_views.min(1 << 16));
    let mut views = Vec::with_capacity(n_views.min(1 << 16));
    for _ in 0..n_views {
        let at = rd.offset();
        let (w, h) = (rd.u32()? as usize, rd.u32()? as usize);
        let size = ImageSize::new(w, h).ok_or(FormatError::Invalid {
            offset: at,
            reason: format!("image size {w}x{h}"),
        })?;
        let flags_at = rd.offset();
        let flags = rd.u32()?;
        let n = size.len();
        let view = match (mode, flags) {
            (AlignMode::Pinhole, f) if f == HAS_CAMERA | HAS_DEPTH | HAS_MASK => {
                let focal = rd.f64()?;
                let pp = Vector2::new(rd.f64()?, rd.f64()?);
                let rotation = read_quat(&mut rd)?;
                let translation = read_vec(&mut rd)?;
                rd.require(9 * n)?;
                let depth: Vec<f64> = (0..n).map(|_| rd.f64()).collect::<Result<_, _>>()?;
                let mask = read_mask(&mut rd, n)?;
                ViewResult::Pinhole {
                    intrinsics: Intrinsics::new(focal, pp),
                    pose: RigidPose::new(rotation, translation),
                    depth: DepthMap::new(size, depth, mask).map_err(|e| FormatError::Invalid {
                        offset: flags_at,
                        reason: e.to_string(),
                    })?,
                }
            }
            (AlignMode::FreePointmaps, f) if f == HAS_POINTS | HAS_MASK => {
                rd.require(25 * n)?;
                let points: Vec<Vector3<f64>> = (0..n).map(|_| read_vec(&mut rd)).collect::<Result<_, _>>()?;
                let mask = read_mask(&mut rd, n)?;
                ViewResult::Free {
                    points: Pointmap::new(size, points, mask).map_err(|e| FormatError::Invalid {
                        offset: flags_at,
                        reason: e.to_string(),
                    })?,
                }
            }
            (_, f) => {
                return Err(FormatError::Invalid {
                    offset: flags_at,
                    reason: format!("view flags {f:#x} do not match mode"),
                })
            }
        };
        sizes.push(size);
        views.push(view);
    }
    let mut edges = Vec::with_capacity(n_edges.min(1 << 16));
    for _ in 0..n_edges {
        let at = rd.offset();
        let (n, m) = (rd.u32()? as usize, rd.u32()? as usize);
        if n >= n_views || m >= n_views {
            return Err(FormatError::Invalid {
                offset: at,
                reason: format!("edge ({n}, {m}) references a missing view"),
            });
        }
        let scale = rd.f64()?;
        let rotation = read_quat(&mut rd)?;
        let translation = read_vec(&mut rd)?;
        edges.push(EdgeResult {
            n,
            m,
            transform: SimTransform::new(scale, rotation, translation),
        });
    }
    rd.require(8 * trace_len)?;
    let loss_trace = (0..trace_len).map(|_| rd.f64()).collect::<Result<_, _>>()?;
    if !rd.is_at_end() {
        return Err(FormatError::Invalid {
            offset: rd.offset(),
            reason: "trailing bytes".into(),
        });
    }
    Ok(AlignmentResult {
        mode,
        sizes,
        views,
        edges,
        loss_trace,
        iterations_run,
    })
}

pub fn read_aln(path: &Path) -> Result<AlignmentResult, IoError> {
    decode_aln(&read_bytes(path)?).map_err(|e| IoError::format(path, e))
}

pub fn write_aln(path: &Path, result: &AlignmentResult) -> Result<(), IoError> {
    write_atomic(path, &encode_aln(result))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pinhole_result() -> AlignmentResult {
        let size = ImageSize::new(3, 2).unwrap();
        let q = UnitQuaternion::from_euler_angles(0.1, -0.7, 2.9);
        let depth = DepthMap::new(
            size,
            vec![1.0, 2.5, 0.1, 1e-300, 7.0, 3.0],
            vec![true, true, false, true, true, true],
        )
        .unwrap();
        AlignmentResult {
            mode: AlignMode::Pinhole,
            sizes: vec![size; 2],
            views: vec![
                ViewResult::Pinhole {
                    intrinsics: Intrinsics::centered(301.25, size),
                    pose: RigidPose::identity(),
                    depth: depth.clone(),
                },
                ViewResult::Pinhole {
                    intrinsics: Intrinsics::centered(299.0, size),
                    pose: RigidPose::new(q, Vector3::new(0.3, -1.0 / 3.0, 9.0)),
                    depth,
                },
            ],
            edges: vec![EdgeResult {
                n: 1,
                m: 0,
                transform: SimTransform::new(0.75, q.inverse(), Vector3::new(1.0, 2.0, std::f64::consts::PI)),
            }],
            loss_trace: vec![3.0, 1.5, 0.1],
            iterations_run: 2,
        }
    }

    #[test]
    fn lossless_round_trip() {
        let result = pinhole_result();
        let bytes = encode_aln(&result);
        let back = decode_aln(&bytes).unwrap();
        assert_eq!(back, result);
        assert_eq!(encode_aln(&back), bytes);
    }

    #[test]
    fn free_mode_round_trip() {
        let size = ImageSize::new(2, 2).unwrap();
        let pm = Pointmap::from_fn(size, |i, j| {
            (i + j != 2).then(|| Vector3::new(i as f64, 0.1 * j as f64, -4.0))
        });
        let result = AlignmentResult {
            mode: AlignMode::FreePointmaps,
            sizes: vec![size],
            views: vec![ViewResult::Free { points: pm }],
            edges: vec![],
            loss_trace: vec![0.0],
            iterations_run: 0,
        };
        assert_eq!(decode_aln(&encode_aln(&result)).unwrap(), result);
    }

    #[test]
    fn rejects_damage() {
        let bytes = encode_aln(&pinhole_result());
        assert!(matches!(
            decode_aln(&bytes[..bytes.len() - 1]),
            Err(FormatError::Truncated { .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_aln(&long), Err(FormatError::Invalid { .. })));
        let mut v = bytes;
        v[4] = 9;
        assert!(matches!(
            decode_aln(&v),
            Err(FormatError::UnsupportedVersion { offset: 4, version: 9 })
        ));
    }
}
