//! Analytic primitives with exact ray intersection.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Hits closer than this along the ray are ignored.
const MIN_HIT: f64 = 1e-9;

/// Scene geometry in world coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    /// Infinite plane through `point` with normal `normal`.
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
    },
    /// Parallelogram `corner + s·edge_u + t·edge_v`, `s, t ∈ [0, 1]`.
    Quad {
        corner: [f64; 3],
        edge_u: [f64; 3],
        edge_v: [f64; 3],
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Triangle {
        vertices: [[f64; 3]; 3],
    },
    /// Axis-aligned box.
    #[serde(rename = "box")]
    AaBox {
        min: [f64; 3],
        max: [f64; 3],
    },
    Mesh {
        vertices: Vec<[f64; 3]>,
        faces: Vec<[usize; 3]>,
    },
}

/// Largest mesh accepted by the oracle.
pub const MAX_MESH_TRIANGLES: usize = 10_000;

fn v(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn triangle_hit(
    o: &Vector3<f64>,
    d: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Option<f64> {
    // Möller–Trumbore.
    let (e1, e2) = (b - a, c - a);
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-15 {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let w = d.dot(&q) * inv;
    if w < 0.0 || u + w > 1.0 {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

impl Primitive {
    /// Smallest ray parameter `λ > 0` with `o + λ d` on the surface.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let hit = match self {
            Primitive::Plane { point, normal } => {
                let n = v(normal);
                let denom = n.dot(d);
                if denom.abs() < 1e-15 {
                    return None;
                }
                Some(n.dot(&(v(point) - o)) / denom)
            }
            Primitive::Quad { corner, edge_u, edge_v } => {
                let (c, u, w) = (v(corner), v(edge_u), v(edge_v));
                let n = u.cross(&w);
                let denom = n.dot(d);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let lambda = n.dot(&(c - o)) / denom;
                let rel = o + d * lambda - c;
                // Solve rel = s u + t w in the plane via the Gram matrix.
                let (uu, uw, ww) = (u.dot(&u), u.dot(&w), w.dot(&w));
                let (ru, rw) = (rel.dot(&u), rel.dot(&w));
                let det = uu * ww - uw * uw;
                let s = (ru * ww - rw * uw) / det;
                let t = (rw * uu - ru * uw) / det;
                ((0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&t)).then_some(lambda)
            }
            Primitive::Sphere { center, radius } => {
                let oc = o - v(center);
                let a = d.dot(d);
                let half_b = d.dot(&oc);
                let c = oc.dot(&oc) - radius * radius;
                let disc = half_b * half_b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // Numerically stable pair of roots.
                let q = -(half_b + half_b.signum() * sq);
                let (r1, r2) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
                let (near, far) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
                if near > MIN_HIT {
                    Some(near)
                } else {
                    Some(far)
                }
            }
            Primitive::Triangle { vertices } => {
                triangle_hit(o, d, &v(&vertices[0]), &v(&vertices[1]), &v(&vertices[2]))
            }
            Primitive::AaBox { min, max } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    if d[k] == 0.0 {
                        if o[k] < min[k] || o[k] > max[k] {
                            return None;
                        }
                        continue;
                    }
                    let (a, b) = ((min[k] - o[k]) / d[k], (max[k] - o[k]) / d[k]);
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                if t0 > t1 {
                    return None;
                }
                if t0 > MIN_HIT {
                    Some(t0)
                } else {
                    Some(t1)
                }
            }
            Primitive::Mesh { vertices, faces } => faces
                .iter()
                .filter_map(|f| triangle_hit(o, d, &v(&vertices[f[0]]), &v(&vertices[f[1]]), &v(&vertices[f[2]])))
                .filter(|&l| l > MIN_HIT)
                .min_by(f64::total_cmp),
        };
        hit.filter(|&l| l > MIN_HIT && l.is_finite())
    }

    /// A representative point used to aim cameras; `None` for unbounded planes.
    pub fn centroid(&self) -> Option<Vector3<f64>> {
        match self {
            Primitive::Plane { .. } => None,
            Primitive::Quad { corner, edge_u, edge_v } => Some(v(corner) + (v(edge_u) + v(edge_v)) * 0.5),
            Primitive::Sphere { center, .. } => Some(v(center)),
            Primitive::Triangle { vertices } => Some(vertices.iter().map(v).sum::<Vector3<f64>>() / 3.0),
            Primitive::AaBox { min, max } => Some((v(min) + v(max)) * 0.5),
            Primitive::Mesh { vertices, .. } => {
                (!vertices.is_empty()).then(|| vertices.iter().map(v).sum::<Vector3<f64>>() / vertices.len() as f64)
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite = |a: &[f64]| a.iter().all(|x| x.is_finite());
        match self {
            Primitive::Plane { point, normal } => {
                if !finite(point) || !finite(normal) || v(normal).norm() == 0.0 {
                    return Err("plane needs a finite point and nonzero normal".into());
                }
            }
            Primitive::Quad { corner, edge_u, edge_v } => {
                if !finite(corner) || v(edge_u).cross(&v(edge_v)).norm() == 0.0 {
                    return Err("quad edges must be non-parallel".into());
                }
            }
            Primitive::Sphere { center, radius } => {
                if !finite(center) || !(*radius > 0.0) {
                    return Err("sphere needs a positive radius".into());
                }
            }
            Primitive::Triangle { vertices } => {
                let [a, b, c] = vertices.map(|x| v(&x));
                if (b - a).cross(&(c - a)).norm() == 0.0 {
                    return Err("degenerate triangle".into());
                }
            }
            Primitive::AaBox { min, max } => {
                if (0..3).any(|k| !(min[k] < max[k])) {
                    return Err("box needs min < max on every axis".into());
                }
            }
            Primitive::Mesh { vertices, faces } => {
                if faces.len() > MAX_MESH_TRIANGLES {
                    return Err(format!(
                        "mesh has {} triangles, limit is {MAX_MESH_TRIANGLES}",
                        faces.len()
                    ));
                }
                if faces.iter().flatten().any(|&k| k >= vertices.len()) {
                    return Err("mesh face references a missing vertex".into());
                }
            }
        }
        Ok(())
    }
}

/// Nearest hit over all primitives, capped at `max_depth`.
pub fn cast(geometry: &[Primitive], o: &Vector3<f64>, d: &Vector3<f64>, max_depth: f64) -> Option<f64> {
    geometry
        .iter()
        .filter_map(|p| p.intersect(o, d))
        .filter(|&l| l <= max_depth)
        .min_by(f64::total_cmp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_front_and_inside() {
        let s = Primitive::Sphere {
            center: [0.0, 0.0, 5.0],
            radius: 1.0,
        };
        let o = Vector3::zeros();
        let d = Vector3::new(0.0, 0.0, 1.0);
        assert_eq!(s.intersect(&o, &d), Some(4.0));
        assert_eq!(s.intersect(&Vector3::new(0.0, 0.0, 5.0), &d), Some(1.0));
        assert_eq!(s.intersect(&o, &-d), None);
    }

    #[test]
    fn box_and_quad() {
        let b = Primitive::AaBox {
            min: [-1.0, -1.0, 2.0],
            max: [1.0, 1.0, 3.0],
        };
        let d = Vector3::new(0.0, 0.0, 1.0);
        assert_eq!(b.intersect(&Vector3::zeros(), &d), Some(2.0));
        let q = Primitive::Quad {
            corner: [-0.5, -0.5, 5.0],
            edge_u: [1.0, 0.0, 0.0],
            edge_v: [0.0, 1.0, 0.0],
        };
        assert_eq!(q.intersect(&Vector3::zeros(), &d), Some(5.0));
        assert_eq!(q.intersect(&Vector3::new(0.6, 0.0, 0.0), &d), None);
    }

    #[test]
    fn triangle_hit_point_lies_on_triangle() {
        let t = Primitive::Triangle {
            vertices: [[0.0, 0.0, 4.0], [2.0, 0.0, 4.0], [0.0, 2.0, 6.0]],
        };
        let o = Vector3::new(0.1, 0.2, -1.0);
        let d = Vector3::new(0.05, 0.1, 1.0);
        let l = t.intersect(&o, &d).unwrap();
        let p = o + d * l;
        // Plane of the triangle: z = 4 + y.
        assert!((p.z - 4.0 - p.y).abs() < 1e-12);
    }
}
