//! The global alignment objective over a flat parameter vector.
//!
//! `L = Σ_e Σ_{v∈e} Σ_i C_i^{v,e} ‖χ_i^v − σ_e (R_e X_i^{v,e} + t_e)‖`
//!
//! Layout, per view then per edge:
//! - free view: `3·HW` coordinates of χ;
//! - pinhole view: `[log f, q_w, q_x, q_y, q_z, T_x, T_y, T_z]` (camera-to-world)
//!   followed by `HW` log-depths;
//! - edge: `[log σ, q_w, q_x, q_y, q_z, t_x, t_y, t_z]`.
//!
//! Quaternions enter the objective normalized, so their gradient is tangent
//! to the unit sphere.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3, Vector4};

use super::graph::SceneGraph;
use super::AlignMode;
use crate::geometry::{ImageSize, RigidPose, SimTransform};

/// Residuals below this fraction of their magnitude get a zero subgradient.
const ZERO_RESIDUAL: f64 = 1e-11;

/// Learning-rate multipliers, see [`Objective::step_scale`].
const PIXEL_STEP_SCALE: f64 = 0.3;
const GLOBAL_STEP_SCALE: f64 = 0.05;

const POSE_BLOCK: usize = 8;
const EDGE_BLOCK: usize = 8;

/// Per-view unknowns in natural units.
#[derive(Clone, Debug, PartialEq)]
pub enum ViewVariables {
    Free {
        points: Vec<Vector3<f64>>,
    },
    Pinhole {
        focal: f64,
        cam_to_world: RigidPose,
        depth: Vec<f64>,
    },
}

/// All unknowns of one alignment problem.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignVariables {
    pub views: Vec<ViewVariables>,
    /// `(σ_e, P_e)` mapping edge predictions into the world.
    pub edges: Vec<SimTransform>,
}

fn read_quat(x: &[f64]) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(Quaternion::new(x[0], x[1], x[2], x[3]))
}

fn write_quat(out: &mut [f64], q: &UnitQuaternion<f64>) {
    out.copy_from_slice(&[q.w, q.i, q.j, q.k]);
}

fn read_vec(x: &[f64]) -> Vector3<f64> {
    Vector3::new(x[0], x[1], x[2])
}

/// Gradient of `⟨R(q̂), M⟩_F` with respect to the raw quaternion `q`.
fn quaternion_gradient(raw: &[f64], m: &Matrix3<f64>) -> Vector4<f64> {
    let q = Vector4::new(raw[0], raw[1], raw[2], raw[3]);
    let norm = q.norm();
    let u = q / norm;
    let (w, x, y, z) = (u[0], u[1], u[2], u[3]);
    let dw = Matrix3::new(w, -z, y, z, w, -x, -y, x, w);
    let dx = Matrix3::new(x, y, z, y, -x, -w, z, w, -x);
    let dy = Matrix3::new(-y, x, w, x, y, z, -w, z, -y);
    let dz = Matrix3::new(-z, -w, x, w, -z, y, x, y, z);
    let g = Vector4::new(dw.dot(m), dx.dot(m), dy.dot(m), dz.dot(m)) * 2.0;
    (g - u * u.dot(&g)) / norm
}

/// Residual masks and parameter layout for one graph.
pub struct Objective<'g> {
    graph: &'g SceneGraph,
    mode: AlignMode,
    view_offsets: Vec<usize>,
    edge_offset: usize,
    len: usize,
    /// Per edge, per endpoint: pixels entering the residual.
    masks: Vec<[Vec<bool>; 2]>,
    /// Per view: pixels entering at least one residual.
    active: Vec<Vec<bool>>,
}

impl<'g> Objective<'g> {
    pub fn new(graph: &'g SceneGraph, mode: AlignMode, min_conf_keep: f64) -> Self {
        let mut view_offsets = Vec::with_capacity(graph.view_count());
        let mut len = 0;
        for size in graph.sizes() {
            view_offsets.push(len);
            len += match mode {
                AlignMode::FreePointmaps => 3 * size.len(),
                AlignMode::Pinhole => POSE_BLOCK + size.len(),
            };
        }
        let edge_offset = len;
        len += EDGE_BLOCK * graph.edges().len();
        let mut active: Vec<Vec<bool>> = graph.sizes().iter().map(|s| vec![false; s.len()]).collect();
        let masks = graph
            .edges()
            .iter()
            .map(|e| {
                let mut mask = |v: usize, pred: &crate::pointmap::ViewPrediction| -> Vec<bool> {
                    let m: Vec<bool> = (0..pred.points.size().len())
                        .map(|k| pred.points.is_valid(k) && pred.confidence.weight(k) >= min_conf_keep)
                        .collect();
                    for (a, &b) in active[v].iter_mut().zip(&m) {
                        *a |= b;
                    }
                    m
                };
                [mask(e.n, &e.prediction.view1), mask(e.m, &e.prediction.view2)]
            })
            .collect();
        Self {
            graph,
            mode,
            view_offsets,
            edge_offset,
            len,
            masks,
            active,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn mode(&self) -> AlignMode {
        self.mode
    }

    /// Pixels of view `v` constrained by at least one residual.
    pub fn active(&self, v: usize) -> &[bool] {
        &self.active[v]
    }

    /// Pixels of endpoint `side` (0 = `n`, 1 = `m`) of edge `e` in the residual.
    pub fn edge_mask(&self, e: usize, side: usize) -> &[bool] {
        &self.masks[e][side]
    }

    fn edge_range(&self, e: usize) -> std::ops::Range<usize> {
        let o = self.edge_offset + EDGE_BLOCK * e;
        o..o + EDGE_BLOCK
    }

    /// Entries the optimizer must not move: view 0's pose in pinhole mode.
    pub fn frozen(&self) -> Vec<bool> {
        let mut f = vec![false; self.len];
        if self.mode == AlignMode::Pinhole {
            for flag in &mut f[1..POSE_BLOCK] {
                *flag = true;
            }
        }
        f
    }

    /// Per-entry multiplier on the learning rate. Pose, focal and edge
    /// entries move every residual of a view or edge at once, so they step
    /// more cautiously than the per-pixel unknowns.
    pub fn step_scale(&self) -> Vec<f64> {
        let mut f = vec![GLOBAL_STEP_SCALE; self.len];
        for (v, size) in self.graph.sizes().iter().enumerate() {
            let o = match self.mode {
                AlignMode::FreePointmaps => self.view_offsets[v],
                AlignMode::Pinhole => self.view_offsets[v] + POSE_BLOCK,
            };
            let per_pixel = match self.mode {
                AlignMode::FreePointmaps => 3 * size.len(),
                AlignMode::Pinhole => size.len(),
            };
            f[o..o + per_pixel].fill(PIXEL_STEP_SCALE);
        }
        f
    }

    pub fn pack(&self, vars: &AlignVariables) -> Vec<f64> {
        let mut x = vec![0.0; self.len];
        for (v, view) in vars.views.iter().enumerate() {
            let o = self.view_offsets[v];
            match view {
                ViewVariables::Free { points } => {
                    for (k, p) in points.iter().enumerate() {
                        x[o + 3 * k..o + 3 * k + 3].copy_from_slice(p.as_slice());
                    }
                }
                ViewVariables::Pinhole {
                    focal,
                    cam_to_world,
                    depth,
                } => {
                    x[o] = focal.ln();
                    write_quat(&mut x[o + 1..o + 5], &cam_to_world.rotation);
                    x[o + 5..o + 8].copy_from_slice(cam_to_world.translation.as_slice());
                    for (k, d) in depth.iter().enumerate() {
                        x[o + POSE_BLOCK + k] = d.ln();
                    }
                }
            }
        }
        for (e, t) in vars.edges.iter().enumerate() {
            let r = self.edge_range(e);
            let b = &mut x[r];
            b[0] = t.scale.ln();
            write_quat(&mut b[1..5], &t.rotation);
            b[5..8].copy_from_slice(t.translation.as_slice());
        }
        x
    }

    pub fn unpack(&self, x: &[f64]) -> AlignVariables {
        let views = self
            .graph
            .sizes()
            .iter()
            .enumerate()
            .map(|(v, size)| {
                let o = self.view_offsets[v];
                match self.mode {
                    AlignMode::FreePointmaps => ViewVariables::Free {
                        points: (0..size.len()).map(|k| read_vec(&x[o + 3 * k..])).collect(),
                    },
                    AlignMode::Pinhole => ViewVariables::Pinhole {
                        focal: x[o].exp(),
                        cam_to_world: RigidPose::new(read_quat(&x[o + 1..]), read_vec(&x[o + 5..])),
                        depth: x[o + POSE_BLOCK..o + POSE_BLOCK + size.len()]
                            .iter()
                            .map(|l| l.exp())
                            .collect(),
                    },
                }
            })
            .collect();
        let edges = (0..self.graph.edges().len())
            .map(|e| self.edge_transform(x, e))
            .collect();
        AlignVariables { views, edges }
    }

    fn edge_transform(&self, x: &[f64], e: usize) -> SimTransform {
        let b = &x[self.edge_range(e)];
        SimTransform::new(b[0].exp(), read_quat(&b[1..]), read_vec(&b[5..]))
    }

    /// Camera-frame direction for pixel `k` at unit depth: `((i−cx)/f, (j−cy)/f, 1)`.
    fn pixel_ray(size: ImageSize, k: usize, focal: f64) -> Vector3<f64> {
        let (i, j) = size.pixel(k);
        let c = size.center();
        Vector3::new((i as f64 - c.x) / focal, (j as f64 - c.y) / focal, 1.0)
    }

    /// World points χ^v for every pixel.
    pub fn world_points(&self, x: &[f64], v: usize) -> Vec<Vector3<f64>> {
        let size = self.graph.sizes()[v];
        let o = self.view_offsets[v];
        match self.mode {
            AlignMode::FreePointmaps => (0..size.len()).map(|k| read_vec(&x[o + 3 * k..])).collect(),
            AlignMode::Pinhole => {
                let focal = x[o].exp();
                let r = read_quat(&x[o + 1..]);
                let t = read_vec(&x[o + 5..]);
                (0..size.len())
                    .map(|k| r * (Self::pixel_ray(size, k, focal) * x[o + POSE_BLOCK + k].exp()) + t)
                    .collect()
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.evaluate(x, None)
    }

    pub fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.len];
        let loss = self.evaluate(x, Some(&mut grad));
        (loss, grad)
    }

    fn evaluate(&self, x: &[f64], mut grad: Option<&mut Vec<f64>>) -> f64 {
        let world: Vec<Vec<Vector3<f64>>> = (0..self.graph.view_count()).map(|v| self.world_points(x, v)).collect();
        let mut world_grad: Vec<Vec<Vector3<f64>>> = if grad.is_some() {
            world.iter().map(|w| vec![Vector3::zeros(); w.len()]).collect()
        } else {
            Vec::new()
        };
        let mut loss = 0.0;
        for (e, edge) in self.graph.edges().iter().enumerate() {
            let t = self.edge_transform(x, e);
            let r = t.rotation.to_rotation_matrix().into_inner();
            let mut rot_moment = Matrix3::zeros();
            let mut grad_t = Vector3::zeros();
            let mut grad_log_s = 0.0;
            for (side, (v, pred)) in [(edge.n, &edge.prediction.view1), (edge.m, &edge.prediction.view2)]
                .into_iter()
                .enumerate()
            {
                let mask = &self.masks[e][side];
                let conf = pred.confidence.weights();
                let pts = pred.points.points();
                for k in 0..mask.len() {
                    if !mask[k] {
                        continue;
                    }
                    let y = r * pts[k] + t.translation;
                    let target = y * t.scale;
                    let res = world[v][k] - target;
                    let norm = res.norm();
                    loss += conf[k] * norm;
                    if grad.is_none() {
                        continue;
                    }
                    let tol = ZERO_RESIDUAL * world[v][k].norm().max(target.norm()).max(1.0);
                    if norm <= tol {
                        continue;
                    }
                    let g = res * (conf[k] / norm);
                    world_grad[v][k] += g;
                    // d/d(σ y) = −g.
                    grad_t -= g * t.scale;
                    grad_log_s -= t.scale * g.dot(&y);
                    rot_moment -= (g * t.scale) * pts[k].transpose();
                }
            }
            if let Some(grad) = grad.as_deref_mut() {
                let range = self.edge_range(e);
                let raw = x[range.clone()].to_vec();
                let b = &mut grad[range];
                b[0] += grad_log_s;
                let gq = quaternion_gradient(&raw[1..5], &rot_moment);
                for d in 0..4 {
                    b[1 + d] += gq[d];
                }
                for d in 0..3 {
                    b[5 + d] += grad_t[d];
                }
            }
        }
        if let Some(grad) = grad {
            for (v, wg) in world_grad.iter().enumerate() {
                self.chain_view(x, v, wg, grad);
            }
        }
        loss
    }

    /// Pulls per-pixel world-point gradients back onto view `v`'s parameters.
    fn chain_view(&self, x: &[f64], v: usize, wg: &[Vector3<f64>], grad: &mut [f64]) {
        let size = self.graph.sizes()[v];
        let o = self.view_offsets[v];
        match self.mode {
            AlignMode::FreePointmaps => {
                for (k, g) in wg.iter().enumerate() {
                    for d in 0..3 {
                        grad[o + 3 * k + d] += g[d];
                    }
                }
            }
            AlignMode::Pinhole => {
                let focal = x[o].exp();
                let q = read_quat(&x[o + 1..]);
                let r = q.to_rotation_matrix().into_inner();
                let mut moment = Matrix3::zeros();
                let mut grad_t = Vector3::zeros();
                let mut grad_log_f = 0.0;
                for (k, g) in wg.iter().enumerate() {
                    if g.iter().all(|&c| c == 0.0) {
                        continue;
                    }
                    let c = Self::pixel_ray(size, k, focal) * x[o + POSE_BLOCK + k].exp();
                    let rg = r.transpose() * g;
                    grad[o + POSE_BLOCK + k] += rg.dot(&c);
                    // ∂c/∂log f = (−c_x, −c_y, 0).
                    grad_log_f -= rg.x * c.x + rg.y * c.y;
                    grad_t += g;
                    moment += g * c.transpose();
                }
                grad[o] += grad_log_f;
                if v != 0 {
                    let gq = quaternion_gradient(&x[o + 1..o + 5], &moment);
                    for d in 0..4 {
                        grad[o + 1 + d] += gq[d];
                    }
                    for d in 0..3 {
                        grad[o + 5 + d] += grad_t[d];
                    }
                }
            }
        }
    }

    /// Renormalizes quaternions and recenters log-scales so `Σ log σ_e = 0`.
    pub fn project(&self, x: &mut [f64]) {
        let renorm = |b: &mut [f64]| {
            let n = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2] + b[3] * b[3]).sqrt();
            for c in b.iter_mut() {
                *c /= n;
            }
        };
        if self.mode == AlignMode::Pinhole {
            for &o in &self.view_offsets {
                renorm(&mut x[o + 1..o + 5]);
            }
        }
        let n_edges = self.graph.edges().len();
        if n_edges == 0 {
            return;
        }
        let mean = (0..n_edges).map(|e| x[self.edge_range(e).start]).sum::<f64>() / n_edges as f64;
        for e in 0..n_edges {
            let r = self.edge_range(e);
            x[r.start] -= mean;
            renorm(&mut x[r.start + 1..r.start + 5]);
        }
    }

    /// Removes the gradient component that would change `Σ_e log σ_e`, so the
    /// step itself respects the constraint that `project` enforces.
    pub fn tangent_gradient(&self, grad: &mut [f64]) {
        let n_edges = self.graph.edges().len();
        if n_edges == 0 {
            return;
        }
        let mean = (0..n_edges).map(|e| grad[self.edge_range(e).start]).sum::<f64>() / n_edges as f64;
        for e in 0..n_edges {
            grad[self.edge_range(e).start] -= mean;
        }
    }

    /// `Σ_e log σ_e`.
    pub fn log_scale_sum(&self, x: &[f64]) -> f64 {
        (0..self.graph.edges().len()).map(|e| x[self.edge_range(e).start]).sum()
    }

    /// Largest `|‖q‖ − 1|` over all quaternion blocks.
    pub fn quaternion_drift(&self, x: &[f64]) -> f64 {
        let drift = |b: &[f64]| ((b[0] * b[0] + b[1] * b[1] + b[2] * b[2] + b[3] * b[3]).sqrt() - 1.0).abs();
        let mut worst: f64 = 0.0;
        if self.mode == AlignMode::Pinhole {
            for &o in &self.view_offsets {
                worst = worst.max(drift(&x[o + 1..o + 5]));
            }
        }
        for e in 0..self.graph.edges().len() {
            worst = worst.max(drift(&x[self.edge_range(e).start + 1..]));
        }
        worst
    }
}
