//! Initial variables from a spanning tree of pairwise Procrustes fits.

use std::collections::VecDeque;

use nalgebra::Vector3;

use super::graph::SceneGraph;
use super::objective::{AlignVariables, Objective, ViewVariables};
use super::{AlignError, AlignMode};
use crate::geometry::{RigidPose, SimTransform};
use crate::recovery::{estimate_focal, procrustes_points, FocalSolveConfig};

fn gather(
    objective: &Objective<'_>,
    graph: &SceneGraph,
    e: usize,
    world: &[Option<Vec<Vector3<f64>>>],
) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>, Vec<f64>) {
    let edge = &graph.edges()[e];
    let (mut src, mut dst, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for (side, (v, pred)) in [(edge.n, &edge.prediction.view1), (edge.m, &edge.prediction.view2)]
        .into_iter()
        .enumerate()
    {
        let Some(chi) = &world[v] else { continue };
        for (k, &used) in objective.edge_mask(e, side).iter().enumerate() {
            if used && chi[k].iter().all(|c| c.is_finite()) {
                src.push(*pred.points.point(k));
                dst.push(chi[k]);
                w.push(pred.confidence.weight(k));
            }
        }
    }
    (src, dst, w)
}

/// World points for every view, and `(σ_e, P_e)` for every edge, with
/// `∏ σ_e = 1`. Pixels outside every residual are set to the origin.
fn free_init(objective: &Objective<'_>, graph: &SceneGraph) -> Result<AlignVariables, AlignError> {
    let n_views = graph.view_count();
    let edges = graph.edges();
    let mut world: Vec<Option<Vec<Vector3<f64>>>> = vec![None; n_views];
    let mut fits: Vec<Option<SimTransform>> = vec![None; edges.len()];
    let tree = graph.spanning_tree();

    let place = |world: &mut Vec<Option<Vec<Vector3<f64>>>>, e: usize, side: usize, t: &SimTransform| {
        let edge = &edges[e];
        let (v, pred) = if side == 0 {
            (edge.n, &edge.prediction.view1)
        } else {
            (edge.m, &edge.prediction.view2)
        };
        let pts = (0..pred.points.size().len())
            .map(|k| {
                if objective.edge_mask(e, side)[k] {
                    t.apply(pred.points.point(k))
                } else {
                    Vector3::repeat(f64::NAN)
                }
            })
            .collect();
        world[v] = Some(pts);
    };

    // Breadth-first over tree edges from view 0; the first edge fixes the
    // world frame to its own prediction frame.
    let mut queue = VecDeque::from([0usize]);
    let mut reached = vec![false; n_views];
    reached[0] = true;
    let mut first = true;
    while let Some(a) = queue.pop_front() {
        for &e in &tree {
            let edge = &edges[e];
            let (b, b_side) = match (edge.n == a, edge.m == a) {
                (true, _) => (edge.m, 1),
                (_, true) => (edge.n, 0),
                _ => continue,
            };
            if reached[b] {
                continue;
            }
            let t = if first {
                first = false;
                let t = SimTransform::identity();
                place(&mut world, e, 1 - b_side, &t);
                t
            } else {
                let (src, dst, w) = gather(objective, graph, e, &world);
                procrustes_points(&src, &dst, &w)?
            };
            place(&mut world, e, b_side, &t);
            fits[e] = Some(t);
            reached[b] = true;
            queue.push_back(b);
        }
    }

    // Joint refit of every edge, then pixels left unset by the tree take
    // their value from the first edge that observes them.
    for (e, fit) in fits.iter_mut().enumerate() {
        let (src, dst, w) = gather(objective, graph, e, &world);
        *fit = Some(procrustes_points(&src, &dst, &w)?);
    }
    let fits: Vec<SimTransform> = fits.into_iter().map(|f| f.expect("all fitted")).collect();
    let mut world: Vec<Vec<Vector3<f64>>> = world.into_iter().map(|w| w.expect("connected")).collect();
    for (e, edge) in edges.iter().enumerate() {
        for (side, (v, pred)) in [(edge.n, &edge.prediction.view1), (edge.m, &edge.prediction.view2)]
            .into_iter()
            .enumerate()
        {
            for (k, &used) in objective.edge_mask(e, side).iter().enumerate() {
                if used && world[v][k].x.is_nan() {
                    world[v][k] = fits[e].apply(pred.points.point(k));
                }
            }
        }
    }

    for p in world.iter_mut().flatten() {
        if p.x.is_nan() {
            *p = Vector3::zeros();
        }
    }

    let mut vars = AlignVariables {
        views: world.into_iter().map(|points| ViewVariables::Free { points }).collect(),
        edges: fits,
    };
    normalize_scales(&mut vars);
    Ok(vars)
}

/// Divides every σ_e by their geometric mean and shrinks the world to match.
fn normalize_scales(vars: &mut AlignVariables) {
    let n = vars.edges.len();
    if n == 0 {
        return;
    }
    let g = (vars.edges.iter().map(|t| t.scale.ln()).sum::<f64>() / n as f64).exp();
    for t in &mut vars.edges {
        t.scale /= g;
    }
    for view in &mut vars.views {
        match view {
            ViewVariables::Free { points } => points.iter_mut().for_each(|p| *p /= g),
            ViewVariables::Pinhole {
                cam_to_world, depth, ..
            } => {
                cam_to_world.translation /= g;
                depth.iter_mut().for_each(|d| *d /= g);
            }
        }
    }
}

/// For each view, the most confident edge predicting it in its own frame.
fn self_frame_edges(graph: &SceneGraph) -> Result<Vec<usize>, AlignError> {
    (0..graph.view_count())
        .map(|v| {
            graph
                .edges()
                .iter()
                .enumerate()
                .filter(|(_, e)| e.n == v)
                .fold(None::<(usize, f64)>, |best, (k, e)| match best {
                    Some((_, c)) if c >= e.mean_confidence => best,
                    _ => Some((k, e.mean_confidence)),
                })
                .map(|(k, _)| k)
                .ok_or(AlignError::MissingSelfFrame { view: v })
        })
        .collect()
}

/// Spanning-tree initialization in the requested parameterization.
pub fn initialize(objective: &Objective<'_>, graph: &SceneGraph) -> Result<AlignVariables, AlignError> {
    if graph.edges().is_empty() {
        return Err(AlignError::EmptyGraph);
    }
    let free = free_init(objective, graph)?;
    match objective.mode() {
        AlignMode::FreePointmaps => Ok(free),
        AlignMode::Pinhole => pinhole_from_world(objective, graph, &free),
    }
}

fn pinhole_from_world(
    objective: &Objective<'_>,
    graph: &SceneGraph,
    free: &AlignVariables,
) -> Result<AlignVariables, AlignError> {
    let self_edges = self_frame_edges(graph)?;
    // Similarity taking each view's self-frame prediction onto its world points.
    let camera_fits = self_edges
        .iter()
        .enumerate()
        .map(|(v, &e)| {
            let ViewVariables::Free { points } = &free.views[v] else {
                unreachable!("free init")
            };
            let pred = &graph.edges()[e].prediction.view1;
            let (mut src, mut dst, mut w) = (Vec::new(), Vec::new(), Vec::new());
            for (k, &used) in objective.edge_mask(e, 0).iter().enumerate() {
                if used && points[k].x.is_finite() {
                    src.push(*pred.points.point(k));
                    dst.push(points[k]);
                    w.push(pred.confidence.weight(k));
                }
            }
            Ok(procrustes_points(&src, &dst, &w)?)
        })
        .collect::<Result<Vec<_>, AlignError>>()?;
    // Re-anchor so view 0's camera frame is the world frame.
    let anchor = camera_fits[0].inverse();
    let views = self_edges
        .iter()
        .enumerate()
        .map(|(v, &e)| {
            let pred = &graph.edges()[e].prediction.view1;
            let size = graph.sizes()[v];
            let fit = if v == 0 {
                SimTransform::identity()
            } else {
                anchor.compose(&camera_fits[v])
            };
            let focal = estimate_focal(&pred.points, &pred.confidence, size, &FocalSolveConfig::default())?;
            let depths: Vec<f64> = (0..size.len())
                .filter(|&k| pred.points.is_valid(k) && pred.points.point(k).z > 0.0)
                .map(|k| pred.points.point(k).z)
                .collect();
            let fallback = crate::metrics::lower_median(&depths).unwrap_or(1.0);
            let depth = (0..size.len())
                .map(|k| {
                    let z = pred.points.point(k).z;
                    fit.scale
                        * if pred.points.is_valid(k) && z > 0.0 {
                            z
                        } else {
                            fallback
                        }
                })
                .collect();
            Ok(ViewVariables::Pinhole {
                focal,
                cam_to_world: RigidPose::new(fit.rotation, fit.translation * fit.scale),
                depth,
            })
        })
        .collect::<Result<Vec<_>, AlignError>>()?;
    let mut vars = AlignVariables {
        views,
        edges: free.edges.clone(),
    };
    refit_edges(objective, graph, &mut vars)?;
    normalize_scales(&mut vars);
    Ok(vars)
}

/// Procrustes of every edge onto the current world points.
fn refit_edges(objective: &Objective<'_>, graph: &SceneGraph, vars: &mut AlignVariables) -> Result<(), AlignError> {
    let x = objective.pack(vars);
    let world: Vec<Option<Vec<Vector3<f64>>>> = (0..graph.view_count())
        .map(|v| Some(objective.world_points(&x, v)))
        .collect();
    for e in 0..graph.edges().len() {
        let (src, dst, w) = gather(objective, graph, e, &world);
        vars.edges[e] = procrustes_points(&src, &dst, &w)?;
    }
    Ok(())
}

/// Every pose and edge at identity; points or depths from each view's
/// self-frame prediction. Used to probe convergence from a poor start.
pub fn identity_init(objective: &Objective<'_>, graph: &SceneGraph) -> Result<AlignVariables, AlignError> {
    if graph.edges().is_empty() {
        return Err(AlignError::EmptyGraph);
    }
    let self_edges = self_frame_edges(graph)?;
    let views = self_edges
        .iter()
        .enumerate()
        .map(|(v, &e)| {
            let pred = &graph.edges()[e].prediction.view1;
            let size = graph.sizes()[v];
            Ok(match objective.mode() {
                AlignMode::FreePointmaps => ViewVariables::Free {
                    points: pred.points.points().to_vec(),
                },
                AlignMode::Pinhole => ViewVariables::Pinhole {
                    focal: estimate_focal(&pred.points, &pred.confidence, size, &FocalSolveConfig::default())?,
                    cam_to_world: RigidPose::identity(),
                    depth: pred
                        .points
                        .points()
                        .iter()
                        .zip(pred.points.valid())
                        .map(|(p, &ok)| if ok && p.z > 0.0 { p.z } else { 1.0 })
                        .collect(),
                },
            })
        })
        .collect::<Result<Vec<_>, AlignError>>()?;
    Ok(AlignVariables {
        views,
        edges: vec![SimTransform::identity(); graph.edges().len()],
    })
}
