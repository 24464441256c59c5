//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use pointmap::align::{
    build_graph, initialize, initialize_pinhole, AlignConfig, AlignMode, AlignVariables, Objective, SceneGraph,
    ViewVariables,
};
use pointmap::geometry::{ImageSize, Intrinsics, RigidPose, SimTransform};
use pointmap::loss::{confidence_loss, confidence_loss_gradient, LossConfig};
use pointmap::oracle::{demo_spec, generate_scene, predict_pair, NoiseModel, Scene};
use pointmap::pointmap::{
    depth_to_pointmap, ConfidenceMap, DepthMap, GtPair, PairPrediction, Pointmap, ViewPrediction,
};
use pointmap::recovery::procrustes_points;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    let axis = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    UnitQuaternion::from_scaled_axis(axis * std::f64::consts::PI)
}

pub fn random_pose(rng: &mut ChaCha8Rng) -> RigidPose {
    let t = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
    RigidPose::new(random_rotation(rng), t)
}

pub fn random_similarity(rng: &mut ChaCha8Rng) -> SimTransform {
    let p = random_pose(rng);
    SimTransform::new(rng.random_range(0.2..5.0), p.rotation, p.translation)
}

/// A `w×h` pointmap with points in a cube; a fraction `holes` of pixels invalid.
pub fn random_pointmap(rng: &mut ChaCha8Rng, w: usize, h: usize, holes: f64) -> Pointmap {
    let size = ImageSize::new(w, h).unwrap();
    Pointmap::from_fn(size, |_, _| {
        let p = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        (rng.random::<f64>() >= holes).then_some(p)
    })
}

/// Every ordered pair `n ≠ m` of `scene`, predicted with `noise`.
pub fn all_pairs(scene: &Scene, noise: &NoiseModel, seed: u64) -> BTreeMap<(usize, usize), PairPrediction> {
    let n_views = scene.views.len();
    let mut out = BTreeMap::new();
    for n in 0..n_views {
        for m in 0..n_views {
            if n != m {
                out.insert((n, m), predict_pair(scene, n, m, noise, seed).unwrap());
            }
        }
    }
    out
}

/// The demo scene with `views` cameras and its complete prediction graph.
pub fn oracle_graph(width: usize, views: usize, noise: &NoiseModel, seed: u64) -> (Scene, SceneGraph) {
    let scene = generate_scene(&demo_spec(width, width, views), seed).unwrap();
    let graph = build_graph(&all_pairs(&scene, noise, seed), 1.0).unwrap();
    (scene, graph)
}

/// O(N²) mutual nearest neighbors; exact ties go to the smaller index.
pub fn brute_mutual_nn(pm1: &Pointmap, pm2: &Pointmap) -> Vec<(usize, usize)> {
    let nearest = |p: &Vector3<f64>, pm: &Pointmap| -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (k, q) in pm.iter_valid() {
            let d = (p - q).norm_squared();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, k));
            }
        }
        best.map(|(_, k)| k)
    };
    let mut out = Vec::new();
    for (a, p) in pm1.iter_valid() {
        if let Some(b) = nearest(p, pm2) {
            if nearest(pm2.point(b), pm1) == Some(a) {
                out.push((a, b));
            }
        }
    }
    out
}

/// Mean O(N²) nearest distance from each point of `from` to `to`.
pub fn brute_mean_nearest(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> f64 {
    from.iter()
        .map(|p| {
            to.iter()
                .map(|q| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum::<f64>()
        / from.len() as f64
}

/// mAA by thresholding at each integer degree in turn.
pub fn brute_maa(errors: &[f64]) -> f64 {
    let mut total = 0.0;
    for tau in 1..=30u32 {
        let mut hits = 0usize;
        for &e in errors {
            if e < tau as f64 {
                hits += 1;
            }
        }
        total += hits as f64 / errors.len() as f64;
    }
    total / 30.0
}

/// Similarity taking `pred` camera centers onto `gt` ones.
pub fn center_gauge(gt: &[RigidPose], pred: &[RigidPose]) -> SimTransform {
    let g: Vec<_> = gt.iter().map(RigidPose::center).collect();
    let p: Vec<_> = pred.iter().map(RigidPose::center).collect();
    procrustes_points(&p, &g, &vec![1.0; g.len()]).unwrap()
}

/// Largest rotation error (degrees) and translation error (fraction of
/// `scale`) over ordered relative poses `P_j P_i⁻¹`, after bringing `pred`
/// into the ground-truth gauge.
pub fn relative_pose_bounds(gt: &[RigidPose], pred: &[RigidPose], scale: f64) -> (f64, f64) {
    let g = center_gauge(gt, pred);
    // World-to-camera pose of a camera whose world was rescaled by `g`:
    // x_cam = σ (R_p (g⁻¹ y) + t_p) / σ_g keeps metric units of the ground truth.
    let g_inv = g.inverse();
    let rescaled: Vec<RigidPose> = pred
        .iter()
        .map(|p| {
            let r = p.rotation * g_inv.rotation;
            let t = p.apply(&g_inv.apply(&Vector3::zeros())) * g.scale;
            RigidPose::new(r, t)
        })
        .collect();
    let mut worst = (0.0f64, 0.0f64);
    for i in 0..gt.len() {
        for j in 0..gt.len() {
            if i == j {
                continue;
            }
            let a = gt[j].compose(&gt[i].inverse());
            let b = rescaled[j].compose(&rescaled[i].inverse());
            worst.0 = worst.0.max(a.rotation.angle_to(&b.rotation).to_degrees());
            worst.1 = worst.1.max((a.translation - b.translation).norm() / scale);
        }
    }
    worst
}

/// Deterministic offsets of relative size `p` on top of `vars`: focal ±3p %,
/// depth ripple 2p %, small rotations and translations on views other than
/// the anchor, and edge scales jittered by up to 5p %.
pub fn perturb_pinhole(vars: &mut AlignVariables, p: f64) {
    for (v, view) in vars.views.iter_mut().enumerate() {
        let ViewVariables::Pinhole {
            focal,
            cam_to_world,
            depth,
        } = view
        else {
            panic!("pinhole variables expected");
        };
        *focal *= 1.0 + 0.03 * p * if v % 2 == 0 { 1.0 } else { -1.0 };
        for (k, d) in depth.iter_mut().enumerate() {
            *d *= 1.0 + 0.02 * p * ((k * 7 + v) as f64).sin();
        }
        if v > 0 {
            let dq = UnitQuaternion::from_scaled_axis(Vector3::new(0.03, -0.02, 0.01 * v as f64) * p);
            *cam_to_world = RigidPose::new(
                dq * cam_to_world.rotation,
                cam_to_world.translation + Vector3::new(0.05, -0.03, 0.02) * p,
            );
        }
    }
    for (e, t) in vars.edges.iter_mut().enumerate() {
        t.scale *= 1.0 + 0.05 * p * (e as f64 * 1.3).sin();
    }
}

/// `320×240` exact pointmap at focal `f` with random depths in `[1, 10]`,
/// plus Gaussian noise of std `noise·z` per coordinate.
pub fn focal_fixture(r: &mut ChaCha8Rng, f: f64, noise: f64) -> Pointmap {
    // About a 56° horizontal field of view at f = 300.
    let size = ImageSize::new(320, 240).unwrap();
    let depth: Vec<f64> = (0..size.len()).map(|_| r.random_range(1.0..10.0)).collect();
    let pm = depth_to_pointmap(
        &DepthMap::from_depths(size, depth).unwrap(),
        &Intrinsics::centered(f, size),
    );
    pm.map_points(|p| {
        let e = Vector3::from_fn(|_, _| r.sample::<f64, _>(StandardNormal));
        p + e * (noise * p.z)
    })
}

pub struct PnpCase {
    pub pixels: Vec<Vector2<f64>>,
    pub points: Vec<Vector3<f64>>,
    pub outlier: Vec<bool>,
    pub intrinsics: Intrinsics,
    pub pose: RigidPose,
    pub scale: f64,
}

/// Up to 300 surface pixels of one oracle view; a fraction of the world
/// points replaced by uniform draws in the scene's bounding cube.
pub fn pnp_case(seed: u64, outlier_rate: f64) -> PnpCase {
    let scene = generate_scene(&demo_spec(48, 48, 3), seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    let v = (seed % 3) as usize;
    let world = scene.world_pointmap(v).unwrap();
    let mut valid: Vec<usize> = world.iter_valid().map(|(k, _)| k).collect();
    let keep = valid.len().min(300);
    let (chosen, _) = valid.partial_shuffle(&mut r, keep);
    let (lo, hi) = bounds(&scene);
    let mut case = PnpCase {
        pixels: Vec::new(),
        points: Vec::new(),
        outlier: Vec::new(),
        intrinsics: scene.views[v].intrinsics,
        pose: scene.views[v].pose,
        scale: scene.scale(),
    };
    for &k in chosen.iter() {
        let (i, j) = world.size().pixel(k);
        let bad = r.random::<f64>() < outlier_rate;
        let p = if bad {
            Vector3::from_fn(|c, _| r.random_range(lo[c]..hi[c]))
        } else {
            *world.point(k)
        };
        case.pixels.push(Vector2::new(i as f64, j as f64));
        case.points.push(p);
        case.outlier.push(bad);
    }
    case
}

pub fn bounds(scene: &Scene) -> (Vector3<f64>, Vector3<f64>) {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for v in 0..scene.views.len() {
        for (_, p) in scene.world_pointmap(v).unwrap().iter_valid() {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
    }
    (lo, hi)
}

/// Ground-truth pinhole variables; edges map each pair into the world frame.
pub fn truth_variables(scene: &Scene, graph: &SceneGraph) -> AlignVariables {
    AlignVariables {
        views: scene
            .views
            .iter()
            .map(|v| {
                let depth = v.depth.as_ref().unwrap();
                ViewVariables::Pinhole {
                    focal: v.intrinsics.focal,
                    cam_to_world: v.pose.inverse(),
                    depth: (0..depth.size().len())
                        .map(|k| if depth.is_valid(k) { depth.depth(k) } else { 1.0 })
                        .collect(),
                }
            })
            .collect(),
        edges: graph
            .edges()
            .iter()
            .map(|e| scene.views[e.n].pose.inverse().as_similarity())
            .collect(),
    }
}

/// Largest central-difference mismatch within `range`, relative to the
/// largest analytic entry there.
pub fn gradient_error(objective: &Objective<'_>, x: &[f64], range: std::ops::Range<usize>) -> f64 {
    let (_, grad) = objective.value_and_gradient(x);
    let h = 1e-6;
    let (mut worst, mut largest) = (0.0f64, 0.0f64);
    for k in range {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[k] += h;
        xm[k] -= h;
        let fd = (objective.value(&xp) - objective.value(&xm)) / (2.0 * h);
        worst = worst.max((fd - grad[k]).abs());
        largest = largest.max(grad[k].abs());
    }
    worst / largest.max(f64::MIN_POSITIVE)
}

/// Central-difference mismatch per variable class on a noisy 8×8 two-view
/// graph, pinhole classes first, free points last.
pub fn objective_gradient_errors() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let noise = NoiseModel {
        point_sigma: 0.02,
        ..NoiseModel::default()
    };
    let scene = generate_scene(&demo_spec(8, 8, 2), 3).unwrap();
    let graph = build_graph(&all_pairs(&scene, &noise, 3), 1.0).unwrap();
    let hw = 64;

    let pinhole = Objective::new(&graph, AlignMode::Pinhole, 1.0);
    let mut vars = initialize_pinhole(&graph).unwrap();
    perturb_pinhole(&mut vars, 1.0);
    let x = pinhole.pack(&vars);
    let view1 = 8 + hw;
    let edges = 2 * view1;
    for (class, range) in [
        ("log-focal", view1..view1 + 1),
        ("pose rotation", view1 + 1..view1 + 5),
        ("pose translation", view1 + 5..view1 + 8),
        ("log-depth", 8..8 + hw),
        ("edge log-scale", edges..edges + 1),
        ("edge rotation", edges + 1..edges + 5),
        ("edge translation", edges + 5..edges + 8),
    ] {
        out.push((class, gradient_error(&pinhole, &x, range)));
    }

    let free = Objective::new(&graph, AlignMode::FreePointmaps, 1.0);
    let cfg = AlignConfig {
        mode: AlignMode::FreePointmaps,
        ..AlignConfig::default()
    };
    let mut vars = initialize(&graph, &cfg).unwrap();
    let mut r = rng(9);
    for view in &mut vars.views {
        if let ViewVariables::Free { points } = view {
            for p in points {
                *p += Vector3::from_fn(|_, _| 0.05 * r.sample::<f64, _>(StandardNormal));
            }
        }
    }
    let x = free.pack(&vars);
    out.push(("free points", gradient_error(&free, &x, 0..2 * 3 * hw)));
    out
}

pub fn random_confidence(r: &mut rand_chacha::ChaCha8Rng, pm: &Pointmap) -> ConfidenceMap {
    let w = (0..pm.size().len()).map(|_| r.random_range(1.01..4.0)).collect();
    ConfidenceMap::new(pm.size(), w).unwrap()
}

pub fn random_prediction(r: &mut rand_chacha::ChaCha8Rng, w: usize, h: usize, holes: f64) -> PairPrediction {
    let (a, b) = (random_pointmap(r, w, h, holes), random_pointmap(r, w, h, holes));
    let (ca, cb) = (random_confidence(r, &a), random_confidence(r, &b));
    PairPrediction::new(ViewPrediction::new(a, ca).unwrap(), ViewPrediction::new(b, cb).unwrap())
}

/// Largest central-difference mismatch relative to the largest gradient entry.
pub fn confidence_loss_gradient_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let pred = random_prediction(&mut r, 8, 8, 0.1);
    let gt = GtPair {
        view1: random_pointmap(&mut r, 8, 8, 0.1),
        view2: random_pointmap(&mut r, 8, 8, 0.1),
    };
    let cfg = LossConfig::default();
    let (_, grads) = confidence_loss_gradient(&pred, &gt, &cfg).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut largest: f64 = 0.0;
    for (v, grad) in grads.iter().enumerate() {
        for k in 0..64 {
            for c in 0..3 {
                let bump = |delta: f64| {
                    let mut p = pred.clone();
                    let view = if v == 0 { &mut p.view1 } else { &mut p.view2 };
                    let mut pts = view.points.points().to_vec();
                    pts[k][c] += delta;
                    view.points = Pointmap::new(view.points.size(), pts, view.points.valid().to_vec()).unwrap();
                    confidence_loss(&p, &gt, &cfg).unwrap().total
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                worst = worst.max((fd - grad[k][c]).abs());
                largest = largest.max(grad[k][c].abs());
            }
        }
    }
    worst / largest
}
