//! Multi-view global alignment of pairwise pointmap predictions.
//!
//! Every kept prediction `F(I^n, I^m)` is an edge `e` with its own similarity
//! `(σ_e, P_e)` into a shared world frame. The unknowns are the world
//! pointmaps χ (free mode) or per-view focal, pose and depth (pinhole mode);
//! both minimize the confidence-weighted sum of 3D residual norms under the
//! gauge constraint `∏ σ_e = 1`.

mod aggregate;
mod graph;
mod init;
mod objective;
mod optim;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ImageSize, Intrinsics, RigidPose, SimTransform};
use crate::pointmap::{DepthMap, Pointmap};
use crate::recovery::RecoveryError;

pub use aggregate::aggregate_depths;
pub use graph::{build_graph, GraphEdge, SceneGraph};
pub use objective::{AlignVariables, Objective, ViewVariables};
pub use optim::LrSchedule;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("graph has no views or no edges")]
    EmptyGraph,
    #[error("edge from view {view} to itself")]
    SelfEdge { view: usize },
    #[error("view {view} has no predictions")]
    UnknownView { view: usize },
    #[error("predictions disagree on the size of view {view}")]
    SizeMismatch { view: usize },
    #[error("graph is disconnected; components: {}", format_components(.components))]
    Disconnected { components: Vec<Vec<usize>> },
    #[error("view {view} is never predicted in its own frame")]
    MissingSelfFrame { view: usize },
    #[error("invalid alignment config: {0}")]
    Config(&'static str),
    #[error("loss became non-finite at iteration {iteration}")]
    Diverged { iteration: usize, trace: Vec<f64> },
    #[error("depth aggregation: {0}")]
    Aggregation(&'static str),
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
}

fn format_components(components: &[Vec<usize>]) -> String {
    components
        .iter()
        .map(|c| format!("{c:?}"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    FreePointmaps,
    Pinhole,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Procrustes chained along a maximum-confidence spanning tree.
    SpanningTree,
    /// All poses and edge transforms at identity.
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub mode: AlignMode,
    pub iterations: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    /// Recorded with results. The optimizer itself draws no random numbers.
    pub rng_seed: u64,
    /// Pixels with lower confidence are left out of the residuals.
    pub min_conf_keep: f64,
    pub init: InitStrategy,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            mode: AlignMode::Pinhole,
            iterations: 300,
            learning_rate: 0.01,
            lr_schedule: LrSchedule::Cosine { final_lr: 1e-4 },
            rng_seed: 0,
            min_conf_keep: 1.5,
            init: InitStrategy::SpanningTree,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<(), AlignError> {
        if self.iterations == 0 {
            return Err(AlignError::Config("iterations must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(AlignError::Config("learning_rate must be positive"));
        }
        if let LrSchedule::Cosine { final_lr } = self.lr_schedule {
            if !(final_lr >= 0.0 && final_lr.is_finite()) {
                return Err(AlignError::Config("final_lr must be >= 0"));
            }
        }
        if !self.min_conf_keep.is_finite() {
            return Err(AlignError::Config("min_conf_keep must be finite"));
        }
        Ok(())
    }
}

/// Per-view output.
#[derive(Clone, Debug, PartialEq)]
pub enum ViewResult {
    Free {
        points: Pointmap,
    },
    Pinhole {
        intrinsics: Intrinsics,
        /// World-to-camera.
        pose: RigidPose,
        depth: DepthMap,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeResult {
    pub n: usize,
    pub m: usize,
    pub transform: SimTransform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentResult {
    pub mode: AlignMode,
    pub sizes: Vec<ImageSize>,
    pub views: Vec<ViewResult>,
    pub edges: Vec<EdgeResult>,
    /// Loss before each step, then the final loss.
    pub loss_trace: Vec<f64>,
    pub iterations_run: usize,
}

impl AlignmentResult {
    /// World points of view `v`; pixels outside every residual are invalid.
    pub fn world_points(&self, v: usize) -> Pointmap {
        match &self.views[v] {
            ViewResult::Free { points } => points.clone(),
            ViewResult::Pinhole {
                intrinsics,
                pose,
                depth,
            } => {
                let cam_to_world = pose.inverse();
                crate::pointmap::depth_to_pointmap(depth, intrinsics).map_points(|p| cam_to_world.apply(p))
            }
        }
    }

    /// World-to-camera poses, pinhole mode only.
    pub fn poses(&self) -> Option<Vec<RigidPose>> {
        self.views
            .iter()
            .map(|v| match v {
                ViewResult::Pinhole { pose, .. } => Some(*pose),
                ViewResult::Free { .. } => None,
            })
            .collect()
    }

    pub fn intrinsics(&self) -> Option<Vec<Intrinsics>> {
        self.views
            .iter()
            .map(|v| match v {
                ViewResult::Pinhole { intrinsics, .. } => Some(*intrinsics),
                ViewResult::Free { .. } => None,
            })
            .collect()
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("trace holds at least the final loss")
    }
}

/// State after one optimizer step, for monitoring.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub iteration: usize,
    /// Loss before the step.
    pub loss: f64,
    pub learning_rate: f64,
    /// `Σ_e log σ_e` after projection.
    pub log_scale_sum: f64,
    /// Largest `|‖q‖ − 1|` after projection.
    pub quaternion_drift: f64,
}

/// Initial variables for `cfg.mode` and `cfg.init`.
pub fn initialize(graph: &SceneGraph, cfg: &AlignConfig) -> Result<AlignVariables, AlignError> {
    let objective = Objective::new(graph, cfg.mode, cfg.min_conf_keep);
    match cfg.init {
        InitStrategy::SpanningTree => init::initialize(&objective, graph),
        InitStrategy::Identity => init::identity_init(&objective, graph),
    }
}

/// Pinhole initialization with default settings: focal per view from its
/// self-frame prediction, poses chained along the spanning tree.
pub fn initialize_pinhole(graph: &SceneGraph) -> Result<AlignVariables, AlignError> {
    initialize(
        graph,
        &AlignConfig {
            mode: AlignMode::Pinhole,
            ..AlignConfig::default()
        },
    )
}

/// Runs the optimizer, calling `observer` after every step.
pub fn align_observed(
    graph: &SceneGraph,
    cfg: &AlignConfig,
    observer: &mut dyn FnMut(&StepReport),
) -> Result<AlignmentResult, AlignError> {
    cfg.validate()?;
    let init = initialize(graph, cfg)?;
    align_from(graph, cfg, &init, observer)
}

/// Runs the optimizer from `init` instead of `cfg.init`.
pub fn align_from(
    graph: &SceneGraph,
    cfg: &AlignConfig,
    init: &AlignVariables,
    observer: &mut dyn FnMut(&StepReport),
) -> Result<AlignmentResult, AlignError> {
    cfg.validate()?;
    if graph.edges().is_empty() {
        return Err(AlignError::EmptyGraph);
    }
    check_shape(graph, cfg.mode, init)?;
    let objective = Objective::new(graph, cfg.mode, cfg.min_conf_keep);
    let mut x = objective.pack(init);
    objective.project(&mut x);
    let frozen = objective.frozen();
    let scale = objective.step_scale();
    let mut adam = optim::Adam::new(x.len());
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    let mut iterations_run = 0;
    let (mut loss, mut grad) = objective.value_and_gradient(&x);
    objective.tangent_gradient(&mut grad);
    for k in 0..cfg.iterations {
        trace.push(loss);
        if !loss.is_finite() {
            return Err(AlignError::Diverged { iteration: k, trace });
        }
        if adam.is_idle() && grad.iter().all(|&g| g == 0.0) {
            // Every residual already vanishes.
            break;
        }
        let lr = cfg.lr_schedule.rate(cfg.learning_rate, k, cfg.iterations);
        adam.update(&mut x, &grad, lr, &frozen, &scale);
        objective.project(&mut x);
        iterations_run += 1;
        (loss, grad) = objective.value_and_gradient(&x);
        objective.tangent_gradient(&mut grad);
        observer(&StepReport {
            iteration: k,
            loss: trace[k],
            learning_rate: lr,
            log_scale_sum: objective.log_scale_sum(&x),
            quaternion_drift: objective.quaternion_drift(&x),
        });
    }
    trace.push(loss);
    if !loss.is_finite() {
        return Err(AlignError::Diverged {
            iteration: iterations_run,
            trace,
        });
    }
    Ok(build_result(graph, &objective, &x, trace, iterations_run))
}

fn check_shape(graph: &SceneGraph, mode: AlignMode, vars: &AlignVariables) -> Result<(), AlignError> {
    let views_ok = vars.views.len() == graph.view_count()
        && vars.views.iter().zip(graph.sizes()).all(|(v, size)| match (v, mode) {
            (ViewVariables::Free { points }, AlignMode::FreePointmaps) => points.len() == size.len(),
            (ViewVariables::Pinhole { focal, depth, .. }, AlignMode::Pinhole) => {
                *focal > 0.0 && depth.len() == size.len() && depth.iter().all(|d| *d > 0.0)
            }
            _ => false,
        });
    let edges_ok = vars.edges.len() == graph.edges().len() && vars.edges.iter().all(|t| t.scale > 0.0);
    if views_ok && edges_ok {
        Ok(())
    } else {
        Err(AlignError::Config("initial variables do not fit the graph and mode"))
    }
}

fn build_result(
    graph: &SceneGraph,
    objective: &Objective<'_>,
    x: &[f64],
    loss_trace: Vec<f64>,
    iterations_run: usize,
) -> AlignmentResult {
    let vars = objective.unpack(x);
    let views = vars
        .views
        .into_iter()
        .enumerate()
        .map(|(v, view)| {
            let size = graph.sizes()[v];
            let active = objective.active(v).to_vec();
            match view {
                ViewVariables::Free { points } => {
                    let points = points
                        .into_iter()
                        .zip(&active)
                        .map(|(p, &a)| if a { p } else { nalgebra::Vector3::zeros() })
                        .collect();
                    ViewResult::Free {
                        points: Pointmap::new(size, points, active).expect("finite world points"),
                    }
                }
                ViewVariables::Pinhole {
                    focal,
                    cam_to_world,
                    depth,
                } => ViewResult::Pinhole {
                    intrinsics: Intrinsics::centered(focal, size),
                    pose: cam_to_world.inverse(),
                    depth: DepthMap::new(size, depth, active).expect("sizes match"),
                },
            }
        })
        .collect();
    let edges = graph
        .edges()
        .iter()
        .zip(vars.edges)
        .map(|(e, transform)| EdgeResult {
            n: e.n,
            m: e.m,
            transform,
        })
        .collect();
    AlignmentResult {
        mode: objective.mode(),
        sizes: graph.sizes().to_vec(),
        views,
        edges,
        loss_trace,
        iterations_run,
    }
}

pub fn align_free(graph: &SceneGraph, cfg: &AlignConfig) -> Result<AlignmentResult, AlignError> {
    let cfg = AlignConfig {
        mode: AlignMode::FreePointmaps,
        ..*cfg
    };
    align_observed(graph, &cfg, &mut |_| {})
}

pub fn align_pinhole(graph: &SceneGraph, cfg: &AlignConfig) -> Result<AlignmentResult, AlignError> {
    let cfg = AlignConfig {
        mode: AlignMode::Pinhole,
        ..*cfg
    };
    align_observed(graph, &cfg, &mut |_| {})
}

/// `iteration,loss` rows, one per trace entry.
pub fn trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("iteration,loss\n");
    for (k, l) in trace.iter().enumerate() {
        out.push_str(&format!("{k},{l:e}\n"));
    }
    out
}

/// Means over every full window of `window` consecutive entries; a single
/// mean when the trace is shorter than the window.
pub fn smoothed(trace: &[f64], window: usize) -> Vec<f64> {
    let window = window.clamp(1, trace.len().max(1));
    trace
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}
