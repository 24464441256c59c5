use std::fs;
use std::io::Write;
use std::path::Path;

use pointmap::align::{align_free, align_pinhole, build_graph, trace_csv, AlignConfig, AlignMode, ViewResult};
use pointmap::io::{
    cloud_from_pointmap, pair_file_name, pair_to_records, poses_from_json, poses_to_json, read_json, read_pair_dir,
    read_pmap, write_aln, write_atomic, write_json, write_ply, IoError, PlyFormat, PmapRecord, PoseList,
};
use pointmap::metrics::{eval_depth, eval_relative_poses, DepthNormalization};
use pointmap::oracle::{generate_scene, predict_pair, NoiseModel, SceneSpec};
use pointmap::pointmap::{depth_to_pointmap, pointmap_to_depth};
use pointmap::recovery::{
    estimate_focal, match_points, relative_pose, FocalSolveConfig, RansacConfig, RelativePose, RelativePoseMethod,
};
use pointmap::ConfidenceMap;
use serde::Serialize;

use crate::{solver, CliError, Command, MethodArg, ModeArg, NormalizeArg};

pub fn run(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Gen { spec, out, noise, seed } => gen(&spec, &out, noise.as_deref(), seed),
        Command::Match { a, b, out } => match_files(&a, &b, &out),
        Command::Focal {
            view,
            record,
            iterations,
        } => focal(&view, record, iterations, out),
        Command::Relpose {
            pair12,
            pair21,
            method,
            threshold,
            seed,
        } => relpose(&pair12, &pair21, method, threshold, seed, out),
        Command::Align {
            graph,
            mode,
            iters,
            out: out_path,
            trace,
            keep_threshold,
            min_conf,
            lr,
            export,
            seed,
        } => {
            let cfg = AlignConfig {
                mode: match mode {
                    ModeArg::Free => AlignMode::FreePointmaps,
                    ModeArg::Pinhole => AlignMode::Pinhole,
                },
                iterations: iters,
                learning_rate: lr,
                rng_seed: seed,
                min_conf_keep: min_conf,
                ..AlignConfig::default()
            };
            align(
                &graph,
                &cfg,
                keep_threshold,
                &out_path,
                trace.as_deref(),
                export.as_deref(),
                out,
            )
        }
        Command::EvalDepth {
            pred,
            gt,
            normalize,
            tau,
        } => {
            let normalization = match normalize {
                NormalizeArg::Median => DepthNormalization::Median,
                NormalizeArg::None => DepthNormalization::None,
            };
            let depth = |p: &Path| read_record(p, 0).map(|r| pointmap_to_depth(&r.points));
            let report = eval_depth(&depth(&pred)?, &depth(&gt)?, normalization, tau).map_err(solver)?;
            print_json(&report, out)
        }
        Command::EvalPose { gt, pred, thresholds } => {
            let poses = |p: &Path| read_json::<PoseList>(p).map(|l| poses_from_json(&l));
            let report = eval_relative_poses(&poses(&gt)?, &poses(&pred)?, &thresholds).map_err(solver)?;
            print_json(&report, out)
        }
        Command::ExportPly {
            input,
            output,
            min_conf,
            binary,
            record,
        } => {
            let r = read_record(&input, record)?;
            let cloud = cloud_from_pointmap(&r.points, r.confidence.as_ref(), min_conf, r.colors.as_deref());
            let format = if binary {
                PlyFormat::BinaryLittleEndian
            } else {
                PlyFormat::Ascii
            };
            Ok(write_ply(&output, &cloud, format)?)
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    writeln!(out, "{text}").map_err(|source| {
        IoError::Io {
            path: "<stdout>".into(),
            source,
        }
        .into()
    })
}

fn print_json<T: Serialize>(value: &T, out: &mut dyn Write) -> Result<(), CliError> {
    emit(out, &serde_json::to_string_pretty(value).map_err(solver)?)
}

fn read_record(path: &Path, index: usize) -> Result<PmapRecord, CliError> {
    let mut records = read_pmap(path)?;
    if index >= records.len() {
        return Err(IoError::Content(format!(
            "{}: no record {index}, file has {}",
            path.display(),
            records.len()
        ))
        .into());
    }
    Ok(records.swap_remove(index))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| {
        IoError::Io {
            path: dir.to_path_buf(),
            source,
        }
        .into()
    })
}

/// Writes `scene.json` (with the seed used), `poses_gt.json`,
/// `focals_gt.json`, `view_<n>.pmap` holding each view's exact pointmap in
/// its own frame, and a pair file for every ordered pair of views.
fn gen(spec_path: &Path, out: &Path, noise_path: Option<&Path>, seed: Option<u64>) -> Result<(), CliError> {
    let mut spec: SceneSpec = read_json(spec_path)?;
    let noise: NoiseModel = noise_path.map(read_json).transpose()?.unwrap_or_default();
    spec.seed = seed.unwrap_or(spec.seed);
    let scene = generate_scene(&spec, spec.seed).map_err(solver)?;

    create_dir(out)?;
    write_json(&out.join("scene.json"), &spec)?;
    write_json(&out.join("poses_gt.json"), &poses_to_json(&scene.poses()))?;
    let focals: Vec<f64> = scene.views.iter().map(|v| v.intrinsics.focal).collect();
    write_json(&out.join("focals_gt.json"), &focals)?;
    for (n, view) in scene.views.iter().enumerate() {
        let depth = view.depth.as_ref().expect("generated scenes carry depth");
        let record = PmapRecord::points_only(depth_to_pointmap(depth, &view.intrinsics));
        pointmap::io::write_pmap(&out.join(format!("view_{n}.pmap")), &[record])?;
    }
    for n in 0..scene.views.len() {
        for m in (0..scene.views.len()).filter(|&m| m != n) {
            let pair = predict_pair(&scene, n, m, &noise, spec.seed).map_err(solver)?;
            pointmap::io::write_pmap(&out.join(pair_file_name(n, m)), &pair_to_records(&pair))?;
        }
    }
    Ok(())
}

/// CSV columns: `i1,j1,i2,j2,distance`.
fn match_files(a: &Path, b: &Path, out: &Path) -> Result<(), CliError> {
    let (ra, rb) = (read_record(a, 0)?, read_record(b, 0)?);
    let mut csv = String::from("i1,j1,i2,j2,distance\n");
    for m in match_points(&ra.points, &rb.points).matches {
        csv.push_str(&format!(
            "{},{},{},{},{:e}\n",
            m.pixel1.0, m.pixel1.1, m.pixel2.0, m.pixel2.1, m.distance
        ));
    }
    Ok(write_atomic(out, csv.as_bytes())?)
}

/// Unit weights when the record has no confidence plane.
fn focal(path: &Path, record: usize, iterations: usize, out: &mut dyn Write) -> Result<(), CliError> {
    let r = read_record(path, record)?;
    let size = r.points.size();
    let conf = r.confidence.unwrap_or_else(|| ConfidenceMap::uniform(size, 1.0));
    let cfg = FocalSolveConfig {
        iterations,
        ..FocalSolveConfig::default()
    };
    let f = estimate_focal(&r.points, &conf, size, &cfg).map_err(solver)?;
    emit(out, &f.to_string())
}

/// Maps points from camera 1's frame to camera 2's as `scale·(R x + t)`.
#[derive(Serialize)]
struct RelposeReport {
    method: &'static str,
    scale: f64,
    /// `[w, x, y, z]`.
    rotation: [f64; 4],
    translation: [f64; 3],
}

fn relpose(
    pair12: &Path,
    pair21: &Path,
    method: MethodArg,
    threshold: f64,
    seed: u64,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let read = |p: &Path| pointmap::io::pair_from_records(read_pmap(p)?);
    let (p12, p21) = (read(pair12)?, read(pair21)?);
    let (method, name) = match method {
        MethodArg::Procrustes => (RelativePoseMethod::Procrustes, "procrustes"),
        MethodArg::Pnp => (RelativePoseMethod::Pnp, "pnp"),
    };
    let ransac = RansacConfig {
        inlier_threshold: threshold,
        rng_seed: seed,
        ..RansacConfig::default()
    };
    let pose: RelativePose =
        relative_pose(&p12, &p21, method, &FocalSolveConfig::default(), &ransac).map_err(solver)?;
    let entry = pointmap::io::PoseEntry::from(&pose.rigid());
    let report = RelposeReport {
        method: name,
        scale: pose.scale(),
        rotation: entry.rotation,
        translation: entry.translation,
    };
    print_json(&report, out)
}

/// With `export`, writes `world_<v>.pmap` for every view and, in pinhole
/// mode, `view_<v>.pmap` in each camera's frame plus `poses.json`.
fn align(
    dir: &Path,
    cfg: &AlignConfig,
    keep_threshold: f64,
    out: &Path,
    trace: Option<&Path>,
    export: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let graph = build_graph(&read_pair_dir(dir)?, keep_threshold).map_err(solver)?;
    let result = match cfg.mode {
        AlignMode::FreePointmaps => align_free(&graph, cfg),
        AlignMode::Pinhole => align_pinhole(&graph, cfg),
    }
    .map_err(solver)?;
    write_aln(out, &result)?;
    if let Some(path) = trace {
        write_atomic(path, trace_csv(&result.loss_trace).as_bytes())?;
    }
    if let Some(dir) = export {
        create_dir(dir)?;
        for (v, view) in result.views.iter().enumerate() {
            let world = PmapRecord::points_only(result.world_points(v));
            pointmap::io::write_pmap(&dir.join(format!("world_{v}.pmap")), &[world])?;
            if let ViewResult::Pinhole { intrinsics, depth, .. } = view {
                let own = PmapRecord::points_only(depth_to_pointmap(depth, intrinsics));
                pointmap::io::write_pmap(&dir.join(format!("view_{v}.pmap")), &[own])?;
            }
        }
        if let Some(poses) = result.poses() {
            write_json(&dir.join("poses.json"), &poses_to_json(&poses))?;
        }
    }
    let summary = format!(
        "views {} edges {} iterations {} final_loss {:e}",
        result.views.len(),
        result.edges.len(),
        result.iterations_run,
        result.final_loss()
    );
    emit(stdout, &summary)
}
