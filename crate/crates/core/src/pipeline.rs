//! Plan → sweep → track → metrics orchestration with on-disk artifacts.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::drivetrain::WheelModel;
use crate::export::{self, render_svg, Scene};
use crate::geometry::unwrap_near;
use crate::minco::{MincoTrajectory, TrajectoryDocument};
use crate::optim::StopReason;
use crate::planner::{self, min_clearance, PlanReport};
use crate::scenario::{ObstacleSet, Scenario};
use crate::sim::{self, MetricsReport, SimTrace};
use crate::sweptfield::{self, auto_region, AreaReport, Baseline, FieldOptions, SweptField};
use crate::worldmodel::{astar_plan, estimate_headings, rasterize_obstacles, GridMap};

pub const RESOLVED_SCENARIO: &str = "scenario.resolved.json";
pub const TRAJECTORY: &str = "trajectory.json";
pub const PLAN_REPORT: &str = "plan_report.json";
pub const FIELD_CSV: &str = "field.csv";
pub const SWEEP_REPORT: &str = "sweep_report.json";
pub const PLAN_SVG: &str = "plan.svg";
pub const TRACE_CSV: &str = "trace.csv";
pub const DRIVEN_FIELD_CSV: &str = "driven_field.csv";
pub const METRICS: &str = "metrics.json";
pub const TRACK_SVG: &str = "track.svg";
pub const TIMING: &str = "timing.json";
pub const ERROR: &str = "error.json";
pub const ABLATION: &str = "ablation.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Scenario,
    Plan,
    Sweep,
    Track,
    Metrics,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Scenario => "scenario",
            Stage::Plan => "plan",
            Stage::Sweep => "sweep",
            Stage::Track => "track",
            Stage::Metrics => "metrics",
        };
        f.write_str(s)
    }
}

/// Machine-readable failure with the stage it happened in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{stage} stage failed ({module}::{kind}): {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub module: String,
    pub kind: String,
    pub message: String,
}

/// Variant name from a Debug rendering, e.g. `NoPath` or `InfeasibleResult`.
fn variant_name<E: fmt::Debug>(e: &E) -> String {
    let s = format!("{e:?}");
    s.split(|c: char| !c.is_alphanumeric() && c != '_')
        .next()
        .unwrap_or_default()
        .to_string()
}

fn fail<E: fmt::Debug + fmt::Display>(stage: Stage, module: &str, e: E) -> PipelineError {
    PipelineError {
        stage,
        module: module.to_string(),
        kind: variant_name(&e),
        message: e.to_string(),
    }
}

fn io_fail(stage: Stage, path: &Path, e: impl fmt::Display) -> PipelineError {
    PipelineError {
        stage,
        module: "io".into(),
        kind: "Io".into(),
        message: format!("{}: {e}", path.display()),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
    pub grid_res: Option<f64>,
    pub seed: Option<u64>,
    pub legacy_wheel_matrix: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub iterations: usize,
    pub evaluations: usize,
    pub reason: StopReason,
    pub cost_trace: Vec<f64>,
}

impl From<&PlanReport> for StageSummary {
    fn from(r: &PlanReport) -> Self {
        Self {
            iterations: r.iterations,
            evaluations: r.evaluations,
            reason: r.reason,
            cost_trace: r.cost_trace.clone(),
        }
    }
}

/// Deterministic record of a planning run (no wall-clock values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub search_path_points: usize,
    pub reference_poses: usize,
    pub stage1: StageSummary,
    /// One entry per stage-2 attempt.
    pub stage2: Vec<StageSummary>,
    pub final_obstacle_weight: f64,
    pub min_clearance: f64,
    pub min_clearance_time: f64,
    pub duration: f64,
    pub degenerate_sweep_junctions: Vec<usize>,
}

pub struct PlanOutcome {
    pub map: GridMap,
    pub trajectory: MincoTrajectory,
    pub summary: PlanSummary,
    pub wall_time_s: f64,
}

/// Grid search, stage-1 smoothing and stage-2 refinement with escalating
/// obstacle weight until the sampled result is collision free.
pub fn plan(sc: &Scenario) -> Result<PlanOutcome, PipelineError> {
    let started = Instant::now();
    let st = Stage::Plan;
    let veh = sc.vehicle_params();
    let map = rasterize_obstacles(&sc.world.obstacles, sc.bounds(), sc.world.resolution).map_err(|e| fail(st, "worldmodel", e))?;
    let clearance = sc.planner.search_clearance.unwrap_or(0.5 * veh.width);
    let mut path = astar_plan(&map, [sc.start.x, sc.start.y], [sc.goal.x, sc.goal.y], clearance)
        .map_err(|e| fail(st, "worldmodel", e))?;
    // replace the end cell centres with the exact end points
    let last = path.len() - 1;
    path[0] = [sc.start.x, sc.start.y];
    if last > 0 {
        path[last] = [sc.goal.x, sc.goal.y];
    } else {
        path.push([sc.goal.x, sc.goal.y]);
    }
    let length = crate::worldmodel::path_length(&path);
    let spacing = sc.planner.waypoint_spacing.min(0.5 * length);
    let mut init = estimate_headings(&path, spacing).map_err(|e| fail(st, "worldmodel", e))?;
    let n = init.poses.len();
    init.poses[0].phi = sc.start.phi;
    for i in 1..n - 1 {
        init.poses[i].phi = unwrap_near(init.poses[i].phi, init.poses[i - 1].phi);
    }
    init.poses[n - 1].phi = unwrap_near(sc.goal.phi, init.poses[n - 2].phi);

    let s1 = planner::optimize_stage1(&init, &sc.planner.stage1.weights, &sc.planner.stage1.options).map_err(|e| fail(st, "planner", e))?;
    let all_points = map.obstacle_points();
    let cost_points = match sc.planner.obstacle_set {
        ObstacleSet::Boundary => map.boundary_points(),
        ObstacleSet::All => all_points.to_vec(),
    };
    let mut weights = sc.planner.stage2.weights.clone();
    let opts = &sc.planner.stage2.options;
    let mut attempts = Vec::new();
    let mut report;
    loop {
        report = planner::optimize_stage2_points(&s1.trajectory, &cost_points, &veh, &weights, opts).map_err(|e| fail(st, "planner", e))?;
        report.min_clearance = Some(min_clearance(&report.trajectory, all_points, &veh, opts.check_dt));
        attempts.push(StageSummary::from(&report));
        if report.check_feasible().is_ok() || attempts.len() > sc.planner.feasibility_retries {
            break;
        }
        weights.obstacle *= sc.planner.obstacle_weight_growth;
    }
    report.check_feasible().map_err(|e| fail(st, "planner", e))?;
    let (min_d, min_t) = report.min_clearance.unwrap_or((f64::INFINITY, 0.0));
    let degenerate = planner::sweep_cost_with_grads(&report.trajectory).1;
    let summary = PlanSummary {
        search_path_points: path.len(),
        reference_poses: n,
        stage1: StageSummary::from(&s1),
        stage2: attempts,
        final_obstacle_weight: weights.obstacle,
        min_clearance: min_d,
        min_clearance_time: min_t,
        duration: report.trajectory.total_duration(),
        degenerate_sweep_junctions: degenerate,
    };
    Ok(PlanOutcome {
        map,
        trajectory: report.trajectory,
        summary,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Swept field of a motion over its auto-sized region.
pub fn sweep_motion<M: sweptfield::Motion + ?Sized>(
    sc: &Scenario,
    motion: &M,
    res: f64,
    threads: usize,
    stage: Stage,
) -> Result<(SweptField, AreaReport), PipelineError> {
    let veh = sc.vehicle_params();
    let margin = sc.sweep.margin.unwrap_or(veh.length + sc.planner.stage2.weights.safety_distance);
    let region = auto_region(motion, margin);
    let opts = FieldOptions {
        search: sc.sweep.search.clone(),
        threads,
    };
    let field = sweptfield::compute_swept_field(motion, &veh, region, res, &opts).map_err(|e| fail(stage, "sweptfield", e))?;
    let area = sweptfield::excess_area(&field, motion, &veh, Baseline::Ribbon);
    Ok((field, area))
}

/// Closed-loop tracking with the scenario's controller and plant settings.
pub fn track(sc: &Scenario, traj: &MincoTrajectory, legacy_wheel_matrix: bool) -> Result<SimTrace, PipelineError> {
    let veh = sc.vehicle_params();
    let mut cfg = sc.track.sim.clone();
    if legacy_wheel_matrix {
        cfg.wheel_model = WheelModel::Legacy;
    }
    let jitter = sc.track.initial_jitter;
    if jitter.iter().any(|&j| j > 0.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
        for k in 0..3 {
            if jitter[k] > 0.0 {
                cfg.initial_offset[k] += rng.random_range(-jitter[k]..=jitter[k]);
            }
        }
    }
    sim::run_closed_loop(traj, &veh, &sc.mpc, &cfg).map_err(|e| fail(Stage::Track, "sim", e))
}

fn write_text(stage: Stage, path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(|e| io_fail(stage, path, e))
}

fn write_json<T: Serialize>(stage: Stage, path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_fail(stage, path, e))?;
    text.push('\n');
    write_text(stage, path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(stage: Stage, path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError {
        stage,
        module: "pipeline".into(),
        kind: "MissingArtifact".into(),
        message: format!("{}: {e}", path.display()),
    })?;
    serde_json::from_str(&text).map_err(|e| io_fail(stage, path, e))
}

fn write_csv(stage: Stage, path: &Path, f: impl FnOnce(fs::File) -> Result<(), export::ExportError>) -> Result<(), PipelineError> {
    let file = fs::File::create(path).map_err(|e| io_fail(stage, path, e))?;
    f(file).map_err(|e| io_fail(stage, path, e))
}

fn load_trajectory(stage: Stage, dir: &Path) -> Result<MincoTrajectory, PipelineError> {
    let doc: TrajectoryDocument = read_json(stage, &dir.join(TRAJECTORY))?;
    doc.into_trajectory().map_err(|e| fail(stage, "minco", e))
}

/// What a pipeline run produced.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSummary {
    pub stages: Vec<Stage>,
    pub planning_time_s: Option<f64>,
    pub sweep_area: Option<AreaReport>,
    pub metrics: Option<MetricsReport>,
    /// Wall-clock seconds per stage.
    pub timings: Vec<(Stage, f64)>,
}

#[derive(Serialize)]
struct Timing {
    stage: Stage,
    seconds: f64,
}

/// Runs the requested stages in dependency order. Stages that are not
/// requested but whose outputs are needed are read from `out_dir`.
pub fn run_pipeline(sc: &Scenario, stages: &[Stage], opts: &RunOptions) -> Result<RunSummary, PipelineError> {
    let threads = opts.threads.unwrap_or(sc.sweep.threads);
    sweptfield::with_threads(threads, || run_stages(sc, stages, opts, threads)).map_err(|e| fail(Stage::Sweep, "sweptfield", e))?
}

fn run_stages(sc: &Scenario, stages: &[Stage], opts: &RunOptions, threads: usize) -> Result<RunSummary, PipelineError> {
    let mut sc = sc.clone();
    if let Some(r) = opts.grid_res {
        sc.sweep.resolution = r;
    }
    if let Some(s) = opts.seed {
        sc.seed = s;
    }
    sc.validate().map_err(|e| fail(Stage::Scenario, "scenario", e))?;
    let dir = opts.out_dir.as_path();
    fs::create_dir_all(dir).map_err(|e| io_fail(Stage::Scenario, dir, e))?;
    let stale = dir.join(ERROR);
    if stale.exists() {
        fs::remove_file(&stale).map_err(|e| io_fail(Stage::Scenario, &stale, e))?;
    }
    write_json(Stage::Scenario, &dir.join(RESOLVED_SCENARIO), &sc)?;

    let veh = sc.vehicle_params();
    let mut summary = RunSummary::default();
    let mut want: Vec<Stage> = stages.to_vec();
    want.sort();
    want.dedup();
    let mut trajectory: Option<MincoTrajectory> = None;
    let mut map: Option<GridMap> = None;
    let mut trace: Option<SimTrace> = None;

    for stage in want {
        let started = Instant::now();
        match stage {
            Stage::Scenario => {}
            Stage::Plan => {
                let out = plan(&sc)?;
                write_json(stage, &dir.join(TRAJECTORY), &out.trajectory.to_document())?;
                write_json(stage, &dir.join(PLAN_REPORT), &out.summary)?;
                summary.planning_time_s = Some(out.wall_time_s);
                trajectory = Some(out.trajectory);
                map = Some(out.map);
            }
            Stage::Sweep => {
                let traj = match trajectory.take() {
                    Some(t) => t,
                    None => load_trajectory(stage, dir)?,
                };
                let (field, area) = sweep_motion(&sc, &traj, sc.sweep.resolution, threads, stage)?;
                write_csv(stage, &dir.join(FIELD_CSV), |f| export::write_field_csv(std::io::BufWriter::new(f), &field))?;
                write_json(stage, &dir.join(SWEEP_REPORT), &area)?;
                if sc.output.svg {
                    let m = match map.take() {
                        Some(m) => m,
                        None => rasterize_obstacles(&sc.world.obstacles, sc.bounds(), sc.world.resolution)
                            .map_err(|e| fail(stage, "worldmodel", e))?,
                    };
                    let svg = render_svg(&Scene {
                        map: Some(&m),
                        field: Some(&field),
                        motion: &traj,
                        vehicle: &veh,
                        footprints: sc.output.footprints,
                        title: &sc.name,
                    });
                    write_text(stage, &dir.join(PLAN_SVG), &svg)?;
                    map = Some(m);
                }
                summary.sweep_area = Some(area);
                trajectory = Some(traj);
            }
            Stage::Track => {
                let traj = match trajectory.take() {
                    Some(t) => t,
                    None => load_trajectory(stage, dir)?,
                };
                let tr = track(&sc, &traj, opts.legacy_wheel_matrix)?;
                write_csv(stage, &dir.join(TRACE_CSV), |f| export::write_trace_csv(std::io::BufWriter::new(f), &tr))?;
                if let Some((step, e)) = &tr.failure {
                    let mut err = fail(stage, "mpc", e);
                    err.message = format!("controller failed at step {step}: {}", err.message);
                    return Err(err);
                }
                trace = Some(tr);
                trajectory = Some(traj);
            }
            Stage::Metrics => {
                let tr = match trace.take() {
                    Some(t) => t,
                    None => {
                        let path = dir.join(TRACE_CSV);
                        let file = fs::File::open(&path).map_err(|e| PipelineError {
                            stage,
                            module: "pipeline".into(),
                            kind: "MissingArtifact".into(),
                            message: format!("{}: {e}", path.display()),
                        })?;
                        export::read_trace_csv(file).map_err(|e| io_fail(stage, &path, e))?
                    }
                };
                let driven = tr.driven_motion().map_err(|e| fail(stage, "sim", e))?;
                let (field, _) = sweep_motion(&sc, &driven, sc.sweep.resolution, threads, stage)?;
                write_csv(stage, &dir.join(DRIVEN_FIELD_CSV), |f| export::write_field_csv(std::io::BufWriter::new(f), &field))?;
                let steady = sc.track.steady_state_from.unwrap_or(sc.mpc.np as f64 * sc.mpc.dt);
                let metrics = sim::compute_metrics(&tr, &veh, &field, None, steady).map_err(|e| fail(stage, "sim", e))?;
                write_json(stage, &dir.join(METRICS), &metrics)?;
                if sc.output.svg {
                    let m = match map.take() {
                        Some(m) => m,
                        None => rasterize_obstacles(&sc.world.obstacles, sc.bounds(), sc.world.resolution)
                            .map_err(|e| fail(stage, "worldmodel", e))?,
                    };
                    let svg = render_svg(&Scene {
                        map: Some(&m),
                        field: Some(&field),
                        motion: &driven,
                        vehicle: &veh,
                        footprints: sc.output.footprints,
                        title: &sc.name,
                    });
                    write_text(stage, &dir.join(TRACK_SVG), &svg)?;
                    map = Some(m);
                }
                summary.metrics = Some(metrics);
                trace = Some(tr);
            }
        }
        summary.stages.push(stage);
        summary.timings.push((stage, started.elapsed().as_secs_f64()));
    }
    if sc.output.timing {
        let t: Vec<Timing> = summary
            .timings
            .iter()
            .map(|&(stage, seconds)| Timing { stage, seconds })
            .collect();
        write_json(Stage::Scenario, &dir.join(TIMING), &t)?;
    }
    if let Some(m) = summary.metrics.as_mut() {
        m.planning_time_s = summary.planning_time_s;
    }
    Ok(summary)
}

/// Writes `error.json` describing a failed run.
pub fn write_error_report(dir: &Path, err: &PipelineError) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(err).map_err(std::io::Error::other)?;
    text.push('\n');
    fs::write(dir.join(ERROR), text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub sv_on: MetricsReport,
    pub sv_off: MetricsReport,
    pub sv_on_planned_excess: f64,
    pub sv_off_planned_excess: f64,
    /// Whether the swept-area term did not increase the driven excess area.
    pub sv_on_not_worse: bool,
}

/// Runs the full pipeline twice, with the swept-area weight as configured
/// (`sv_on/`) and set to zero (`sv_off/`), and compares the metrics.
pub fn run_ablation(sc: &Scenario, opts: &RunOptions) -> Result<AblationReport, PipelineError> {
    let all = [Stage::Plan, Stage::Sweep, Stage::Track, Stage::Metrics];
    let on_opts = RunOptions {
        out_dir: opts.out_dir.join("sv_on"),
        ..opts.clone()
    };
    let on = run_pipeline(sc, &all, &on_opts)?;
    let mut off_sc = sc.clone();
    off_sc.planner.stage2.weights.sweep = 0.0;
    let off_opts = RunOptions {
        out_dir: opts.out_dir.join("sv_off"),
        ..opts.clone()
    };
    let off = run_pipeline(&off_sc, &all, &off_opts)?;
    let strip = |m: MetricsReport| MetricsReport {
        planning_time_s: None,
        ..m
    };
    let on_m = strip(on.metrics.expect("metrics stage ran"));
    let off_m = strip(off.metrics.expect("metrics stage ran"));
    let report = AblationReport {
        sv_on_not_worse: on_m.excess_swept_area <= off_m.excess_swept_area,
        sv_on_planned_excess: on.sweep_area.map_or(f64::NAN, |a| a.excess_area),
        sv_off_planned_excess: off.sweep_area.map_or(f64::NAN, |a| a.excess_area),
        sv_on: on_m,
        sv_off: off_m,
    };
    write_json(Stage::Metrics, &opts.out_dir.join(ABLATION), &report)?;
    Ok(report)
}
