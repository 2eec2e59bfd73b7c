//! Two-stage spline optimization: smoothing of the search seed, then
//! obstacle clearance and swept-area reduction.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{pose_sdf, wrap_angle, Pose2, VehicleParams};
use crate::minco::{
    build_minco, energy_cost_with_grads, time_cost_with_grads, Boundary, CoeffGrads, CostWithGrads, EndState,
    MincoError, MincoTrajectory, Vec3,
};
use crate::optim::{minimize, LbfgsOptions, LineSearch, StopReason};
use crate::worldmodel::{GridMap, InitialTrajectory};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("reference has {got} poses, trajectory needs {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("initial trajectory needs at least 3 poses, got {0}")]
    TooFewPoses(usize),
    #[error(transparent)]
    Minco(#[from] MincoError),
    #[error("line search failed before convergence")]
    LineSearchFailure,
    #[error("final trajectory penetrates obstacles (min signed distance {min_distance:.4} m at t = {time:.2} s)")]
    InfeasibleResult { min_distance: f64, time: f64 },
}

/// Cost weights for both stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerWeights {
    pub energy: f64,
    pub time: f64,
    pub deviation: f64,
    pub obstacle: f64,
    pub sweep: f64,
    /// Safety distance threshold of the obstacle hinge, metres.
    pub safety_distance: f64,
}

impl PlannerWeights {
    pub fn stage1_default() -> Self {
        Self {
            energy: 1.0,
            time: 20.0,
            deviation: 100.0,
            obstacle: 0.0,
            sweep: 0.0,
            safety_distance: 0.3,
        }
    }

    pub fn stage2_default() -> Self {
        Self {
            energy: 1.0,
            time: 20.0,
            deviation: 0.0,
            obstacle: 1000.0,
            sweep: 300.0,
            safety_distance: 0.3,
        }
    }
}

impl Default for PlannerWeights {
    fn default() -> Self {
        Self::stage2_default()
    }
}

/// Which minimizer drives a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    LbfgsStrongWolfe,
    LbfgsArmijo,
}

impl SolverKind {
    fn line_search(self) -> LineSearch {
        match self {
            SolverKind::LbfgsStrongWolfe => LineSearch::StrongWolfe,
            SolverKind::LbfgsArmijo => LineSearch::Armijo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerOptions {
    pub solver: SolverKind,
    pub memory: usize,
    pub max_iterations: usize,
    pub grad_tol: f64,
    pub rel_cost_tol: f64,
    /// Lower bound added to every segment duration.
    pub min_duration: f64,
    /// Speed used to seed segment durations from the search path.
    pub initial_speed: f64,
    /// Sampling step of the post-hoc collision check.
    pub check_dt: f64,
}

impl PlannerOptions {
    pub fn stage1_default() -> Self {
        Self {
            solver: SolverKind::LbfgsStrongWolfe,
            ..Self::stage2_default()
        }
    }

    pub fn stage2_default() -> Self {
        Self {
            solver: SolverKind::LbfgsArmijo,
            memory: 8,
            max_iterations: 500,
            grad_tol: 1e-6,
            rel_cost_tol: 1e-8,
            min_duration: 0.01,
            initial_speed: 1.0,
            check_dt: 0.05,
        }
    }

    fn lbfgs(&self) -> LbfgsOptions {
        LbfgsOptions {
            memory: self.memory,
            max_iterations: self.max_iterations,
            grad_tol: self.grad_tol,
            rel_cost_tol: self.rel_cost_tol,
            line_search: self.solver.line_search(),
            ..LbfgsOptions::default()
        }
    }
}

impl Default for PlannerOptions {
    fn default() -> Self {
        Self::stage2_default()
    }
}

/// Outcome of one optimization stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanReport {
    pub trajectory: MincoTrajectory,
    /// Objective after every accepted iterate, starting at the seed.
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub wall_time_s: f64,
    pub reason: StopReason,
    /// Smallest footprint signed distance to any obstacle point over the
    /// densely sampled result (stage 2 only).
    pub min_clearance: Option<(f64, f64)>,
}

impl PlanReport {
    pub fn converged(&self) -> bool {
        self.reason.converged()
    }

    /// Errors with [`PlanError::InfeasibleResult`] when the collision check
    /// found penetration.
    pub fn check_feasible(&self) -> Result<(), PlanError> {
        match self.min_clearance {
            Some((d, t)) if d < 0.0 => Err(PlanError::InfeasibleResult {
                min_distance: d,
                time: t,
            }),
            _ => Ok(()),
        }
    }

    /// Compares everything except wall time.
    pub fn same_result(&self, other: &PlanReport) -> bool {
        self.trajectory == other.trajectory
            && self.cost_trace == other.cost_trace
            && self.iterations == other.iterations
            && self.evaluations == other.evaluations
            && self.reason == other.reason
            && self.min_clearance == other.min_clearance
    }
}

/// Squared deviation of the interior junctions from the reference poses
/// with the same index. Heading differences are wrapped.
pub fn deviation_cost_with_grads(traj: &MincoTrajectory, reference: &InitialTrajectory) -> Result<CostWithGrads, PlanError> {
    let m = traj.segment_count();
    if reference.poses.len() != m + 1 {
        return Err(PlanError::SizeMismatch {
            expected: m + 1,
            got: reference.poses.len(),
        });
    }
    let mut partial = CoeffGrads::zeros(m);
    let mut value = 0.0;
    for j in 0..m.saturating_sub(1) {
        let p = traj.eval_segment(j, traj.durations()[j], 0);
        let r = &reference.poses[j + 1];
        let d = [p[0] - r.x, p[1] - r.y, wrap_angle(p[2] - r.phi)];
        value += d.iter().map(|v| v * v).sum::<f64>();
        partial.add_at_end(traj, j, 0, [2.0 * d[0], 2.0 * d[1], 2.0 * d[2]]);
    }
    Ok(traj.propagate(value, &partial))
}

const OBSTACLE_CHUNK: usize = 256;

/// Cubic hinge on the footprint signed distance of every obstacle point at
/// every segment end pose.
pub fn obstacle_cost_with_grads(traj: &MincoTrajectory, map: &GridMap, veh: &VehicleParams, d_th: f64) -> CostWithGrads {
    obstacle_cost_points(traj, map.obstacle_points(), veh, d_th)
}

pub(crate) fn obstacle_cost_points(traj: &MincoTrajectory, obstacles: &[[f64; 2]], veh: &VehicleParams, d_th: f64) -> CostWithGrads {
    let m = traj.segment_count();
    let (hl, hw) = (0.5 * veh.length, 0.5 * veh.width);
    let reach = veh.half_diagonal() + d_th;
    let poses = traj.junction_states(0);

    // per chunk: value and pose partials for every junction; chunk order is fixed
    let chunk_terms = |chunk: &[[f64; 2]]| -> (f64, Vec<Vec3>) {
        let mut value = 0.0;
        let mut g = vec![[0.0; 3]; m];
        for (j, p) in poses.iter().enumerate() {
            for ob in chunk {
                if (ob[0] - p[0]).hypot(ob[1] - p[1]) > reach {
                    continue;
                }
                let s = pose_sdf(*ob, p[0], p[1], p[2], hl, hw);
                if s.value < d_th {
                    let gap = d_th - s.value;
                    value += gap * gap * gap;
                    let dj = -3.0 * gap * gap;
                    g[j][0] += dj * s.d_translation[0];
                    g[j][1] += dj * s.d_translation[1];
                    g[j][2] += dj * s.d_heading;
                }
            }
        }
        (value, g)
    };
    let parts: Vec<(f64, Vec<Vec3>)> = obstacles.par_chunks(OBSTACLE_CHUNK).map(chunk_terms).collect();

    let mut value = 0.0;
    let mut pose_grad = vec![[0.0; 3]; m];
    for (v, g) in parts {
        value += v;
        for (a, b) in pose_grad.iter_mut().zip(g) {
            for d in 0..3 {
                a[d] += b[d];
            }
        }
    }
    let mut partial = CoeffGrads::zeros(m);
    for (j, g) in pose_grad.into_iter().enumerate() {
        partial.add_at_end(traj, j, 0, g);
    }
    traj.propagate(value, &partial)
}

/// Planar speed squared below which a junction is skipped by the sweep cost.
pub const DEGENERATE_SPEED_SQ: f64 = 1e-8;

/// Squared misalignment between heading and direction of travel at every
/// segment end. Also returns the skipped (near-zero speed) junctions.
pub fn sweep_cost_with_grads(traj: &MincoTrajectory) -> (CostWithGrads, Vec<usize>) {
    let m = traj.segment_count();
    let mut partial = CoeffGrads::zeros(m);
    let mut value = 0.0;
    let mut degenerate = Vec::new();
    for j in 0..m {
        let t = traj.durations()[j];
        let p = traj.eval_segment(j, t, 0);
        let v = traj.eval_segment(j, t, 1);
        let s2 = v[0] * v[0] + v[1] * v[1];
        if s2 < DEGENERATE_SPEED_SQ {
            degenerate.push(j);
            continue;
        }
        let dphi = wrap_angle(p[2] - v[1].atan2(v[0]));
        value += dphi * dphi;
        let k = 2.0 * dphi;
        partial.add_at_end(traj, j, 0, [0.0, 0.0, k]);
        partial.add_at_end(traj, j, 1, [k * v[1] / s2, -k * v[0] / s2, 0.0]);
    }
    (traj.propagate(value, &partial), degenerate)
}

/// Objective terms of one stage evaluated on a trajectory.
pub fn stage_objective(
    traj: &MincoTrajectory,
    weights: &PlannerWeights,
    reference: Option<&InitialTrajectory>,
    obstacles: &[[f64; 2]],
    veh: Option<&VehicleParams>,
) -> Result<CostWithGrads, PlanError> {
    let m = traj.segment_count();
    let mut total = CostWithGrads::zeros(m);
    if weights.energy != 0.0 {
        total.add_scaled(weights.energy, &energy_cost_with_grads(traj));
    }
    if weights.time != 0.0 {
        total.add_scaled(weights.time, &time_cost_with_grads(traj.durations()));
    }
    if weights.deviation != 0.0 {
        if let Some(r) = reference {
            total.add_scaled(weights.deviation, &deviation_cost_with_grads(traj, r)?);
        }
    }
    if weights.obstacle != 0.0 && !obstacles.is_empty() {
        if let Some(v) = veh {
            total.add_scaled(
                weights.obstacle,
                &obstacle_cost_points(traj, obstacles, v, weights.safety_distance),
            );
        }
    }
    if weights.sweep != 0.0 {
        total.add_scaled(weights.sweep, &sweep_cost_with_grads(traj).0);
    }
    Ok(total)
}

/// Maps segment durations to unconstrained parameters and back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DurationMap {
    pub min_duration: f64,
}

impl DurationMap {
    pub fn to_duration(&self, tau: f64) -> f64 {
        softplus(tau) + self.min_duration
    }

    pub fn derivative(&self, tau: f64) -> f64 {
        sigmoid(tau)
    }

    pub fn to_param(&self, t: f64) -> f64 {
        let y = (t - self.min_duration).max(1e-12);
        // inverse softplus
        if y > 30.0 {
            y + (-(-y).exp()).ln_1p()
        } else {
            y.exp_m1().ln()
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Decision vector layout `[q (row-major), tau]`.
pub(crate) fn pack(traj: &MincoTrajectory, map: &DurationMap) -> Vec<f64> {
    let mut x: Vec<f64> = traj.waypoints().iter().flatten().copied().collect();
    x.extend(traj.durations().iter().map(|&t| map.to_param(t)));
    x
}

pub(crate) fn unpack(x: &[f64], m: usize, map: &DurationMap) -> (Vec<Vec3>, Vec<f64>) {
    let nq = 3 * (m - 1);
    let q = x[..nq].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let t = x[nq..].iter().map(|&tau| map.to_duration(tau)).collect();
    (q, t)
}

fn run_stage<F>(seed: &MincoTrajectory, opts: &PlannerOptions, mut cost: F) -> Result<PlanReport, PlanError>
where
    F: FnMut(&MincoTrajectory) -> Result<CostWithGrads, PlanError>,
{
    let started = Instant::now();
    let m = seed.segment_count();
    let boundary = *seed.boundary();
    let dmap = DurationMap {
        min_duration: opts.min_duration,
    };
    let x0 = pack(seed, &dmap);
    let nq = 3 * (m - 1);
    let mut failure: Option<PlanError> = None;
    let result = minimize(
        |x, g| {
            let (q, t) = unpack(x, m, &dmap);
            let traj = match build_minco(&q, &t, boundary) {
                Ok(tr) => tr,
                Err(_) => return f64::INFINITY,
            };
            match cost(&traj) {
                Ok(c) => {
                    for (i, gq) in c.grad_q.iter().enumerate() {
                        g[3 * i..3 * i + 3].copy_from_slice(gq);
                    }
                    for j in 0..m {
                        g[nq + j] = c.grad_t[j] * dmap.derivative(x[nq + j]);
                    }
                    c.value
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::INFINITY
                }
            }
        },
        x0,
        &opts.lbfgs(),
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let (q, t) = unpack(&result.x, m, &dmap);
    let trajectory = build_minco(&q, &t, boundary)?;
    Ok(PlanReport {
        trajectory,
        cost_trace: result.trace,
        iterations: result.iterations,
        evaluations: result.evaluations,
        wall_time_s: started.elapsed().as_secs_f64(),
        reason: result.reason,
        min_clearance: None,
    })
}

/// Builds the stage-1 seed spline: rest-to-rest through the reference
/// poses with durations from `initial_speed`.
pub fn seed_trajectory(init: &InitialTrajectory, opts: &PlannerOptions) -> Result<MincoTrajectory, PlanError> {
    let n = init.poses.len();
    if n < 3 {
        return Err(PlanError::TooFewPoses(n));
    }
    let v = |p: &Pose2| [p.x, p.y, p.phi];
    let boundary = Boundary {
        start: EndState::at_rest(v(&init.poses[0])),
        end: EndState::at_rest(v(&init.poses[n - 1])),
    };
    let q: Vec<Vec3> = init.poses[1..n - 1].iter().map(v).collect();
    let t: Vec<f64> = init
        .poses
        .windows(2)
        .map(|w| {
            let d = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
            (d / opts.initial_speed).max(opts.min_duration + 0.1)
        })
        .collect();
    Ok(build_minco(&q, &t, boundary)?)
}

/// Smooths the search seed: energy, time and deviation from the seed.
pub fn optimize_stage1(init: &InitialTrajectory, weights: &PlannerWeights, opts: &PlannerOptions) -> Result<PlanReport, PlanError> {
    let seed = seed_trajectory(init, opts)?;
    let w = PlannerWeights {
        obstacle: 0.0,
        sweep: 0.0,
        ..weights.clone()
    };
    run_stage(&seed, opts, |tr| stage_objective(tr, &w, Some(init), &[], None))
}

/// Refines a stage-1 trajectory for clearance and swept area, then checks
/// the densely sampled result against every obstacle point.
pub fn optimize_stage2(
    traj: &MincoTrajectory,
    map: &GridMap,
    veh: &VehicleParams,
    weights: &PlannerWeights,
    opts: &PlannerOptions,
) -> Result<PlanReport, PlanError> {
    optimize_stage2_points(traj, map.obstacle_points(), veh, weights, opts)
}

/// Stage 2 against an explicit obstacle point set, e.g. only the boundary
/// cells of a map.
pub fn optimize_stage2_points(
    traj: &MincoTrajectory,
    obstacles: &[[f64; 2]],
    veh: &VehicleParams,
    weights: &PlannerWeights,
    opts: &PlannerOptions,
) -> Result<PlanReport, PlanError> {
    let w = PlannerWeights {
        deviation: 0.0,
        ..weights.clone()
    };
    let mut report = run_stage(traj, opts, |tr| stage_objective(tr, &w, None, obstacles, Some(veh)))?;
    report.min_clearance = Some(min_clearance(&report.trajectory, obstacles, veh, opts.check_dt));
    Ok(report)
}

/// Smallest signed distance from any obstacle point to the footprint over
/// the trajectory sampled every `dt`, with the time it occurs.
pub fn min_clearance(traj: &MincoTrajectory, obstacles: &[[f64; 2]], veh: &VehicleParams, dt: f64) -> (f64, f64) {
    let (hl, hw) = (0.5 * veh.length, 0.5 * veh.width);
    let reach = veh.half_diagonal();
    let samples = traj.sample_poses(dt);
    let per_sample: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|(t, p)| {
            let mut best = f64::INFINITY;
            for ob in obstacles {
                let d = (ob[0] - p.x).hypot(ob[1] - p.y);
                // the footprint lies within the half-diagonal disc
                if d - reach >= best {
                    continue;
                }
                best = best.min(pose_sdf(*ob, p.x, p.y, p.phi, hl, hw).value);
            }
            (best, *t)
        })
        .collect();
    per_sample
        .into_iter()
        .fold((f64::INFINITY, 0.0), |acc, s| if s.0 < acc.0 { s } else { acc })
}
