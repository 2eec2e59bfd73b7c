//! Kinematic plant, closed-loop tracking and tracking/area metrics.

use serde::{Deserialize, Serialize};

use crate::drivetrain::{allocate_with, WheelCommand, WheelModel};
use crate::geometry::{wrap_angle, Pose2, VehicleParams};
use crate::minco::MincoTrajectory;
use crate::mpc::{MpcConfig, MpcController, MpcError};
use crate::sweptfield::{excess_area, Baseline, PoseSequence, SweepError, SweptField};

/// Advances the global-frame integrator plant by one step.
#[inline]
pub fn plant_step(pose: &Pose2, u_global: [f64; 3], dt: f64) -> Pose2 {
    Pose2 {
        x: pose.x + dt * u_global[0],
        y: pose.y + dt * u_global[1],
        phi: wrap_angle(pose.phi + dt * u_global[2]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Extra time simulated after the trajectory ends, seconds.
    pub settle_time: f64,
    /// First-order lag on the applied input, seconds; 0 disables it.
    pub input_lag: f64,
    /// Initial pose offset from the trajectory start `(dx, dy, dphi)`.
    pub initial_offset: [f64; 3],
    pub wheel_model: WheelModel,
    /// Sampling step of the reference polyline used for lateral error.
    pub reference_spacing: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            settle_time: 2.0,
            input_lag: 0.0,
            initial_offset: [0.0; 3],
            wheel_model: WheelModel::RigidBody,
            reference_spacing: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error("invalid sim config: {0}")]
    InvalidConfig(String),
    #[error("trace is empty")]
    EmptyTrace,
    #[error(transparent)]
    Sweep(#[from] SweepError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub pose: Pose2,
    pub reference: Pose2,
    /// Global-frame controller output.
    pub u: [f64; 3],
    pub wheels: Vec<WheelCommand>,
    pub e_y: f64,
    pub e_phi: f64,
    pub qp_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub dt: f64,
    pub rows: Vec<TraceRow>,
    /// Set when the controller failed; `rows` then ends at the failing step.
    pub failure: Option<(usize, MpcError)>,
}

impl SimTrace {
    pub fn poses(&self) -> Vec<Pose2> {
        self.rows.iter().map(|r| r.pose).collect()
    }

    /// Piecewise-linear motion through the driven poses.
    pub fn driven_motion(&self) -> Result<PoseSequence, SimError> {
        if self.rows.is_empty() {
            return Err(SimError::EmptyTrace);
        }
        Ok(PoseSequence::new(self.rows[0].t, self.dt, &self.poses())?)
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = [
            "t", "x", "y", "phi", "ref_x", "ref_y", "ref_phi", "vx", "vy", "omega", "e_y", "e_phi",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let wheels = self.rows.first().map_or(0, |r| r.wheels.len());
        for i in 0..wheels {
            h.push(format!("gamma_{i}"));
            h.push(format!("speed_{i}"));
        }
        h.push("qp_iterations".to_string());
        h
    }

    pub fn csv_record(row: &TraceRow) -> Vec<f64> {
        let mut v = vec![
            row.t,
            row.pose.x,
            row.pose.y,
            row.pose.phi,
            row.reference.x,
            row.reference.y,
            row.reference.phi,
            row.u[0],
            row.u[1],
            row.u[2],
            row.e_y,
            row.e_phi,
        ];
        for w in &row.wheels {
            v.push(w.gamma);
            v.push(w.speed);
        }
        v.push(row.qp_iterations as f64);
        v
    }
}

/// Densely sampled reference path for lateral-error projection.
struct ReferencePath {
    samples: Vec<Pose2>,
}

impl ReferencePath {
    fn new(traj: &MincoTrajectory, spacing: f64) -> Self {
        let samples = traj.sample_poses(spacing).into_iter().map(|(_, p)| p).collect();
        Self { samples }
    }

    /// Signed lateral offset (left positive) and heading error relative to
    /// the closest point of the polyline.
    fn errors(&self, pose: &Pose2) -> (f64, f64) {
        let p = [pose.x, pose.y];
        let mut best: Option<(f64, f64, f64)> = None;
        for w in self.samples.windows(2) {
            let (a, b) = (w[0], w[1]);
            let d = [b.x - a.x, b.y - a.y];
            let len2 = d[0] * d[0] + d[1] * d[1];
            if len2 == 0.0 {
                continue;
            }
            let s = (((p[0] - a.x) * d[0] + (p[1] - a.y) * d[1]) / len2).clamp(0.0, 1.0);
            let q = [a.x + s * d[0], a.y + s * d[1]];
            let dist2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
            if best.map_or(true, |(bd, _, _)| dist2 < bd) {
                let len = len2.sqrt();
                let lateral = (d[0] * (p[1] - a.y) - d[1] * (p[0] - a.x)) / len;
                let phi = a.phi + s * (b.phi - a.phi);
                best = Some((dist2, lateral, phi));
            }
        }
        match best {
            Some((_, lateral, phi)) => (lateral, wrap_angle(pose.phi - phi)),
            None => {
                // no tangent: measure along the reference heading's left normal
                let r = self.samples[0];
                let lateral = -(p[0] - r.x) * r.phi.sin() + (p[1] - r.y) * r.phi.cos();
                (lateral, wrap_angle(pose.phi - r.phi))
            }
        }
    }
}

/// Tracks `traj` with the MPC on the kinematic plant for the trajectory
/// duration plus the settle time.
pub fn run_closed_loop(traj: &MincoTrajectory, veh: &VehicleParams, mpc_cfg: &MpcConfig, sim_cfg: &SimConfig) -> Result<SimTrace, SimError> {
    if !(sim_cfg.settle_time >= 0.0) || !(sim_cfg.input_lag >= 0.0) || !(sim_cfg.reference_spacing > 0.0) {
        return Err(SimError::InvalidConfig(
            "settle_time and input_lag must be nonnegative, reference_spacing positive".into(),
        ));
    }
    let cfg = mpc_cfg.clamped_to(veh.v_max, veh.omega_max);
    let mut ctrl = MpcController::new(cfg)?;
    let dt = mpc_cfg.dt;
    let duration = traj.total_duration() + sim_cfg.settle_time;
    let steps = (duration / dt - 1e-9).ceil().max(0.0) as usize;
    let reference = ReferencePath::new(traj, sim_cfg.reference_spacing);
    let lag = if sim_cfg.input_lag > 0.0 {
        1.0 - (-dt / sim_cfg.input_lag).exp()
    } else {
        1.0
    };

    let start = traj.pose_at(0.0);
    let off = sim_cfg.initial_offset;
    let mut pose = Pose2::new(start.x + off[0], start.y + off[1], start.phi + off[2]);
    let mut applied = [0.0; 3];
    let mut rows = Vec::with_capacity(steps + 1);
    let mut failure = None;
    for k in 0..=steps {
        let t = k as f64 * dt;
        let step = match ctrl.step(&pose, traj, t) {
            Ok(s) => s,
            Err(e) => {
                failure = Some((k, e));
                break;
            }
        };
        let u = step.u;
        let body = pose.rotate_inv([u[0], u[1]]);
        let wheels = allocate_with([body[0], body[1], u[2]], veh, sim_cfg.wheel_model);
        let (e_y, e_phi) = reference.errors(&pose);
        let r = traj.pose_at(t);
        rows.push(TraceRow {
            t,
            pose,
            reference: Pose2 {
                x: r.x,
                y: r.y,
                phi: wrap_angle(r.phi),
            },
            u,
            wheels,
            e_y,
            e_phi,
            qp_iterations: step.iterations,
        });
        if k < steps {
            for c in 0..3 {
                applied[c] += lag * (u[c] - applied[c]);
            }
            pose = plant_step(&pose, applied, dt);
        }
    }
    Ok(SimTrace { dt, rows, failure })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub swept_area: f64,
    pub baseline_area: f64,
    pub excess_swept_area: f64,
    /// Wall-clock planning time; omitted from reproducible reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planning_time_s: Option<f64>,
    pub max_abs_e_y: f64,
    pub mean_abs_e_y: f64,
    pub max_abs_e_phi_deg: f64,
    pub mean_abs_e_phi_deg: f64,
    /// Start of the window used for the steady-state maxima, seconds.
    pub steady_state_from: f64,
    pub steady_state_max_abs_e_y: f64,
    pub steady_state_max_abs_e_phi_deg: f64,
}

/// Area and tracking statistics. `field` must be computed from
/// `trace.driven_motion()`; the ribbon baseline uses the driven path.
pub fn compute_metrics(
    trace: &SimTrace,
    veh: &VehicleParams,
    field: &SweptField,
    planning_time_s: Option<f64>,
    steady_state_from: f64,
) -> Result<MetricsReport, SimError> {
    if trace.rows.is_empty() {
        return Err(SimError::EmptyTrace);
    }
    let motion = trace.driven_motion()?;
    let area = excess_area(field, &motion, veh, Baseline::Ribbon);
    let n = trace.rows.len() as f64;
    let ey: Vec<f64> = trace.rows.iter().map(|r| r.e_y.abs()).collect();
    let ephi: Vec<f64> = trace.rows.iter().map(|r| r.e_phi.abs().to_degrees()).collect();
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let steady: Vec<usize> = (0..trace.rows.len()).filter(|&i| trace.rows[i].t >= steady_state_from).collect();
    Ok(MetricsReport {
        swept_area: area.swept_area,
        baseline_area: area.baseline_area,
        excess_swept_area: area.excess_area,
        planning_time_s,
        max_abs_e_y: max(&ey),
        mean_abs_e_y: ey.iter().sum::<f64>() / n,
        max_abs_e_phi_deg: max(&ephi),
        mean_abs_e_phi_deg: ephi.iter().sum::<f64>() / n,
        steady_state_from,
        steady_state_max_abs_e_y: steady.iter().map(|&i| ey[i]).fold(0.0, f64::max),
        steady_state_max_abs_e_phi_deg: steady.iter().map(|&i| ephi[i]).fold(0.0, f64::max),
    })
}
