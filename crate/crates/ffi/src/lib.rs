//! C ABI over the planning, sweep and drivetrain APIs.
//!
//! Objects are opaque handles created by `*_new`/`*_load` functions and
//! released with the matching `*_free`. Every fallible function returns an
//! [`SpStatus`]; on failure a message is available from
//! [`sp_last_error`] on the same thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use sweptplan::drivetrain::{allocate, reconstruct_twist, WheelCommand};
use sweptplan::geometry::{footprint_sdf_with_grad, VehicleParams};
use sweptplan::minco::{MincoTrajectory, TrajectoryDocument};
use sweptplan::pipeline::{run_pipeline, RunOptions, Stage};
use sweptplan::scenario::{parse_scenario, Scenario, ScenarioError};
use sweptplan::sweptfield::{auto_region, compute_swept_field, swept_area, FieldOptions};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidUtf8 = 3,
    ParseError = 4,
    ValidationError = 5,
    NotFound = 6,
    BufferTooSmall = 7,
    ComputationFailed = 8,
    Panic = 9,
}

pub const SP_STAGE_PLAN: u32 = 1;
pub const SP_STAGE_SWEEP: u32 = 2;
pub const SP_STAGE_TRACK: u32 = 4;
pub const SP_STAGE_METRICS: u32 = 8;
pub const SP_STAGE_ALL: u32 = 15;

/// Planar pose; `phi` in radians.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpPose {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
}

/// Steering angle (radians, in (−π/2, π/2]) and signed speed of one wheel.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpWheelCommand {
    pub gamma: f64,
    pub speed: f64,
}

pub struct SpVehicle(VehicleParams);
pub struct SpTrajectory(MincoTrajectory);
pub struct SpScenario(Scenario);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

type Failure = (SpStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SpStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SpStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    (SpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (SpStatus::InvalidUtf8, format!("{what}: {e}")))
}

/// Message describing the last failure on this thread, or NULL. The
/// pointer stays valid until the next call into this library on the same
/// thread.
#[no_mangle]
pub extern "C" fn sp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Rectangular vehicle with `axle_count` evenly spaced axles of two wheels.
#[no_mangle]
pub unsafe extern "C" fn sp_vehicle_new(
    length: f64,
    width: f64,
    axle_count: usize,
    v_max: f64,
    omega_max: f64,
    out_vehicle: *mut *mut SpVehicle,
) -> SpStatus {
    guard(|| {
        let slot = out(out_vehicle, "out_vehicle")?;
        *slot = ptr::null_mut();
        let v = VehicleParams::with_axles(length, width, axle_count, v_max, omega_max);
        v.validate().map_err(|e| (SpStatus::InvalidArgument, e.to_string()))?;
        *slot = Box::into_raw(Box::new(SpVehicle(v)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sp_vehicle_free(vehicle: *mut SpVehicle) {
    if !vehicle.is_null() {
        drop(Box::from_raw(vehicle));
    }
}

#[no_mangle]
pub unsafe extern "C" fn sp_vehicle_wheel_count(vehicle: *const SpVehicle) -> usize {
    vehicle.as_ref().map_or(0, |v| v.0.wheel_positions.len())
}

/// Signed distance from a body-frame point to the footprint boundary and
/// its gradient (`out_gradient` holds two doubles; may be NULL).
#[no_mangle]
pub unsafe extern "C" fn sp_footprint_sdf(
    vehicle: *const SpVehicle,
    x: f64,
    y: f64,
    out_value: *mut f64,
    out_gradient: *mut f64,
) -> SpStatus {
    guard(|| {
        let v = as_ref(vehicle, "vehicle")?;
        let value = out(out_value, "out_value")?;
        if !(x.is_finite() && y.is_finite()) {
            return Err((SpStatus::InvalidArgument, "point must be finite".into()));
        }
        let r = footprint_sdf_with_grad([x, y], &v.0);
        *value = r.value;
        if !out_gradient.is_null() {
            let g = std::slice::from_raw_parts_mut(out_gradient, 2);
            g.copy_from_slice(&r.gradient);
        }
        Ok(())
    })
}

/// Per-wheel commands for the body twist `(vx, vy, omega)`. Writes
/// `*out_count` wheels; fails with `BufferTooSmall` (still setting
/// `*out_count`) when `capacity` is insufficient.
#[no_mangle]
pub unsafe extern "C" fn sp_allocate(
    vehicle: *const SpVehicle,
    vx: f64,
    vy: f64,
    omega: f64,
    out_commands: *mut SpWheelCommand,
    capacity: usize,
    out_count: *mut usize,
) -> SpStatus {
    guard(|| {
        let v = as_ref(vehicle, "vehicle")?;
        let count = out(out_count, "out_count")?;
        let cmds = allocate([vx, vy, omega], &v.0);
        *count = cmds.len();
        if capacity < cmds.len() {
            return Err((SpStatus::BufferTooSmall, format!("need room for {} wheels", cmds.len())));
        }
        if out_commands.is_null() {
            return Err(null("out_commands"));
        }
        let dst = std::slice::from_raw_parts_mut(out_commands, cmds.len());
        for (d, c) in dst.iter_mut().zip(cmds) {
            *d = SpWheelCommand {
                gamma: c.gamma,
                speed: c.speed,
            };
        }
        Ok(())
    })
}

/// Least-squares body twist (three doubles) from one command per wheel.
#[no_mangle]
pub unsafe extern "C" fn sp_reconstruct_twist(
    vehicle: *const SpVehicle,
    commands: *const SpWheelCommand,
    count: usize,
    out_twist: *mut f64,
    out_residual: *mut f64,
) -> SpStatus {
    guard(|| {
        let v = as_ref(vehicle, "vehicle")?;
        if commands.is_null() || out_twist.is_null() {
            return Err(null("commands or out_twist"));
        }
        let cmds: Vec<WheelCommand> = std::slice::from_raw_parts(commands, count)
            .iter()
            .map(|c| WheelCommand {
                gamma: c.gamma,
                speed: c.speed,
            })
            .collect();
        let est = reconstruct_twist(&cmds, &v.0).map_err(|e| (SpStatus::ComputationFailed, e.to_string()))?;
        std::slice::from_raw_parts_mut(out_twist, 3).copy_from_slice(&est.twist);
        if let Some(r) = out_residual.as_mut() {
            *r = est.residual;
        }
        Ok(())
    })
}

/// Parses a trajectory document as written to `trajectory.json`.
#[no_mangle]
pub unsafe extern "C" fn sp_trajectory_from_json(json: *const c_char, out_trajectory: *mut *mut SpTrajectory) -> SpStatus {
    guard(|| {
        let slot = out(out_trajectory, "out_trajectory")?;
        *slot = ptr::null_mut();
        let text = c_str(json, "json")?;
        let doc: TrajectoryDocument = serde_json::from_str(text).map_err(|e| (SpStatus::ParseError, e.to_string()))?;
        let traj = doc
            .into_trajectory()
            .map_err(|e| (SpStatus::ValidationError, e.to_string()))?;
        *slot = Box::into_raw(Box::new(SpTrajectory(traj)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sp_trajectory_free(trajectory: *mut SpTrajectory) {
    if !trajectory.is_null() {
        drop(Box::from_raw(trajectory));
    }
}

#[no_mangle]
pub unsafe extern "C" fn sp_trajectory_duration(trajectory: *const SpTrajectory, out_seconds: *mut f64) -> SpStatus {
    guard(|| {
        let t = as_ref(trajectory, "trajectory")?;
        *out(out_seconds, "out_seconds")? = t.0.total_duration();
        Ok(())
    })
}

/// Pose at time `t`; `InvalidArgument` outside `[0, duration]`.
#[no_mangle]
pub unsafe extern "C" fn sp_trajectory_pose(trajectory: *const SpTrajectory, t: f64, out_pose: *mut SpPose) -> SpStatus {
    guard(|| {
        let tr = as_ref(trajectory, "trajectory")?;
        let dst = out(out_pose, "out_pose")?;
        let p = tr.0.eval(t, 0).map_err(|e| (SpStatus::InvalidArgument, e.to_string()))?;
        *dst = SpPose {
            x: p[0],
            y: p[1],
            phi: p[2],
        };
        Ok(())
    })
}

/// Swept area of the trajectory on a grid of `resolution` metres covering
/// the path grown by the vehicle length. `threads` = 0 uses every core.
#[no_mangle]
pub unsafe extern "C" fn sp_swept_area(
    trajectory: *const SpTrajectory,
    vehicle: *const SpVehicle,
    resolution: f64,
    threads: usize,
    out_area: *mut f64,
) -> SpStatus {
    guard(|| {
        let tr = as_ref(trajectory, "trajectory")?;
        let v = as_ref(vehicle, "vehicle")?;
        let area = out(out_area, "out_area")?;
        if !(resolution > 0.0) {
            return Err((SpStatus::InvalidArgument, "resolution must be positive".into()));
        }
        let region = auto_region(&tr.0, v.0.length);
        let opts = FieldOptions {
            threads,
            ..FieldOptions::default()
        };
        let field = compute_swept_field(&tr.0, &v.0, region, resolution, &opts)
            .map_err(|e| (SpStatus::ComputationFailed, e.to_string()))?;
        *area = swept_area(&field);
        Ok(())
    })
}

/// Loads and validates a scenario file.
#[no_mangle]
pub unsafe extern "C" fn sp_scenario_load(path: *const c_char, out_scenario: *mut *mut SpScenario) -> SpStatus {
    guard(|| {
        let slot = out(out_scenario, "out_scenario")?;
        *slot = ptr::null_mut();
        let p = c_str(path, "path")?;
        let sc = parse_scenario(std::path::Path::new(p)).map_err(|e| {
            let status = match e {
                ScenarioError::FileNotFound(_) => SpStatus::NotFound,
                ScenarioError::Io(_) | ScenarioError::ParseError { .. } => SpStatus::ParseError,
                ScenarioError::ValidationError(..) => SpStatus::ValidationError,
            };
            (status, e.to_string())
        })?;
        *slot = Box::into_raw(Box::new(SpScenario(sc)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sp_scenario_free(scenario: *mut SpScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs the stages selected by the `SP_STAGE_*` bit mask and writes their
/// artifacts to `out_dir`.
#[no_mangle]
pub unsafe extern "C" fn sp_pipeline_run(scenario: *const SpScenario, out_dir: *const c_char, stages: u32) -> SpStatus {
    guard(|| {
        let sc = as_ref(scenario, "scenario")?;
        let dir = c_str(out_dir, "out_dir")?;
        if stages == 0 || stages & !SP_STAGE_ALL != 0 {
            return Err((SpStatus::InvalidArgument, format!("bad stage mask {stages:#x}")));
        }
        let selected: Vec<Stage> = [
            (SP_STAGE_PLAN, Stage::Plan),
            (SP_STAGE_SWEEP, Stage::Sweep),
            (SP_STAGE_TRACK, Stage::Track),
            (SP_STAGE_METRICS, Stage::Metrics),
        ]
        .iter()
        .filter(|(bit, _)| stages & bit != 0)
        .map(|&(_, s)| s)
        .collect();
        let opts = RunOptions {
            out_dir: PathBuf::from(dir),
            ..RunOptions::default()
        };
        run_pipeline(&sc.0, &selected, &opts).map_err(|e| (SpStatus::ComputationFailed, e.to_string()))?;
        Ok(())
    })
}
