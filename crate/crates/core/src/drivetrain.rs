//! Swerve-drive wheel allocation and its least-squares inverse.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::geometry::VehicleParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WheelCommand {
    /// Steering angle in (−π/2, π/2].
    pub gamma: f64,
    /// Signed wheel speed; negative when the module drives backwards.
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WheelModel {
    /// `v = (Vx − ω·Y, Vy + ω·X)`.
    #[default]
    RigidBody,
    /// `v = (Vx + ω·Y, Vy + ω·X)`, kept for comparison with legacy tooling.
    Legacy,
}

impl WheelModel {
    #[inline]
    fn y_sign(self) -> f64 {
        match self {
            WheelModel::RigidBody => -1.0,
            WheelModel::Legacy => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DriveError {
    #[error("wheel layout cannot determine the body twist")]
    RankDeficient,
    #[error("expected {expected} wheel commands, got {got}")]
    CountMismatch { expected: usize, got: usize },
}

/// Folds a planar wheel velocity into a steering angle and signed speed.
pub fn fold(vx: f64, vy: f64) -> WheelCommand {
    if vx == 0.0 && vy == 0.0 {
        return WheelCommand { gamma: 0.0, speed: 0.0 };
    }
    let mut gamma = vy.atan2(vx);
    let mut speed = vx.hypot(vy);
    if gamma > FRAC_PI_2 {
        gamma -= std::f64::consts::PI;
        speed = -speed;
    } else if gamma <= -FRAC_PI_2 {
        gamma += std::f64::consts::PI;
        speed = -speed;
    }
    WheelCommand { gamma, speed }
}

/// Body twist `(Vx, Vy, ω)` to per-wheel commands, in wheel order.
pub fn allocate(u_body: [f64; 3], veh: &VehicleParams) -> Vec<WheelCommand> {
    allocate_with(u_body, veh, WheelModel::RigidBody)
}

pub fn allocate_with(u_body: [f64; 3], veh: &VehicleParams, model: WheelModel) -> Vec<WheelCommand> {
    let [vx, vy, w] = u_body;
    let s = model.y_sign();
    veh.wheel_positions
        .iter()
        .map(|&[x, y]| fold(vx + s * w * y, vy + w * x))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwistEstimate {
    pub twist: [f64; 3],
    /// Euclidean norm of the stacked velocity residual.
    pub residual: f64,
}

pub fn reconstruct_twist(commands: &[WheelCommand], veh: &VehicleParams) -> Result<TwistEstimate, DriveError> {
    reconstruct_twist_with(commands, veh, WheelModel::RigidBody)
}

/// Least-squares twist from wheel commands.
pub fn reconstruct_twist_with(commands: &[WheelCommand], veh: &VehicleParams, model: WheelModel) -> Result<TwistEstimate, DriveError> {
    let n = veh.wheel_positions.len();
    if commands.len() != n {
        return Err(DriveError::CountMismatch {
            expected: n,
            got: commands.len(),
        });
    }
    let s = model.y_sign();
    let mut a = DMatrix::zeros(2 * n, 3);
    let mut b = DVector::zeros(2 * n);
    for (i, (&[x, y], c)) in veh.wheel_positions.iter().zip(commands).enumerate() {
        a[(2 * i, 0)] = 1.0;
        a[(2 * i, 2)] = s * y;
        a[(2 * i + 1, 1)] = 1.0;
        a[(2 * i + 1, 2)] = x;
        b[2 * i] = c.speed * c.gamma.cos();
        b[2 * i + 1] = c.speed * c.gamma.sin();
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    // fewer than three singular values means fewer rows than unknowns
    if svd.singular_values.len() < 3 || svd.singular_values.min() <= 1e-10 * smax.max(1.0) {
        return Err(DriveError::RankDeficient);
    }
    let u = svd.solve(&b, 0.0).map_err(|_| DriveError::RankDeficient)?;
    let residual = (&a * &u - &b).norm();
    Ok(TwistEstimate {
        twist: [u[0], u[1], u[2]],
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn veh() -> VehicleParams {
        let mut v = VehicleParams::with_axles(2.0, 1.0, 2, 2.0, 2.0);
        v.wheel_positions = vec![[1.0, 0.5], [1.0, -0.5], [-1.0, 0.5], [-1.0, -0.5]];
        v
    }

    #[test]
    fn translation() {
        for c in allocate([1.0, 0.0, 0.0], &veh()) {
            assert_eq!(c, WheelCommand { gamma: 0.0, speed: 1.0 });
        }
        for c in allocate([0.0, 1.0, 0.0], &veh()) {
            assert_eq!(c.gamma, FRAC_PI_2);
            assert_eq!(c.speed, 1.0);
        }
    }

    #[test]
    fn rotation_folds() {
        let c = allocate([0.0, 0.0, 1.0], &veh())[0];
        // unfolded atan2(1, -0.5) is in the second quadrant
        let raw = 1.0f64.atan2(-0.5);
        assert!(raw > FRAC_PI_2);
        assert!((c.gamma - (raw - std::f64::consts::PI)).abs() < 1e-15);
        assert!((c.gamma + 1.107_148_717_794_090_4).abs() < 1e-12);
        assert!((c.speed + 1.25f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_twist() {
        assert!(allocate([0.0; 3], &veh()).iter().all(|c| c.gamma == 0.0 && c.speed == 0.0));
    }

    #[test]
    fn round_trip_and_residual() {
        let v = veh();
        let u = [0.3, -0.7, 0.4];
        let e = reconstruct_twist(&allocate(u, &v), &v).unwrap();
        for k in 0..3 {
            assert!((e.twist[k] - u[k]).abs() < 1e-12);
        }
        assert!(e.residual < 1e-12);
        let mut cmds = allocate(u, &v);
        cmds[2].speed += 0.1;
        assert!(reconstruct_twist(&cmds, &v).unwrap().residual > 0.0);
    }

    #[test]
    fn degenerate_layout() {
        let mut v = veh();
        v.wheel_positions = vec![[0.0, 0.0], [0.0, 0.0]];
        let c = allocate([1.0, 0.0, 0.0], &v);
        assert_eq!(reconstruct_twist(&c, &v), Err(DriveError::RankDeficient));
    }
}
