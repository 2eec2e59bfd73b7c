//! Planar pose algebra and the signed distance field of a rectangular
//! vehicle footprint.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

/// Returns `a + 2k*pi` closest to `reference`.
pub fn unwrap_near(a: f64, reference: f64) -> f64 {
    reference + wrap_angle(a - reference)
}

/// Sign with the `sign(0) = +1` convention used by the footprint gradient.
#[inline]
fn sign_pos(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// A planar pose `(x, y, phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
}

impl Pose2 {
    /// Builds a pose with the heading wrapped into `(-pi, pi]`.
    pub fn new(x: f64, y: f64, phi: f64) -> Self {
        Self {
            x,
            y,
            phi: wrap_angle(phi),
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn translation(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// Rotates a body-frame vector into the world frame.
    #[inline]
    pub fn rotate(&self, v: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.phi.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }

    /// Rotates a world-frame vector into the body frame.
    #[inline]
    pub fn rotate_inv(&self, v: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.phi.sin_cos();
        [c * v[0] + s * v[1], -s * v[0] + c * v[1]]
    }

    /// Maps a body-frame point to the world frame.
    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let r = self.rotate(p);
        [r[0] + self.x, r[1] + self.y]
    }

    /// Maps a world-frame point to the body frame.
    pub fn inverse_transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        self.rotate_inv([p[0] - self.x, p[1] - self.y])
    }

    /// Composition `self * other` (apply `other` in the frame of `self`).
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let t = self.transform_point([other.x, other.y]);
        Pose2::new(t[0], t[1], self.phi + other.phi)
    }
}

/// Rectangular footprint, wheel layout and actuation limits of a vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub length: f64,
    pub width: f64,
    pub axle_count: usize,
    /// Wheel module positions `(X, Y)` in the body frame.
    pub wheel_positions: Vec<[f64; 2]>,
    pub v_max: f64,
    pub omega_max: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VehicleError {
    #[error("vehicle length and width must be positive (got {length} x {width})")]
    NonPositiveSize { length: f64, width: f64 },
    #[error("axle_count must be at least 1")]
    NoAxles,
    #[error("wheel {index} at ({x}, {y}) lies outside the footprint")]
    WheelOutside { index: usize, x: f64, y: f64 },
    #[error("at least three non-collinear wheels are required")]
    DegenerateWheels,
    #[error("actuation limits must be positive")]
    BadLimits,
}

impl VehicleParams {
    /// Vehicle with `axle_count` evenly spaced axles and one wheel module
    /// on each side at `Y = +-W/2`.
    pub fn with_axles(length: f64, width: f64, axle_count: usize, v_max: f64, omega_max: f64) -> Self {
        let wheel_positions = default_wheel_positions(length, width, axle_count);
        Self {
            length,
            width,
            axle_count,
            wheel_positions,
            v_max,
            omega_max,
        }
    }

    pub fn footprint_area(&self) -> f64 {
        self.length * self.width
    }

    pub fn half_diagonal(&self) -> f64 {
        0.5 * self.length.hypot(self.width)
    }

    pub fn validate(&self) -> Result<(), VehicleError> {
        if !(self.length > 0.0 && self.width > 0.0) {
            return Err(VehicleError::NonPositiveSize {
                length: self.length,
                width: self.width,
            });
        }
        if self.axle_count == 0 {
            return Err(VehicleError::NoAxles);
        }
        if !(self.v_max > 0.0 && self.omega_max > 0.0) {
            return Err(VehicleError::BadLimits);
        }
        let eps = 1e-12;
        for (index, w) in self.wheel_positions.iter().enumerate() {
            if w[0].abs() > 0.5 * self.length + eps || w[1].abs() > 0.5 * self.width + eps {
                return Err(VehicleError::WheelOutside {
                    index,
                    x: w[0],
                    y: w[1],
                });
            }
        }
        if !has_non_collinear_triple(&self.wheel_positions) {
            return Err(VehicleError::DegenerateWheels);
        }
        Ok(())
    }

    /// Body-frame footprint corners, counter-clockwise from rear-right.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (hl, hw) = (0.5 * self.length, 0.5 * self.width);
        [[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]]
    }
}

pub fn default_wheel_positions(length: f64, width: f64, axle_count: usize) -> Vec<[f64; 2]> {
    let n = axle_count.max(1);
    let mut out = Vec::with_capacity(2 * n);
    for k in 0..n {
        let x = 0.5 * length - length * (k as f64 + 0.5) / n as f64;
        out.push([x, 0.5 * width]);
        out.push([x, -0.5 * width]);
    }
    out
}

fn has_non_collinear_triple(pts: &[[f64; 2]]) -> bool {
    if pts.len() < 3 {
        return false;
    }
    let a = pts[0];
    let Some(b) = pts.iter().find(|p| (p[0] - a[0]).hypot(p[1] - a[1]) > 1e-9) else {
        return false;
    };
    pts.iter().any(|c| {
        let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        cross.abs() > 1e-9
    })
}

/// Signed distance and its spatial gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfResult {
    pub value: f64,
    pub gradient: [f64; 2],
}

/// Signed distance from a body-frame point to the footprint boundary,
/// negative inside, with its gradient.
///
/// Outside the corner regime the value is `max(dx, dy)`; the gradient
/// picks the X branch whenever `dx >= dy`, including inside the footprint.
/// The footprint centre returns gradient `(1, 0)`.
pub fn footprint_sdf_with_grad(p_body: [f64; 2], veh: &VehicleParams) -> SdfResult {
    footprint_sdf_raw(p_body, 0.5 * veh.length, 0.5 * veh.width)
}

#[inline]
pub(crate) fn footprint_sdf_raw(p: [f64; 2], half_l: f64, half_w: f64) -> SdfResult {
    let dx = p[0].abs() - half_l;
    let dy = p[1].abs() - half_w;
    if p[0] == 0.0 && p[1] == 0.0 {
        return SdfResult {
            value: dx.max(dy),
            gradient: [1.0, 0.0],
        };
    }
    if dx > 0.0 && dy > 0.0 {
        let n = dx.hypot(dy);
        SdfResult {
            value: n,
            gradient: [dx * sign_pos(p[0]) / n, dy * sign_pos(p[1]) / n],
        }
    } else if dx >= dy {
        SdfResult {
            value: dx,
            gradient: [sign_pos(p[0]), 0.0],
        }
    } else {
        SdfResult {
            value: dy,
            gradient: [0.0, sign_pos(p[1])],
        }
    }
}

/// Signed distance from a world point to the footprint placed at `pose`,
/// with the gradient expressed in the world frame.
pub fn world_sdf_with_grad(p_world: [f64; 2], pose: &Pose2, veh: &VehicleParams) -> SdfResult {
    let body = pose.inverse_transform_point(p_world);
    let r = footprint_sdf_with_grad(body, veh);
    SdfResult {
        value: r.value,
        gradient: pose.rotate(r.gradient),
    }
}

/// World SDF plus its partial derivatives with respect to the pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSdf {
    pub value: f64,
    /// d value / d (x, y) of the pose.
    pub d_translation: [f64; 2],
    /// d value / d phi of the pose.
    pub d_heading: f64,
}

/// Evaluates the world SDF of `p_world` against the footprint at
/// `(x, y, phi)` together with its derivatives in the pose variables.
/// `phi` is used as given (no wrapping), so the result is smooth in it.
#[inline]
pub fn pose_sdf(p_world: [f64; 2], x: f64, y: f64, phi: f64, half_l: f64, half_w: f64) -> PoseSdf {
    let (s, c) = phi.sin_cos();
    let (ex, ey) = (p_world[0] - x, p_world[1] - y);
    let body = [c * ex + s * ey, -s * ex + c * ey];
    let r = footprint_sdf_raw(body, half_l, half_w);
    let gw = [c * r.gradient[0] - s * r.gradient[1], s * r.gradient[0] + c * r.gradient[1]];
    // d body / d phi = (body.y, -body.x)
    PoseSdf {
        value: r.value,
        d_translation: [-gw[0], -gw[1]],
        d_heading: r.gradient[0] * body[1] - r.gradient[1] * body[0],
    }
}
