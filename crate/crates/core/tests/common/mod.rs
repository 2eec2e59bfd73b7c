#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sweptplan::geometry::{Pose2, VehicleParams};
use sweptplan::minco::{build_minco, Boundary, EndState, MincoTrajectory, Vec3};
use sweptplan::worldmodel::InitialTrajectory;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

/// Closed-form rectangle distance used as an independent reference.
pub fn rect_sdf(p: [f64; 2], hl: f64, hw: f64) -> f64 {
    let a = p[0].abs() - hl;
    let b = p[1].abs() - hw;
    if a <= 0.0 && b <= 0.0 {
        a.max(b)
    } else {
        a.max(0.0).hypot(b.max(0.0))
    }
}

/// Footprint distance of world point `p` against pose `(x, y, phi)`.
pub fn world_rect_sdf(p: [f64; 2], pose: [f64; 3], hl: f64, hw: f64) -> f64 {
    let (s, c) = pose[2].sin_cos();
    let dx = p[0] - pose[0];
    let dy = p[1] - pose[1];
    rect_sdf([c * dx + s * dy, -s * dx + c * dy], hl, hw)
}

/// Free variables of a trajectory: interior waypoints and durations.
#[derive(Debug, Clone)]
pub struct Instance {
    pub q: Vec<Vec3>,
    pub t: Vec<f64>,
    pub boundary: Boundary,
}

impl Instance {
    pub fn build(&self) -> MincoTrajectory {
        build_minco(&self.q, &self.t, self.boundary).unwrap()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.q.iter().flatten().copied().chain(self.t.iter().copied()).collect()
    }

    pub fn from_flat(&self, x: &[f64]) -> Instance {
        let nq = self.q.len();
        Instance {
            q: (0..nq).map(|j| [x[3 * j], x[3 * j + 1], x[3 * j + 2]]).collect(),
            t: x[3 * nq..].to_vec(),
            boundary: self.boundary,
        }
    }
}

/// Roughly forward-moving trajectory with 2..=5 segments and headings that
/// follow the direction of travel loosely.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let m = rng.random_range(2..=5);
    let mut q = Vec::with_capacity(m - 1);
    let mut t = Vec::with_capacity(m);
    for j in 1..m {
        q.push([
            2.0 * j as f64 + rng.random_range(-0.4..0.4),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.5..0.5),
        ]);
    }
    for _ in 0..m {
        t.push(rng.random_range(0.8..2.0));
    }
    let start = EndState {
        pos: [0.0, 0.0, rng.random_range(-0.3..0.3)],
        vel: [rng.random_range(0.2..1.0), rng.random_range(-0.2..0.2), 0.0],
        acc: [0.0; 3],
    };
    let end = EndState::at_rest([2.0 * m as f64, rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)]);
    Instance {
        q,
        t,
        boundary: Boundary { start, end },
    }
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Largest componentwise gap relative to the largest reference magnitude.
pub fn rel_error(analytic: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-8);
    analytic
        .iter()
        .zip(reference)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

/// Distance of a body-frame point to the creases of the rectangle distance
/// (the interior medial axis), where the gradient jumps.
pub fn crease_distance(p: [f64; 2], hl: f64, hw: f64) -> f64 {
    let a = p[0].abs() - hl;
    let b = p[1].abs() - hw;
    if a > 0.0 || b > 0.0 {
        return f64::INFINITY;
    }
    let diag = (a - b).abs() / std::f64::consts::SQRT_2;
    let axis = if b > a { p[1].abs() } else { p[0].abs() };
    diag.min(axis)
}

pub fn reference_for(inst: &Instance, rng: &mut ChaCha8Rng) -> InitialTrajectory {
    let traj = inst.build();
    let mut poses = vec![traj.pose_at(0.0)];
    for s in traj.junction_states(0) {
        poses.push(Pose2::new(
            s[0] + rng.random_range(-0.3..0.3),
            s[1] + rng.random_range(-0.3..0.3),
            s[2] + rng.random_range(-0.3..0.3),
        ));
    }
    InitialTrajectory { poses, spacing: 2.0 }
}

/// Obstacle points inside the hinge band of some junction, moved off the
/// distance creases of every junction footprint.
pub fn obstacles_for(inst: &Instance, veh: &VehicleParams, d_th: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let traj = inst.build();
    let junctions = traj.junction_states(0);
    let (hl, hw) = (0.5 * veh.length, 0.5 * veh.width);
    let mut out = Vec::new();
    for j in &junctions {
        let (s, c) = j[2].sin_cos();
        let mut placed = 0;
        while placed < 4 {
            let b = [rng.random_range(-hl - 0.6..hl + 0.6), rng.random_range(-hw - 0.6..hw + 0.6)];
            let d = rect_sdf(b, hl, hw);
            if !(-0.2..d_th - 0.05).contains(&d) {
                continue;
            }
            let mut p = [j[0] + c * b[0] - s * b[1], j[1] + s * b[0] + c * b[1]];
            for _ in 0..1000 {
                let near = junctions.iter().any(|k| {
                    let (s, c) = k[2].sin_cos();
                    let (dx, dy) = (p[0] - k[0], p[1] - k[1]);
                    crease_distance([c * dx + s * dy, -s * dx + c * dy], hl, hw) < 5e-5
                });
                if !near {
                    break;
                }
                let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                p = [p[0] + 1e-4 * a.cos(), p[1] + 1e-4 * a.sin()];
            }
            out.push(p);
            placed += 1;
        }
    }
    out
}
