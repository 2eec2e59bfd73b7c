mod common;

use rand::Rng;

use common::rng;
use sweptplan::geometry::Pose2;
use sweptplan::minco::{build_minco, Boundary, EndState};
use sweptplan::mpc::{build_qp, solve_qp, MpcConfig, MpcController, MpcError};
use sweptplan::qp::objective;

fn loose() -> MpcConfig {
    MpcConfig {
        u_min: [-10.0; 3],
        u_max: [10.0; 3],
        du_min: [-10.0; 3],
        du_max: [10.0; 3],
        ..MpcConfig::default()
    }
}

#[test]
fn solution_beats_random_feasible_points() {
    let mut r = rng(41);
    for _ in 0..10 {
        let cfg = MpcConfig {
            np: 6,
            nc: 3,
            ..MpcConfig::default()
        };
        let s = Pose2::new(0.0, 0.0, 0.0);
        let vel = [r.random_range(-4.0..4.0), r.random_range(-4.0..4.0), r.random_range(-2.0..2.0)];
        let reference: Vec<f64> = (1..=cfg.np).flat_map(|k| vel.map(|v| v * cfg.dt * k as f64)).collect();
        let prob = build_qp(&s, &reference, [0.0; 3], &cfg).unwrap();
        let sol = solve_qp(&prob).unwrap();
        let best = objective(&prob.h, &prob.g, &sol.u);
        let cons = prob.constraints();
        let mut tried = 0;
        while tried < 1000 {
            let x: Vec<f64> = (0..prob.dim())
                .map(|i| r.random_range(cfg.u_min[i % 3]..cfg.u_max[i % 3]))
                .collect();
            if cons.iter().any(|c| c.slack(&x) < 0.0) {
                // random walk inside the rate band instead
                let mut y = vec![0.0; prob.dim()];
                let mut prev = [0.0; 3];
                for k in 0..prob.nc {
                    for c in 0..3 {
                        let lo = (prev[c] + cfg.du_min[c]).max(cfg.u_min[c]);
                        let hi = (prev[c] + cfg.du_max[c]).min(cfg.u_max[c]);
                        y[3 * k + c] = r.random_range(lo..=hi);
                        prev[c] = y[3 * k + c];
                    }
                }
                assert!(cons.iter().all(|c| c.slack(&y) >= -1e-12));
                assert!(objective(&prob.h, &prob.g, &y) >= best - 1e-9);
            } else {
                assert!(objective(&prob.h, &prob.g, &x) >= best - 1e-9);
            }
            tried += 1;
        }
    }
}

#[test]
fn constant_reference_is_stationary() {
    // a straight constant-velocity spline segment sampled mid-way
    let tr = build_minco(
        &[],
        &[20.0],
        Boundary {
            start: EndState {
                pos: [0.0; 3],
                vel: [1.0, 0.0, 0.0],
                acc: [0.0; 3],
            },
            end: EndState {
                pos: [20.0, 0.0, 0.0],
                vel: [1.0, 0.0, 0.0],
                acc: [0.0; 3],
            },
        },
    )
    .unwrap();
    let cfg = loose();
    let mut ctrl = MpcController::new(cfg.clone()).unwrap();
    let mut pose = tr.pose_at(0.0);
    let mut us = Vec::new();
    for k in 0..40 {
        let t = k as f64 * cfg.dt;
        let step = ctrl.step(&pose, &tr, t).unwrap();
        us.push(step.u);
        pose = Pose2::new(pose.x + cfg.dt * step.u[0], pose.y + cfg.dt * step.u[1], pose.phi + cfg.dt * step.u[2]);
    }
    for w in us[1..].windows(2) {
        for c in 0..3 {
            assert!((w[0][c] - w[1][c]).abs() <= 1e-8, "{:?} vs {:?}", w[0], w[1]);
        }
    }
}

#[test]
fn lagging_state_speeds_up() {
    let cfg = MpcConfig { np: 5, nc: 5, ..loose() };
    let s = Pose2::new(-0.1, 0.0, 0.0);
    let reference: Vec<f64> = (1..=cfg.np).flat_map(|k| [k as f64 * cfg.dt, 0.0, 0.0]).collect();
    let prob = build_qp(&s, &reference, [1.0, 0.0, 0.0], &cfg).unwrap();
    let u = solve_qp(&prob).unwrap().u;
    assert!(u[0] > 1.0);
}

#[test]
fn on_reference_gives_reference_velocities() {
    let cfg = MpcConfig {
        r: [[0.0; 3]; 3],
        ..loose()
    };
    let vel = [0.7, -0.2, 0.1];
    let s = Pose2::new(1.0, 2.0, 0.3);
    let reference: Vec<f64> = (1..=cfg.np)
        .flat_map(|k| [s.x + vel[0] * cfg.dt * k as f64, s.y + vel[1] * cfg.dt * k as f64, s.phi + vel[2] * cfg.dt * k as f64])
        .collect();
    let prob = build_qp(&s, &reference, vel, &cfg).unwrap();
    let u = solve_qp(&prob).unwrap().u;
    for k in 0..cfg.nc {
        for c in 0..3 {
            assert!((u[3 * k + c] - vel[c]).abs() < 1e-9);
        }
    }
}

#[test]
fn config_validation() {
    let bad = MpcConfig { nc: 0, ..MpcConfig::default() };
    assert!(matches!(bad.validate(), Err(MpcError::InvalidConfig(_))));
    let bad = MpcConfig { np: 2, nc: 3, ..MpcConfig::default() };
    assert!(bad.validate().is_err());
    let bad = MpcConfig {
        q: [[1.0, 2.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        ..MpcConfig::default()
    };
    assert!(bad.validate().is_err());
    let s = Pose2::new(0.0, 0.0, 3.0);
    let cfg = MpcConfig { np: 1, nc: 1, ..MpcConfig::default() };
    assert!(matches!(
        build_qp(&s, &[0.0, 0.0, -3.0], [0.0; 3], &cfg),
        Err(MpcError::HeadingWrapMismatch { index: 0 })
    ));
}
