//! Linear MPC tracker for the global-frame kinematic model
//! `X(k+1) = X(k) + dt·u(k)` with `X = (x, y, φ)`, `u = (Vx, Vy, ω)`.

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::geometry::{unwrap_near, Pose2};
use crate::minco::MincoTrajectory;
use crate::qp::{self, LinearConstraint, QpError, QpOptions};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MpcError {
    #[error("invalid MPC config: {0}")]
    InvalidConfig(String),
    #[error("reference heading jumps by more than pi at step {index}")]
    HeadingWrapMismatch { index: usize },
    #[error("input box and rate constraints conflict")]
    Infeasible,
    #[error("QP iteration limit reached (best point feasible: {feasible})")]
    MaxIterations { best: Vec<f64>, feasible: bool },
    #[error("QP Hessian is not positive definite")]
    NotConvex,
    #[error("QP solver failure: {0}")]
    Solver(String),
}

impl From<QpError> for MpcError {
    fn from(e: QpError) -> Self {
        match e {
            QpError::Infeasible | QpError::InfeasibleStart { .. } => MpcError::Infeasible,
            QpError::MaxIterations { best, feasible } => MpcError::MaxIterations { best, feasible },
            QpError::NotConvex => MpcError::NotConvex,
            other => MpcError::Solver(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub dt: f64,
    pub np: usize,
    pub nc: usize,
    /// Per-step state weight, row-major.
    pub q: [[f64; 3]; 3],
    /// Per-step input weight, row-major.
    pub r: [[f64; 3]; 3],
    pub u_min: [f64; 3],
    pub u_max: [f64; 3],
    pub du_min: [f64; 3],
    pub du_max: [f64; 3],
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            np: 15,
            nc: 15,
            q: [[100.0, 0.0, 0.0], [0.0, 100.0, 0.0], [0.0, 0.0, 100.0]],
            r: [[0.01, 0.0, 0.0], [0.0, 0.01, 0.0], [0.0, 0.0, 0.01]],
            u_min: [-3.0, -3.0, -1.5],
            u_max: [3.0, 3.0, 1.5],
            du_min: [-0.25, -0.25, -0.15],
            du_max: [0.25, 0.25, 0.15],
        }
    }
}

fn symmetric_psd(m: &[[f64; 3]; 3]) -> bool {
    let mat = Matrix3::from_fn(|i, j| m[i][j]);
    if (mat - mat.transpose()).amax() > 1e-12 * (1.0 + mat.amax()) {
        return false;
    }
    mat.symmetric_eigenvalues().iter().all(|&e| e >= -1e-12 * (1.0 + mat.amax()))
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), MpcError> {
        let bad = |m: &str| Err(MpcError::InvalidConfig(m.to_string()));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad("dt must be positive");
        }
        if self.nc < 1 || self.nc > self.np {
            return bad("need 1 <= nc <= np");
        }
        if !symmetric_psd(&self.q) {
            return bad("q must be symmetric positive semidefinite");
        }
        if !symmetric_psd(&self.r) {
            return bad("r must be symmetric positive semidefinite");
        }
        for c in 0..3 {
            if !(self.u_min[c] < self.u_max[c]) {
                return bad("u_min must be below u_max");
            }
            if !(self.du_min[c] <= self.du_max[c]) {
                return bad("du_min must not exceed du_max");
            }
        }
        Ok(())
    }

    /// Narrows the input box to the vehicle's speed and yaw-rate limits.
    pub fn clamped_to(&self, v_max: f64, omega_max: f64) -> Self {
        let mut c = self.clone();
        let lim = [v_max, v_max, omega_max];
        for k in 0..3 {
            c.u_min[k] = c.u_min[k].max(-lim[k]);
            c.u_max[k] = c.u_max[k].min(lim[k]);
        }
        c
    }
}

/// Stacked prediction matrices `(Ψ, Θ)`.
pub fn build_prediction(cfg: &MpcConfig) -> (DMatrix<f64>, DMatrix<f64>) {
    let (np, nc) = (cfg.np, cfg.nc);
    let mut psi = DMatrix::zeros(3 * np, 3);
    let mut theta = DMatrix::zeros(3 * np, 3 * nc);
    for r in 0..np {
        for k in 0..3 {
            psi[(3 * r + k, k)] = 1.0;
        }
        for c in 0..nc.min(r + 1) {
            for k in 0..3 {
                theta[(3 * r + k, 3 * c + k)] = cfg.dt;
            }
        }
    }
    (psi, theta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub psi: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub nc: usize,
    pub u_min: [f64; 3],
    pub u_max: [f64; 3],
    pub du_min: [f64; 3],
    pub du_max: [f64; 3],
    pub u_prev: [f64; 3],
}

/// Builds the tracking QP. `reference` holds `(x, y, φ)` for steps
/// `1..=np`; headings must already be continuous with `state.phi`.
pub fn build_qp(state: &Pose2, reference: &[f64], u_prev: [f64; 3], cfg: &MpcConfig) -> Result<MpcProblem, MpcError> {
    cfg.validate()?;
    let np = cfg.np;
    if reference.len() != 3 * np {
        return Err(MpcError::InvalidConfig(format!(
            "reference has {} entries, expected {}",
            reference.len(),
            3 * np
        )));
    }
    let mut prev = state.phi;
    for i in 0..np {
        let phi = reference[3 * i + 2];
        if (phi - prev).abs() > std::f64::consts::PI {
            return Err(MpcError::HeadingWrapMismatch { index: i });
        }
        prev = phi;
    }
    let (psi, theta) = build_prediction(cfg);
    let mut qbar = DMatrix::zeros(3 * np, 3 * np);
    for s in 0..np {
        for i in 0..3 {
            for j in 0..3 {
                qbar[(3 * s + i, 3 * s + j)] = cfg.q[i][j];
            }
        }
    }
    let mut rbar = DMatrix::zeros(3 * cfg.nc, 3 * cfg.nc);
    for s in 0..cfg.nc {
        for i in 0..3 {
            for j in 0..3 {
                rbar[(3 * s + i, 3 * s + j)] = cfg.r[i][j];
            }
        }
    }
    let x = DVector::from_column_slice(&[state.x, state.y, state.phi]);
    let y = DVector::from_column_slice(reference);
    let tq = theta.transpose() * &qbar;
    let h = &tq * &theta + rbar;
    let g = &tq * (&psi * x - y);
    Ok(MpcProblem {
        psi,
        theta,
        h,
        g,
        nc: cfg.nc,
        u_min: cfg.u_min,
        u_max: cfg.u_max,
        du_min: cfg.du_min,
        du_max: cfg.du_max,
        u_prev,
    })
}

impl MpcProblem {
    pub fn dim(&self) -> usize {
        3 * self.nc
    }

    /// Box and first-difference constraints, four per variable in the
    /// order lower box, upper box, lower rate, upper rate. Infinite bounds
    /// are omitted.
    pub fn constraints(&self) -> Vec<LinearConstraint> {
        let mut out = Vec::with_capacity(4 * self.dim());
        for k in 0..self.nc {
            for c in 0..3 {
                let i = 3 * k + c;
                if self.u_min[c].is_finite() {
                    out.push(LinearConstraint::new(vec![(i, 1.0)], self.u_min[c]));
                }
                if self.u_max[c].is_finite() {
                    out.push(LinearConstraint::new(vec![(i, -1.0)], -self.u_max[c]));
                }
                let (lo, hi, terms_lo, terms_hi) = if k == 0 {
                    (
                        self.du_min[c] + self.u_prev[c],
                        self.du_max[c] + self.u_prev[c],
                        vec![(i, 1.0)],
                        vec![(i, -1.0)],
                    )
                } else {
                    (
                        self.du_min[c],
                        self.du_max[c],
                        vec![(i, 1.0), (i - 3, -1.0)],
                        vec![(i, -1.0), (i - 3, 1.0)],
                    )
                };
                if lo.is_finite() {
                    out.push(LinearConstraint::new(terms_lo, lo));
                }
                if hi.is_finite() {
                    out.push(LinearConstraint::new(terms_hi, -hi));
                }
            }
        }
        out
    }

    /// A feasible point as close to `target` as the constraint chain allows,
    /// or `Infeasible` when the feasible set is empty.
    pub fn feasible_point(&self, target: &[f64]) -> Result<Vec<f64>, MpcError> {
        let nc = self.nc;
        let mut x = vec![0.0; 3 * nc];
        for c in 0..3 {
            let mut lo = vec![0.0; nc];
            let mut hi = vec![0.0; nc];
            let (mut plo, mut phi) = (self.u_prev[c], self.u_prev[c]);
            for k in 0..nc {
                lo[k] = self.u_min[c].max(plo + self.du_min[c]);
                hi[k] = self.u_max[c].min(phi + self.du_max[c]);
                if lo[k] > hi[k] {
                    return Err(MpcError::Infeasible);
                }
                plo = lo[k];
                phi = hi[k];
            }
            let mut next: Option<f64> = None;
            for k in (0..nc).rev() {
                let (mut a, mut b) = (lo[k], hi[k]);
                if let Some(n) = next {
                    a = a.max(n - self.du_max[c]);
                    b = b.min(n - self.du_min[c]);
                    if a > b {
                        let m = 0.5 * (a + b);
                        a = m;
                        b = m;
                    }
                }
                let v = target[3 * k + c].clamp(a, b);
                x[3 * k + c] = v;
                next = Some(v);
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpOutcome {
    pub u: Vec<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

fn unconstrained(h: &DMatrix<f64>, g: &DVector<f64>) -> Vec<f64> {
    match h.clone().cholesky() {
        Some(ch) => ch.solve(&(-g)).iter().copied().collect(),
        None => vec![0.0; g.len()],
    }
}

/// Solves the QP from a cold start.
pub fn solve_qp(prob: &MpcProblem) -> Result<QpOutcome, MpcError> {
    solve_qp_warm(prob, None, &[])
}

/// Solves the QP starting near `guess` with `working` as the initial
/// working set.
pub fn solve_qp_warm(prob: &MpcProblem, guess: Option<&[f64]>, working: &[usize]) -> Result<QpOutcome, MpcError> {
    let h = qp::regularize(&prob.h)?;
    let target = match guess {
        Some(g) if g.len() == prob.dim() => g.to_vec(),
        _ => unconstrained(&h, &prob.g),
    };
    let x0 = prob.feasible_point(&target)?;
    let cons = prob.constraints();
    let sol = qp::solve_active_set(&h, &prob.g, &cons, &x0, working, &QpOptions::default())?;
    Ok(QpOutcome {
        u: sol.x,
        active: sol.active,
        iterations: sol.iterations,
        kkt_residual: sol.kkt_residual,
    })
}

/// Reference poses at `t_now + dt … t_now + np·dt`, clamped to the final
/// pose and unwrapped to be continuous with `current_phi`.
pub fn sample_reference(traj: &MincoTrajectory, t_now: f64, current_phi: f64, cfg: &MpcConfig) -> Vec<f64> {
    let total = traj.total_duration();
    let mut out = Vec::with_capacity(3 * cfg.np);
    let mut prev = current_phi;
    for i in 1..=cfg.np {
        let t = (t_now + i as f64 * cfg.dt).min(total);
        let p = traj.pose_at(t);
        let phi = unwrap_near(p.phi, prev);
        out.extend_from_slice(&[p.x, p.y, phi]);
        prev = phi;
    }
    out
}

/// One stateless controller step; returns the first input block.
pub fn mpc_step(state: &Pose2, traj: &MincoTrajectory, t_now: f64, u_prev: [f64; 3], cfg: &MpcConfig) -> Result<[f64; 3], MpcError> {
    let reference = sample_reference(traj, t_now, state.phi, cfg);
    let prob = build_qp(state, &reference, u_prev, cfg)?;
    let out = solve_qp(&prob)?;
    Ok([out.u[0], out.u[1], out.u[2]])
}

/// Result of one controller step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub u: [f64; 3],
    pub reference: Pose2,
    pub iterations: usize,
}

/// Controller that warm-starts each QP from the previous solution.
#[derive(Debug, Clone)]
pub struct MpcController {
    cfg: MpcConfig,
    u_prev: [f64; 3],
    last: Option<(Vec<f64>, Vec<usize>)>,
}

impl MpcController {
    pub fn new(cfg: MpcConfig) -> Result<Self, MpcError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            u_prev: [0.0; 3],
            last: None,
        })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn step(&mut self, state: &Pose2, traj: &MincoTrajectory, t_now: f64) -> Result<StepResult, MpcError> {
        let reference = sample_reference(traj, t_now, state.phi, &self.cfg);
        let prob = build_qp(state, &reference, self.u_prev, &self.cfg)?;
        let guess = self.last.as_ref().map(|(u, _)| {
            // shift one block forward, repeating the last block
            let mut s = u[3.min(u.len())..].to_vec();
            s.extend_from_slice(&u[u.len() - 3..]);
            s
        });
        let working: &[usize] = self.last.as_ref().map_or(&[], |(_, w)| w.as_slice());
        let out = solve_qp_warm(&prob, guess.as_deref(), working)?;
        let u = [out.u[0], out.u[1], out.u[2]];
        self.u_prev = u;
        self.last = Some((out.u, out.active));
        Ok(StepResult {
            u,
            reference: Pose2 {
                x: reference[0],
                y: reference[1],
                phi: reference[2],
            },
            iterations: out.iterations,
        })
    }
}
