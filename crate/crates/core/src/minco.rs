//! Minimum-jerk quintic splines parameterized by interior waypoints and
//! segment durations.
//!
//! A trajectory with `M` segments has `6M` coefficients per component,
//! fixed by position/velocity/acceleration at both ends, by the waypoint
//! position on both sides of every interior junction and by continuity of
//! derivatives 1..=4 there. Components are `(x, y, phi)`.

use serde::{Deserialize, Serialize};

use crate::banded::{BandedLu, BandedMatrix};
use crate::geometry::Pose2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MincoError {
    #[error("segment {index} has non-positive duration {value}")]
    NonPositiveDuration { index: usize, value: f64 },
    #[error("coefficient system is singular")]
    SingularSystem,
    #[error("expected {expected} waypoints for {segments} segments, got {got}")]
    WaypointCount { expected: usize, got: usize, segments: usize },
    #[error("time {t} outside [0, {total}]")]
    OutOfDomain { t: f64, total: f64 },
    #[error("derivative order {0} exceeds 5")]
    BadOrder(usize),
}

pub type Vec3 = [f64; 3];

/// Position, velocity and acceleration at one end of the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EndState {
    pub pos: Vec3,
    pub vel: Vec3,
    pub acc: Vec3,
}

impl EndState {
    pub fn at_rest(pos: Vec3) -> Self {
        Self {
            pos,
            ..Default::default()
        }
    }

    fn row(&self, order: usize) -> Vec3 {
        match order {
            0 => self.pos,
            1 => self.vel,
            _ => self.acc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Boundary {
    pub start: EndState,
    pub end: EndState,
}

/// Shortest durations accepted by the coefficient solve.
pub const MIN_SOLVABLE_DURATION: f64 = 1e-6;

/// Coefficients of `c_0..c_5` in `d^order/dt^order sum c_i t^i`.
#[inline]
pub fn basis(order: usize, t: f64) -> [f64; 6] {
    let mut out = [0.0; 6];
    let mut tp = 1.0;
    for i in order..6 {
        let mut fac = 1.0;
        for k in 0..order {
            fac *= (i - k) as f64;
        }
        out[i] = fac * tp;
        tp *= t;
    }
    out
}

#[inline]
fn eval_poly(c: &[Vec3; 6], order: usize, t: f64) -> Vec3 {
    let b = basis(order, t);
    let mut out = [0.0; 3];
    for i in order..6 {
        for d in 0..3 {
            out[d] += b[i] * c[i][d];
        }
    }
    out
}

/// One row of the coefficient system: `sign * P_seg^(order)(at_end ? T : 0)`
/// summed over its terms.
#[derive(Debug, Clone, Copy)]
struct Term {
    seg: usize,
    order: usize,
    at_end: bool,
    sign: f64,
}

fn row_terms(m: usize, row: usize) -> [Option<Term>; 2] {
    let t = |seg, order, at_end, sign| Some(Term { seg, order, at_end, sign });
    let n = 6 * m;
    if row < 3 {
        return [t(0, row, false, 1.0), None];
    }
    if row >= n - 3 {
        return [t(m - 1, row - (n - 3), true, 1.0), None];
    }
    let i = (row - 3) / 6;
    match (row - 3) % 6 {
        0 => [t(i, 0, true, 1.0), None],
        k @ 1..=4 => [t(i, k, true, 1.0), t(i + 1, k, false, -1.0)],
        _ => [t(i + 1, 0, false, 1.0), None],
    }
}

/// A piecewise-quintic trajectory in `(x, y, phi)`.
#[derive(Debug, Clone)]
pub struct MincoTrajectory {
    boundary: Boundary,
    waypoints: Vec<Vec3>,
    durations: Vec<f64>,
    coeffs: Vec<[Vec3; 6]>,
    starts: Vec<f64>,
    lu: BandedLu,
}

impl PartialEq for MincoTrajectory {
    fn eq(&self, other: &Self) -> bool {
        self.boundary == other.boundary
            && self.waypoints == other.waypoints
            && self.durations == other.durations
            && self.coeffs == other.coeffs
    }
}

/// Solves for the coefficients given waypoints, durations and boundary.
pub fn build_minco(waypoints: &[Vec3], durations: &[f64], boundary: Boundary) -> Result<MincoTrajectory, MincoError> {
    let m = durations.len();
    if m == 0 || waypoints.len() + 1 != m {
        return Err(MincoError::WaypointCount {
            expected: m.saturating_sub(1),
            got: waypoints.len(),
            segments: m,
        });
    }
    for (index, &value) in durations.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(MincoError::NonPositiveDuration { index, value });
        }
        if value < MIN_SOLVABLE_DURATION {
            return Err(MincoError::SingularSystem);
        }
    }
    let n = 6 * m;
    let mut a = BandedMatrix::zeros(n, 3, 3);
    for row in 0..n {
        for term in row_terms(m, row).into_iter().flatten() {
            let t = if term.at_end { durations[term.seg] } else { 0.0 };
            let b = basis(term.order, t);
            for i in term.order..6 {
                if b[i] != 0.0 {
                    a.set(row, 6 * term.seg + i, term.sign * b[i]);
                }
            }
        }
    }
    let lu = a.factor(1e-300).ok_or(MincoError::SingularSystem)?;
    let mut rhs = vec![[0.0; 3]; n];
    for k in 0..3 {
        rhs[k] = boundary.start.row(k);
        rhs[n - 3 + k] = boundary.end.row(k);
    }
    for (i, q) in waypoints.iter().enumerate() {
        rhs[6 * i + 3] = *q;
        rhs[6 * i + 8] = *q;
    }
    lu.solve(&mut rhs);
    if rhs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(MincoError::SingularSystem);
    }
    let coeffs = rhs
        .chunks_exact(6)
        .map(|c| [c[0], c[1], c[2], c[3], c[4], c[5]])
        .collect();
    let mut starts = Vec::with_capacity(m);
    let mut acc = 0.0;
    for &t in durations {
        starts.push(acc);
        acc += t;
    }
    Ok(MincoTrajectory {
        boundary,
        waypoints: waypoints.to_vec(),
        durations: durations.to_vec(),
        coeffs,
        starts,
        lu,
    })
}

/// Partials of a cost with respect to the coefficients and (explicitly)
/// the durations, before propagation through the coefficient map.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffGrads {
    pub d_coeffs: Vec<[Vec3; 6]>,
    pub d_durations: Vec<f64>,
}

impl CoeffGrads {
    pub fn zeros(segments: usize) -> Self {
        Self {
            d_coeffs: vec![[[0.0; 3]; 6]; segments],
            d_durations: vec![0.0; segments],
        }
    }

    /// Accumulates `w * d cost / d P_seg^(order)(T_seg)` given the partial
    /// `g` of the cost in that evaluated quantity.
    pub fn add_at_end(&mut self, traj: &MincoTrajectory, seg: usize, order: usize, g: Vec3) {
        let t = traj.durations[seg];
        let b = basis(order, t);
        for i in order..6 {
            for d in 0..3 {
                self.d_coeffs[seg][i][d] += g[d] * b[i];
            }
        }
        let next = eval_poly(&traj.coeffs[seg], order + 1, t);
        self.d_durations[seg] += (0..3).map(|d| g[d] * next[d]).sum::<f64>();
    }
}

/// A scalar cost with gradients in the free variables `(q, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWithGrads {
    pub value: f64,
    pub grad_q: Vec<Vec3>,
    pub grad_t: Vec<f64>,
}

impl CostWithGrads {
    pub fn zeros(segments: usize) -> Self {
        Self {
            value: 0.0,
            grad_q: vec![[0.0; 3]; segments.saturating_sub(1)],
            grad_t: vec![0.0; segments],
        }
    }

    /// `self += w * other`
    pub fn add_scaled(&mut self, w: f64, other: &CostWithGrads) {
        self.value += w * other.value;
        for (a, b) in self.grad_q.iter_mut().zip(&other.grad_q) {
            for d in 0..3 {
                a[d] += w * b[d];
            }
        }
        for (a, b) in self.grad_t.iter_mut().zip(&other.grad_t) {
            *a += w * b;
        }
    }
}

impl MincoTrajectory {
    pub fn segment_count(&self) -> usize {
        self.durations.len()
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn waypoints(&self) -> &[Vec3] {
        &self.waypoints
    }

    pub fn boundary(&self) -> &Boundary {
        &self.boundary
    }

    pub fn coeffs(&self) -> &[[Vec3; 6]] {
        &self.coeffs
    }

    pub fn total_duration(&self) -> f64 {
        self.starts[self.starts.len() - 1] + self.durations[self.durations.len() - 1]
    }

    /// Segment index and local time for global time `t` (clamped).
    #[inline]
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let m = self.durations.len();
        let j = match self.starts.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(j) => j,
            Err(0) => 0,
            Err(j) => j - 1,
        }
        .min(m - 1);
        (j, (t - self.starts[j]).clamp(0.0, self.durations[j]))
    }

    /// `d^order/dt^order` of the trajectory at global time `t`.
    pub fn eval(&self, t: f64, order: usize) -> Result<Vec3, MincoError> {
        if order > 5 {
            return Err(MincoError::BadOrder(order));
        }
        let total = self.total_duration();
        if !(t >= 0.0 && t <= total) {
            return Err(MincoError::OutOfDomain { t, total });
        }
        Ok(self.eval_clamped(t, order))
    }

    /// Like [`eval`](Self::eval) with `t` clamped to the domain.
    #[inline]
    pub fn eval_clamped(&self, t: f64, order: usize) -> Vec3 {
        let (j, tau) = self.locate(t);
        eval_poly(&self.coeffs[j], order, tau)
    }

    /// Evaluates segment `seg` at local time `tau`.
    #[inline]
    pub fn eval_segment(&self, seg: usize, tau: f64, order: usize) -> Vec3 {
        eval_poly(&self.coeffs[seg], order, tau)
    }

    pub fn pose_at(&self, t: f64) -> Pose2 {
        let p = self.eval_clamped(t, 0);
        Pose2 {
            x: p[0],
            y: p[1],
            phi: p[2],
        }
    }

    /// Position at the end of every segment.
    pub fn junction_states(&self, order: usize) -> Vec<Vec3> {
        (0..self.segment_count())
            .map(|j| self.eval_segment(j, self.durations[j], order))
            .collect()
    }

    /// Maps coefficient/duration partials to gradients in `(q, T)` through
    /// the adjoint of the coefficient system.
    pub fn propagate(&self, value: f64, partial: &CoeffGrads) -> CostWithGrads {
        let m = self.segment_count();
        let n = 6 * m;
        let mut lambda: Vec<Vec3> = partial.d_coeffs.iter().flat_map(|c| c.iter().copied()).collect();
        debug_assert_eq!(lambda.len(), n);
        self.lu.solve_transpose(&mut lambda);

        let mut grad_q = vec![[0.0; 3]; m - 1];
        for (i, g) in grad_q.iter_mut().enumerate() {
            for d in 0..3 {
                g[d] = lambda[6 * i + 3][d] + lambda[6 * i + 8][d];
            }
        }
        let mut grad_t = partial.d_durations.clone();
        for row in 0..n {
            for term in row_terms(m, row).into_iter().flatten() {
                if !term.at_end {
                    continue;
                }
                let j = term.seg;
                let dv = eval_poly(&self.coeffs[j], term.order + 1, self.durations[j]);
                let dot: f64 = (0..3).map(|d| lambda[row][d] * dv[d]).sum();
                grad_t[j] -= term.sign * dot;
            }
        }
        CostWithGrads { value, grad_q, grad_t }
    }

    /// Serializable snapshot of the trajectory.
    pub fn to_document(&self) -> TrajectoryDocument {
        TrajectoryDocument {
            schema: 1,
            boundary: self.boundary,
            waypoints: self.waypoints.clone(),
            durations: self.durations.clone(),
            coefficients: self.coeffs.clone(),
        }
    }

    /// Uniformly sampled poses at spacing `dt`, including the final time.
    pub fn sample_poses(&self, dt: f64) -> Vec<(f64, Pose2)> {
        let total = self.total_duration();
        let n = (total / dt).ceil() as usize;
        (0..=n)
            .map(|k| {
                let t = (k as f64 * dt).min(total);
                (t, self.pose_at(t))
            })
            .collect()
    }
}

/// On-disk trajectory representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryDocument {
    pub schema: u32,
    pub boundary: Boundary,
    pub waypoints: Vec<Vec3>,
    pub durations: Vec<f64>,
    /// `coefficients[segment][power][component]`
    pub coefficients: Vec<[Vec3; 6]>,
}

impl TrajectoryDocument {
    /// Rebuilds the trajectory from waypoints, durations and boundary.
    pub fn into_trajectory(self) -> Result<MincoTrajectory, MincoError> {
        build_minco(&self.waypoints, &self.durations, self.boundary)
    }
}

/// Closed-form `sum_j int_0^T_j |P_j'''(t)|^2 dt` with gradients.
pub fn energy_cost_with_grads(traj: &MincoTrajectory) -> CostWithGrads {
    let m = traj.segment_count();
    let mut partial = CoeffGrads::zeros(m);
    let mut value = 0.0;
    for j in 0..m {
        let c = &traj.coeffs[j];
        let t = traj.durations[j];
        let (t2, t3, t4, t5) = (t * t, t * t * t, t * t * t * t, t * t * t * t * t);
        for d in 0..3 {
            let (c3, c4, c5) = (c[3][d], c[4][d], c[5][d]);
            value += 36.0 * c3 * c3 * t
                + 144.0 * c3 * c4 * t2
                + (192.0 * c4 * c4 + 240.0 * c3 * c5) * t3
                + 720.0 * c4 * c5 * t4
                + 720.0 * c5 * c5 * t5;
            partial.d_coeffs[j][3][d] = 72.0 * c3 * t + 144.0 * c4 * t2 + 240.0 * c5 * t3;
            partial.d_coeffs[j][4][d] = 144.0 * c3 * t2 + 384.0 * c4 * t3 + 720.0 * c5 * t4;
            partial.d_coeffs[j][5][d] = 240.0 * c3 * t3 + 720.0 * c4 * t4 + 1440.0 * c5 * t5;
        }
        let jerk = eval_poly(c, 3, t);
        partial.d_durations[j] = jerk.iter().map(|v| v * v).sum();
    }
    traj.propagate(value, &partial)
}

/// Total duration with its (all-ones) gradient.
pub fn time_cost_with_grads(durations: &[f64]) -> CostWithGrads {
    let m = durations.len();
    CostWithGrads {
        value: durations.iter().sum(),
        grad_q: vec![[0.0; 3]; m.saturating_sub(1)],
        grad_t: vec![1.0; m],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rest(a: Vec3, b: Vec3) -> Boundary {
        Boundary {
            start: EndState::at_rest(a),
            end: EndState::at_rest(b),
        }
    }

    #[test]
    fn single_segment_rest_to_rest() {
        let tr = build_minco(&[], &[1.0], rest([0.0; 3], [1.0, 0.0, 0.0])).unwrap();
        let c = tr.coeffs()[0];
        let expect = [0.0, 0.0, 0.0, 10.0, -15.0, 6.0];
        for i in 0..6 {
            assert!((c[i][0] - expect[i]).abs() < 1e-10, "c{i} = {}", c[i][0]);
            assert_eq!(c[i][1], 0.0);
        }
        let e = energy_cost_with_grads(&tr);
        assert!((e.value - 720.0).abs() < 1e-8);
    }

    #[test]
    fn constant_trajectory() {
        let p = [2.0, -1.0, 0.3];
        let tr = build_minco(&[p, p], &[1.0, 0.7, 2.0], rest(p, p)).unwrap();
        for seg in tr.coeffs() {
            assert_eq!(seg[0], p);
            for i in 1..6 {
                assert!(seg[i].iter().all(|v| v.abs() < 1e-12));
            }
        }
        let e = energy_cost_with_grads(&tr);
        assert!(e.value.abs() < 1e-20);
        assert!(e.grad_q.iter().flatten().all(|v| v.abs() < 1e-10));
        assert!(e.grad_t.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn eval_boundaries_and_domain() {
        let b = Boundary {
            start: EndState {
                pos: [1.0, 2.0, 0.1],
                vel: [0.5, 0.0, 0.0],
                acc: [0.0, 0.1, 0.0],
            },
            end: EndState::at_rest([5.0, 3.0, 1.0]),
        };
        let tr = build_minco(&[[2.0, 2.5, 0.3], [4.0, 2.0, 0.6]], &[1.0, 1.5, 2.0], b).unwrap();
        assert_eq!(tr.eval(0.0, 0).unwrap(), tr.coeffs()[0][0]);
        assert_eq!(tr.eval(0.0, 1).unwrap(), tr.coeffs()[0][1]);
        let end = tr.eval(4.5, 0).unwrap();
        for d in 0..3 {
            assert!((end[d] - b.end.pos[d]).abs() < 1e-9);
        }
        assert!(matches!(tr.eval(4.6, 0), Err(MincoError::OutOfDomain { .. })));
        assert!(matches!(tr.eval(1.0, 6), Err(MincoError::BadOrder(6))));
        let snap = tr.eval(0.5, 5).unwrap();
        for d in 0..3 {
            assert!((snap[d] - 120.0 * tr.coeffs()[0][5][d]).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_durations() {
        let b = rest([0.0; 3], [1.0; 3]);
        assert!(matches!(
            build_minco(&[[0.5; 3]], &[1.0, 0.0], b),
            Err(MincoError::NonPositiveDuration { index: 1, .. })
        ));
        assert_eq!(build_minco(&[[0.5; 3]], &[1.0, 1e-9], b).unwrap_err(), MincoError::SingularSystem);
        assert!(matches!(build_minco(&[], &[1.0, 1.0], b), Err(MincoError::WaypointCount { .. })));
    }

    #[test]
    fn time_cost() {
        let c = time_cost_with_grads(&[1.0, 2.0]);
        assert_eq!(c.value, 3.0);
        assert_eq!(c.grad_t, vec![1.0, 1.0]);
        assert_eq!(c.grad_q, vec![[0.0; 3]]);
        assert_eq!(time_cost_with_grads(&[0.5]).value, 0.5);
    }

    #[test]
    fn document_round_trip() {
        let tr = build_minco(&[[1.0, 1.0, 0.2]], &[1.2, 0.8], rest([0.0; 3], [2.0, 0.0, 0.0])).unwrap();
        let json = serde_json::to_string(&tr.to_document()).unwrap();
        let back: TrajectoryDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(back.coefficients, tr.coeffs());
        assert_eq!(back.into_trajectory().unwrap(), tr);
    }
}
