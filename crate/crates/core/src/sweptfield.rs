//! Trajectory-relative signed distance field of the swept area.
//!
//! Every grid cell stores the minimum over time of the footprint signed
//! distance at the cell centre, together with the time attaining it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{pose_sdf, unwrap_near, Pose2, VehicleParams};
use crate::minco::MincoTrajectory;
use crate::worldmodel::Region;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SweepError {
    #[error("trajectory footprint leaves the field region at t = {time:.3} s")]
    RegionTooSmall { time: f64 },
    #[error("field resolution must be positive")]
    BadResolution,
    #[error("region is empty or degenerate")]
    EmptyRegion,
    #[error("pose sequence needs at least one pose and a positive time step")]
    EmptyMotion,
    #[error("failed to start worker pool: {0}")]
    ThreadPool(String),
}

/// A rigid planar motion over a finite time span.
pub trait Motion: Sync {
    fn time_span(&self) -> (f64, f64);
    /// Pose at `t`; the heading is continuous (not wrapped).
    fn pose(&self, t: f64) -> Pose2;
    /// `(dx/dt, dy/dt, dphi/dt)` at `t`.
    fn pose_rate(&self, t: f64) -> [f64; 3];
    /// Arc length of the centre path.
    fn arc_length(&self) -> f64;
}

impl Motion for MincoTrajectory {
    fn time_span(&self) -> (f64, f64) {
        (0.0, self.total_duration())
    }

    #[inline]
    fn pose(&self, t: f64) -> Pose2 {
        self.pose_at(t)
    }

    #[inline]
    fn pose_rate(&self, t: f64) -> [f64; 3] {
        self.eval_clamped(t, 1)
    }

    fn arc_length(&self) -> f64 {
        // 5-point Gauss-Legendre on 16 panels per segment
        const NODES: [f64; 5] = [
            -0.906_179_845_938_664,
            -0.538_469_310_105_683,
            0.0,
            0.538_469_310_105_683,
            0.906_179_845_938_664,
        ];
        const WEIGHTS: [f64; 5] = [
            0.236_926_885_056_189,
            0.478_628_670_499_366,
            0.568_888_888_888_889,
            0.478_628_670_499_366,
            0.236_926_885_056_189,
        ];
        const PANELS: usize = 16;
        let mut total = 0.0;
        for (j, &dur) in self.durations().iter().enumerate() {
            let h = dur / PANELS as f64;
            for p in 0..PANELS {
                let mid = (p as f64 + 0.5) * h;
                for (x, w) in NODES.iter().zip(WEIGHTS) {
                    let v = self.eval_segment(j, mid + 0.5 * h * x, 1);
                    total += 0.5 * h * w * v[0].hypot(v[1]);
                }
            }
        }
        total
    }
}

/// Poses at uniform time steps joined by linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    t0: f64,
    dt: f64,
    poses: Vec<Pose2>,
}

impl PoseSequence {
    /// Headings are unwrapped along the sequence.
    pub fn new(t0: f64, dt: f64, poses: &[Pose2]) -> Result<Self, SweepError> {
        if poses.is_empty() || !(dt > 0.0) {
            return Err(SweepError::EmptyMotion);
        }
        let mut out: Vec<Pose2> = Vec::with_capacity(poses.len());
        for p in poses {
            let phi = match out.last() {
                Some(prev) => unwrap_near(p.phi, prev.phi),
                None => p.phi,
            };
            out.push(Pose2 { x: p.x, y: p.y, phi });
        }
        Ok(Self { t0, dt, poses: out })
    }

    pub fn poses(&self) -> &[Pose2] {
        &self.poses
    }

    #[inline]
    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.poses.len();
        if n == 1 {
            return (0, 0.0);
        }
        let s = ((t - self.t0) / self.dt).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        (i, s - i as f64)
    }
}

impl Motion for PoseSequence {
    fn time_span(&self) -> (f64, f64) {
        (self.t0, self.t0 + self.dt * (self.poses.len() - 1) as f64)
    }

    fn pose(&self, t: f64) -> Pose2 {
        let (i, a) = self.locate(t);
        if self.poses.len() == 1 {
            return self.poses[0];
        }
        let (p, q) = (self.poses[i], self.poses[i + 1]);
        Pose2 {
            x: p.x + a * (q.x - p.x),
            y: p.y + a * (q.y - p.y),
            phi: p.phi + a * (q.phi - p.phi),
        }
    }

    fn pose_rate(&self, t: f64) -> [f64; 3] {
        if self.poses.len() == 1 {
            return [0.0; 3];
        }
        let (i, _) = self.locate(t);
        let (p, q) = (self.poses[i], self.poses[i + 1]);
        [(q.x - p.x) / self.dt, (q.y - p.y) / self.dt, (q.phi - p.phi) / self.dt]
    }

    fn arc_length(&self) -> f64 {
        self.poses.windows(2).map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y)).sum()
    }
}

/// Parameters of the per-point time minimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchOptions {
    /// Equally spaced samples of the coarse scan (including both ends).
    pub coarse_samples: usize,
    pub armijo_c: f64,
    pub shrink: f64,
    /// Refinement stops once an accepted step moves less than this, seconds.
    pub time_tol: f64,
    pub max_iterations: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            coarse_samples: 32,
            armijo_c: 1e-4,
            shrink: 0.5,
            time_tol: 1e-4,
            max_iterations: 100,
        }
    }
}

#[derive(Clone, Copy)]
struct Footprint {
    hl: f64,
    hw: f64,
}

#[inline]
fn sdf_at<M: Motion + ?Sized>(p: [f64; 2], motion: &M, fp: Footprint, t: f64) -> f64 {
    let q = motion.pose(t);
    pose_sdf(p, q.x, q.y, q.phi, fp.hl, fp.hw).value
}

#[inline]
fn sdf_and_rate<M: Motion + ?Sized>(p: [f64; 2], motion: &M, fp: Footprint, t: f64) -> (f64, f64) {
    let q = motion.pose(t);
    let r = motion.pose_rate(t);
    let s = pose_sdf(p, q.x, q.y, q.phi, fp.hl, fp.hw);
    (s.value, s.d_translation[0] * r[0] + s.d_translation[1] * r[1] + s.d_heading * r[2])
}

/// Minimizes the footprint signed distance at `p` over `t in [t_min, t_max]`.
///
/// A coarse scan brackets the candidate minima; each candidate whose
/// sampled value is within one sample-to-sample variation of the best is
/// refined by projected descent with Armijo backtracking.
pub fn min_time_distance<M: Motion + ?Sized>(
    p: [f64; 2],
    motion: &M,
    veh: &VehicleParams,
    t_min: f64,
    t_max: f64,
    opts: &SearchOptions,
) -> (f64, f64) {
    let fp = Footprint {
        hl: 0.5 * veh.length,
        hw: 0.5 * veh.width,
    };
    min_time_distance_fp(p, motion, fp, t_min, t_max, opts)
}

fn min_time_distance_fp<M: Motion + ?Sized>(
    p: [f64; 2],
    motion: &M,
    fp: Footprint,
    t_min: f64,
    t_max: f64,
    opts: &SearchOptions,
) -> (f64, f64) {
    if !(t_max > t_min) {
        return (t_min, sdf_at(p, motion, fp, t_min));
    }
    let k = opts.coarse_samples.max(2);
    let h = (t_max - t_min) / (k - 1) as f64;
    let time = |i: usize| if i == k - 1 { t_max } else { t_min + i as f64 * h };
    let mut samples = [0.0f64; 64];
    let mut heap_samples = Vec::new();
    let g: &mut [f64] = if k <= samples.len() {
        &mut samples[..k]
    } else {
        heap_samples.resize(k, 0.0);
        &mut heap_samples
    };
    for (i, gi) in g.iter_mut().enumerate() {
        *gi = sdf_at(p, motion, fp, time(i));
    }
    let mut best_i = 0;
    let mut variation = 0.0f64;
    for i in 0..k {
        if g[i] < g[best_i] {
            best_i = i;
        }
        if i > 0 {
            variation = variation.max((g[i] - g[i - 1]).abs());
        }
    }
    let mut best = (time(best_i), g[best_i]);
    let threshold = g[best_i] + variation;
    for i in 0..k {
        let left = i == 0 || g[i] <= g[i - 1];
        let right = i == k - 1 || g[i] <= g[i + 1];
        if !(left && right) || g[i] > threshold {
            continue;
        }
        let r = refine(p, motion, fp, time(i), g[i], h, t_min, t_max, opts);
        if r.1 < best.1 {
            best = r;
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn refine<M: Motion + ?Sized>(
    p: [f64; 2],
    motion: &M,
    fp: Footprint,
    t0: f64,
    g0: f64,
    h: f64,
    t_min: f64,
    t_max: f64,
    opts: &SearchOptions,
) -> (f64, f64) {
    let (mut t, mut gt) = (t0, g0);
    let mut step = h;
    for _ in 0..opts.max_iterations {
        let (_, slope) = sdf_and_rate(p, motion, fp, t);
        if slope == 0.0 {
            break;
        }
        let dir = -slope.signum();
        let mut moved = None;
        let mut trial = step;
        while trial >= opts.time_tol {
            let tn = (t + dir * trial).clamp(t_min, t_max);
            let dt = tn - t;
            if dt == 0.0 {
                break;
            }
            let gn = sdf_at(p, motion, fp, tn);
            if gn <= gt + opts.armijo_c * slope * dt && gn < gt {
                moved = Some((tn, gn, dt.abs()));
                break;
            }
            trial *= opts.shrink;
        }
        match moved {
            Some((tn, gn, len)) => {
                t = tn;
                gt = gn;
                if len < opts.time_tol {
                    break;
                }
                step = (2.0 * len).min(h);
            }
            None => break,
        }
    }
    (t, gt)
}

/// Grid of minimum signed distances and the times attaining them.
#[derive(Debug, Clone, PartialEq)]
pub struct SweptField {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major (`iy * width + ix`).
    pub f_star: Vec<f64>,
    pub t_star: Vec<f64>,
}

impl SweptField {
    #[inline]
    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin[0] + (ix as f64 + 0.5) * self.resolution,
            self.origin[1] + (iy as f64 + 0.5) * self.resolution,
        ]
    }

    pub fn cell_area(&self) -> f64 {
        self.resolution * self.resolution
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldOptions {
    pub search: SearchOptions,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
}

impl Default for FieldOptions {
    fn default() -> Self {
        Self {
            search: SearchOptions::default(),
            threads: 0,
        }
    }
}

/// Bounding box of the centre path grown by `margin`.
pub fn auto_region<M: Motion + ?Sized>(motion: &M, margin: f64) -> Region {
    let (t0, t1) = motion.time_span();
    let n = 400;
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for i in 0..=n {
        let t = t0 + (t1 - t0) * i as f64 / n as f64;
        let q = motion.pose(t);
        min = [min[0].min(q.x), min[1].min(q.y)];
        max = [max[0].max(q.x), max[1].max(q.y)];
    }
    Region::new(min, max).inflate(margin)
}

fn check_region<M: Motion + ?Sized>(motion: &M, veh: &VehicleParams, region: &Region) -> Result<(), SweepError> {
    let (t0, t1) = motion.time_span();
    let n = (((t1 - t0) / 0.01).ceil() as usize).clamp(1, 100_000);
    let corners = veh.corners();
    for i in 0..=n {
        let t = t0 + (t1 - t0) * i as f64 / n as f64;
        let q = motion.pose(t);
        if corners.iter().any(|c| !region.contains(q.transform_point(*c))) {
            return Err(SweepError::RegionTooSmall { time: t });
        }
    }
    Ok(())
}

pub(crate) fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, SweepError> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SweepError::ThreadPool(e.to_string()))?;
    Ok(pool.install(f))
}

/// Evaluates the minimum-over-time signed distance at every cell centre of
/// a grid covering `region`. Cells are independent; the result does not
/// depend on the number of worker threads.
pub fn compute_swept_field<M: Motion + ?Sized>(
    motion: &M,
    veh: &VehicleParams,
    region: Region,
    res: f64,
    opts: &FieldOptions,
) -> Result<SweptField, SweepError> {
    if !(res > 0.0) {
        return Err(SweepError::BadResolution);
    }
    if region.is_degenerate() {
        return Err(SweepError::EmptyRegion);
    }
    check_region(motion, veh, &region)?;
    let width = ((region.max[0] - region.min[0]) / res - 1e-9).ceil().max(1.0) as usize;
    let height = ((region.max[1] - region.min[1]) / res - 1e-9).ceil().max(1.0) as usize;
    let (t_min, t_max) = motion.time_span();
    let fp = Footprint {
        hl: 0.5 * veh.length,
        hw: 0.5 * veh.width,
    };
    let origin = region.min;
    let cells: Vec<(f64, f64)> = with_threads(opts.threads, || {
        (0..width * height)
            .into_par_iter()
            .with_min_len(64)
            .map(|idx| {
                let c = [
                    origin[0] + ((idx % width) as f64 + 0.5) * res,
                    origin[1] + ((idx / width) as f64 + 0.5) * res,
                ];
                let (t, f) = min_time_distance_fp(c, motion, fp, t_min, t_max, &opts.search);
                (f, t)
            })
            .collect()
    })?;
    let (f_star, t_star) = cells.into_iter().unzip();
    Ok(SweptField {
        origin,
        resolution: res,
        width,
        height,
        f_star,
        t_star,
    })
}

/// Area of cells whose centre lies inside the swept footprint.
pub fn swept_area(field: &SweptField) -> f64 {
    field.f_star.iter().filter(|&&f| f <= 0.0).count() as f64 * field.cell_area()
}

/// Reference area that the swept area is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Baseline {
    /// `W * centre-path length + L * W`.
    Ribbon,
    Custom { area: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaReport {
    pub swept_area: f64,
    pub baseline_area: f64,
    /// May be negative on curved paths where the ribbon overestimates.
    pub excess_area: f64,
}

pub fn excess_area<M: Motion + ?Sized>(field: &SweptField, motion: &M, veh: &VehicleParams, baseline: Baseline) -> AreaReport {
    let swept = swept_area(field);
    let baseline_area = match baseline {
        Baseline::Ribbon => veh.width * motion.arc_length() + veh.footprint_area(),
        Baseline::Custom { area } => area,
    };
    AreaReport {
        swept_area: swept,
        baseline_area,
        excess_area: swept - baseline_area,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minco::{build_minco, Boundary, EndState};

    fn veh() -> VehicleParams {
        VehicleParams::with_axles(2.0, 1.0, 2, 1.0, 1.0)
    }

    fn straight_line() -> PoseSequence {
        let poses: Vec<Pose2> = (0..=100).map(|i| Pose2::new(0.1 * i as f64, 0.0, 0.0)).collect();
        PoseSequence::new(0.0, 0.1, &poses).unwrap()
    }

    #[test]
    fn straight_line_queries() {
        let m = straight_line();
        let v = veh();
        let o = SearchOptions::default();
        let (t, f) = min_time_distance([5.0, 3.0], &m, &v, 0.0, 10.0, &o);
        assert!((f - 2.5).abs() < 1e-9, "{f}");
        assert!((t - 5.0).abs() <= 1.0 + 1e-9, "{t}");
        let (_, f) = min_time_distance([5.0, 0.0], &m, &v, 0.0, 10.0, &o);
        assert!((f + 0.5).abs() < 1e-9);
        let (t, f) = min_time_distance([-100.0, 0.0], &m, &v, 0.0, 10.0, &o);
        assert_eq!(t, 0.0);
        assert!((f - 99.0).abs() < 1e-9);
    }

    #[test]
    fn zero_length_motion_equals_static_sdf() {
        let pose = Pose2::new(1.0, 2.0, 0.4);
        let m = PoseSequence::new(0.0, 1.0, &[pose]).unwrap();
        let v = veh();
        let f = compute_swept_field(&m, &v, Region::new([-2.0, -1.0], [4.0, 5.0]), 0.25, &FieldOptions::default()).unwrap();
        for iy in 0..f.height {
            for ix in 0..f.width {
                let c = f.cell_center(ix, iy);
                let expect = crate::geometry::world_sdf_with_grad(c, &pose, &v).value;
                assert!((f.f_star[iy * f.width + ix] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn region_too_small() {
        let m = straight_line();
        let r = compute_swept_field(&m, &veh(), Region::new([-1.0, -1.0], [5.0, 1.0]), 0.5, &FieldOptions::default());
        assert!(matches!(r, Err(SweepError::RegionTooSmall { .. })));
    }

    #[test]
    fn area_of_positive_field_is_zero() {
        let f = SweptField {
            origin: [0.0, 0.0],
            resolution: 0.5,
            width: 2,
            height: 2,
            f_star: vec![0.1, 0.2, 3.0, 1e-9],
            t_star: vec![0.0; 4],
        };
        assert_eq!(swept_area(&f), 0.0);
    }

    #[test]
    fn arc_lengths_agree() {
        let b = Boundary {
            start: EndState::at_rest([0.0, 0.0, 0.0]),
            end: EndState::at_rest([4.0, 0.0, 0.0]),
        };
        let tr = build_minco(&[[2.0, 0.0, 0.0]], &[2.0, 2.0], b).unwrap();
        assert!((tr.arc_length() - 4.0).abs() < 1e-9);
        assert!((straight_line().arc_length() - 10.0).abs() < 1e-9);
    }
}
