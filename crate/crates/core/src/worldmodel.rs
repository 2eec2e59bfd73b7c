//! Occupancy grids, A* search on them and heading estimation for the
//! initial trajectory.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::geometry::{unwrap_near, Pose2};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorldError {
    #[error("region is empty or degenerate")]
    EmptyRegion,
    #[error("grid resolution must be positive")]
    BadResolution,
    #[error("start lies in an occupied or inflated cell")]
    StartOccupied,
    #[error("goal lies in an occupied or inflated cell")]
    GoalOccupied,
    #[error("no path between start and goal")]
    NoPath,
    #[error("path is shorter than the resampling spacing")]
    DegeneratePath,
}

/// Axis-aligned region `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Region {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Self { min, max }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.max[0] > self.min[0] && self.max[1] > self.min[1])
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn inflate(&self, margin: f64) -> Region {
        Region {
            min: [self.min[0] - margin, self.min[1] - margin],
            max: [self.max[0] + margin, self.max[1] + margin],
        }
    }
}

/// Obstacle primitives used to describe a world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Box { min: [f64; 2], max: [f64; 2] },
    Disc { center: [f64; 2], radius: f64 },
}

impl Shape {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Shape::Box { min, max } => p[0] >= min[0] && p[0] <= max[0] && p[1] >= min[1] && p[1] <= max[1],
            Shape::Disc { center, radius } => {
                (p[0] - center[0]).hypot(p[1] - center[1]) <= *radius
            }
        }
    }
}

/// Uniform occupancy grid with cached obstacle cell centres.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    occupancy: Vec<bool>,
    obstacle_points: Vec<[f64; 2]>,
}

impl GridMap {
    /// Builds a grid from explicit occupancy (row-major, `iy * width + ix`).
    pub fn from_occupancy(
        origin: [f64; 2],
        resolution: f64,
        width: usize,
        height: usize,
        occupancy: Vec<bool>,
    ) -> Result<Self, WorldError> {
        if !(resolution > 0.0) {
            return Err(WorldError::BadResolution);
        }
        if width == 0 || height == 0 || occupancy.len() != width * height {
            return Err(WorldError::EmptyRegion);
        }
        let mut map = Self {
            origin,
            resolution,
            width,
            height,
            occupancy,
            obstacle_points: Vec::new(),
        };
        map.obstacle_points = (0..map.height)
            .flat_map(|iy| (0..map.width).map(move |ix| (ix, iy)))
            .filter(|&(ix, iy)| map.occupancy[iy * map.width + ix])
            .map(|(ix, iy)| map.cell_center(ix, iy))
            .collect();
        Ok(map)
    }

    pub fn empty(region: Region, resolution: f64) -> Result<Self, WorldError> {
        rasterize_obstacles(&[], region, resolution)
    }

    #[inline]
    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin[0] + (ix as f64 + 0.5) * self.resolution,
            self.origin[1] + (iy as f64 + 0.5) * self.resolution,
        ]
    }

    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let fx = ((p[0] - self.origin[0]) / self.resolution).floor();
        let fy = ((p[1] - self.origin[1]) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn is_occupied(&self, ix: usize, iy: usize) -> bool {
        self.occupancy[iy * self.width + ix]
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    /// Centres of the occupied cells.
    pub fn obstacle_points(&self) -> &[[f64; 2]] {
        &self.obstacle_points
    }

    /// Centres of occupied cells with at least one free 4-neighbour inside
    /// the grid.
    pub fn boundary_points(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::new();
        for iy in 0..self.height {
            for ix in 0..self.width {
                if !self.is_occupied(ix, iy) {
                    continue;
                }
                let free = NEIGHBORS[..4].iter().any(|&(dx, dy)| {
                    let (jx, jy) = (ix as isize + dx, iy as isize + dy);
                    jx >= 0
                        && jy >= 0
                        && (jx as usize) < self.width
                        && (jy as usize) < self.height
                        && !self.is_occupied(jx as usize, jy as usize)
                });
                if free {
                    out.push(self.cell_center(ix, iy));
                }
            }
        }
        out
    }

    pub fn region(&self) -> Region {
        Region {
            min: self.origin,
            max: [
                self.origin[0] + self.width as f64 * self.resolution,
                self.origin[1] + self.height as f64 * self.resolution,
            ],
        }
    }

    /// Occupancy after growing every obstacle cell by `clearance` metres
    /// (centre-to-centre distance).
    pub fn inflated(&self, clearance: f64) -> Vec<bool> {
        let mut out = self.occupancy.clone();
        if clearance <= 0.0 {
            return out;
        }
        let r = (clearance / self.resolution).floor() as isize;
        let r2 = clearance * clearance + 1e-12;
        let mut offsets = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                let d2 = ((dx * dx + dy * dy) as f64) * self.resolution * self.resolution;
                if d2 <= r2 {
                    offsets.push((dx, dy));
                }
            }
        }
        for iy in 0..self.height {
            for ix in 0..self.width {
                if !self.occupancy[iy * self.width + ix] {
                    continue;
                }
                for &(dx, dy) in &offsets {
                    let (jx, jy) = (ix as isize + dx, iy as isize + dy);
                    if jx >= 0 && jy >= 0 && (jx as usize) < self.width && (jy as usize) < self.height {
                        out[jy as usize * self.width + jx as usize] = true;
                    }
                }
            }
        }
        out
    }
}

/// Rasterizes shapes into a grid covering `bounds`; a cell is occupied iff
/// its centre lies inside some shape.
pub fn rasterize_obstacles(shapes: &[Shape], bounds: Region, res: f64) -> Result<GridMap, WorldError> {
    if !(res > 0.0) {
        return Err(WorldError::BadResolution);
    }
    if bounds.is_degenerate() {
        return Err(WorldError::EmptyRegion);
    }
    let width = ((bounds.max[0] - bounds.min[0]) / res - 1e-9).ceil().max(1.0) as usize;
    let height = ((bounds.max[1] - bounds.min[1]) / res - 1e-9).ceil().max(1.0) as usize;
    let mut occupancy = vec![false; width * height];
    for iy in 0..height {
        for ix in 0..width {
            let c = [
                bounds.min[0] + (ix as f64 + 0.5) * res,
                bounds.min[1] + (iy as f64 + 0.5) * res,
            ];
            occupancy[iy * width + ix] = shapes.iter().any(|s| s.contains(c));
        }
    }
    GridMap::from_occupancy(bounds.min, res, width, height, occupancy)
}

#[derive(Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    g: f64,
    idx: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on f, then prefer larger g, then lower index
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| self.g.total_cmp(&other.g))
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub(crate) const NEIGHBORS: [(isize, isize); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// 8-connected A* over the grid after inflating obstacles by `clearance`.
/// Diagonal moves may not cut past a blocked orthogonal neighbour.
/// Returns the cell centres of the path from the start cell to the goal
/// cell.
pub fn astar_plan(map: &GridMap, start: [f64; 2], goal: [f64; 2], clearance: f64) -> Result<Vec<[f64; 2]>, WorldError> {
    let blocked = map.inflated(clearance);
    let (w, h) = (map.width, map.height);
    let s = map.cell_of(start).ok_or(WorldError::StartOccupied)?;
    let g = map.cell_of(goal).ok_or(WorldError::GoalOccupied)?;
    let s_idx = s.1 * w + s.0;
    let g_idx = g.1 * w + g.0;
    if blocked[s_idx] {
        return Err(WorldError::StartOccupied);
    }
    if blocked[g_idx] {
        return Err(WorldError::GoalOccupied);
    }
    let res = map.resolution;
    let heuristic = |idx: usize| {
        let (ix, iy) = ((idx % w) as f64, (idx / w) as f64);
        (ix - g.0 as f64).hypot(iy - g.1 as f64) * res
    };

    let mut best = vec![f64::INFINITY; w * h];
    let mut parent = vec![usize::MAX; w * h];
    let mut closed = vec![false; w * h];
    let mut open = BinaryHeap::new();
    best[s_idx] = 0.0;
    open.push(Open {
        f: heuristic(s_idx),
        g: 0.0,
        idx: s_idx,
    });
    while let Some(Open { g: cost, idx, .. }) = open.pop() {
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        if idx == g_idx {
            break;
        }
        let (ix, iy) = ((idx % w) as isize, (idx / w) as isize);
        for &(dx, dy) in &NEIGHBORS {
            let (jx, jy) = (ix + dx, iy + dy);
            if jx < 0 || jy < 0 || jx >= w as isize || jy >= h as isize {
                continue;
            }
            let j = jy as usize * w + jx as usize;
            if blocked[j] || closed[j] {
                continue;
            }
            if dx != 0 && dy != 0 {
                let a = iy as usize * w + jx as usize;
                let b = jy as usize * w + ix as usize;
                if blocked[a] || blocked[b] {
                    continue;
                }
            }
            let step = if dx != 0 && dy != 0 { std::f64::consts::SQRT_2 * res } else { res };
            let ng = cost + step;
            if ng < best[j] {
                best[j] = ng;
                parent[j] = idx;
                open.push(Open {
                    f: ng + heuristic(j),
                    g: ng,
                    idx: j,
                });
            }
        }
    }
    if !closed[g_idx] {
        return Err(WorldError::NoPath);
    }
    let mut cells = vec![g_idx];
    let mut cur = g_idx;
    while cur != s_idx {
        cur = parent[cur];
        cells.push(cur);
    }
    cells.reverse();
    Ok(cells.into_iter().map(|i| map.cell_center(i % w, i / w)).collect())
}

/// Euclidean length of a polyline.
pub fn path_length(path: &[[f64; 2]]) -> f64 {
    path.windows(2)
        .map(|p| (p[1][0] - p[0][0]).hypot(p[1][1] - p[0][1]))
        .sum()
}

/// Pose sequence seeding the first optimization stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialTrajectory {
    pub poses: Vec<Pose2>,
    /// Arc-length spacing between retained points.
    pub spacing: f64,
}

/// Resamples `path` at uniform arc length close to `spacing` and attaches
/// unwrapped central-difference headings.
pub fn estimate_headings(path: &[[f64; 2]], spacing: f64) -> Result<InitialTrajectory, WorldError> {
    if path.len() < 2 || !(spacing > 0.0) {
        return Err(WorldError::DegeneratePath);
    }
    let total = path_length(path);
    if total < spacing {
        return Err(WorldError::DegeneratePath);
    }
    let n = ((total / spacing).round() as usize).max(1);
    let step = total / n as f64;

    let mut cum = Vec::with_capacity(path.len());
    cum.push(0.0);
    for p in path.windows(2) {
        let last = *cum.last().unwrap();
        cum.push(last + (p[1][0] - p[0][0]).hypot(p[1][1] - p[0][1]));
    }
    let mut pts = Vec::with_capacity(n + 1);
    let mut seg = 0;
    for k in 0..=n {
        let s = if k == n { total } else { k as f64 * step };
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let a = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        let (p0, p1) = (path[seg], path[seg + 1]);
        pts.push([p0[0] + a * (p1[0] - p0[0]), p0[1] + a * (p1[1] - p0[1])]);
    }

    let mut poses: Vec<Pose2> = Vec::with_capacity(pts.len());
    let last = pts.len() - 1;
    for i in 0..pts.len() {
        let (a, b) = match i {
            0 => (pts[0], pts[1]),
            i if i == last => (pts[last - 1], pts[last]),
            i => (pts[i - 1], pts[i + 1]),
        };
        let raw = (b[1] - a[1]).atan2(b[0] - a[0]);
        let phi = match poses.last() {
            Some(prev) => unwrap_near(raw, prev.phi),
            None => raw,
        };
        poses.push(Pose2 {
            x: pts[i][0],
            y: pts[i][1],
            phi,
        });
    }
    Ok(InitialTrajectory { poses, spacing: step })
}
