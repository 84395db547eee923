//! Occupancy grids rendered from area outlines, 8-connected A*, and the
//! sensing and navigation simulator.

mod nav;
mod world;

pub use nav::{navigate, NavConfig, NavFailure, NavOutcome};
pub use world::{
    map_walls, sense, Obstacle, ObstacleKind, Pose, Scene, SensorConfig, WorldError, WorldInstance, WorldModel,
};

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::MetricPoint;
use crate::osmag::SemanticMap;

pub const DEFAULT_RESOLUTION_M: f64 = 0.1;
/// Free border around the map's bounding box.
pub const GRID_MARGIN_M: f64 = 1.0;
/// Coordinates within this fraction of a cell from a cell boundary snap to it.
pub const CELL_SNAP: f64 = 1e-3;
pub const MAX_GRID_CELLS: usize = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellState {
    Free,
    Occupied,
    /// Not yet observed; planned through as if free.
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }

    /// Octile distance in cells.
    pub fn octile(self, other: Cell) -> f64 {
        let (s, d) = octile_steps(self, other);
        s as f64 + d as f64 * SQRT_2
    }
}

/// (straight, diagonal) step counts of the obstacle-free octile path.
fn octile_steps(a: Cell, b: Cell) -> (u32, u32) {
    let dx = a.x.abs_diff(b.x);
    let dy = a.y.abs_diff(b.y);
    (dx.max(dy) - dx.min(dy), dx.min(dy))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("resolution must be positive and finite, got {0}")]
    BadResolution(f64),
    #[error("map has no geometry to render")]
    EmptyMap,
    #[error("grid of {width}x{height} cells is too large")]
    TooLarge { width: usize, height: usize },
    #[error("start cell ({}, {}) is blocked or outside the grid", .0.x, .0.y)]
    StartBlocked(Cell),
    #[error("goal cell ({}, {}) is blocked or outside the grid", .0.x, .0.y)]
    GoalBlocked(Cell),
    #[error("no path between start and goal")]
    NoPath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    resolution: f64,
    origin: MetricPoint,
    width: usize,
    height: usize,
    cells: Vec<CellState>,
}

/// Sidecar metadata written next to a PGM dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub resolution: f64,
    pub origin: MetricPoint,
    pub width: usize,
    pub height: usize,
    pub free_value: u8,
    pub occupied_value: u8,
    pub unknown_value: u8,
}

pub(crate) fn snap_floor(v: f64) -> i32 {
    let r = v.round();
    if (v - r).abs() < CELL_SNAP {
        r as i32
    } else {
        v.floor() as i32
    }
}

impl OccupancyGrid {
    pub fn new(resolution: f64, origin: MetricPoint, width: usize, height: usize) -> Result<Self, GridError> {
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(GridError::BadResolution(resolution));
        }
        if width.saturating_mul(height) > MAX_GRID_CELLS || width > i32::MAX as usize || height > i32::MAX as usize {
            return Err(GridError::TooLarge { width, height });
        }
        Ok(Self {
            resolution,
            origin,
            width,
            height,
            cells: vec![CellState::Free; width * height],
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> MetricPoint {
        self.origin
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    /// Row-major index; the tie-breaking order of the planner.
    pub fn index(&self, c: Cell) -> Option<usize> {
        self.contains(c).then(|| c.y as usize * self.width + c.x as usize)
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new((index % self.width) as i32, (index / self.width) as i32)
    }

    pub fn get(&self, c: Cell) -> Option<CellState> {
        self.index(c).map(|i| self.cells[i])
    }

    /// Returns the previous state; out-of-grid writes are ignored.
    pub fn set(&mut self, c: Cell, s: CellState) -> Option<CellState> {
        let i = self.index(c)?;
        Some(std::mem::replace(&mut self.cells[i], s))
    }

    /// Occupied or outside the grid.
    pub fn is_blocked(&self, c: Cell) -> bool {
        !matches!(self.get(c), Some(CellState::Free | CellState::Unknown))
    }

    pub fn count(&self, s: CellState) -> usize {
        self.cells.iter().filter(|&&c| c == s).count()
    }

    pub fn occupied_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == CellState::Occupied)
            .map(|(i, _)| self.cell_at(i))
    }

    /// Fractional grid coordinates of a metric point.
    pub fn to_grid_coords(&self, p: MetricPoint) -> (f64, f64) {
        (
            (p.x - self.origin.x) / self.resolution,
            (p.y - self.origin.y) / self.resolution,
        )
    }

    /// Cell containing `p` (possibly outside the grid).
    pub fn cell_of(&self, p: MetricPoint) -> Cell {
        let (u, v) = self.to_grid_coords(p);
        Cell::new(snap_floor(u), snap_floor(v))
    }

    pub fn center(&self, c: Cell) -> MetricPoint {
        MetricPoint::new(
            self.origin.x + (c.x as f64 + 0.5) * self.resolution,
            self.origin.y + (c.y as f64 + 0.5) * self.resolution,
        )
    }

    /// Marks every cell a straight line passes through, 4-connected, from the
    /// cell of `a` to the cell of `b`.
    pub fn rasterize_line(&mut self, a: MetricPoint, b: MetricPoint, s: CellState) {
        let (pa, pb) = (self.to_grid_coords(a), self.to_grid_coords(b));
        for c in line_cells(pa, pb) {
            self.set(c, s);
        }
    }

    pub fn meta(&self) -> GridMeta {
        GridMeta {
            resolution: self.resolution,
            origin: self.origin,
            width: self.width,
            height: self.height,
            free_value: 254,
            occupied_value: 0,
            unknown_value: 205,
        }
    }

    /// Plain (P2) PGM, top row = largest y.
    pub fn to_pgm(&self) -> String {
        let meta = self.meta();
        let mut out = format!(
            "P2\n# resolution {} m\n{} {}\n255\n",
            self.resolution, self.width, self.height
        );
        for row in (0..self.height).rev() {
            let line: Vec<String> = (0..self.width)
                .map(|col| {
                    match self.cells[row * self.width + col] {
                        CellState::Free => meta.free_value,
                        CellState::Occupied => meta.occupied_value,
                        CellState::Unknown => meta.unknown_value,
                    }
                    .to_string()
                })
                .collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }
}

/// Cells crossed by the segment between two points in grid coordinates,
/// in order, stepping one axis at a time.
pub(crate) fn line_cells(a: (f64, f64), b: (f64, f64)) -> Vec<Cell> {
    let mut out = Vec::new();
    traverse(
        a,
        (b.0 - a.0, b.1 - a.1),
        Some(Cell::new(snap_floor(b.0), snap_floor(b.1))),
        |c, _, _| {
            out.push(c);
            true
        },
    );
    out
}

/// Grid traversal along `p + t * d`, `t` in [0, 1]. The visitor receives
/// each cell with its entry and exit parameters and returns false to stop.
/// Stops at `end` when given.
pub(crate) fn traverse(p: (f64, f64), d: (f64, f64), end: Option<Cell>, mut visit: impl FnMut(Cell, f64, f64) -> bool) {
    let mut c = Cell::new(snap_floor(p.0), snap_floor(p.1));
    let axis = |pos: f64, dir: f64, cell: i32| -> (i32, f64, f64) {
        if dir > 0.0 {
            (1, ((cell as f64 + 1.0 - pos) / dir).max(0.0), 1.0 / dir)
        } else if dir < 0.0 {
            (-1, ((cell as f64 - pos) / dir).max(0.0), -1.0 / dir)
        } else {
            (0, f64::INFINITY, f64::INFINITY)
        }
    };
    let (sx, mut tx, dtx) = axis(p.0, d.0, c.x);
    let (sy, mut ty, dty) = axis(p.1, d.1, c.y);
    let guard = (d.0.abs() + d.1.abs()).ceil() as usize + 4;
    let mut t_enter = 0.0;
    for _ in 0..=guard {
        let t_exit = tx.min(ty).min(1.0);
        if !visit(c, t_enter, t_exit) || Some(c) == end || t_exit >= 1.0 {
            return;
        }
        t_enter = t_exit;
        if tx <= ty {
            c.x += sx;
            tx += dtx;
        } else {
            c.y += sy;
            ty += dty;
        }
    }
}

/// Renders area outlines as one-cell walls, then reopens passage segments.
/// Semantic nodes play no part.
pub fn render_grid(map: &SemanticMap, resolution: f64) -> Result<OccupancyGrid, GridError> {
    if !(resolution.is_finite() && resolution > 0.0) {
        return Err(GridError::BadResolution(resolution));
    }
    let outlines: Vec<Vec<MetricPoint>> = map.areas().filter_map(|a| map.area_polygon_metric(a.id)).collect();
    let doors: Vec<Vec<MetricPoint>> = map.passages().filter_map(|p| map.segment_metric(&p.segment)).collect();
    let all = outlines.iter().chain(doors.iter()).flatten();
    let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in all {
        lo = (lo.0.min(p.x), lo.1.min(p.y));
        hi = (hi.0.max(p.x), hi.1.max(p.y));
    }
    if !lo.0.is_finite() {
        return Err(GridError::EmptyMap);
    }
    let snap = |v: f64| (v / resolution).floor() * resolution;
    let origin = MetricPoint::new(snap(lo.0 - GRID_MARGIN_M), snap(lo.1 - GRID_MARGIN_M));
    let width = ((hi.0 + GRID_MARGIN_M - origin.x) / resolution).ceil() as usize + 1;
    let height = ((hi.1 + GRID_MARGIN_M - origin.y) / resolution).ceil() as usize + 1;
    let mut grid = OccupancyGrid::new(resolution, origin, width, height)?;
    for ring in &outlines {
        for i in 0..ring.len() {
            grid.rasterize_line(ring[i], ring[(i + 1) % ring.len()], CellState::Occupied);
        }
    }
    for seg in &doors {
        for w in seg.windows(2) {
            grid.rasterize_line(w[0], w[1], CellState::Free);
        }
    }
    Ok(grid)
}

/// Cell offsets whose centers lie within `radius_m` of the origin cell's.
pub fn disk_offsets(radius_m: f64, resolution: f64) -> Vec<(i32, i32)> {
    let k = (radius_m / resolution).ceil().max(0.0) as i32;
    let mut out = Vec::new();
    for dy in -k..=k {
        for dx in -k..=k {
            if ((dx * dx + dy * dy) as f64).sqrt() * resolution <= radius_m + 1e-9 {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Dilates Occupied cells by `radius_m`.
pub fn inflate(grid: &OccupancyGrid, radius_m: f64) -> OccupancyGrid {
    let offsets = disk_offsets(radius_m, grid.resolution);
    let mut out = grid.clone();
    for c in grid.occupied_cells() {
        for &(dx, dy) in &offsets {
            out.set(c.offset(dx, dy), CellState::Occupied);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub cells: Vec<Cell>,
    pub straight_steps: u32,
    pub diagonal_steps: u32,
    pub resolution: f64,
}

impl Path {
    /// Cost in cell units: straight steps count 1, diagonal steps √2.
    pub fn cost_cells(&self) -> f64 {
        self.straight_steps as f64 + self.diagonal_steps as f64 * SQRT_2
    }

    pub fn length_m(&self) -> f64 {
        self.cost_cells() * self.resolution
    }
}

/// Neighbor moves in a fixed order: orthogonal first, then diagonal.
pub const MOVES: [(i32, i32); 8] = [(1, 0), (0, 1), (-1, 0), (0, -1), (1, 1), (-1, 1), (-1, -1), (1, -1)];

/// Whether a single 8-connected step is allowed: target free and, for a
/// diagonal, not squeezing between two blocked orthogonal neighbors.
pub fn step_allowed(grid: &OccupancyGrid, from: Cell, dx: i32, dy: i32) -> bool {
    let to = from.offset(dx, dy);
    if grid.is_blocked(to) {
        return false;
    }
    !(dx != 0 && dy != 0 && grid.is_blocked(from.offset(dx, 0)) && grid.is_blocked(from.offset(0, dy)))
}

#[derive(Clone, Copy)]
struct Open {
    f: f64,
    h: f64,
    index: usize,
}

impl PartialEq for Open {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Open {}
impl PartialOrd for Open {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Open {
    // Reversed so BinaryHeap pops the smallest (f, h, index).
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f)
            .then(o.h.total_cmp(&self.h))
            .then(o.index.cmp(&self.index))
    }
}

/// Minimum-cost 8-connected path by A* with the octile heuristic. Ties on
/// f go to the lower heuristic, then the lower cell index.
pub fn plan_path(grid: &OccupancyGrid, start: Cell, goal: Cell) -> Result<Path, GridError> {
    if grid.is_blocked(start) {
        return Err(GridError::StartBlocked(start));
    }
    if grid.is_blocked(goal) {
        return Err(GridError::GoalBlocked(goal));
    }
    let n = grid.width * grid.height;
    let value = |s: u32, d: u32| s as f64 + d as f64 * SQRT_2;
    // (straight, diagonal) steps of the best known route to each cell.
    let mut best: Vec<Option<(u32, u32)>> = vec![None; n];
    let mut came: Vec<usize> = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    let si = grid.index(start).expect("start in grid");
    let gi = grid.index(goal).expect("goal in grid");
    best[si] = Some((0, 0));
    let (hs, hd) = octile_steps(start, goal);
    heap.push(Open {
        f: value(hs, hd),
        h: value(hs, hd),
        index: si,
    });
    while let Some(Open { index, .. }) = heap.pop() {
        if closed[index] {
            continue;
        }
        closed[index] = true;
        if index == gi {
            break;
        }
        let cell = grid.cell_at(index);
        let (s, d) = best[index].expect("opened cells have a cost");
        for (dx, dy) in MOVES {
            if !step_allowed(grid, cell, dx, dy) {
                continue;
            }
            let next = cell.offset(dx, dy);
            let ni = grid.index(next).expect("allowed steps stay in grid");
            if closed[ni] {
                continue;
            }
            let cand = if dx != 0 && dy != 0 { (s, d + 1) } else { (s + 1, d) };
            if best[ni].is_some_and(|b| value(b.0, b.1) <= value(cand.0, cand.1)) {
                continue;
            }
            best[ni] = Some(cand);
            came[ni] = index;
            let (hs, hd) = octile_steps(next, goal);
            heap.push(Open {
                f: value(cand.0 + hs, cand.1 + hd),
                h: value(hs, hd),
                index: ni,
            });
        }
    }
    let (straight_steps, diagonal_steps) = match best[gi] {
        Some(b) if closed[gi] => b,
        _ => return Err(GridError::NoPath),
    };
    let mut cells = vec![goal];
    let mut at = gi;
    while at != si {
        at = came[at];
        cells.push(grid.cell_at(at));
    }
    cells.reverse();
    Ok(Path {
        cells,
        straight_steps,
        diagonal_steps,
        resolution: grid.resolution,
    })
}
