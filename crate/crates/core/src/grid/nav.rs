//! One navigation leg: plan on what is known, drive a cell per tick, sense,
//! and replan when the path becomes blocked.

use serde::{Deserialize, Serialize};

use super::world::{sense, Pose, Scene};
use super::{disk_offsets, inflate, line_cells, plan_path, step_allowed, Cell, CellState, OccupancyGrid, Path};
use crate::geo::MetricPoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavConfig {
    /// Robot radius; Occupied cells are dilated by this before planning.
    pub inflation_m: f64,
    /// A goal inside an obstacle moves to the nearest free cell within this.
    pub goal_snap_m: f64,
    /// Tick budget as a multiple of the initial path length in cells.
    pub tick_factor: f64,
    pub min_ticks: usize,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            inflation_m: 0.25,
            goal_snap_m: 1.0,
            tick_factor: 10.0,
            min_ticks: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NavFailure {
    StartBlocked,
    NoFreeGoal,
    NoPath,
    BudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct NavOutcome {
    pub reached: bool,
    pub failure: Option<NavFailure>,
    /// Cell centers visited, start first.
    pub driven_path: Vec<MetricPoint>,
    pub driven_length: f64,
    pub replans: u32,
    pub ticks: usize,
    pub goal_cell: Option<Cell>,
    pub initial_path: Option<Path>,
    pub end_pose: Pose,
    /// Map plus everything sensed or bumped into during the leg.
    pub grid_final: OccupancyGrid,
}

struct Leg<'a> {
    scene: &'a Scene,
    known: OccupancyGrid,
    planning: OccupancyGrid,
    truth_inflated: OccupancyGrid,
    offsets: Vec<(i32, i32)>,
}

impl Leg<'_> {
    fn dilate(&mut self, c: Cell) {
        for &(dx, dy) in &self.offsets {
            self.planning.set(c.offset(dx, dy), CellState::Occupied);
        }
    }

    fn mark(&mut self, c: Cell) {
        if self
            .known
            .set(c, CellState::Occupied)
            .is_some_and(|p| p != CellState::Occupied)
        {
            self.dilate(c);
        }
    }

    /// Contact with obstacles the sensor missed: reveal true obstacle cells
    /// within the robot radius of `c`.
    fn bump(&mut self, c: Cell) {
        for i in 0..self.offsets.len() {
            let (dx, dy) = self.offsets[i];
            let n = c.offset(dx, dy);
            if self.scene.truth_grid().get(n) == Some(CellState::Occupied) {
                self.mark(n);
            }
        }
    }

    /// Clears dilation (not obstacles) around a robot that starts too close
    /// to a wall, so it can drive away.
    fn clear_bubble(&mut self, c: Cell) {
        for &(dx, dy) in &self.offsets {
            let n = c.offset(dx, dy);
            if matches!(self.known.get(n), Some(CellState::Free | CellState::Unknown)) {
                self.planning.set(n, CellState::Free);
            }
        }
    }

    /// Cells reachable from `from` in the planning grid.
    fn reachable(&self, from: Cell) -> Vec<bool> {
        let g = &self.planning;
        let mut seen = vec![false; g.width() * g.height()];
        let Some(i) = g.index(from) else { return seen };
        seen[i] = true;
        let mut queue = std::collections::VecDeque::from([from]);
        while let Some(c) = queue.pop_front() {
            for (dx, dy) in super::MOVES {
                if !step_allowed(g, c, dx, dy) {
                    continue;
                }
                let n = c.offset(dx, dy);
                let ni = g.index(n).expect("allowed steps stay in grid");
                if !seen[ni] {
                    seen[ni] = true;
                    queue.push_back(n);
                }
            }
        }
        seen
    }

    /// Nearest cell to `goal` within `radius_m` marked in `reach`,
    /// preferring one with a clear sight line to the goal point.
    fn snap_goal(&self, goal: MetricPoint, radius_m: f64, reach: &[bool]) -> Option<Cell> {
        let g = self.known.cell_of(goal);
        let mut cands: Vec<(f64, usize, Cell)> = self
            .cells_within(goal, radius_m)
            .filter_map(|(d, c)| self.known.index(c).filter(|&i| reach[i]).map(|i| (d, i, c)))
            .collect();
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let goal_uv = self.known.to_grid_coords(goal);
        let clear = |c: Cell| {
            let cu = self.known.to_grid_coords(self.known.center(c));
            line_cells(cu, goal_uv)
                .into_iter()
                .filter(|&x| x != g)
                .all(|x| self.known.get(x) != Some(CellState::Occupied))
        };
        cands
            .iter()
            .find(|(_, _, c)| clear(*c))
            .or_else(|| cands.first())
            .map(|(_, _, c)| *c)
    }

    fn cells_within(&self, goal: MetricPoint, radius_m: f64) -> impl Iterator<Item = (f64, Cell)> + '_ {
        let g = self.known.cell_of(goal);
        let k = (radius_m / self.known.resolution()).ceil() as i32;
        (-k..=k)
            .flat_map(move |dy| (-k..=k).map(move |dx| g.offset(dx, dy)))
            .map(move |c| (self.known.center(c).distance(&goal), c))
            .filter(move |(d, _)| *d <= radius_m)
    }

    /// Plans to `current` when that still works, otherwise to the nearest
    /// reachable cell around the goal point.
    fn plan_to(&self, from: Cell, goal: MetricPoint, radius_m: f64, current: Cell) -> Result<(Cell, Path), NavFailure> {
        if !self.planning.is_blocked(current) {
            if let Ok(p) = plan_path(&self.planning, from, current) {
                return Ok((current, p));
            }
        }
        let reach = self.reachable(from);
        let Some(c) = self.snap_goal(goal, radius_m, &reach) else {
            let any_free = self
                .cells_within(goal, radius_m)
                .any(|(_, c)| !self.planning.is_blocked(c));
            return Err(if any_free {
                NavFailure::NoPath
            } else {
                NavFailure::NoFreeGoal
            });
        };
        plan_path(&self.planning, from, c)
            .map(|p| (c, p))
            .map_err(|_| NavFailure::NoPath)
    }

    fn path_clear(&self, path: &Path, from: usize) -> bool {
        path.cells[from..]
            .windows(2)
            .all(|w| step_allowed(&self.planning, w[0], w[1].x - w[0].x, w[1].y - w[0].y))
    }
}

fn heading_of(dx: i32, dy: i32) -> f64 {
    (dy as f64).atan2(dx as f64).to_degrees()
}

/// Drives from `start` toward `goal` over `known` (the rendered map plus
/// anything sensed on earlier legs). Senses with the world's sensor along
/// the direction of travel before every step and replans when the remaining
/// path is blocked.
pub fn navigate(known: &OccupancyGrid, scene: &Scene, start: Pose, goal: MetricPoint, cfg: &NavConfig) -> NavOutcome {
    let res = known.resolution();
    let mut leg = Leg {
        scene,
        known: known.clone(),
        planning: inflate(known, cfg.inflation_m),
        truth_inflated: inflate(scene.truth_grid(), cfg.inflation_m),
        offsets: disk_offsets(cfg.inflation_m, res),
    };
    let mut cur = leg.known.cell_of(start.position());
    let mut out = NavOutcome {
        reached: false,
        failure: None,
        driven_path: vec![leg.known.center(cur)],
        driven_length: 0.0,
        replans: 0,
        ticks: 0,
        goal_cell: None,
        initial_path: None,
        end_pose: start,
        grid_final: known.clone(),
    };
    let finish = |mut out: NavOutcome, leg: Leg, failure: Option<NavFailure>, cur: Cell, heading: f64| {
        out.reached = failure.is_none();
        out.failure = failure;
        let c = leg.known.center(cur);
        out.end_pose = Pose::new(c.x, c.y, heading);
        out.grid_final = leg.known;
        out
    };
    let mut heading = start.heading_deg;
    if leg.known.is_blocked(cur) {
        return finish(out, leg, Some(NavFailure::StartBlocked), cur, heading);
    }
    if leg.planning.is_blocked(cur) {
        leg.clear_bubble(cur);
    }
    let (mut goal_cell, mut path) = match leg.plan_to(cur, goal, cfg.goal_snap_m, leg.known.cell_of(goal)) {
        Ok(x) => x,
        Err(f) => return finish(out, leg, Some(f), cur, heading),
    };
    out.goal_cell = Some(goal_cell);
    let budget = ((cfg.tick_factor * path.cost_cells()).ceil() as usize).max(cfg.min_ticks);
    out.initial_path = Some(path.clone());
    let mut at = 0;
    loop {
        if cur == goal_cell {
            return finish(out, leg, None, cur, heading);
        }
        if out.ticks >= budget {
            return finish(out, leg, Some(NavFailure::BudgetExhausted), cur, heading);
        }
        out.ticks += 1;
        let next = path.cells[at + 1];
        let (dx, dy) = (next.x - cur.x, next.y - cur.y);
        heading = heading_of(dx, dy);
        let c = leg.known.center(cur);
        let delta = sense(scene, Pose::new(c.x, c.y, heading), &scene.world.sensor, &mut leg.known);
        for (cell, state) in delta {
            if state == CellState::Occupied {
                leg.dilate(cell);
            }
        }
        if !step_allowed(&leg.truth_inflated, cur, dx, dy) {
            leg.bump(next);
            if dx != 0 && dy != 0 {
                leg.bump(cur.offset(dx, 0));
                leg.bump(cur.offset(0, dy));
            }
        }
        if !leg.path_clear(&path, at) {
            out.replans += 1;
            if leg.planning.is_blocked(cur) {
                leg.clear_bubble(cur);
            }
            // The goal may have become blocked, or sealed inside furniture
            // seen only from one side.
            (goal_cell, path) = match leg.plan_to(cur, goal, cfg.goal_snap_m, goal_cell) {
                Ok(x) => x,
                Err(f) => return finish(out, leg, Some(f), cur, heading),
            };
            out.goal_cell = Some(goal_cell);
            at = 0;
            continue;
        }
        debug_assert_ne!(leg.known.get(next), Some(CellState::Occupied));
        out.driven_length += if dx != 0 && dy != 0 {
            std::f64::consts::SQRT_2
        } else {
            1.0
        } * res;
        cur = next;
        at += 1;
        out.driven_path.push(leg.known.center(cur));
    }
}
