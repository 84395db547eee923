//! Hidden ground truth for simulation: obstacle geometry, object instances,
//! and the range sensor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{traverse, Cell, CellState, OccupancyGrid};
use crate::geo::{self, MetricPoint, Planar};
use crate::osmag::{SemanticMap, PASSAGE_BOUNDARY_TOLERANCE_M};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObstacleKind {
    /// `coords` = [min x, min y, max x, max y]; solid.
    Rect,
    /// `coords` = [x1, y1, x2, y2]; a thin wall.
    Segment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub kind: ObstacleKind,
    pub coords: [f64; 4],
}

impl Obstacle {
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            kind: ObstacleKind::Rect,
            coords: [x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1)],
        }
    }

    pub fn segment(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            kind: ObstacleKind::Segment,
            coords: [x0, y0, x1, y1],
        }
    }

    pub fn contains(&self, p: MetricPoint) -> bool {
        let [x0, y0, x1, y1] = self.coords;
        self.kind == ObstacleKind::Rect && (x0..=x1).contains(&p.x) && (y0..=y1).contains(&p.y)
    }

    fn edges(&self) -> Vec<(Planar, Planar)> {
        let [x0, y0, x1, y1] = self.coords;
        match self.kind {
            ObstacleKind::Segment => vec![(Planar::new(x0, y0), Planar::new(x1, y1))],
            ObstacleKind::Rect => {
                let c = [
                    Planar::new(x0, y0),
                    Planar::new(x1, y0),
                    Planar::new(x1, y1),
                    Planar::new(x0, y1),
                ];
                (0..4).map(|i| (c[i], c[(i + 1) % 4])).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldInstance {
    pub label: String,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room: Option<i64>,
}

impl WorldInstance {
    pub fn new(label: &str, x: f64, y: f64) -> Self {
        Self {
            label: label.to_string(),
            x,
            y,
            room: None,
        }
    }

    pub fn position(&self) -> MetricPoint {
        MetricPoint::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub fov_deg: f64,
    pub range_m: f64,
    pub rays: u32,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            fov_deg: 90.0,
            range_m: 4.0,
            rays: 61,
        }
    }
}

impl SensorConfig {
    /// Ray headings in degrees, evenly spread across the field of view.
    pub fn ray_headings(&self, heading_deg: f64) -> Vec<f64> {
        if self.rays == 1 {
            return vec![heading_deg];
        }
        let n = self.rays as f64 - 1.0;
        (0..self.rays)
            .map(|i| heading_deg - self.fov_deg / 2.0 + self.fov_deg * i as f64 / n)
            .collect()
    }
}

/// Position plus heading, degrees counter-clockwise from +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub heading_deg: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading_deg: f64) -> Self {
        Self { x, y, heading_deg }
    }

    pub fn position(&self) -> MetricPoint {
        MetricPoint::new(self.x, self.y)
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub instances: Vec<WorldInstance>,
    #[serde(default)]
    pub sensor: SensorConfig,
    /// Add the map's walls, with passage gaps, to the obstacle geometry.
    #[serde(default = "default_true")]
    pub include_map_walls: bool,
    #[serde(default)]
    pub starts: Vec<Pose>,
}

impl Default for WorldModel {
    fn default() -> Self {
        Self {
            obstacles: Vec::new(),
            instances: Vec::new(),
            sensor: SensorConfig::default(),
            include_map_walls: true,
            starts: Vec::new(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("world file: {0}")]
    Json(String),
    #[error("instance {0} has an empty label")]
    EmptyLabel(usize),
    #[error("instance {0} has a non-finite position")]
    NonFiniteInstance(usize),
    #[error("obstacle {0} is degenerate or non-finite")]
    BadObstacle(usize),
    #[error("sensor: {0}")]
    BadSensor(String),
}

impl WorldModel {
    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let w: Self = serde_json::from_str(text).map_err(|e| WorldError::Json(e.to_string()))?;
        w.check()?;
        Ok(w)
    }

    pub fn check(&self) -> Result<(), WorldError> {
        for (i, inst) in self.instances.iter().enumerate() {
            if inst.label.trim().is_empty() {
                return Err(WorldError::EmptyLabel(i));
            }
            if !inst.position().is_finite() {
                return Err(WorldError::NonFiniteInstance(i));
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            let [x0, y0, x1, y1] = o.coords;
            let ok = o.coords.iter().all(|v| v.is_finite())
                && match o.kind {
                    ObstacleKind::Rect => x0 < x1 && y0 < y1,
                    ObstacleKind::Segment => (x0, y0) != (x1, y1),
                };
            if !ok {
                return Err(WorldError::BadObstacle(i));
            }
        }
        let s = &self.sensor;
        if !(s.fov_deg > 0.0 && s.fov_deg <= 360.0) {
            return Err(WorldError::BadSensor(format!("fov_deg {} outside (0, 360]", s.fov_deg)));
        }
        if !(s.range_m.is_finite() && s.range_m > 0.0) {
            return Err(WorldError::BadSensor(format!("range_m {} must be positive", s.range_m)));
        }
        if s.rays == 0 {
            return Err(WorldError::BadSensor("rays must be at least 1".into()));
        }
        Ok(())
    }

    /// Instances whose label equals `label` (case-insensitive).
    pub fn instances_of<'a>(&'a self, label: &'a str) -> impl Iterator<Item = (usize, &'a WorldInstance)> + 'a {
        self.instances
            .iter()
            .enumerate()
            .filter(move |(_, i)| i.label.eq_ignore_ascii_case(label.trim()))
    }
}

/// Area outline edges with the stretches covered by passages cut out.
pub fn map_walls(map: &SemanticMap) -> Vec<(MetricPoint, MetricPoint)> {
    let doors: Vec<(MetricPoint, MetricPoint)> = map
        .passages()
        .filter_map(|p| map.segment_metric(&p.segment))
        .flat_map(|s| s.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>())
        .collect();
    let mut out = Vec::new();
    for area in map.areas() {
        let Some(ring) = map.area_polygon_metric(area.id) else {
            continue;
        };
        for i in 0..ring.len() {
            let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
            let len = a.distance(&b);
            if len == 0.0 {
                continue;
            }
            let (ux, uy) = ((b.x - a.x) / len, (b.y - a.y) / len);
            let along = |p: MetricPoint| ((p.x - a.x) * ux + (p.y - a.y) * uy) / len;
            let off = |p: MetricPoint| ((p.x - a.x) * uy - (p.y - a.y) * ux).abs();
            let mut gaps: Vec<(f64, f64)> = doors
                .iter()
                .filter(|(p, q)| off(*p) <= PASSAGE_BOUNDARY_TOLERANCE_M && off(*q) <= PASSAGE_BOUNDARY_TOLERANCE_M)
                .map(|(p, q)| {
                    let (s, t) = (along(*p), along(*q));
                    (s.min(t).max(0.0), s.max(t).min(1.0))
                })
                .filter(|(s, t)| s < t)
                .collect();
            gaps.sort_by(|x, y| x.0.total_cmp(&y.0));
            let mut at = 0.0;
            let point = |t: f64| MetricPoint::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t);
            for (s, t) in gaps {
                if s > at {
                    out.push((point(at), point(s)));
                }
                at = at.max(t);
            }
            if at < 1.0 {
                out.push((point(at), point(1.0)));
            }
        }
    }
    out
}

/// World geometry resolved against a map and grid: every blocking edge plus
/// a rasterized truth grid used for collision checks.
#[derive(Debug, Clone)]
pub struct Scene {
    pub world: WorldModel,
    /// Blocking edges with the index of the obstacle they belong to; map
    /// walls have none.
    edges: Vec<(Planar, Planar, Option<usize>)>,
    truth: OccupancyGrid,
}

/// Whether the closed cell square intersects the closed segment.
fn cell_hits_segment(grid: &OccupancyGrid, c: Cell, a: Planar, b: Planar) -> bool {
    let r = grid.resolution();
    let o = grid.origin();
    let eps = 1e-9;
    let (x0, y0) = (o.x + c.x as f64 * r - eps, o.y + c.y as f64 * r - eps);
    let (x1, y1) = (x0 + r + 2.0 * eps, y0 + r + 2.0 * eps);
    // Liang-Barsky clip.
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-dx, a.x - x0), (dx, x1 - a.x), (-dy, a.y - y0), (dy, y1 - a.y)] {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let t = q / p;
            if p < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
    }
    t0 <= t1
}

impl Scene {
    /// `grid` fixes the truth grid's frame; its Occupied cells (the rendered
    /// map) are part of the truth.
    pub fn build(world: &WorldModel, map: &SemanticMap, grid: &OccupancyGrid) -> Self {
        let mut edges: Vec<(Planar, Planar, Option<usize>)> = world
            .obstacles
            .iter()
            .enumerate()
            .flat_map(|(i, o)| o.edges().into_iter().map(move |(a, b)| (a, b, Some(i))))
            .collect();
        if world.include_map_walls {
            edges.extend(
                map_walls(map)
                    .into_iter()
                    .map(|(a, b)| (a.as_planar(), b.as_planar(), None)),
            );
        }
        let mut truth = grid.clone();
        let r = grid.resolution();
        for o in &world.obstacles {
            let [x0, y0, x1, y1] = o.coords;
            let lo = grid.cell_of(MetricPoint::new(x0.min(x1) - r, y0.min(y1) - r));
            let hi = grid.cell_of(MetricPoint::new(x0.max(x1) + r, y0.max(y1) + r));
            for y in lo.y..=hi.y {
                for x in lo.x..=hi.x {
                    let c = Cell::new(x, y);
                    if !truth.contains(c) {
                        continue;
                    }
                    let hit = match o.kind {
                        ObstacleKind::Segment => cell_hits_segment(grid, c, Planar::new(x0, y0), Planar::new(x1, y1)),
                        ObstacleKind::Rect => {
                            let cx0 = grid.origin().x + x as f64 * r;
                            let cy0 = grid.origin().y + y as f64 * r;
                            cx0 <= x1 && cx0 + r >= x0 && cy0 <= y1 && cy0 + r >= y0
                        }
                    };
                    if hit {
                        truth.set(c, CellState::Occupied);
                    }
                }
            }
        }
        Self {
            world: world.clone(),
            edges,
            truth,
        }
    }

    /// Rendered map plus every world obstacle, uninflated.
    pub fn truth_grid(&self) -> &OccupancyGrid {
        &self.truth
    }

    /// Distance along the unit direction to the first blocking edge, if any
    /// lies within `max_t`.
    pub fn first_hit(&self, origin: MetricPoint, dir: (f64, f64), max_t: f64) -> Option<f64> {
        first_hit_among(&self.edges_near(origin, max_t), origin, dir, max_t)
    }

    /// Edges that come within `radius` of `p`.
    fn edges_near(&self, p: MetricPoint, radius: f64) -> Vec<(Planar, Planar)> {
        let o = p.as_planar();
        self.edges
            .iter()
            .filter(|(a, b, _)| geo::point_segment_distance(o, *a, *b) <= radius)
            .map(|(a, b, _)| (*a, *b))
            .collect()
    }

    /// Unobstructed sight line from `from` to `to`. A solid obstacle that
    /// contains `to` does not hide it: an object on a table is seen.
    pub fn line_of_sight(&self, from: MetricPoint, to: MetricPoint) -> bool {
        let dist = from.distance(&to);
        if dist < 1e-9 {
            return true;
        }
        let dir = ((to.x - from.x) / dist, (to.y - from.y) / dist);
        let o = from.as_planar();
        let holds = |owner: Option<usize>| owner.is_some_and(|i| self.world.obstacles[i].contains(to));
        !self
            .edges
            .iter()
            .filter(|(_, _, owner)| !holds(*owner))
            .filter_map(|(a, b, _)| geo::ray_segment(o, dir, *a, *b))
            .any(|t| t < dist - 1e-9)
    }
}

fn first_hit_among(edges: &[(Planar, Planar)], origin: MetricPoint, dir: (f64, f64), max_t: f64) -> Option<f64> {
    let o = origin.as_planar();
    edges
        .iter()
        .filter_map(|(a, b)| geo::ray_segment(o, dir, *a, *b))
        .filter(|t| *t <= max_t)
        .min_by(f64::total_cmp)
}

/// Casts the sensor's rays from `pose`. The first cell hit on each ray
/// becomes Occupied; Unknown cells crossed before it become Free. Occupied
/// cells are never freed. Returns the changed cells in ascending order.
pub fn sense(scene: &Scene, pose: Pose, sensor: &SensorConfig, grid: &mut OccupancyGrid) -> Vec<(Cell, CellState)> {
    let mut delta = Vec::new();
    let origin = pose.position();
    let (gx, gy) = grid.to_grid_coords(origin);
    let range = sensor.range_m;
    let near = scene.edges_near(origin, range);
    for h in sensor.ray_headings(pose.heading_deg) {
        let dir = (h.to_radians().cos(), h.to_radians().sin());
        let hit = first_hit_among(&near, origin, dir, range);
        let reach = hit.unwrap_or(range) / range;
        let d = (dir.0 * range / grid.resolution(), dir.1 * range / grid.resolution());
        traverse((gx, gy), d, None, |c, t_in, t_out| {
            if hit.is_some() && t_in <= reach && reach <= t_out {
                if grid
                    .set(c, CellState::Occupied)
                    .is_some_and(|prev| prev != CellState::Occupied)
                {
                    delta.push((c, CellState::Occupied));
                }
                return false;
            }
            if grid.get(c) == Some(CellState::Unknown) {
                grid.set(c, CellState::Free);
                delta.push((c, CellState::Free));
            }
            t_out < reach
        });
    }
    delta.sort();
    delta.dedup();
    delta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;

    fn empty_scene(obstacles: Vec<Obstacle>) -> (Scene, OccupancyGrid) {
        let grid = OccupancyGrid::new(0.1, MetricPoint::new(-5.0, -5.0), 100, 100).unwrap();
        let world = WorldModel {
            obstacles,
            include_map_walls: false,
            ..WorldModel::default()
        };
        let map = SemanticMap::new(GeoPoint::new(31.0, 121.0));
        (Scene::build(&world, &map, &grid), grid)
    }

    #[test]
    fn empty_world_senses_nothing() {
        let (scene, mut grid) = empty_scene(vec![]);
        let d = sense(&scene, Pose::new(0.05, 0.05, 0.0), &SensorConfig::default(), &mut grid);
        assert!(d.iter().all(|(_, s)| *s != CellState::Occupied));
        assert_eq!(grid.count(CellState::Occupied), 0);
    }

    #[test]
    fn box_ahead_marks_near_face() {
        let (scene, mut grid) = empty_scene(vec![Obstacle::rect(2.0, -0.5, 3.0, 0.5)]);
        let d = sense(&scene, Pose::new(0.0, 0.0, 0.0), &SensorConfig::default(), &mut grid);
        let occ: Vec<Cell> = d
            .iter()
            .filter(|(_, s)| *s == CellState::Occupied)
            .map(|(c, _)| *c)
            .collect();
        assert!(!occ.is_empty());
        let face = grid.cell_of(MetricPoint::new(2.0, 0.0)).x;
        for c in &occ {
            assert!((c.x - face).abs() <= 1, "{c:?}");
            assert_eq!(scene.truth_grid().get(*c), Some(CellState::Occupied));
        }
    }

    #[test]
    fn box_behind_is_outside_fov() {
        let (scene, mut grid) = empty_scene(vec![Obstacle::rect(-3.0, -0.5, -2.0, 0.5)]);
        let sensor = SensorConfig {
            fov_deg: 60.0,
            ..SensorConfig::default()
        };
        assert!(sense(&scene, Pose::new(0.0, 0.0, 0.0), &sensor, &mut grid).is_empty());
    }

    #[test]
    fn sight_through_holder_but_not_wall() {
        let (scene, _) = empty_scene(vec![
            Obstacle::rect(1.0, -0.5, 2.0, 0.5),
            Obstacle::segment(0.0, 2.0, 1.0, 2.0),
        ]);
        assert!(scene.line_of_sight(MetricPoint::new(0.0, 0.0), MetricPoint::new(1.5, 0.0)));
        assert!(!scene.line_of_sight(MetricPoint::new(0.0, 0.0), MetricPoint::new(3.0, 0.0)));
        assert!(!scene.line_of_sight(MetricPoint::new(0.5, 1.0), MetricPoint::new(0.5, 3.0)));
    }

    #[test]
    fn walls_leave_door_gap() {
        use crate::osmag::{Area, MapNode, Passage};
        let mut m = SemanticMap::new(GeoPoint::new(31.0, 121.0));
        let pts = [
            (0.0, 0.0),
            (4.0, 0.0),
            (4.0, 4.0),
            (0.0, 4.0),
            (8.0, 0.0),
            (8.0, 4.0),
            (4.0, 1.0),
            (4.0, 2.0),
        ];
        for (i, (x, y)) in pts.iter().enumerate() {
            let g = m.to_geo(MetricPoint::new(*x, *y)).unwrap();
            m.insert_node(MapNode::new(i as i64 + 1, g)).unwrap();
        }
        m.insert_area(Area::new(10, &[1, 2, 3, 4])).unwrap();
        m.insert_area(Area::new(11, &[2, 5, 6, 3])).unwrap();
        m.insert_passage(Passage::new(20, &[7, 8], 10, 11)).unwrap();
        let walls = map_walls(&m);
        let total: f64 = walls.iter().map(|(a, b)| a.distance(b)).sum();
        assert!((total - (16.0 + 16.0 - 2.0)).abs() < 1e-6, "{total}");
    }

    #[test]
    fn world_json_schema() {
        let w = WorldModel::from_json(
            r#"{"obstacles":[{"kind":"rect","coords":[0,0,1,1]},{"kind":"segment","coords":[0,0,2,0]}],
                "instances":[{"label":"mug","x":1.5,"y":2}],"sensor":{"fov_deg":60,"range_m":3,"rays":31}}"#,
        )
        .unwrap();
        assert!(w.include_map_walls);
        assert_eq!(w.instances_of("MUG").count(), 1);
        assert!(matches!(
            WorldModel::from_json(r#"{"obstacles":[{"kind":"rect","coords":[1,1,0,0]}]}"#),
            Err(WorldError::BadObstacle(0))
        ));
        assert!(matches!(
            WorldModel::from_json(r#"{"sensor":{"rays":0}}"#),
            Err(WorldError::BadSensor(_))
        ));
    }
}
