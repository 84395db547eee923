//! Coordinates, the local metric projection, and the planar polygon
//! predicates shared by the map model, rasterizer, and simulator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// WGS84 equatorial radius used by the local projection.
pub const EARTH_RADIUS_M: f64 = 6_378_137.0;

/// Projection is rejected at or beyond this absolute latitude.
pub const MAX_PROJECTION_LAT: f64 = 85.0;

/// Boundary tolerance for containment tests in degree space.
pub const CONTAINMENT_TOLERANCE_DEG: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }

    /// Great-circle distance on a sphere of radius [`EARTH_RADIUS_M`].
    pub fn haversine_m(&self, other: &GeoPoint) -> f64 {
        let (p1, p2) = (self.lat.to_radians(), other.lat.to_radians());
        let dp = p2 - p1;
        let dl = (other.lon - self.lon).to_radians();
        let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * a.sqrt().asin()
    }

    /// `(lon, lat)` as a planar point, used for containment in degree space.
    pub fn as_planar(&self) -> Planar {
        Planar::new(self.lon, self.lat)
    }
}

/// Meters east (`x`) and north (`y`) of a map's projection origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub x: f64,
    pub y: f64,
}

impl MetricPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &MetricPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn as_planar(&self) -> Planar {
        Planar::new(self.x, self.y)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("latitude {0} is outside the supported band |lat| < {MAX_PROJECTION_LAT}")]
    LatitudeOutOfBand(f64),
}

fn check_band(lat: f64) -> Result<(), ProjectionError> {
    if lat.is_finite() && lat.abs() < MAX_PROJECTION_LAT {
        Ok(())
    } else {
        Err(ProjectionError::LatitudeOutOfBand(lat))
    }
}

/// Local equirectangular projection around `origin`.
pub fn project(p: GeoPoint, origin: GeoPoint) -> Result<MetricPoint, ProjectionError> {
    check_band(p.lat)?;
    check_band(origin.lat)?;
    let k = std::f64::consts::PI / 180.0 * EARTH_RADIUS_M;
    Ok(MetricPoint {
        x: (p.lon - origin.lon) * k * origin.lat.to_radians().cos(),
        y: (p.lat - origin.lat) * k,
    })
}

/// Inverse of [`project`].
pub fn unproject(p: MetricPoint, origin: GeoPoint) -> Result<GeoPoint, ProjectionError> {
    check_band(origin.lat)?;
    let k = std::f64::consts::PI / 180.0 * EARTH_RADIUS_M;
    let lat = origin.lat + p.y / k;
    check_band(lat)?;
    Ok(GeoPoint {
        lat,
        lon: origin.lon + p.x / (k * origin.lat.to_radians().cos()),
    })
}

/// A plain 2D point for planar predicates, independent of frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Planar {
    pub x: f64,
    pub y: f64,
}

impl Planar {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

fn cross(o: Planar, a: Planar, b: Planar) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Euclidean distance from `p` to the closed segment `a`–`b`.
pub fn point_segment_distance(p: Planar, a: Planar, b: Planar) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return (p.x - a.x).hypot(p.y - a.y);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    (p.x - (a.x + t * dx)).hypot(p.y - (a.y + t * dy))
}

/// Distance from `p` to the boundary of the polygon `ring` (open ring, no
/// repeated closing vertex).
pub fn boundary_distance(p: Planar, ring: &[Planar]) -> f64 {
    edges(ring)
        .map(|(a, b)| point_segment_distance(p, a, b))
        .fold(f64::INFINITY, f64::min)
}

/// Iterates the edges of an open ring, including the closing edge.
pub fn edges(ring: &[Planar]) -> impl Iterator<Item = (Planar, Planar)> + '_ {
    let n = ring.len();
    (0..n).map(move |i| (ring[i], ring[(i + 1) % n]))
}

/// Even-odd crossing test; points within `tolerance` of the boundary count as
/// inside.
pub fn point_in_polygon(p: Planar, ring: &[Planar], tolerance: f64) -> bool {
    if ring.len() < 3 {
        return false;
    }
    if boundary_distance(p, ring) <= tolerance {
        return true;
    }
    let mut inside = false;
    for (a, b) in edges(ring) {
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Absolute polygon area via the shoelace formula.
pub fn polygon_area(ring: &[Planar]) -> f64 {
    edges(ring).map(|(a, b)| a.x * b.y - b.x * a.y).sum::<f64>().abs() / 2.0
}

/// Area-weighted centroid; falls back to the vertex mean for degenerate rings.
pub fn polygon_centroid(ring: &[Planar]) -> Planar {
    let mut a2 = 0.0;
    let (mut cx, mut cy) = (0.0, 0.0);
    for (p, q) in edges(ring) {
        let c = p.x * q.y - q.x * p.y;
        a2 += c;
        cx += (p.x + q.x) * c;
        cy += (p.y + q.y) * c;
    }
    if a2.abs() < 1e-12 {
        let n = ring.len().max(1) as f64;
        return Planar::new(
            ring.iter().map(|p| p.x).sum::<f64>() / n,
            ring.iter().map(|p| p.y).sum::<f64>() / n,
        );
    }
    Planar::new(cx / (3.0 * a2), cy / (3.0 * a2))
}

/// True when the closed segments `a1`–`a2` and `b1`–`b2` share a point.
pub fn segments_intersect(a1: Planar, a2: Planar, b1: Planar, b2: Planar) -> bool {
    let d1 = cross(b1, b2, a1);
    let d2 = cross(b1, b2, a2);
    let d3 = cross(a1, a2, b1);
    let d4 = cross(a1, a2, b2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |p: Planar, q: Planar, r: Planar| {
        r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    (d1 == 0.0 && on(b1, b2, a1))
        || (d2 == 0.0 && on(b1, b2, a2))
        || (d3 == 0.0 && on(a1, a2, b1))
        || (d4 == 0.0 && on(a1, a2, b2))
}

/// A ring is simple when no two non-adjacent edges touch.
pub fn is_simple(ring: &[Planar]) -> bool {
    let n = ring.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a1, a2) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (b1, b2) = (ring[j], ring[(j + 1) % n]);
            if segments_intersect(a1, a2, b1, b2) {
                return false;
            }
        }
    }
    true
}

/// Parameter `t` along the ray `origin + t * dir` (unit `dir`) where it first
/// meets the segment `a`–`b`, if it does.
pub fn ray_segment(origin: Planar, dir: (f64, f64), a: Planar, b: Planar) -> Option<f64> {
    let (ex, ey) = (b.x - a.x, b.y - a.y);
    let denom = dir.0 * ey - dir.1 * ex;
    let (wx, wy) = (a.x - origin.x, a.y - origin.y);
    if denom.abs() < 1e-12 {
        // Parallel; a collinear overlap is hit at its nearest endpoint.
        if (wx * dir.1 - wy * dir.0).abs() > 1e-9 {
            return None;
        }
        let ta = wx * dir.0 + wy * dir.1;
        let tb = (b.x - origin.x) * dir.0 + (b.y - origin.y) * dir.1;
        let (lo, hi) = (ta.min(tb), ta.max(tb));
        return if hi < 0.0 { None } else { Some(lo.max(0.0)) };
    }
    let t = (wx * ey - wy * ex) / denom;
    let s = (wx * dir.1 - wy * dir.0) / denom;
    (t >= 0.0 && (-1e-12..=1.0 + 1e-12).contains(&s)).then_some(t)
}

/// Smallest signed difference `a - b` between two headings, in degrees.
pub fn angle_diff_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn project_origin_is_zero() {
        let o = GeoPoint::new(31.0, 121.0);
        let m = project(o, o).unwrap();
        assert_eq!(m, MetricPoint::new(0.0, 0.0));
    }

    #[test]
    fn project_small_offsets() {
        // independent evaluation of R * pi/180 * d * cos(lat0)
        let deg_m = 6_378_137.0_f64 * std::f64::consts::PI / 180.0;
        assert!((deg_m - 111_319.490_793).abs() < 1e-3);
        let o = GeoPoint::new(31.0, 121.0);
        let east = project(GeoPoint::new(31.0, 121.00001), o).unwrap();
        assert!((east.x - 0.954_194_27).abs() < 1e-7, "{}", east.x);
        assert!(east.y.abs() < 1e-12);
        let north = project(GeoPoint::new(31.00001, 121.0), o).unwrap();
        assert!((north.y - 1.113_194_91).abs() < 1e-7, "{}", north.y);
        assert!(north.x.abs() < 1e-12);
    }

    #[test]
    fn projection_rejects_polar_latitudes() {
        let o = GeoPoint::new(85.0, 0.0);
        assert!(project(GeoPoint::new(10.0, 0.0), o).is_err());
        assert!(project(GeoPoint::new(-86.0, 0.0), GeoPoint::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn unproject_inverts_project() {
        let o = GeoPoint::new(-33.9, 151.2);
        let p = GeoPoint::new(-33.8991, 151.2013);
        let back = unproject(project(p, o).unwrap(), o).unwrap();
        assert!((back.lat - p.lat).abs() < 1e-9 && (back.lon - p.lon).abs() < 1e-9);
    }

    #[test]
    fn boundary_counts_as_inside() {
        let sq = [
            Planar::new(0.0, 0.0),
            Planar::new(1.0, 0.0),
            Planar::new(1.0, 1.0),
            Planar::new(0.0, 1.0),
        ];
        assert!(point_in_polygon(Planar::new(0.5, 0.5), &sq, 0.0));
        assert!(point_in_polygon(Planar::new(1.0, 0.5), &sq, 1e-9));
        assert!(point_in_polygon(Planar::new(0.0, 0.0), &sq, 1e-9));
        assert!(!point_in_polygon(Planar::new(1.1, 0.5), &sq, 1e-9));
        assert!((polygon_area(&sq) - 1.0).abs() < 1e-12);
        let c = polygon_centroid(&sq);
        assert!((c.x - 0.5).abs() < 1e-12 && (c.y - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bowtie_is_not_simple() {
        let bowtie = [
            Planar::new(0.0, 0.0),
            Planar::new(1.0, 1.0),
            Planar::new(1.0, 0.0),
            Planar::new(0.0, 1.0),
        ];
        assert!(!is_simple(&bowtie));
        let sq = [
            Planar::new(0.0, 0.0),
            Planar::new(1.0, 0.0),
            Planar::new(1.0, 1.0),
            Planar::new(0.0, 1.0),
        ];
        assert!(is_simple(&sq));
    }

    #[test]
    fn ray_hits_segment() {
        let t = ray_segment(
            Planar::new(0.0, 0.0),
            (1.0, 0.0),
            Planar::new(2.0, -1.0),
            Planar::new(2.0, 1.0),
        );
        assert_eq!(t, Some(2.0));
        let miss = ray_segment(
            Planar::new(0.0, 0.0),
            (-1.0, 0.0),
            Planar::new(2.0, -1.0),
            Planar::new(2.0, 1.0),
        );
        assert_eq!(miss, None);
    }

    #[test]
    fn angle_diff_wraps() {
        assert_eq!(angle_diff_deg(10.0, 350.0), 20.0);
        assert_eq!(angle_diff_deg(350.0, 10.0), -20.0);
        assert_eq!(angle_diff_deg(180.0, 0.0), 180.0);
    }
}
