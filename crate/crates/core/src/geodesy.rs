//! WGS-84 coordinate fulfilment: geodetic ↔ ECEF ↔ local ENU, grid moves to
//! GPS waypoints, and polygonal geofence containment.

use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::Action;

/// WGS-84 semi-major axis (m).
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// Semi-minor axis b = a(1 − f).
pub const WGS84_B: f64 = WGS84_A * (1.0 - WGS84_F);
/// First eccentricity squared e² = f(2 − f).
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);

const LAT_TOLERANCE: f64 = 1e-12;
const MAX_ITERATIONS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodeticCoord {
    /// Degrees, [−90, 90].
    pub latitude: f64,
    /// Degrees, (−180, 180].
    pub longitude: f64,
    /// Metres above the ellipsoid.
    pub altitude: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EcefCoord {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnuCoord {
    pub east: f64,
    pub north: f64,
    pub up: f64,
}

impl fmt::Display for GeodeticCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} {:?} {:?}", self.latitude + 0.0, self.longitude + 0.0, self.altitude + 0.0)
    }
}

impl fmt::Display for EcefCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} {:?} {:?}", self.x + 0.0, self.y + 0.0, self.z + 0.0)
    }
}

impl fmt::Display for EnuCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} {:?} {:?}", self.east + 0.0, self.north + 0.0, self.up + 0.0)
    }
}

/// Wraps a longitude into (−180, 180].
pub fn normalize_longitude(lon: f64) -> f64 {
    let mut l = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if l == -180.0 {
        l = 180.0;
    }
    l
}

impl GeodeticCoord {
    /// Validated coordinate; longitude is normalised.
    pub fn new(latitude: f64, longitude: f64, altitude: f64) -> Result<Self> {
        if !latitude.is_finite() || !(-90.0..=90.0).contains(&latitude) {
            return Err(Error::Domain(format!("latitude {latitude} outside [-90, 90]")));
        }
        if !longitude.is_finite() || !altitude.is_finite() {
            return Err(Error::Domain("longitude and altitude must be finite".into()));
        }
        Ok(GeodeticCoord {
            latitude,
            longitude: normalize_longitude(longitude),
            altitude,
        })
    }

    fn check(&self) -> Result<()> {
        GeodeticCoord::new(self.latitude, self.longitude, self.altitude).map(|_| ())
    }
}

impl EcefCoord {
    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance(&self, other: &EcefCoord) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

impl EnuCoord {
    pub fn horizontal_norm(&self) -> f64 {
        self.east.hypot(self.north)
    }
}

impl std::ops::Sub for EnuCoord {
    type Output = EnuCoord;

    fn sub(self, rhs: EnuCoord) -> EnuCoord {
        EnuCoord {
            east: self.east - rhs.east,
            north: self.north - rhs.north,
            up: self.up - rhs.up,
        }
    }
}

impl std::ops::Neg for EnuCoord {
    type Output = EnuCoord;

    fn neg(self) -> EnuCoord {
        EnuCoord {
            east: -self.east,
            north: -self.north,
            up: -self.up,
        }
    }
}

/// Prime-vertical radius of curvature N(φ).
fn prime_vertical(sin_lat: f64) -> f64 {
    WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt()
}

pub fn geodetic_to_ecef(g: &GeodeticCoord) -> Result<EcefCoord> {
    g.check()?;
    let (sin_lat, cos_lat) = g.latitude.to_radians().sin_cos();
    let (sin_lon, cos_lon) = g.longitude.to_radians().sin_cos();
    let n = prime_vertical(sin_lat);
    Ok(EcefCoord {
        x: (n + g.altitude) * cos_lat * cos_lon,
        y: (n + g.altitude) * cos_lat * sin_lon,
        z: (n * (1.0 - WGS84_E2) + g.altitude) * sin_lat,
    })
}

/// Iterative inverse: φ ← atan2(z + e²N(φ)sinφ, p) until the update is
/// below 1e-12 rad. Points on the polar axis use the closed form with
/// longitude 0.
pub fn ecef_to_geodetic(e: &EcefCoord) -> Result<GeodeticCoord> {
    if !(e.x.is_finite() && e.y.is_finite() && e.z.is_finite()) {
        return Err(Error::Domain("ECEF coordinate must be finite".into()));
    }
    if e.norm() == 0.0 {
        return Err(Error::Domain("the Earth's centre has no geodetic position".into()));
    }
    let p = e.x.hypot(e.y);
    if p < 1e-9 {
        let latitude = if e.z >= 0.0 { 90.0 } else { -90.0 };
        return Ok(GeodeticCoord {
            latitude,
            longitude: 0.0,
            altitude: e.z.abs() - WGS84_B,
        });
    }
    let longitude = e.y.atan2(e.x).to_degrees();
    let mut lat = e.z.atan2(p * (1.0 - WGS84_E2));
    for _ in 0..MAX_ITERATIONS {
        let sin_lat = lat.sin();
        let next = (e.z + WGS84_E2 * prime_vertical(sin_lat) * sin_lat).atan2(p);
        let done = (next - lat).abs() < LAT_TOLERANCE;
        lat = next;
        if done {
            break;
        }
    }
    let (sin_lat, cos_lat) = lat.sin_cos();
    let altitude = p * cos_lat + e.z * sin_lat - WGS84_A * (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
    Ok(GeodeticCoord {
        latitude: lat.to_degrees(),
        longitude: normalize_longitude(longitude),
        altitude,
    })
}

/// Rows of the ECEF → ENU rotation at `reference`.
fn enu_basis(reference: &GeodeticCoord) -> [[f64; 3]; 3] {
    let (sl, cl) = reference.latitude.to_radians().sin_cos();
    let (so, co) = reference.longitude.to_radians().sin_cos();
    [
        [-so, co, 0.0],
        [-sl * co, -sl * so, cl],
        [cl * co, cl * so, sl],
    ]
}

pub fn ecef_to_enu(e: &EcefCoord, reference: &GeodeticCoord) -> Result<EnuCoord> {
    let origin = geodetic_to_ecef(reference)?;
    let d = [e.x - origin.x, e.y - origin.y, e.z - origin.z];
    let r = enu_basis(reference);
    let dot = |row: [f64; 3]| row[0] * d[0] + row[1] * d[1] + row[2] * d[2];
    Ok(EnuCoord {
        east: dot(r[0]),
        north: dot(r[1]),
        up: dot(r[2]),
    })
}

pub fn enu_to_ecef(v: &EnuCoord, reference: &GeodeticCoord) -> Result<EcefCoord> {
    let origin = geodetic_to_ecef(reference)?;
    let r = enu_basis(reference);
    let col = |i: usize| r[0][i] * v.east + r[1][i] * v.north + r[2][i] * v.up;
    Ok(EcefCoord {
        x: origin.x + col(0),
        y: origin.y + col(1),
        z: origin.z + col(2),
    })
}

pub fn geodetic_to_enu(g: &GeodeticCoord, reference: &GeodeticCoord) -> Result<EnuCoord> {
    ecef_to_enu(&geodetic_to_ecef(g)?, reference)
}

pub fn enu_to_geodetic(v: &EnuCoord, reference: &GeodeticCoord) -> Result<GeodeticCoord> {
    ecef_to_geodetic(&enu_to_ecef(v, reference)?)
}

/// Metre offset to command: ENU(target) − ENU(current) in the frame of `reference`.
pub fn offset_to_target(
    current: &GeodeticCoord,
    target: &GeodeticCoord,
    reference: &GeodeticCoord,
) -> Result<EnuCoord> {
    Ok(geodetic_to_enu(target, reference)? - geodetic_to_enu(current, reference)?)
}

/// Waypoint one grid cell from `current` along `action`. Grid north is
/// rotated clockwise from true north by `grid_bearing_deg`. The displacement
/// is horizontal in the local tangent plane and the waypoint keeps the
/// current altitude.
pub fn action_to_waypoint(
    current: &GeodeticCoord,
    action: Action,
    cell_size: f64,
    grid_bearing_deg: f64,
) -> Result<GeodeticCoord> {
    let (dr, dc) = action.delta();
    // Grid rows grow southwards.
    let (ge, gn) = (dc as f64 * cell_size, -dr as f64 * cell_size);
    let (sb, cb) = grid_bearing_deg.to_radians().sin_cos();
    let offset = EnuCoord {
        east: ge * cb + gn * sb,
        north: -ge * sb + gn * cb,
        up: 0.0,
    };
    let mut wp = enu_to_geodetic(&offset, current)?;
    wp.altitude = current.altitude;
    Ok(wp)
}

/// Simple polygon of GPS vertices, implicitly closed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoFence {
    pub vertices: Vec<GeodeticCoord>,
}

impl GeoFence {
    pub fn new(vertices: Vec<GeodeticCoord>) -> Result<Self> {
        let fence = GeoFence { vertices };
        fence.check()?;
        Ok(fence)
    }

    fn check(&self) -> Result<()> {
        let mut distinct: Vec<(f64, f64)> = Vec::new();
        for v in &self.vertices {
            v.check()?;
            if !distinct.iter().any(|d| *d == (v.latitude, v.longitude)) {
                distinct.push((v.latitude, v.longitude));
            }
        }
        if distinct.len() < 3 {
            return Err(Error::Domain(format!(
                "geofence needs at least 3 distinct vertices, has {}",
                distinct.len()
            )));
        }
        Ok(())
    }

    /// Parses one `lat, lon` vertex per line; blank lines and `#` comments
    /// are ignored. A repeated closing vertex is dropped.
    pub fn parse<R: BufRead>(input: R) -> Result<Self> {
        let mut vertices = Vec::new();
        for line in input.lines() {
            let line = line?;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split([',', ' ', '\t']).filter(|s| !s.is_empty()).collect();
            if fields.len() != 2 {
                return Err(Error::Dataset(format!("expected `lat, lon`, got `{line}`")));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Dataset(format!("bad coordinate `{s}`")))
            };
            vertices.push(GeodeticCoord::new(num(fields[0])?, num(fields[1])?, 0.0)?);
        }
        if vertices.len() > 1 && vertices.first().map(|v| (v.latitude, v.longitude)) == vertices.last().map(|v| (v.latitude, v.longitude)) {
            vertices.pop();
        }
        GeoFence::new(vertices)
    }

    /// Vertices projected onto the tangent plane at `reference` as (east, north).
    pub fn local_polygon(&self, reference: &GeodeticCoord) -> Result<Vec<(f64, f64)>> {
        self.vertices
            .iter()
            .map(|v| {
                let p = GeodeticCoord { altitude: reference.altitude, ..*v };
                geodetic_to_enu(&p, reference).map(|e| (e.east, e.north))
            })
            .collect()
    }
}

/// Tolerance within which a point counts as lying on a fence edge (m).
pub const FENCE_EDGE_TOLERANCE: f64 = 1e-9;

fn on_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> bool {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    (p.0 - cx).hypot(p.1 - cy) <= FENCE_EDGE_TOLERANCE
}

/// Even-odd ray casting in a plane; points on an edge count as inside.
pub fn polygon_contains(poly: &[(f64, f64)], p: (f64, f64)) -> bool {
    let n = poly.len();
    if (0..n).any(|i| on_segment(p, poly[i], poly[(i + 1) % n])) {
        return true;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > p.1) != (yj > p.1) {
            let x_cross = xj + (p.1 - yj) * (xi - xj) / (yi - yj);
            if p.0 < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Fence containment, tested in the ENU tangent plane at `reference`.
pub fn geofence_contains(fence: &GeoFence, p: &GeodeticCoord, reference: &GeodeticCoord) -> Result<bool> {
    fence.check()?;
    let poly = fence.local_polygon(reference)?;
    let q = GeodeticCoord { altitude: reference.altitude, ..*p };
    let local = geodetic_to_enu(&q, reference)?;
    Ok(polygon_contains(&poly, (local.east, local.north)))
}
