//! Spherical-Earth geodesy and geofence zones.
//!
//! Distances use the haversine formula on a sphere of radius
//! [`EARTH_RADIUS_M`]. Ellipse containment is evaluated in a local
//! equirectangular tangent plane at the zone center, which is accurate to
//! well below a meter for zones of a few hundred meters.

use serde::{Deserialize, Serialize};

/// IUGG mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("coordinate is not a finite number")]
    NonFinite,
    #[error("points coincide; bearing is undefined")]
    CoincidentPoints,
    #[error("invalid zone: {0}")]
    InvalidZone(&'static str),
}

/// A WGS84 position in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint", into = "RawPoint")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = GeoError;
    fn try_from(r: RawPoint) -> Result<Self, GeoError> {
        GeoPoint::new(r.lat, r.lon)
    }
}

impl From<GeoPoint> for RawPoint {
    fn from(p: GeoPoint) -> Self {
        RawPoint { lat: p.lat, lon: p.lon }
    }
}

impl GeoPoint {
    /// Longitude 180 is accepted and stored as -180.
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self, GeoError> {
        if !lat_deg.is_finite() || !lon_deg.is_finite() {
            return Err(GeoError::NonFinite);
        }
        if !(-90.0..=90.0).contains(&lat_deg) {
            return Err(GeoError::Latitude(lat_deg));
        }
        if !(-180.0..=180.0).contains(&lon_deg) {
            return Err(GeoError::Longitude(lon_deg));
        }
        let lon = if lon_deg == 180.0 { -180.0 } else { lon_deg };
        Ok(GeoPoint { lat: lat_deg, lon })
    }

    pub fn lat_deg(&self) -> f64 {
        self.lat
    }

    pub fn lon_deg(&self) -> f64 {
        self.lon
    }
}

/// Great-circle distance in meters.
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    // Order the operands so the result is bit-for-bit symmetric.
    let (a, b) = if (a.lat, a.lon) <= (b.lat, b.lon) { (a, b) } else { (b, a) };
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Forward azimuth at `from` of the great circle towards `to`, in [0, 360).
pub fn initial_bearing(from: GeoPoint, to: GeoPoint) -> Result<f64, GeoError> {
    if from == to {
        return Err(GeoError::CoincidentPoints);
    }
    let phi1 = from.lat.to_radians();
    let phi2 = to.lat.to_radians();
    let dlambda = (to.lon - from.lon).to_radians();
    let y = dlambda.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlambda.cos();
    Ok(normalize_bearing(y.atan2(x).to_degrees()))
}

/// Point reached by travelling `distance_m` along a great circle from
/// `origin` with initial bearing `bearing_deg`.
pub fn destination(origin: GeoPoint, bearing_deg: f64, distance_m: f64) -> GeoPoint {
    let delta = distance_m / EARTH_RADIUS_M;
    let theta = bearing_deg.to_radians();
    let phi1 = origin.lat.to_radians();
    let lambda1 = origin.lon.to_radians();
    let phi2 = (phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * theta.cos()).asin();
    let lambda2 = lambda1
        + (theta.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * phi2.sin());
    let lon = (lambda2.to_degrees() + 540.0).rem_euclid(360.0) - 180.0;
    GeoPoint { lat: phi2.to_degrees().clamp(-90.0, 90.0), lon }
}

/// Point at fraction `f` in [0, 1] along the great circle from `a` to `b`.
pub fn interpolate(a: GeoPoint, b: GeoPoint, f: f64) -> GeoPoint {
    let d = haversine_distance(a, b);
    if d == 0.0 || f <= 0.0 {
        return a;
    }
    if f >= 1.0 {
        return b;
    }
    let delta = d / EARTH_RADIUS_M;
    let (phi1, l1) = (a.lat.to_radians(), a.lon.to_radians());
    let (phi2, l2) = (b.lat.to_radians(), b.lon.to_radians());
    let wa = ((1.0 - f) * delta).sin() / delta.sin();
    let wb = (f * delta).sin() / delta.sin();
    let x = wa * phi1.cos() * l1.cos() + wb * phi2.cos() * l2.cos();
    let y = wa * phi1.cos() * l1.sin() + wb * phi2.cos() * l2.sin();
    let z = wa * phi1.sin() + wb * phi2.sin();
    let lat = z.atan2((x * x + y * y).sqrt()).to_degrees();
    let lon = y.atan2(x).to_degrees();
    GeoPoint { lat, lon: if lon >= 180.0 { lon - 360.0 } else { lon } }
}

/// Offset of `p` from `origin` in the local east-north tangent plane, meters.
pub fn tangent_offset(origin: GeoPoint, p: GeoPoint) -> (f64, f64) {
    let mut dlon = p.lon - origin.lon;
    if dlon > 180.0 {
        dlon -= 360.0;
    } else if dlon < -180.0 {
        dlon += 360.0;
    }
    let east = EARTH_RADIUS_M * dlon.to_radians() * origin.lat.to_radians().cos();
    let north = EARTH_RADIUS_M * (p.lat - origin.lat).to_radians();
    (east, north)
}

/// Inverse of [`tangent_offset`].
pub fn from_tangent_offset(origin: GeoPoint, east_m: f64, north_m: f64) -> GeoPoint {
    let lat = (origin.lat + (north_m / EARTH_RADIUS_M).to_degrees()).clamp(-90.0, 90.0);
    let cos = origin.lat.to_radians().cos().max(1e-12);
    let lon = origin.lon + (east_m / (EARTH_RADIUS_M * cos)).to_degrees();
    let lon = (lon + 540.0).rem_euclid(360.0) - 180.0;
    GeoPoint { lat, lon }
}

pub fn normalize_bearing(deg: f64) -> f64 {
    let b = deg.rem_euclid(360.0);
    if b >= 360.0 {
        0.0
    } else {
        b
    }
}

/// Geofence around a point of interest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum LocalizationZone {
    Circle {
        center: GeoPoint,
        radius_m: f64,
    },
    /// The minor axis points along `minor_axis_bearing_deg`.
    Ellipse {
        center: GeoPoint,
        semi_major_m: f64,
        semi_minor_m: f64,
        minor_axis_bearing_deg: f64,
    },
}

impl LocalizationZone {
    pub fn circle(center: GeoPoint, radius_m: f64) -> Result<Self, GeoError> {
        if !(radius_m.is_finite() && radius_m > 0.0) {
            return Err(GeoError::InvalidZone("radius must be positive"));
        }
        Ok(LocalizationZone::Circle { center, radius_m })
    }

    pub fn ellipse(
        center: GeoPoint,
        semi_major_m: f64,
        semi_minor_m: f64,
        minor_axis_bearing_deg: f64,
    ) -> Result<Self, GeoError> {
        if !(semi_major_m.is_finite() && semi_minor_m.is_finite() && minor_axis_bearing_deg.is_finite()) {
            return Err(GeoError::NonFinite);
        }
        if semi_minor_m <= 0.0 || semi_major_m <= 0.0 {
            return Err(GeoError::InvalidZone("axes must be positive"));
        }
        if semi_minor_m > semi_major_m {
            return Err(GeoError::InvalidZone("semi-minor axis exceeds semi-major axis"));
        }
        Ok(LocalizationZone::Ellipse {
            center,
            semi_major_m,
            semi_minor_m,
            minor_axis_bearing_deg: normalize_bearing(minor_axis_bearing_deg),
        })
    }

    pub fn center(&self) -> GeoPoint {
        match *self {
            LocalizationZone::Circle { center, .. } | LocalizationZone::Ellipse { center, .. } => center,
        }
    }

    /// Largest distance from the center to the boundary.
    pub fn outer_radius_m(&self) -> f64 {
        match *self {
            LocalizationZone::Circle { radius_m, .. } => radius_m,
            LocalizationZone::Ellipse { semi_major_m, .. } => semi_major_m,
        }
    }
}

pub fn zone_contains(zone: &LocalizationZone, p: GeoPoint) -> bool {
    match *zone {
        LocalizationZone::Circle { center, radius_m } => haversine_distance(center, p) <= radius_m,
        LocalizationZone::Ellipse {
            center,
            semi_major_m,
            semi_minor_m,
            minor_axis_bearing_deg,
        } => {
            let (east, north) = tangent_offset(center, p);
            let theta = minor_axis_bearing_deg.to_radians();
            let (s, c) = theta.sin_cos();
            let along_minor = east * s + north * c;
            let along_major = east * c - north * s;
            (along_minor / semi_minor_m).powi(2) + (along_major / semi_major_m).powi(2) <= 1.0
        }
    }
}

/// Ellipse at `center` whose minor axis points at `next_poi`.
pub fn ellipse_toward(
    center: GeoPoint,
    next_poi: GeoPoint,
    semi_major_m: f64,
    semi_minor_m: f64,
) -> Result<LocalizationZone, GeoError> {
    let bearing = initial_bearing(center, next_poi)?;
    LocalizationZone::ellipse(center, semi_major_m, semi_minor_m, bearing)
}
