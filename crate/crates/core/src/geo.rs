//! WGS84 geodetic, earth-centered earth-fixed (ECEF), and local east-north-up
//! (ENU) coordinates, plus the terminal-airspace membership test.
//!
//! Pressure altitude is treated as height above the ellipsoid; no geoid model is
//! applied. The ENU frame is tangent to the ellipsoid at the airport reference,
//! using the geodetic (not geocentric) latitude of the reference.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// WGS84 semi-major axis in meters.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// WGS84 semi-minor axis in meters.
pub const WGS84_B: f64 = WGS84_A * (1.0 - WGS84_F);
/// First eccentricity squared.
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);

/// One nautical mile in meters.
pub const NAUTICAL_MILE: f64 = 1852.0;
/// One foot in meters.
pub const FOOT: f64 = 0.3048;

/// Default lateral half-width of the terminal airspace box: 5 NM.
pub const DEFAULT_LATERAL_BOUND: f64 = 5.0 * NAUTICAL_MILE;
/// Default vertical extent of the terminal airspace box: 3000 ft.
pub const DEFAULT_VERTICAL_BOUND: f64 = 3000.0 * FOOT;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodeticPosition {
    /// Degrees, WGS84.
    pub latitude: f64,
    /// Degrees, WGS84.
    pub longitude: f64,
    /// Meters.
    pub altitude: f64,
}

impl GeodeticPosition {
    /// Returns `None` when latitude/longitude are out of range or any field is
    /// not finite.
    pub fn new(latitude: f64, longitude: f64, altitude: f64) -> Option<Self> {
        let valid = latitude.is_finite()
            && longitude.is_finite()
            && altitude.is_finite()
            && (-90.0..=90.0).contains(&latitude)
            && (-180.0..=180.0).contains(&longitude);
        valid.then_some(Self {
            latitude,
            longitude,
            altitude,
        })
    }
}

/// Position in meters relative to the airport reference.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnuPosition {
    pub east: f64,
    pub north: f64,
    pub up: f64,
}

impl EnuPosition {
    pub const fn new(east: f64, north: f64, up: f64) -> Self {
        Self { east, north, up }
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.east, self.north, self.up)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

/// Airport reference point and terminal-airspace dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct AirportReference {
    origin: GeodeticPosition,
    ecef_origin: Vector3<f64>,
    /// Rows are the east, north and up unit vectors expressed in ECEF.
    ecef_to_enu: Matrix3<f64>,
    /// Approximately the length of the longest runway, meters.
    pub runway_radius: f64,
    pub lateral_bound: f64,
    pub vertical_bound: f64,
}

impl AirportReference {
    /// Reference at `origin` with the default 5 NM / 3000 ft terminal box.
    pub fn new(origin: GeodeticPosition, runway_radius: f64) -> Self {
        Self::with_bounds(
            origin,
            runway_radius,
            DEFAULT_LATERAL_BOUND,
            DEFAULT_VERTICAL_BOUND,
        )
    }

    pub fn with_bounds(
        origin: GeodeticPosition,
        runway_radius: f64,
        lateral_bound: f64,
        vertical_bound: f64,
    ) -> Self {
        assert!(runway_radius > 0.0, "runway radius must be positive");
        assert!(
            lateral_bound > 0.0 && vertical_bound > 0.0,
            "airspace bounds must be positive"
        );
        let lat = origin.latitude.to_radians();
        let lon = origin.longitude.to_radians();
        let (slat, clat) = lat.sin_cos();
        let (slon, clon) = lon.sin_cos();
        #[rustfmt::skip]
        let ecef_to_enu = Matrix3::new(
            -slon,        clon,        0.0,
            -slat * clon, -slat * slon, clat,
            clat * clon,  clat * slon,  slat,
        );
        Self {
            origin,
            ecef_origin: wgs84_to_ecef(&origin),
            ecef_to_enu,
            runway_radius,
            lateral_bound,
            vertical_bound,
        }
    }

    pub fn origin(&self) -> &GeodeticPosition {
        &self.origin
    }

    pub fn ecef_origin(&self) -> &Vector3<f64> {
        &self.ecef_origin
    }

    /// Geodetic position of a point given in this reference's ENU frame.
    pub fn enu_to_geodetic(&self, p: &EnuPosition) -> GeodeticPosition {
        ecef_to_wgs84(&enu_to_ecef(p, self))
    }

    pub fn geodetic_to_enu(&self, g: &GeodeticPosition) -> EnuPosition {
        ecef_to_enu(&wgs84_to_ecef(g), self)
    }
}

/// Standard WGS84 ellipsoid mapping from geodetic to ECEF coordinates.
pub fn wgs84_to_ecef(g: &GeodeticPosition) -> Vector3<f64> {
    let lat = g.latitude.to_radians();
    let lon = g.longitude.to_radians();
    let (slat, clat) = lat.sin_cos();
    let (slon, clon) = lon.sin_cos();
    // prime-vertical radius of curvature
    let n = WGS84_A / (1.0 - WGS84_E2 * slat * slat).sqrt();
    let h = g.altitude;
    Vector3::new(
        (n + h) * clat * clon,
        (n + h) * clat * slon,
        (n * (1.0 - WGS84_E2) + h) * slat,
    )
}

/// Inverse of [`wgs84_to_ecef`] by fixed-point iteration on latitude.
///
/// Converges to well below a millimeter for points within a few hundred
/// kilometers of the ellipsoid surface.
pub fn ecef_to_wgs84(p: &Vector3<f64>) -> GeodeticPosition {
    let lon = p.y.atan2(p.x);
    let rho = p.x.hypot(p.y);
    let mut lat = p.z.atan2(rho * (1.0 - WGS84_E2));
    let mut h = 0.0;
    for _ in 0..16 {
        let (slat, clat) = lat.sin_cos();
        let n = WGS84_A / (1.0 - WGS84_E2 * slat * slat).sqrt();
        // valid at the poles, unlike rho / cos(lat) - n
        h = rho * clat + p.z * slat - WGS84_A * (1.0 - WGS84_E2 * slat * slat).sqrt();
        let next = p.z.atan2(rho * (1.0 - WGS84_E2 * n / (n + h)));
        let done = (next - lat).abs() < 1e-15;
        lat = next;
        if done {
            break;
        }
    }
    GeodeticPosition {
        latitude: lat.to_degrees(),
        longitude: lon.to_degrees(),
        altitude: h,
    }
}

pub fn ecef_to_enu(p: &Vector3<f64>, reference: &AirportReference) -> EnuPosition {
    EnuPosition::from_vector(&(reference.ecef_to_enu * (p - reference.ecef_origin)))
}

pub fn enu_to_ecef(p: &EnuPosition, reference: &AirportReference) -> Vector3<f64> {
    reference.ecef_to_enu.transpose() * p.to_vector() + reference.ecef_origin
}

/// True iff the point is strictly inside the lateral box and the two-sided
/// vertical band around the reference.
pub fn in_terminal_airspace(p: &EnuPosition, reference: &AirportReference) -> bool {
    p.east.abs() < reference.lateral_bound
        && p.north.abs() < reference.lateral_bound
        && p.up.abs() < reference.vertical_bound
}
