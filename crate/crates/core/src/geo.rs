//! Spherical-earth geodesy helpers.
//!
//! Everything here assumes a sphere of radius [`EARTH_RADIUS_M`]; at the
//! sub-kilometre scales the pipeline works at, the ellipsoidal error is far
//! below GPS noise.

use serde::{Deserialize, Serialize};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// A WGS84-style coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    fn to_unit(self) -> [f64; 3] {
        let (phi, lam) = (self.lat.to_radians(), self.lon.to_radians());
        [phi.cos() * lam.cos(), phi.cos() * lam.sin(), phi.sin()]
    }

    fn from_unit(v: [f64; 3]) -> Self {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let z = (v[2] / norm).clamp(-1.0, 1.0);
        Self {
            lat: z.asin().to_degrees(),
            lon: v[1].atan2(v[0]).to_degrees(),
        }
    }
}

/// Great-circle distance in metres (haversine form).
pub fn haversine_m(a: LatLon, b: LatLon) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = p2 - p1;
    let dlam = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dlam / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Initial compass bearing from `a` to `b`, degrees in [0, 360).
pub fn bearing_deg(a: LatLon, b: LatLon) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlam = (b.lon - a.lon).to_radians();
    let y = dlam.sin() * p2.cos();
    let x = p1.cos() * p2.sin() - p1.sin() * p2.cos() * dlam.cos();
    y.atan2(x).to_degrees().rem_euclid(360.0)
}

/// Signed smallest rotation from bearing `from` to bearing `to`, in (-180, 180].
/// Negative values are counter-clockwise (left) turns.
pub fn bearing_delta_deg(from: f64, to: f64) -> f64 {
    let d = (to - from).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Point reached by travelling `distance_m` from `start` on initial `bearing`.
pub fn destination(start: LatLon, bearing: f64, distance_m: f64) -> LatLon {
    let delta = distance_m / EARTH_RADIUS_M;
    let theta = bearing.to_radians();
    let p1 = start.lat.to_radians();
    let l1 = start.lon.to_radians();
    let p2 = (p1.sin() * delta.cos() + p1.cos() * delta.sin() * theta.cos()).asin();
    let l2 = l1 + (theta.sin() * delta.sin() * p1.cos()).atan2(delta.cos() - p1.sin() * p2.sin());
    LatLon::new(p2.to_degrees(), l2.to_degrees())
}

/// Point on the great circle through `a` and `b` at fraction `f` of the way.
pub fn interpolate(a: LatLon, b: LatLon, f: f64) -> LatLon {
    if f <= 0.0 {
        return a;
    }
    if f >= 1.0 {
        return b;
    }
    let (ua, ub) = (a.to_unit(), b.to_unit());
    let dot = (ua[0] * ub[0] + ua[1] * ub[1] + ua[2] * ub[2]).clamp(-1.0, 1.0);
    let omega = dot.acos();
    if omega < 1e-15 {
        return a;
    }
    let s = omega.sin();
    let wa = ((1.0 - f) * omega).sin() / s;
    let wb = (f * omega).sin() / s;
    LatLon::from_unit([
        wa * ua[0] + wb * ub[0],
        wa * ua[1] + wb * ub[1],
        wa * ua[2] + wb * ub[2],
    ])
}

/// The point at angular distance `d/R` from both `a` and `b`, on the side of
/// the `a`-`b` chord facing away from `away`. Used to lay out rhombic grids
/// whose edges all have the same geodesic length.
pub fn equidistant_apex(a: LatLon, b: LatLon, distance_m: f64, away: LatLon) -> LatLon {
    let (ua, ub, uw) = (a.to_unit(), b.to_unit(), away.to_unit());
    let s = ua[0] * ub[0] + ua[1] * ub[1] + ua[2] * ub[2];
    let cos_t = (distance_m / EARTH_RADIUS_M).cos();
    let c = cos_t / (1.0 + s);
    let cross = [
        ua[1] * ub[2] - ua[2] * ub[1],
        ua[2] * ub[0] - ua[0] * ub[2],
        ua[0] * ub[1] - ua[1] * ub[0],
    ];
    let cn = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    let n = [cross[0] / cn, cross[1] / cn, cross[2] / cn];
    // 1 - 2c²(1+s) rewritten as (cos φ - cos 2θ)/(1+s) to avoid cancellation
    let phi = cn.atan2(s);
    let two_theta = 2.0 * distance_m / EARTH_RADIUS_M;
    let diff = 2.0 * ((two_theta + phi) / 2.0).sin() * ((two_theta - phi) / 2.0).sin();
    let e = (diff / (1.0 + s)).max(0.0).sqrt();
    let base = [c * (ua[0] + ub[0]), c * (ua[1] + ub[1]), c * (ua[2] + ub[2])];
    let side = n[0] * uw[0] + n[1] * uw[1] + n[2] * uw[2];
    let e = if side > 0.0 { -e } else { e };
    LatLon::from_unit([base[0] + e * n[0], base[1] + e * n[1], base[2] + e * n[2]])
}

/// Local tangent-plane projection (east/north metres) around a reference point.
#[derive(Debug, Clone, Copy)]
pub struct LocalFrame {
    origin: LatLon,
    m_per_deg_lat: f64,
    m_per_deg_lon: f64,
}

impl LocalFrame {
    pub fn new(origin: LatLon) -> Self {
        let m_per_deg_lat = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        Self {
            origin,
            m_per_deg_lat,
            m_per_deg_lon: m_per_deg_lat * origin.lat.to_radians().cos(),
        }
    }

    pub fn project(&self, p: LatLon) -> [f64; 2] {
        [
            (p.lon - self.origin.lon) * self.m_per_deg_lon,
            (p.lat - self.origin.lat) * self.m_per_deg_lat,
        ]
    }

    pub fn unproject(&self, xy: [f64; 2]) -> LatLon {
        LatLon::new(
            self.origin.lat + xy[1] / self.m_per_deg_lat,
            self.origin.lon + xy[0] / self.m_per_deg_lon,
        )
    }
}

/// Closest point on the polyline to `p`: `(point, fraction of total length, distance_m)`.
///
/// The search runs in a tangent plane centred on `p`; the returned distance is
/// the great-circle distance to the returned point.
pub fn closest_on_polyline(p: LatLon, polyline: &[LatLon], lengths: &[f64]) -> (LatLon, f64, f64) {
    let frame = LocalFrame::new(p);
    let total: f64 = lengths.iter().sum();
    let mut best: Option<(f64, usize, f64)> = None;
    for (i, w) in polyline.windows(2).enumerate() {
        let a = frame.project(w[0]);
        let b = frame.project(w[1]);
        let ab = [b[0] - a[0], b[1] - a[1]];
        let len2 = ab[0] * ab[0] + ab[1] * ab[1];
        let f = if len2 == 0.0 {
            0.0
        } else {
            ((-a[0] * ab[0] - a[1] * ab[1]) / len2).clamp(0.0, 1.0)
        };
        let q = [a[0] + f * ab[0], a[1] + f * ab[1]];
        let d2 = q[0] * q[0] + q[1] * q[1];
        if best.is_none_or(|(bd, _, _)| d2 < bd) {
            best = Some((d2, i, f));
        }
    }
    let (_, i, f) = best.expect("polyline has at least two vertices");
    let snapped = interpolate(polyline[i], polyline[i + 1], f);
    let before: f64 = lengths[..i].iter().sum();
    let along = if total > 0.0 {
        ((before + f * lengths[i]) / total).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (snapped, along, haversine_m(p, snapped))
}
