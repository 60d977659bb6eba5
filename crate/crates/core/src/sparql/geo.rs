use std::fmt;

use super::EvalError;

/// Mean Earth radius (IUGG), kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// A WGS84 position. Argument order everywhere is (longitude, latitude).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeoPoint {
    lon: f64,
    lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Result<Self, EvalError> {
        if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(EvalError::Range(format!(
                "point ({lon}, {lat}) outside WGS84 bounds"
            )));
        }
        Ok(GeoPoint { lon, lat })
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    /// Parses `POINT(lon lat)`, case-insensitive, surrounding whitespace allowed.
    pub fn from_wkt(text: &str) -> Option<GeoPoint> {
        let t = text.trim();
        let head = t.get(..5)?;
        if !head.eq_ignore_ascii_case("point") {
            return None;
        }
        let body = t[5..].trim_start().strip_prefix('(')?.strip_suffix(')')?;
        let mut parts = body.split_whitespace();
        let lon = parts.next()?.parse().ok()?;
        let lat = parts.next()?.parse().ok()?;
        if parts.next().is_some() {
            return None;
        }
        GeoPoint::new(lon, lat).ok()
    }

    pub fn to_wkt(&self) -> String {
        format!("POINT({} {})", self.lon, self.lat)
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_wkt())
    }
}

/// Great-circle distance by the haversine formula.
pub fn haversine_km(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// `bif:st_point(lon, lat)`.
pub fn st_point(lon: f64, lat: f64) -> Result<GeoPoint, EvalError> {
    GeoPoint::new(lon, lat)
}

/// `bif:st_intersects(geom, center, radius_km)`: true iff the great-circle
/// distance is at most `radius_km`.
pub fn st_intersects(geom: &GeoPoint, center: &GeoPoint, radius_km: f64) -> Result<bool, EvalError> {
    if radius_km.is_nan() || radius_km < 0.0 {
        return Err(EvalError::Range(format!("negative radius {radius_km}")));
    }
    Ok(haversine_km(geom, center) <= radius_km)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Chord-length route: independent of the haversine expression.
    fn chord_km(a: &GeoPoint, b: &GeoPoint) -> f64 {
        let v = |p: &GeoPoint| {
            let (la, lo) = (p.lat.to_radians(), p.lon.to_radians());
            [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
        };
        let (u, w) = (v(a), v(b));
        let c = ((u[0] - w[0]).powi(2) + (u[1] - w[1]).powi(2) + (u[2] - w[2]).powi(2)).sqrt();
        2.0 * EARTH_RADIUS_KM * (c / 2.0).asin()
    }

    #[test]
    fn st_point_argument_order() {
        let p = st_point(6.635227203369141, 46.52119378179781).unwrap();
        assert_eq!(p.lon(), 6.635227203369141);
        assert_eq!(p.lat(), 46.52119378179781);
        let origin = st_point(0.0, 0.0).unwrap();
        assert_eq!((origin.lon(), origin.lat()), (0.0, 0.0));
        assert!(matches!(st_point(200.0, 0.0), Err(EvalError::Range(_))));
        assert!(st_point(0.0, 91.0).is_err());
    }

    #[test]
    fn intersects_edge_cases() {
        let p = st_point(6.6, 46.5).unwrap();
        assert!(st_intersects(&p, &p, 0.0).unwrap());
        let a = st_point(0.0, 0.0).unwrap();
        let anti = st_point(180.0, 0.0).unwrap();
        assert!(!st_intersects(&a, &anti, 15.0).unwrap());
        assert!(st_intersects(&a, &anti, -1.0).is_err());
    }

    #[test]
    fn haversine_agrees_with_chord_route() {
        let center = st_point(6.635227203369141, 46.52119378179781).unwrap();
        for (lon, lat) in [(6.7, 46.6), (6.8, 46.52), (-73.9, 40.7), (151.2, -33.8), (179.9, 0.1)] {
            let p = st_point(lon, lat).unwrap();
            let (h, c) = (haversine_km(&center, &p), chord_km(&center, &p));
            assert!((h - c).abs() < 1e-6 * h.max(1.0), "{h} vs {c}");
        }
        // Lausanne to Geneva is ~51 km.
        let geneva = st_point(6.1432, 46.2044).unwrap();
        let d = haversine_km(&center, &geneva);
        assert!((50.0..53.0).contains(&d), "{d}");
    }

    #[test]
    fn threshold_follows_distance() {
        let center = st_point(6.635227203369141, 46.52119378179781).unwrap();
        // ~0.1 degrees of latitude steps, about 11.1 km each.
        for k in 0..4 {
            let p = st_point(center.lon(), center.lat() + 0.1 * k as f64).unwrap();
            let d = chord_km(&center, &p);
            assert_eq!(st_intersects(&p, &center, 15.0).unwrap(), d <= 15.0);
            assert_eq!(
                st_intersects(&p, &center, 15.0).unwrap(),
                st_intersects(&center, &p, 15.0).unwrap()
            );
        }
    }

    #[test]
    fn wkt_parsing() {
        let p = GeoPoint::from_wkt("POINT(6.63 46.52)").unwrap();
        assert_eq!((p.lon(), p.lat()), (6.63, 46.52));
        assert_eq!(GeoPoint::from_wkt(" point ( -1 2 ) ").unwrap().lon(), -1.0);
        assert!(GeoPoint::from_wkt("POINT(1)").is_none());
        assert!(GeoPoint::from_wkt("POINT(1 2 3)").is_none());
        assert!(GeoPoint::from_wkt("LINE(1 2)").is_none());
        assert!(GeoPoint::from_wkt("POINT(500 2)").is_none());
        assert_eq!(GeoPoint::from_wkt(&p.to_wkt()), Some(p));
    }
}
