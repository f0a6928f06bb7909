//! Locations, geofences and the planar spatial predicates used by matching.
//!
//! All geometry lives in degree space: latitude is treated as the first
//! planar axis and longitude as the second, with no geodesic correction.
//! Geofence regions are closed (boundary points are inside). Rectangles passed
//! to [`Geofence::intersects`] are raster fields and are half-open on their
//! north and east edges.

mod wkt;

use std::fmt;

pub use wkt::parse_wkt;

/// Absolute slack (in degrees) applied to circle boundaries.
///
/// A point at exactly `radius` from the center is often a few ulps further
/// away once the subtraction is done in `f64`, so the closed-circle test
/// accepts distances up to `radius + BOUNDARY_TOLERANCE`. Bounding boxes and
/// raster intersection use the same widened radius so that every contained
/// point is also indexed.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;

/// Errors raised while constructing or parsing geometry.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid coordinate (lat {lat}, lon {lon})")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("circle radius must be finite and positive, got {0}")]
    InvalidRadius(f64),
    #[error("polygon ring needs at least 3 distinct vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon ring is self-intersecting or degenerate")]
    SelfIntersecting,
    #[error("polygons with interior rings are not supported")]
    InteriorRing,
    #[error("geofence crosses the antimeridian")]
    CrossesAntimeridian,
    #[error("geofence includes a pole")]
    IncludesPole,
    #[error("multi-region geofence has no parts")]
    EmptyMultiRegion,
    #[error("bounding box corners are out of order")]
    InvertedBox,
    #[error("malformed WKT at byte {position}: {message}")]
    Syntax { position: usize, message: String },
}

/// A WGS84 point in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    lat: f64,
    lon: f64,
}

impl Location {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeometryError> {
        if lat.is_finite() && lon.is_finite() && (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon) {
            Ok(Location { lat, lon })
        } else {
            Err(GeometryError::InvalidCoordinate { lat, lon })
        }
    }

    #[inline]
    pub fn lat(&self) -> f64 {
        self.lat
    }

    #[inline]
    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Euclidean distance in degree space.
    #[inline]
    pub fn distance_degrees(&self, other: &Location) -> f64 {
        (self.lat - other.lat).hypot(self.lon - other.lon)
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lat, self.lon)
    }
}

/// An axis-aligned box given by its south-west and north-east corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    south_west: Location,
    north_east: Location,
}

impl BoundingBox {
    pub fn new(south_west: Location, north_east: Location) -> Result<Self, GeometryError> {
        if south_west.lat > north_east.lat || south_west.lon > north_east.lon {
            return Err(GeometryError::InvertedBox);
        }
        Ok(BoundingBox { south_west, north_east })
    }

    /// Builds a box from raw corner coordinates, `(south, west)` and `(north, east)`.
    pub fn from_corners(south: f64, west: f64, north: f64, east: f64) -> Result<Self, GeometryError> {
        BoundingBox::new(Location::new(south, west)?, Location::new(north, east)?)
    }

    pub fn south_west(&self) -> Location {
        self.south_west
    }

    pub fn north_east(&self) -> Location {
        self.north_east
    }

    /// Closed containment test.
    pub fn contains_point(&self, p: &Location) -> bool {
        p.lat >= self.south_west.lat
            && p.lat <= self.north_east.lat
            && p.lon >= self.south_west.lon
            && p.lon <= self.north_east.lon
    }

    /// Unchecked constructor for raster fields, whose north/east edges may
    /// lie just past the valid coordinate range.
    pub(crate) fn raw(south: f64, west: f64, north: f64, east: f64) -> BoundingBox {
        BoundingBox {
            south_west: Location { lat: south, lon: west },
            north_east: Location { lat: north, lon: east },
        }
    }

    fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            south_west: Location {
                lat: self.south_west.lat.min(other.south_west.lat),
                lon: self.south_west.lon.min(other.south_west.lon),
            },
            north_east: Location {
                lat: self.north_east.lat.max(other.north_east.lat),
                lon: self.north_east.lon.max(other.north_east.lon),
            },
        }
    }
}

/// The region of a geofence.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Circle { center: Location, radius: f64 },
    /// Outer ring, stored open (the closing vertex is not repeated).
    Polygon(Vec<Location>),
    /// Union of circles and polygons; never nested.
    Multi(Vec<Shape>),
}

/// A closed region in degree space together with its bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct Geofence {
    shape: Shape,
    bbox: BoundingBox,
}

impl Geofence {
    pub fn circle(center: Location, radius: f64) -> Result<Self, GeometryError> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(GeometryError::InvalidRadius(radius));
        }
        let reach = radius + BOUNDARY_TOLERANCE;
        let (south, north) = (center.lat - reach, center.lat + reach);
        let (west, east) = (center.lon - reach, center.lon + reach);
        if south < -90.0 || north > 90.0 {
            return Err(GeometryError::IncludesPole);
        }
        if west < -180.0 || east > 180.0 {
            return Err(GeometryError::CrossesAntimeridian);
        }
        let bbox = BoundingBox {
            south_west: Location { lat: south, lon: west },
            north_east: Location { lat: north, lon: east },
        };
        Ok(Geofence { shape: Shape::Circle { center, radius }, bbox })
    }

    /// Builds a polygon from its outer ring. A repeated closing vertex is
    /// accepted and dropped.
    pub fn polygon(mut ring: Vec<Location>) -> Result<Self, GeometryError> {
        if ring.len() > 1 && ring.first() == ring.last() {
            ring.pop();
        }
        ring.dedup();
        if ring.len() < 3 {
            return Err(GeometryError::TooFewVertices(ring.len()));
        }
        if !is_simple_ring(&ring) {
            return Err(GeometryError::SelfIntersecting);
        }
        let bbox = ring_bbox(&ring);
        Ok(Geofence { shape: Shape::Polygon(ring), bbox })
    }

    /// Axis-aligned rectangle as a four-vertex polygon.
    pub fn rectangle(bbox: BoundingBox) -> Result<Self, GeometryError> {
        let (sw, ne) = (bbox.south_west, bbox.north_east);
        Geofence::polygon(vec![
            sw,
            Location { lat: sw.lat, lon: ne.lon },
            ne,
            Location { lat: ne.lat, lon: sw.lon },
        ])
    }

    /// Union of several fences. Nested multi-regions are flattened.
    pub fn multi(parts: Vec<Geofence>) -> Result<Self, GeometryError> {
        let mut shapes = Vec::with_capacity(parts.len());
        let mut bbox: Option<BoundingBox> = None;
        for part in parts {
            bbox = Some(match bbox {
                Some(b) => b.union(&part.bbox),
                None => part.bbox,
            });
            match part.shape {
                Shape::Multi(inner) => shapes.extend(inner),
                other => shapes.push(other),
            }
        }
        let bbox = bbox.ok_or(GeometryError::EmptyMultiRegion)?;
        Ok(Geofence { shape: Shape::Multi(shapes), bbox })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn bounding_box(&self) -> BoundingBox {
        self.bbox
    }

    /// Closed point containment.
    pub fn contains(&self, point: &Location) -> bool {
        if !self.bbox.contains_point(point) {
            return false;
        }
        shape_contains(&self.shape, point)
    }

    /// Whether the closed fence shares a point with `field`, treating `field`
    /// as half-open: `[south, north) x [west, east)`.
    pub fn intersects(&self, field: &BoundingBox) -> bool {
        let b = &self.bbox;
        if b.north_east.lat < field.south_west.lat
            || b.south_west.lat >= field.north_east.lat
            || b.north_east.lon < field.south_west.lon
            || b.south_west.lon >= field.north_east.lon
        {
            return false;
        }
        shape_intersects(&self.shape, field)
    }

    /// Polygon approximation of a circle with `segments` vertices on the
    /// circumference, for consumers that only accept standard WKT. Polygons
    /// are returned unchanged; multi-regions are approximated part-wise.
    pub fn to_polygon_approximation(&self, segments: usize) -> Result<Geofence, GeometryError> {
        match &self.shape {
            Shape::Circle { center, radius } => {
                let n = segments.max(3);
                let ring = (0..n)
                    .map(|i| {
                        let theta = std::f64::consts::TAU * i as f64 / n as f64;
                        Location::new(center.lat + radius * theta.sin(), center.lon + radius * theta.cos())
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Geofence::polygon(ring)
            }
            Shape::Polygon(_) => Ok(self.clone()),
            Shape::Multi(parts) => Geofence::multi(
                parts
                    .iter()
                    .map(|s| Geofence::from_shape(s.clone())?.to_polygon_approximation(segments))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        }
    }

    pub(crate) fn from_shape(shape: Shape) -> Result<Geofence, GeometryError> {
        match shape {
            Shape::Circle { center, radius } => Geofence::circle(center, radius),
            Shape::Polygon(ring) => Geofence::polygon(ring),
            Shape::Multi(parts) => {
                Geofence::multi(parts.into_iter().map(Geofence::from_shape).collect::<Result<_, _>>()?)
            }
        }
    }

    /// Serializes the fence as WKT (`lon lat` coordinate order).
    pub fn to_wkt(&self) -> String {
        wkt::format_wkt(self)
    }
}

impl fmt::Display for Geofence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_wkt())
    }
}

impl std::str::FromStr for Geofence {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_wkt(s)
    }
}

/// Geographic scope of a subscription or a published message: either a
/// concrete geofence or the unbounded scope that matches every location.
#[derive(Debug, Clone, PartialEq)]
pub enum GeoScope {
    All,
    Fence(Geofence),
}

impl GeoScope {
    pub fn contains(&self, point: &Location) -> bool {
        match self {
            GeoScope::All => true,
            GeoScope::Fence(f) => f.contains(point),
        }
    }

    pub fn fence(&self) -> Option<&Geofence> {
        match self {
            GeoScope::All => None,
            GeoScope::Fence(f) => Some(f),
        }
    }
}

impl From<Geofence> for GeoScope {
    fn from(f: Geofence) -> Self {
        GeoScope::Fence(f)
    }
}

fn ring_bbox(ring: &[Location]) -> BoundingBox {
    let mut sw = ring[0];
    let mut ne = ring[0];
    for p in &ring[1..] {
        sw.lat = sw.lat.min(p.lat);
        sw.lon = sw.lon.min(p.lon);
        ne.lat = ne.lat.max(p.lat);
        ne.lon = ne.lon.max(p.lon);
    }
    BoundingBox { south_west: sw, north_east: ne }
}

fn shape_contains(shape: &Shape, p: &Location) -> bool {
    match shape {
        Shape::Circle { center, radius } => {
            let reach = radius + BOUNDARY_TOLERANCE;
            let (dlat, dlon) = (p.lat - center.lat, p.lon - center.lon);
            dlat * dlat + dlon * dlon <= reach * reach
        }
        Shape::Polygon(ring) => ring_contains(ring, p),
        Shape::Multi(parts) => parts.iter().any(|s| shape_contains(s, p)),
    }
}

fn shape_intersects(shape: &Shape, field: &BoundingBox) -> bool {
    match shape {
        Shape::Circle { center, radius } => circle_intersects_field(center, radius + BOUNDARY_TOLERANCE, field),
        Shape::Polygon(ring) => ring_intersects_field(ring, field),
        Shape::Multi(parts) => parts.iter().any(|s| shape_intersects(s, field)),
    }
}

/// Twice the signed area of triangle (a, b, c); positive for a left turn.
#[inline]
fn orient(a: &Location, b: &Location, c: &Location) -> f64 {
    (b.lat - a.lat) * (c.lon - a.lon) - (b.lon - a.lon) * (c.lat - a.lat)
}

#[inline]
fn within_segment_box(a: &Location, b: &Location, p: &Location) -> bool {
    p.lat >= a.lat.min(b.lat) && p.lat <= a.lat.max(b.lat) && p.lon >= a.lon.min(b.lon) && p.lon <= a.lon.max(b.lon)
}

fn on_segment(a: &Location, b: &Location, p: &Location) -> bool {
    orient(a, b, p) == 0.0 && within_segment_box(a, b, p)
}

fn segments_intersect(a: &Location, b: &Location, c: &Location, d: &Location) -> bool {
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && within_segment_box(c, d, a))
        || (d2 == 0.0 && within_segment_box(c, d, b))
        || (d3 == 0.0 && within_segment_box(a, b, c))
        || (d4 == 0.0 && within_segment_box(a, b, d))
}

fn is_simple_ring(ring: &[Location]) -> bool {
    let n = ring.len();
    let area2: f64 = (0..n).map(|i| orient(&ring[0], &ring[i], &ring[(i + 1) % n])).sum();
    if area2 == 0.0 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (&ring[i], &ring[(i + 1) % n]);
        for j in (i + 1)..n {
            let (c, d) = (&ring[j], &ring[(j + 1) % n]);
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // Neighbouring edges share one vertex; they must not fold back onto each other.
                let (shared, other_a, other_b) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                if orient(other_a, shared, other_b) == 0.0 {
                    let back = (other_a.lat - shared.lat) * (other_b.lat - shared.lat)
                        + (other_a.lon - shared.lon) * (other_b.lon - shared.lon);
                    if back > 0.0 {
                        return false;
                    }
                }
            } else if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

fn ring_contains(ring: &[Location], p: &Location) -> bool {
    let n = ring.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (&ring[i], &ring[(i + 1) % n]);
        if on_segment(a, b, p) {
            return true;
        }
        if (a.lon > p.lon) != (b.lon > p.lon) {
            let lat_at = a.lat + (p.lon - a.lon) * (b.lat - a.lat) / (b.lon - a.lon);
            if p.lat < lat_at {
                inside = !inside;
            }
        }
    }
    inside
}

#[inline]
fn in_half_open(field: &BoundingBox, p: &Location) -> bool {
    p.lat >= field.south_west.lat
        && p.lat < field.north_east.lat
        && p.lon >= field.south_west.lon
        && p.lon < field.north_east.lon
}

fn circle_intersects_field(center: &Location, reach: f64, field: &BoundingBox) -> bool {
    let (sw, ne) = (&field.south_west, &field.north_east);
    let near_lat = center.lat.clamp(sw.lat, ne.lat);
    let near_lon = center.lon.clamp(sw.lon, ne.lon);
    let (dlat, dlon) = (center.lat - near_lat, center.lon - near_lon);
    let d2 = dlat * dlat + dlon * dlon;
    let r2 = reach * reach;
    if d2 > r2 {
        return false;
    }
    if near_lat < ne.lat && near_lon < ne.lon {
        return true;
    }
    // The nearest point sits on an excluded edge: only a strict overlap
    // reaches into the field.
    d2 < r2
}

/// Clips segment `a`-`b` to the closed field rectangle (Liang-Barsky) and
/// reports whether the clipped part has a point inside the half-open field.
fn segment_intersects_field(a: &Location, b: &Location, field: &BoundingBox) -> bool {
    let (dlat, dlon) = (b.lat - a.lat, b.lon - a.lon);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let checks = [
        (-dlat, a.lat - field.south_west.lat),
        (dlat, field.north_east.lat - a.lat),
        (-dlon, a.lon - field.south_west.lon),
        (dlon, field.north_east.lon - a.lon),
    ];
    for (p, q) in checks {
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
            if t0 > t1 {
                return false;
            }
        }
    }
    // A segment inside the closed rectangle whose midpoint lies on the
    // north or east edge lies entirely on that edge.
    let tm = 0.5 * (t0 + t1);
    let mid = Location { lat: a.lat + tm * dlat, lon: a.lon + tm * dlon };
    mid.lat < field.north_east.lat && mid.lon < field.north_east.lon
}

fn ring_intersects_field(ring: &[Location], field: &BoundingBox) -> bool {
    if ring.iter().any(|p| in_half_open(field, p)) {
        return true;
    }
    let n = ring.len();
    if (0..n).any(|i| segment_intersects_field(&ring[i], &ring[(i + 1) % n], field)) {
        return true;
    }
    // No boundary crossing: the field is either wholly inside or wholly outside.
    ring_contains(ring, &field.south_west)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loc(lat: f64, lon: f64) -> Location {
        Location::new(lat, lon).unwrap()
    }

    fn square(s: f64, w: f64, n: f64, e: f64) -> Geofence {
        Geofence::rectangle(BoundingBox::from_corners(s, w, n, e).unwrap()).unwrap()
    }

    fn field(s: f64, w: f64, n: f64, e: f64) -> BoundingBox {
        BoundingBox::from_corners(s, w, n, e).unwrap()
    }

    #[test]
    fn location_rejects_out_of_range() {
        assert!(Location::new(95.0, 0.0).is_err());
        assert!(Location::new(0.0, -180.5).is_err());
        assert!(Location::new(f64::NAN, 0.0).is_err());
        assert!(Location::new(90.0, 180.0).is_ok());
    }

    #[test]
    fn contains_examples() {
        let sq = Geofence::polygon(vec![loc(0.0, 0.0), loc(0.0, 10.0), loc(10.0, 10.0), loc(10.0, 0.0)]).unwrap();
        assert!(sq.contains(&loc(5.0, 5.0)));

        let c = Geofence::circle(loc(1.0, 1.0), 0.01).unwrap();
        assert!(!c.contains(&loc(1.0, 1.02)));

        // Boundary point at exactly the radius: the f64 difference is
        // 0.010000000000005116, still inside the closed circle.
        let c = Geofence::circle(loc(39.98, 116.33), 0.01).unwrap();
        assert!(c.contains(&loc(39.98, 116.34)));
    }

    #[test]
    fn polygon_boundary_is_inside() {
        let sq = square(0.0, 0.0, 10.0, 10.0);
        for p in [loc(0.0, 0.0), loc(0.0, 5.0), loc(10.0, 10.0), loc(5.0, 10.0), loc(10.0, 3.0)] {
            assert!(sq.contains(&p), "{p}");
        }
        assert!(!sq.contains(&loc(10.000001, 5.0)));
    }

    #[test]
    fn concave_polygon_contains() {
        // U shape opening north.
        let u = Geofence::polygon(vec![
            loc(0.0, 0.0),
            loc(0.0, 3.0),
            loc(3.0, 3.0),
            loc(3.0, 2.0),
            loc(1.0, 2.0),
            loc(1.0, 1.0),
            loc(3.0, 1.0),
            loc(3.0, 0.0),
        ])
        .unwrap();
        assert!(u.contains(&loc(2.0, 0.5)));
        assert!(!u.contains(&loc(2.0, 1.5)));
        assert!(u.contains(&loc(1.0, 1.5)));
        assert!(!u.intersects(&field(1.5, 1.2, 2.5, 1.8)));
        assert!(u.intersects(&field(0.5, 1.2, 1.5, 1.8)));
    }

    #[test]
    fn intersects_examples() {
        let sq = square(0.0, 0.0, 10.0, 10.0);
        assert!(sq.intersects(&field(5.0, 5.0, 6.0, 6.0)));

        let c = Geofence::circle(loc(1.0, 1.0), 0.05).unwrap();
        assert!(!c.intersects(&field(0.9, 1.1, 1.0, 1.2)));
        assert!(c.intersects(&field(1.0, 1.0, 1.1, 1.1)));
    }

    #[test]
    fn half_open_field_edges() {
        let sq = square(0.0, 0.0, 1.0, 1.0);
        assert!(sq.intersects(&field(0.0, 1.0, 1.0, 2.0)));
        assert!(sq.intersects(&field(1.0, 1.0, 2.0, 2.0)));
        assert!(sq.intersects(&field(1.0, 0.0, 2.0, 1.0)));
        // The square's south and west edges touch only the excluded edges
        // of the neighbouring fields.
        assert!(!sq.intersects(&field(-1.0, 0.0, 0.0, 1.0)));
        assert!(!sq.intersects(&field(0.0, -1.0, 1.0, 0.0)));
        assert!(!sq.intersects(&field(-1.0, -1.0, 0.0, 0.0)));
    }

    #[test]
    fn field_inside_polygon() {
        let sq = square(0.0, 0.0, 10.0, 10.0);
        assert!(sq.intersects(&field(4.0, 4.0, 4.1, 4.1)));
        let tri = Geofence::polygon(vec![loc(0.0, 0.0), loc(0.0, 10.0), loc(10.0, 0.0)]).unwrap();
        assert!(!tri.intersects(&field(6.0, 6.0, 7.0, 7.0)));
        // Only contact is the field's excluded NE corner.
        assert!(!tri.intersects(&field(-1.0, -1.0, 0.0, 0.0)));
        // Only contact is the field's included SW corner.
        assert!(tri.intersects(&field(5.0, 5.0, 6.0, 6.0)));
        // Hypotenuse cuts the field diagonally.
        assert!(tri.intersects(&field(4.0, 5.0, 5.0, 6.0)));
    }

    #[test]
    fn bounding_box_examples() {
        let c = Geofence::circle(loc(1.0, 1.0), 0.05).unwrap().bounding_box();
        for (got, want) in [
            (c.south_west().lat(), 0.95),
            (c.south_west().lon(), 0.95),
            (c.north_east().lat(), 1.05),
            (c.north_east().lon(), 1.05),
        ] {
            assert!((got - want).abs() < 1e-8);
        }

        let tri = Geofence::polygon(vec![loc(0.0, 0.0), loc(2.0, 0.0), loc(1.0, 3.0)]).unwrap().bounding_box();
        assert_eq!(tri.south_west(), loc(0.0, 0.0));
        assert_eq!(tri.north_east(), loc(2.0, 3.0));

        let m = Geofence::multi(vec![
            Geofence::circle(loc(0.0, 0.0), 0.1).unwrap(),
            Geofence::circle(loc(5.0, 5.0), 0.1).unwrap(),
        ])
        .unwrap()
        .bounding_box();
        assert!((m.south_west().lat() + 0.1).abs() < 1e-8);
        assert!((m.south_west().lon() + 0.1).abs() < 1e-8);
        assert!((m.north_east().lat() - 5.1).abs() < 1e-8);
        assert!((m.north_east().lon() - 5.1).abs() < 1e-8);
    }

    #[test]
    fn construction_rejections() {
        assert_eq!(Geofence::circle(loc(0.0, 0.0), 0.0), Err(GeometryError::InvalidRadius(0.0)));
        assert_eq!(Geofence::circle(loc(0.0, 179.99), 0.05), Err(GeometryError::CrossesAntimeridian));
        assert_eq!(Geofence::circle(loc(89.99, 0.0), 0.05), Err(GeometryError::IncludesPole));
        assert_eq!(
            Geofence::polygon(vec![loc(0.0, 0.0), loc(1.0, 1.0), loc(0.0, 1.0), loc(1.0, 0.0)]),
            Err(GeometryError::SelfIntersecting)
        );
        assert_eq!(Geofence::polygon(vec![loc(0.0, 0.0), loc(1.0, 1.0)]), Err(GeometryError::TooFewVertices(2)));
        assert_eq!(
            Geofence::polygon(vec![loc(0.0, 0.0), loc(1.0, 1.0), loc(2.0, 2.0)]),
            Err(GeometryError::SelfIntersecting)
        );
        assert_eq!(Geofence::multi(vec![]), Err(GeometryError::EmptyMultiRegion));
    }

    #[test]
    fn polygon_approximation_stays_inside_circle() {
        let c = Geofence::circle(loc(10.0, 10.0), 0.5).unwrap();
        let poly = c.to_polygon_approximation(64).unwrap();
        assert!(matches!(poly.shape(), Shape::Polygon(r) if r.len() == 64));
        assert!(poly.contains(&loc(10.0, 10.0)));
        assert!(poly.contains(&loc(10.49, 10.0)));
        assert!(!poly.contains(&loc(10.51, 10.0)));
    }

    #[test]
    fn geoscope_all_contains_everything() {
        assert!(GeoScope::All.contains(&loc(-89.0, 179.0)));
        let f: GeoScope = square(0.0, 0.0, 1.0, 1.0).into();
        assert!(!f.contains(&loc(2.0, 2.0)));
    }
}
