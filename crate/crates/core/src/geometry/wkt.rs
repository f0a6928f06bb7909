//! WKT reading and writing for geofences.
//!
//! Supported forms, all with `lon lat` coordinate order:
//!
//! ```text
//! POLYGON ((lon lat, lon lat, ...))
//! MULTIPOLYGON (((lon lat, ...)), ((lon lat, ...)))
//! CIRCLE (lon lat, radius)
//! GEOMETRYCOLLECTION (CIRCLE (...), POLYGON (...), ...)
//! ```
//!
//! `CIRCLE` is not part of standard WKT; use
//! [`Geofence::to_polygon_approximation`] when a strict consumer needs one.

use super::{Geofence, GeometryError, Location, Shape};
use std::fmt::Write;

/// Parses a geofence from WKT.
pub fn parse_wkt(text: &str) -> Result<Geofence, GeometryError> {
    let mut p = Parser { src: text, pos: 0 };
    let fence = p.geometry()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("trailing input"));
    }
    Ok(fence)
}

pub(super) fn format_wkt(fence: &Geofence) -> String {
    let mut out = String::new();
    match fence.shape() {
        Shape::Multi(parts) if parts.iter().all(|s| matches!(s, Shape::Polygon(_))) => {
            out.push_str("MULTIPOLYGON (");
            for (i, part) in parts.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                if let Shape::Polygon(ring) = part {
                    write_rings(&mut out, ring);
                }
            }
            out.push(')');
        }
        Shape::Multi(parts) => {
            out.push_str("GEOMETRYCOLLECTION (");
            for (i, part) in parts.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_shape(&mut out, part);
            }
            out.push(')');
        }
        shape => write_shape(&mut out, shape),
    }
    out
}

fn write_shape(out: &mut String, shape: &Shape) {
    match shape {
        Shape::Circle { center, radius } => {
            let _ = write!(out, "CIRCLE ({} {}, {})", center.lon(), center.lat(), radius);
        }
        Shape::Polygon(ring) => {
            out.push_str("POLYGON ");
            write_rings(out, ring);
        }
        // Multi-regions are flattened on construction.
        Shape::Multi(_) => unreachable!("nested multi-region"),
    }
}

fn write_rings(out: &mut String, ring: &[Location]) {
    out.push_str("((");
    for p in ring.iter().chain(std::iter::once(&ring[0])) {
        if !out.ends_with('(') {
            out.push_str(", ");
        }
        let _ = write!(out, "{} {}", p.lon(), p.lat());
    }
    out.push_str("))");
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, message: &str) -> GeometryError {
        GeometryError::Syntax { position: self.pos, message: message.to_string() }
    }

    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), GeometryError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(&format!("expected '{c}'")))
        }
    }

    fn keyword(&mut self) -> Result<String, GeometryError> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let len = rest.find(|c: char| !c.is_ascii_alphabetic()).unwrap_or(rest.len());
        if len == 0 {
            return Err(self.error("expected geometry keyword"));
        }
        self.pos += len;
        Ok(rest[..len].to_ascii_uppercase())
    }

    fn number(&mut self) -> Result<f64, GeometryError> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let len = rest
            .find(|c: char| !(c.is_ascii_digit() || matches!(c, '+' | '-' | '.' | 'e' | 'E')))
            .unwrap_or(rest.len());
        let value = rest[..len].parse::<f64>().map_err(|_| self.error("expected number"))?;
        if !value.is_finite() {
            return Err(self.error("non-finite number"));
        }
        self.pos += len;
        Ok(value)
    }

    fn coordinate(&mut self) -> Result<Location, GeometryError> {
        let lon = self.number()?;
        let lat = self.number()?;
        Location::new(lat, lon)
    }

    fn ring(&mut self) -> Result<Vec<Location>, GeometryError> {
        self.expect('(')?;
        let mut ring = vec![self.coordinate()?];
        while self.eat(',') {
            ring.push(self.coordinate()?);
        }
        self.expect(')')?;
        if ring.len() < 4 || ring.first() != ring.last() {
            return Err(self.error("ring must be closed and have at least 4 coordinates"));
        }
        Ok(ring)
    }

    fn polygon_body(&mut self) -> Result<Geofence, GeometryError> {
        self.expect('(')?;
        let outer = self.ring()?;
        if self.eat(',') {
            return Err(GeometryError::InteriorRing);
        }
        self.expect(')')?;
        Geofence::polygon(outer)
    }

    fn geometry(&mut self) -> Result<Geofence, GeometryError> {
        match self.keyword()?.as_str() {
            "POLYGON" => self.polygon_body(),
            "MULTIPOLYGON" => {
                self.expect('(')?;
                let mut parts = vec![self.polygon_body()?];
                while self.eat(',') {
                    parts.push(self.polygon_body()?);
                }
                self.expect(')')?;
                Geofence::multi(parts)
            }
            "CIRCLE" => {
                self.expect('(')?;
                let center = self.coordinate()?;
                self.expect(',')?;
                let radius = self.number()?;
                self.expect(')')?;
                Geofence::circle(center, radius)
            }
            "GEOMETRYCOLLECTION" => {
                self.expect('(')?;
                let mut parts = vec![self.geometry()?];
                while self.eat(',') {
                    parts.push(self.geometry()?);
                }
                self.expect(')')?;
                Geofence::multi(parts)
            }
            other => Err(self.error(&format!("unsupported geometry type {other}"))),
        }
    }
}
