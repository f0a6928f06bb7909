//! Grid spatial index embedded in every topic-tree node.
//!
//! The plane is partitioned into square fields of side `1°/granularity`,
//! each identified by its south-west corner. A field covers
//! `[lat, lat + 1/g) x [lon, lon + 1/g)`, so every point belongs to exactly
//! one field and the field with key `(0, 0)` starts at the origin.
//!
//! Keys are kept as integer grid indices. Field edges are the `f64` values
//! `index as f64 / g`, and [`calculate_key`] snaps against those same
//! values, so a point lying exactly on an edge always lands in the field
//! that [`Geofence::intersects`] considers it part of.

use std::hash::Hash;
use std::num::NonZeroU32;

use rustc_hash::{FxHashMap, FxHashSet};

use crate::geometry::{BoundingBox, Geofence, Location};
use crate::topics::TopicFilter;
use crate::ClientId;

/// Number of raster fields per degree along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Granularity(NonZeroU32);

impl Granularity {
    pub fn new(g: u32) -> Option<Self> {
        NonZeroU32::new(g).map(Granularity)
    }

    pub fn get(self) -> u32 {
        self.0.get()
    }

    /// Field side length in degrees.
    pub fn side(self) -> f64 {
        1.0 / self.get() as f64
    }

    #[inline]
    fn edge(self, index: i64) -> f64 {
        index as f64 / self.get() as f64
    }

    /// Index of the field containing coordinate `v` along one axis.
    #[inline]
    fn snap(self, v: f64) -> i64 {
        let g = self.get() as f64;
        let mut i = (v * g).floor() as i64;
        // `v * g` can round across an edge; settle against the stored edges.
        while self.edge(i) > v {
            i -= 1;
        }
        while self.edge(i + 1) <= v {
            i += 1;
        }
        i
    }
}

impl Default for Granularity {
    fn default() -> Self {
        Granularity::new(10).unwrap()
    }
}

/// A raster field, identified by the grid indices of its south-west corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RasterKey {
    pub lat_index: i64,
    pub lon_index: i64,
}

impl RasterKey {
    pub fn new(lat_index: i64, lon_index: i64) -> Self {
        RasterKey { lat_index, lon_index }
    }

    /// South-west corner in degrees.
    pub fn south_west(&self, g: Granularity) -> (f64, f64) {
        (g.edge(self.lat_index), g.edge(self.lon_index))
    }

    /// The field rectangle; half-open on its north and east edges.
    pub fn field(&self, g: Granularity) -> BoundingBox {
        BoundingBox::raw(
            g.edge(self.lat_index),
            g.edge(self.lon_index),
            g.edge(self.lat_index + 1),
            g.edge(self.lon_index + 1),
        )
    }
}

/// Key of the field containing `point`: `floor(coord * g) / g` on each axis.
pub fn calculate_key(point: &Location, g: Granularity) -> RasterKey {
    RasterKey { lat_index: g.snap(point.lat()), lon_index: g.snap(point.lon()) }
}

/// Every field key between the snapped corners of `bbox`, row by row from
/// the south-west corner.
pub fn fields_in_box(bbox: &BoundingBox, g: Granularity) -> impl Iterator<Item = RasterKey> {
    let sw = calculate_key(&bbox.south_west(), g);
    let ne = calculate_key(&bbox.north_east(), g);
    (sw.lat_index..=ne.lat_index)
        .flat_map(move |lat| (sw.lon_index..=ne.lon_index).map(move |lon| RasterKey::new(lat, lon)))
}

/// Identifies one subscription: the owning client and its topic filter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubscriptionRef {
    pub client_id: ClientId,
    pub filter: TopicFilter,
}

impl SubscriptionRef {
    pub fn new(client_id: ClientId, filter: TopicFilter) -> Self {
        SubscriptionRef { client_id, filter }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RasterConfig {
    pub granularity: Granularity,
    /// Place references in every field of the fence's bounding box without
    /// the per-field intersection test. Cheaper updates, more false
    /// positives for the exact containment check to discard.
    pub skip_final_intersection: bool,
}

impl RasterConfig {
    pub fn with_granularity(g: u32) -> Option<Self> {
        Some(RasterConfig { granularity: Granularity::new(g)?, ..Default::default() })
    }
}

/// Map from raster fields to the references whose geofence intersects them.
///
/// Fields are created on first use and dropped once empty. The raster also
/// remembers where each reference was placed, so a re-put or removal never
/// needs the previous geofence.
#[derive(Debug, Clone)]
pub struct Raster<R = SubscriptionRef> {
    config: RasterConfig,
    fields: FxHashMap<RasterKey, FxHashSet<R>>,
    placements: FxHashMap<R, Vec<RasterKey>>,
}

impl<R: Clone + Eq + Hash> Raster<R> {
    pub fn new(config: RasterConfig) -> Self {
        Raster { config, fields: FxHashMap::default(), placements: FxHashMap::default() }
    }

    pub fn config(&self) -> RasterConfig {
        self.config
    }

    pub fn granularity(&self) -> Granularity {
        self.config.granularity
    }

    /// Keys of the fields `fence` is placed into.
    pub fn placement_keys(&self, fence: &Geofence) -> Vec<RasterKey> {
        let g = self.config.granularity;
        let keys = fields_in_box(&fence.bounding_box(), g);
        if self.config.skip_final_intersection {
            keys.collect()
        } else {
            keys.filter(|k| fence.intersects(&k.field(g))).collect()
        }
    }

    /// Places `reference` in every field its fence intersects, replacing any
    /// earlier placement of the same reference.
    pub fn put(&mut self, reference: R, fence: &Geofence) {
        self.remove(&reference);
        let keys = self.placement_keys(fence);
        for key in &keys {
            self.fields.entry(*key).or_default().insert(reference.clone());
        }
        self.placements.insert(reference, keys);
    }

    /// Removes `reference` from all fields. Returns `false` if it was unknown.
    pub fn remove(&mut self, reference: &R) -> bool {
        let Some(keys) = self.placements.remove(reference) else {
            return false;
        };
        for key in keys {
            if let Some(set) = self.fields.get_mut(&key) {
                set.remove(reference);
                if set.is_empty() {
                    self.fields.remove(&key);
                }
            }
        }
        true
    }

    /// References stored in the field containing `point`. A superset of the
    /// references whose fence contains `point`.
    pub fn candidates_at(&self, point: &Location) -> impl Iterator<Item = &R> {
        self.fields.get(&calculate_key(point, self.config.granularity)).into_iter().flatten()
    }

    pub fn field(&self, key: &RasterKey) -> Option<&FxHashSet<R>> {
        self.fields.get(key)
    }

    pub fn fields(&self) -> impl Iterator<Item = (&RasterKey, &FxHashSet<R>)> {
        self.fields.iter()
    }

    pub fn field_count(&self) -> usize {
        self.fields.len()
    }

    /// Number of references currently placed.
    pub fn len(&self) -> usize {
        self.placements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.placements.is_empty()
    }

    pub fn contains(&self, reference: &R) -> bool {
        self.placements.contains_key(reference)
    }
}
