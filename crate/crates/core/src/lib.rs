//! Geo-context aware topic matching.
//!
//! A message is delivered to a consumer only if the subscription's topic
//! filter matches the message topic, the consumer's geofence contains the
//! producer's location, and the message's geofence contains the consumer's
//! location. This crate holds the pieces that decide that:
//!
//! * [`geometry`]: locations, geofences, WKT, and the containment and
//!   intersection predicates;
//! * [`topics`]: topic names, wildcard filters and the content check;
//! * [`raster`]: the grid index that narrows consumer-fence candidates;
//! * [`matching`]: the topic tree with embedded rasters and the matching
//!   pipeline.
//!
//! ```
//! use std::collections::HashMap;
//! use geopubsub::geometry::{GeoScope, Geofence, Location};
//! use geopubsub::matching::{MatchRequest, SubscriptionStore};
//! use geopubsub::topics::{Topic, TopicFilter};
//!
//! let here = Location::new(39.98, 116.33).unwrap();
//! let fence = Geofence::circle(here, 0.01).unwrap();
//!
//! let mut store = SubscriptionStore::default();
//! store.subscribe("consumer".into(), &TopicFilter::parse("data").unwrap(), GeoScope::Fence(fence.clone()));
//!
//! let locations = HashMap::from([("consumer".into(), here)]);
//! let request = MatchRequest {
//!     publisher: "producer".into(),
//!     publisher_location: Some(here),
//!     topic: Topic::parse("data").unwrap(),
//!     producer_scope: GeoScope::Fence(fence),
//! };
//! let matched = store.match_request(&request, &locations).unwrap();
//! assert!(matched.contains(&"consumer".into()));
//! ```

pub mod geometry;
pub mod matching;
pub mod raster;
pub mod topics;

use std::fmt;
use std::sync::Arc;

/// Opaque client identifier; cheap to clone.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClientId(Arc<str>);

impl ClientId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for ClientId {
    fn from(s: &str) -> Self {
        ClientId(s.into())
    }
}

impl From<String> for ClientId {
    fn from(s: String) -> Self {
        ClientId(s.into())
    }
}

impl fmt::Debug for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}
