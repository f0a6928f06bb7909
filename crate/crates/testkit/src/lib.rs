//! Oracles for testing the matcher and the raster index.
//!
//! Nothing here goes through the topic tree or the raster: topic matching is
//! a separate recursive matcher over raw strings, raster keys are computed in
//! exact rational arithmetic from decimal text, and delivery sets come from
//! scanning every subscription with the three predicates.

use std::collections::{HashMap, HashSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use geopubsub::geometry::{BoundingBox, GeoScope, Geofence, Location};
use geopubsub::matching::MatchRequest;
use geopubsub::topics::{Topic, TopicFilter};
use geopubsub::ClientId;

/// Recursive reference for MQTT-style filter matching over raw strings.
pub fn reference_topic_match(filter: &str, topic: &str) -> bool {
    fn go(f: &[&str], t: &[&str]) -> bool {
        match (f.first(), t.first()) {
            (Some(&"#"), _) => true,
            (None, None) => true,
            (Some(&"+"), Some(_)) => go(&f[1..], &t[1..]),
            (Some(a), Some(b)) => a == b && go(&f[1..], &t[1..]),
            _ => false,
        }
    }
    let f: Vec<&str> = filter.split('/').collect();
    let t: Vec<&str> = topic.split('/').collect();
    go(&f, &t)
}

/// Parses a plain decimal string ("-1.05", "39.9753") into an exact rational.
pub fn decimal(text: &str) -> BigRational {
    let (neg, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
    let numer: BigInt = format!("{int}{frac}").parse().expect("decimal digits");
    let denom = num_traits::pow(BigInt::from(10), frac.len());
    let value = BigRational::new(numer, denom);
    if neg {
        -value
    } else {
        value
    }
}

/// Exact `floor(value * g)`.
pub fn exact_grid_index(value: &BigRational, g: u32) -> i64 {
    let scaled = value * BigRational::from_integer(BigInt::from(g));
    let floor = scaled.floor().to_integer();
    i64::try_from(floor).expect("index fits in i64")
}

/// Exact number of grid cells spanned by `[lo, hi]` at granularity `g`.
pub fn exact_span(lo: &BigRational, hi: &BigRational, g: u32) -> i64 {
    exact_grid_index(hi, g) - exact_grid_index(lo, g) + 1
}

/// `true` iff `value` is an integer multiple of `1/g`.
pub fn on_grid_line(value: &BigRational, g: u32) -> bool {
    (value * BigRational::from_integer(BigInt::from(g))).is_integer()
}

/// One subscription as the brute-force oracle sees it.
#[derive(Debug, Clone)]
pub struct OracleSubscription {
    pub client: ClientId,
    pub filter: TopicFilter,
    pub scope: GeoScope,
}

/// Scans every subscription with the three predicates.
pub fn brute_force_match(
    subscriptions: &[OracleSubscription],
    request: &MatchRequest,
    locations: &HashMap<ClientId, Location>,
) -> HashSet<ClientId> {
    let publisher_location = request.publisher_location.expect("oracle requests carry a location");
    let topic = request.topic.to_string();
    subscriptions
        .iter()
        .filter(|s| reference_topic_match(&s.filter.to_string(), &topic))
        .filter(|s| s.scope.contains(&publisher_location))
        .filter(|s| match &request.producer_scope {
            GeoScope::All => true,
            GeoScope::Fence(f) => locations.get(&s.client).is_some_and(|p| f.contains(p)),
        })
        .map(|s| s.client.clone())
        .collect()
}

/// Content check alone, by scanning.
pub fn brute_force_content_match(subscriptions: &[OracleSubscription], topic: &Topic) -> HashSet<ClientId> {
    let topic = topic.to_string();
    subscriptions
        .iter()
        .filter(|s| reference_topic_match(&s.filter.to_string(), &topic))
        .map(|s| s.client.clone())
        .collect()
}

/// Keeps the oracle's subscription list in step with a store.
#[derive(Debug, Default, Clone)]
pub struct OracleStore {
    pub subscriptions: Vec<OracleSubscription>,
}

impl OracleStore {
    pub fn subscribe(&mut self, client: ClientId, filter: TopicFilter, scope: GeoScope) {
        self.unsubscribe(&client, &filter);
        self.subscriptions.push(OracleSubscription { client, filter, scope });
    }

    pub fn unsubscribe(&mut self, client: &ClientId, filter: &TopicFilter) {
        self.subscriptions.retain(|s| !(&s.client == client && &s.filter == filter));
    }
}

/// An operation in a randomized matching workload.
#[derive(Debug, Clone)]
pub enum Op {
    Subscribe { client: ClientId, filter: TopicFilter, scope: GeoScope },
    Unsubscribe { client: ClientId, filter: TopicFilter },
    Move { client: ClientId, to: Location },
    Publish(MatchRequest),
}

/// Parameters for [`Generator::workload`].
#[derive(Debug, Clone)]
pub struct WorkloadShape {
    pub max_subscriptions: usize,
    pub max_publishes: usize,
    pub clients: usize,
}

impl Default for WorkloadShape {
    fn default() -> Self {
        WorkloadShape { max_subscriptions: 200, max_publishes: 1000, clients: 40 }
    }
}

/// A seeded generator of locations, fences, topics and filters.
///
/// Coordinates cluster around a small area straddling the origin so that
/// fences overlap and negative coordinates are exercised; a share of them is
/// snapped onto 1/100° grid lines, which are field edges for every tested
/// granularity.
pub struct Generator {
    rng: ChaCha8Rng,
}

const LEVELS: [&str; 3] = ["a", "b", "c"];

impl Generator {
    pub fn new(seed: u64) -> Self {
        Generator { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn coordinate(&mut self) -> f64 {
        let v: f64 = self.rng.random_range(-0.6..0.6);
        if self.rng.random_bool(0.25) {
            (v * 100.0).round() / 100.0
        } else {
            v
        }
    }

    pub fn location(&mut self) -> Location {
        Location::new(self.coordinate(), self.coordinate()).unwrap()
    }

    pub fn fence(&mut self) -> Geofence {
        match self.rng.random_range(0..10) {
            0..=4 => {
                let radius = self.rng.random_range(0.005..0.3);
                Geofence::circle(self.location(), radius).unwrap()
            }
            5 => {
                // Grid-aligned rectangle: edges sit exactly on field edges.
                let s = self.rng.random_range(-60..50);
                let w = self.rng.random_range(-60..50);
                let n = s + self.rng.random_range(1..20);
                let e = w + self.rng.random_range(1..20);
                let [s, w, n, e] = [s, w, n, e].map(|v| v as f64 / 100.0);
                Geofence::rectangle(BoundingBox::from_corners(s, w, n, e).unwrap()).unwrap()
            }
            6..=8 => self.star_polygon(),
            _ => {
                let parts = (0..self.rng.random_range(2..4))
                    .map(|_| {
                        if self.rng.random_bool(0.5) {
                            self.star_polygon()
                        } else {
                            Geofence::circle(self.location(), self.rng.random_range(0.005..0.1)).unwrap()
                        }
                    })
                    .collect();
                Geofence::multi(parts).unwrap()
            }
        }
    }

    /// Simple polygon from sorted angles around a center; often concave.
    pub fn star_polygon(&mut self) -> Geofence {
        let center = self.location();
        let n = self.rng.random_range(3..12);
        let mut angles: Vec<f64> = (0..n).map(|_| self.rng.random_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        angles.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
        loop {
            let ring: Vec<Location> = angles
                .iter()
                .map(|a| {
                    let r = self.rng.random_range(0.01..0.3);
                    Location::new(center.lat() + r * a.sin(), center.lon() + r * a.cos()).unwrap()
                })
                .collect();
            if let Ok(f) = Geofence::polygon(ring) {
                return f;
            }
            angles = vec![0.0, 2.0, 4.0];
        }
    }

    pub fn topic(&mut self) -> Topic {
        let depth = self.rng.random_range(1..=3);
        let levels: Vec<&str> = (0..depth).map(|_| *LEVELS.choose(&mut self.rng).unwrap()).collect();
        Topic::parse(&levels.join("/")).unwrap()
    }

    pub fn filter(&mut self) -> TopicFilter {
        let depth = self.rng.random_range(1..=3);
        let mut levels: Vec<&str> = Vec::new();
        for i in 0..depth {
            let roll = self.rng.random_range(0..10);
            if roll == 0 && i == depth - 1 {
                levels.push("#");
            } else if roll <= 2 {
                levels.push("+");
            } else {
                levels.push(LEVELS.choose(&mut self.rng).unwrap());
            }
        }
        TopicFilter::parse(&levels.join("/")).unwrap()
    }

    pub fn scope(&mut self, all_probability: f64) -> GeoScope {
        if self.rng.random_bool(all_probability) {
            GeoScope::All
        } else {
            GeoScope::Fence(self.fence())
        }
    }

    pub fn client(&mut self, clients: usize) -> ClientId {
        ClientId::from(format!("c{}", self.rng.random_range(0..clients)))
    }

    /// A randomized op stream: subscriptions, some replacements, removals and
    /// location changes, interleaved with publishes. Returns the ops and the
    /// initial consumer locations (some clients are left without one).
    pub fn workload(&mut self, shape: &WorkloadShape) -> (Vec<Op>, HashMap<ClientId, Location>) {
        let n_subs = self.rng.random_range(1..=shape.max_subscriptions);
        let n_pubs = self.rng.random_range(1..=shape.max_publishes);
        let mut locations = HashMap::new();
        for i in 0..shape.clients {
            if self.rng.random_bool(0.9) {
                locations.insert(ClientId::from(format!("c{i}")), self.location());
            }
        }
        let mut ops = Vec::with_capacity(n_subs + n_pubs);
        let (mut subs_left, mut pubs_left) = (n_subs, n_pubs);
        while subs_left + pubs_left > 0 {
            let pick_sub = subs_left > 0 && (pubs_left == 0 || self.rng.random_range(0..subs_left + pubs_left) < subs_left);
            if pick_sub {
                subs_left -= 1;
                let client = self.client(shape.clients);
                let filter = self.filter();
                let scope = self.scope(0.1);
                ops.push(Op::Subscribe { client, filter, scope });
                continue;
            }
            pubs_left -= 1;
            match self.rng.random_range(0..20) {
                0 => {
                    let client = self.client(shape.clients);
                    let filter = self.filter();
                    ops.push(Op::Unsubscribe { client, filter });
                }
                1 => {
                    let client = self.client(shape.clients);
                    let to = self.location();
                    ops.push(Op::Move { client, to });
                }
                _ => {}
            }
            let publisher = self.client(shape.clients);
            let topic = self.topic();
            let location = self.location();
            let producer_scope = self.scope(0.3);
            ops.push(Op::Publish(MatchRequest {
                publisher,
                publisher_location: Some(location),
                topic,
                producer_scope,
            }));
        }
        (ops, locations)
    }
}
