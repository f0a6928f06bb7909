//! In-process benchmarks of the subscription store, without networking.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Barrier;
use std::thread;
use std::time::{Duration, Instant};

use geopubsub::geometry::{BoundingBox, GeoScope, Geofence, Location};
use geopubsub::matching::{MatchRequest, SubscriptionStore};
use geopubsub::raster::{Granularity, RasterConfig};
use geopubsub::topics::{Topic, TopicFilter};
use geopubsub::ClientId;
use parking_lot::RwLock;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::experiment::Mode;
use crate::trajectory::Trajectory;

/// `updates` update operations followed by `gets` get operations, repeated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct UpdateGetRatio {
    pub updates: u32,
    pub gets: u32,
}

impl UpdateGetRatio {
    pub const fn new(updates: u32, gets: u32) -> Self {
        UpdateGetRatio { updates, gets }
    }

    fn is_update(self, op: u64) -> bool {
        op % u64::from(self.updates + self.gets) < u64::from(self.updates)
    }
}

impl fmt::Display for UpdateGetRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.updates, self.gets)
    }
}

impl FromStr for UpdateGetRatio {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (u, g) = s.split_once('/').ok_or_else(|| format!("expected updates/gets, got `{s}`"))?;
        let updates: u32 = u.trim().parse().map_err(|_| format!("bad update count in `{s}`"))?;
        let gets: u32 = g.trim().parse().map_err(|_| format!("bad get count in `{s}`"))?;
        if updates + gets == 0 {
            return Err("ratio must have at least one operation".to_string());
        }
        Ok(UpdateGetRatio { updates, gets })
    }
}

#[derive(Debug, Clone)]
pub struct IndexBenchConfig {
    pub clients: usize,
    pub ratio: UpdateGetRatio,
    pub granularity: u32,
    pub mode: Mode,
    pub fence_radius: f64,
    pub ops_per_client: u64,
    pub skip_final_intersection: bool,
    pub topic: String,
}

impl Default for IndexBenchConfig {
    fn default() -> Self {
        IndexBenchConfig {
            clients: 10,
            ratio: UpdateGetRatio::new(1, 1),
            granularity: 10,
            mode: Mode::Geo,
            fence_radius: 0.01,
            ops_per_client: 20_000,
            skip_final_intersection: false,
            topic: "data".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexBenchReport {
    pub mode: Mode,
    pub clients: usize,
    pub granularity: u32,
    pub ratio: String,
    pub updates: u64,
    pub gets: u64,
    pub elapsed_secs: f64,
    pub ops_per_sec: f64,
    pub update_ops_per_sec: f64,
    pub get_ops_per_sec: f64,
    /// Mean consumers returned per get.
    pub mean_matches: f64,
}

struct BenchState {
    store: RwLock<SubscriptionStore>,
    locations: RwLock<HashMap<ClientId, Location>>,
}

fn circle(at: Location, radius: f64) -> GeoScope {
    Geofence::circle(at, radius).map_or(GeoScope::All, GeoScope::Fence)
}

/// Drives one store from `config.clients` threads, each teleporting along
/// its trajectory and doing one operation per waypoint. An update replaces
/// the client's subscription (with a circle around its location in GEO
/// mode); a get matches a publish from the client's location.
pub fn run_index_benchmark(config: &IndexBenchConfig, trajectories: &[Trajectory]) -> IndexBenchReport {
    assert!(trajectories.len() >= config.clients, "one trajectory per client");
    let raster = RasterConfig {
        granularity: Granularity::new(config.granularity).expect("positive granularity"),
        skip_final_intersection: config.skip_final_intersection,
    };
    let state = BenchState { store: RwLock::new(SubscriptionStore::new(raster)), locations: RwLock::new(HashMap::new()) };
    let filter = TopicFilter::parse(&config.topic).expect("valid topic");
    let topic = Topic::parse(&config.topic).expect("valid topic");
    let ids: Vec<ClientId> = (0..config.clients).map(|i| ClientId::from(format!("client-{i}"))).collect();

    for (id, t) in ids.iter().zip(trajectories) {
        let at = t.waypoints[0].location;
        let scope = match config.mode {
            Mode::Geo => circle(at, config.fence_radius),
            Mode::NoGeo => GeoScope::All,
        };
        state.store.write().subscribe(id.clone(), &filter, scope);
        state.locations.write().insert(id.clone(), at);
    }

    let barrier = Barrier::new(config.clients);
    let results: Vec<(u64, u64, u64, Duration)> = thread::scope(|s| {
        let handles: Vec<_> = ids
            .iter()
            .zip(trajectories)
            .map(|(id, trajectory)| {
                let (state, barrier, filter, topic) = (&state, &barrier, &filter, &topic);
                s.spawn(move || {
                    let (mut updates, mut gets, mut matches) = (0u64, 0u64, 0u64);
                    barrier.wait();
                    let started = Instant::now();
                    let mut waypoints = trajectory.waypoints.iter().cycle();
                    for op in 0..config.ops_per_client {
                        let at = waypoints.next().expect("non-empty trajectory").location;
                        if config.ratio.is_update(op) {
                            updates += 1;
                            match config.mode {
                                Mode::Geo => {
                                    let scope = circle(at, config.fence_radius);
                                    state.store.write().subscribe(id.clone(), filter, scope);
                                    state.locations.write().insert(id.clone(), at);
                                }
                                Mode::NoGeo => {
                                    state.store.write().subscribe(id.clone(), filter, GeoScope::All);
                                }
                            }
                        } else {
                            gets += 1;
                            let found = match config.mode {
                                Mode::Geo => {
                                    let request = MatchRequest {
                                        publisher: id.clone(),
                                        publisher_location: Some(at),
                                        topic: topic.clone(),
                                        producer_scope: circle(at, config.fence_radius),
                                    };
                                    let store = state.store.read();
                                    let locations = state.locations.read();
                                    store.match_request(&request, &*locations).map_or(0, |m| m.len())
                                }
                                Mode::NoGeo => state.store.read().match_content_only(topic).len(),
                            };
                            matches += found as u64;
                        }
                    }
                    (updates, gets, matches, started.elapsed())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("bench thread panicked")).collect()
    });

    let updates: u64 = results.iter().map(|r| r.0).sum();
    let gets: u64 = results.iter().map(|r| r.1).sum();
    let matches: u64 = results.iter().map(|r| r.2).sum();
    let elapsed = results.iter().map(|r| r.3).max().unwrap_or_default().as_secs_f64().max(1e-9);
    IndexBenchReport {
        mode: config.mode,
        clients: config.clients,
        granularity: config.granularity,
        ratio: config.ratio.to_string(),
        updates,
        gets,
        elapsed_secs: elapsed,
        ops_per_sec: (updates + gets) as f64 / elapsed,
        update_ops_per_sec: updates as f64 / elapsed,
        get_ops_per_sec: gets as f64 / elapsed,
        mean_matches: if gets == 0 { 0.0 } else { matches as f64 / gets as f64 },
    }
}

/// The single-threaded add/update/get mix.
#[derive(Debug, Clone)]
pub struct OperationMix {
    pub adds: usize,
    pub updates: usize,
    pub gets: usize,
    pub granularity: u32,
    pub fence_radius: f64,
    pub region: BoundingBox,
    pub seed: u64,
}

impl Default for OperationMix {
    fn default() -> Self {
        OperationMix {
            adds: 35_000,
            updates: 25_000,
            gets: 50_000,
            granularity: 10,
            fence_radius: 0.01,
            region: crate::trajectory::beijing_region(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperationMixReport {
    pub adds: usize,
    pub updates: usize,
    pub gets: usize,
    pub elapsed_secs: f64,
    pub mean_matches: f64,
    pub final_subscriptions: usize,
}

#[derive(Debug, Clone, Copy)]
enum MixOp {
    Add,
    Update,
    Get,
}

/// Runs the mix on one thread. Adds create subscriptions for new clients,
/// updates move an existing client's fence, gets match a publish with a
/// producer fence of the same radius. The order is a seeded shuffle in
/// which every update follows at least one add.
pub fn run_operation_mix(mix: &OperationMix) -> OperationMixReport {
    let mut rng = ChaCha8Rng::seed_from_u64(mix.seed);
    let mut ops: Vec<MixOp> = std::iter::repeat_n(MixOp::Add, mix.adds)
        .chain(std::iter::repeat_n(MixOp::Update, mix.updates))
        .chain(std::iter::repeat_n(MixOp::Get, mix.gets))
        .collect();
    ops.shuffle(&mut rng);
    if mix.adds > 0 {
        // The first add moves to the front so updates always have a target.
        let first_add = ops.iter().position(|o| matches!(o, MixOp::Add)).unwrap();
        ops.swap(0, first_add);
    }
    let (sw, ne) = (mix.region.south_west(), mix.region.north_east());
    let points: Vec<Location> = (0..ops.len())
        .map(|_| {
            Location::new(rng.random_range(sw.lat()..=ne.lat()), rng.random_range(sw.lon()..=ne.lon())).unwrap()
        })
        .collect();
    let picks: Vec<u64> = (0..ops.len()).map(|_| rng.random()).collect();
    let clients: Vec<ClientId> = (0..mix.adds).map(|i| ClientId::from(format!("c{i}"))).collect();
    let filter = TopicFilter::parse("data").unwrap();
    let topic = Topic::parse("data").unwrap();
    let publisher = ClientId::from("publisher");

    let mut store = SubscriptionStore::new(RasterConfig::with_granularity(mix.granularity).expect("positive granularity"));
    let mut locations: HashMap<ClientId, Location> = HashMap::with_capacity(mix.adds);
    let mut added = 0usize;
    let mut matches = 0u64;
    let started = Instant::now();
    for ((op, at), pick) in ops.iter().zip(&points).zip(&picks) {
        match op {
            MixOp::Add => {
                let id = &clients[added];
                added += 1;
                store.subscribe(id.clone(), &filter, circle(*at, mix.fence_radius));
                locations.insert(id.clone(), *at);
            }
            MixOp::Update => {
                let id = &clients[(*pick % added as u64) as usize];
                store.subscribe(id.clone(), &filter, circle(*at, mix.fence_radius));
                locations.insert(id.clone(), *at);
            }
            MixOp::Get => {
                let request = MatchRequest {
                    publisher: publisher.clone(),
                    publisher_location: Some(*at),
                    topic: topic.clone(),
                    producer_scope: circle(*at, mix.fence_radius),
                };
                matches += store.match_request(&request, &locations).map_or(0, |m| m.len()) as u64;
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    OperationMixReport {
        adds: mix.adds,
        updates: mix.updates,
        gets: mix.gets,
        elapsed_secs: elapsed,
        mean_matches: if mix.gets == 0 { 0.0 } else { matches as f64 / mix.gets as f64 },
        final_subscriptions: store.len(),
    }
}
